#pragma once

// Hierarchical transformer encoder: per-block contextual encoding, a
// cross-block document transformer over the sentence [CLS] rows, and mean
// pooling into a single document vector. Pre-norm blocks, GELU feed-forward.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "gretel/corpus.hpp"
#include "gretel/params.hpp"
#include "gretel/tape.hpp"

namespace gretel {

struct EncoderConfig {
  int hidden = 64;       // H, divisible by heads
  int block_layers = 2;
  int doc_layers = 2;
  int heads = 4;
  int ff_width = 128;
  double dropout = 0.0;
  int vocab_size = 0;    // encoder token table size (incl. special tokens)
  int block_len = 64;    // n
  int max_blocks = 8;    // m

  void validate() const {
    if (hidden <= 0 || heads <= 0 || hidden % heads != 0)
      throw ConfigError("encoder: hidden must be a positive multiple of heads");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must be in [0,1)");
    if (vocab_size < 4) throw ConfigError("encoder: vocab_size not set");
  }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"hidden", c.hidden},       {"block_layers", c.block_layers},
       {"doc_layers", c.doc_layers}, {"heads", c.heads},
       {"ff_width", c.ff_width},   {"dropout", c.dropout},
       {"vocab_size", c.vocab_size}, {"block_len", c.block_len},
       {"max_blocks", c.max_blocks}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  j.at("hidden").get_to(c.hidden);
  j.at("block_layers").get_to(c.block_layers);
  j.at("doc_layers").get_to(c.doc_layers);
  j.at("heads").get_to(c.heads);
  j.at("ff_width").get_to(c.ff_width);
  j.at("dropout").get_to(c.dropout);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("block_len").get_to(c.block_len);
  j.at("max_blocks").get_to(c.max_blocks);
}

namespace detail {

inline void init_transformer_layer(ParamMap& p, const std::string& prefix, int H, int F,
                                   std::mt19937_64& rng) {
  auto w = [&](const std::string& n, int r, int c) { gaussian_init(p.emplace(prefix + n, r, c), rng, 0.02); };
  p.emplace(prefix + "ln1.g", 1, H).setOnes();
  p.emplace(prefix + "ln1.b", 1, H);
  w("wq", H, H); p.emplace(prefix + "bq", 1, H);
  w("wk", H, H); p.emplace(prefix + "bk", 1, H);
  w("wv", H, H); p.emplace(prefix + "bv", 1, H);
  w("wo", H, H); p.emplace(prefix + "bo", 1, H);
  p.emplace(prefix + "ln2.g", 1, H).setOnes();
  p.emplace(prefix + "ln2.b", 1, H);
  w("w1", H, F); p.emplace(prefix + "b1", 1, F);
  w("w2", F, H); p.emplace(prefix + "b2", 1, H);
}

}  // namespace detail

inline void init_encoder_params(ParamMap& p, const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  gaussian_init(p.emplace("enc.tok_emb", cfg.vocab_size, cfg.hidden), rng, 0.02);
  gaussian_init(p.emplace("enc.pos_emb", cfg.block_len, cfg.hidden), rng, 0.02);
  gaussian_init(p.emplace("enc.blk_emb", cfg.max_blocks, cfg.hidden), rng, 0.02);
  gaussian_init(p.emplace("enc.blkpos_emb", cfg.max_blocks, cfg.hidden), rng, 0.02);
  for (int l = 0; l < cfg.block_layers; ++l)
    detail::init_transformer_layer(p, "enc.blk" + std::to_string(l) + ".", cfg.hidden,
                                   cfg.ff_width, rng);
  for (int l = 0; l < cfg.doc_layers; ++l)
    detail::init_transformer_layer(p, "enc.doc" + std::to_string(l) + ".", cfg.hidden,
                                   cfg.ff_width, rng);
}

// Inverted-scale dropout; identity when rate == 0 or rng == nullptr (eval).
inline ad::Var dropout(ad::Var x, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  Mat mask(x.rows(), x.cols());
  std::bernoulli_distribution keep(1.0 - rate);
  for (Eigen::Index c = 0; c < mask.cols(); ++c)
    for (Eigen::Index r = 0; r < mask.rows(); ++r)
      mask(r, c) = keep(*rng) ? 1.0 / (1.0 - rate) : 0.0;
  return ad::cmul(x, ad::make(*x.tape, mask));
}

// One pre-norm transformer layer. attn_mask (may be empty) is added to the
// attention logits; -1e30 at masked key columns.
inline ad::Var transformer_layer(ParamContext& P, ad::Var x, const std::string& prefix,
                                 int heads, const Mat& attn_mask, double drop_rate,
                                 std::mt19937_64* rng) {
  using namespace ad;
  const int H = static_cast<int>(x.cols());
  const int dh = H / heads;
  Var h = layernorm_rows(x, P[prefix + "ln1.g"], P[prefix + "ln1.b"]);
  Var q = affine(h, P[prefix + "wq"], P[prefix + "bq"]);
  Var k = affine(h, P[prefix + "wk"], P[prefix + "bk"]);
  Var v = affine(h, P[prefix + "wv"], P[prefix + "bv"]);
  std::vector<Var> head_outs;
  head_outs.reserve(heads);
  for (int hd = 0; hd < heads; ++hd) {
    Var qh = slice_cols(q, hd * dh, dh);
    Var kh = slice_cols(k, hd * dh, dh);
    Var vh = slice_cols(v, hd * dh, dh);
    Var scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (attn_mask.size() > 0) scores = add_const(scores, attn_mask);
    Var attn = softmax_rows(scores);
    head_outs.push_back(matmul(attn, vh));
  }
  Var o = affine(concat_cols(head_outs), P[prefix + "wo"], P[prefix + "bo"]);
  x = add(x, dropout(o, drop_rate, rng));
  Var f = layernorm_rows(x, P[prefix + "ln2.g"], P[prefix + "ln2.b"]);
  f = gelu(affine(f, P[prefix + "w1"], P[prefix + "b1"]));
  f = affine(dropout(f, drop_rate, rng), P[prefix + "w2"], P[prefix + "b2"]);
  return add(x, dropout(f, drop_rate, rng));
}

struct EncoderOutput {
  ad::Var sent_reps;      // h^s: u x H, [CLS] rows from the block stage
  ad::Var sent_reps_doc;  // h~^s: u x H, document-context-aware
  ad::Var doc_rep;        // h~^d: 1 x H, mean-pooled
};

// E_{l,p} = tok_emb[x_{l,p}] + blk_emb[l] + pos_emb[p], per block.
inline std::vector<ad::Var> embed_tokens(ParamContext& P, const BlockLayout& layout,
                                         const EncoderConfig& cfg) {
  using namespace ad;
  std::vector<Var> out;
  out.reserve(layout.num_blocks());
  const int n = layout.block_len;
  std::vector<int> pos_ids(n);
  for (int p = 0; p < n; ++p) pos_ids[p] = p;
  for (int b = 0; b < layout.num_blocks(); ++b) {
    for (int id : layout.blocks[b])
      if (id < 0 || id >= cfg.vocab_size)
        throw NumericError("embed_tokens: token id out of range");
    Var tok = gather_rows(P["enc.tok_emb"], layout.blocks[b]);
    Var pos = gather_rows(P["enc.pos_emb"], pos_ids);
    Var blk = gather_rows(P["enc.blk_emb"], std::vector<int>(n, b));
    out.push_back(add(add(tok, pos), blk));
  }
  return out;
}

// Block stage: each block through the block stack with pad keys masked, then
// the [CLS] rows gathered in sentence order.
inline ad::Var encode_blocks(ParamContext& P, const std::vector<ad::Var>& embeds,
                             const BlockLayout& layout, const EncoderConfig& cfg,
                             std::mt19937_64* rng = nullptr) {
  using namespace ad;
  const int n = layout.block_len;
  std::vector<Var> block_outs;
  block_outs.reserve(embeds.size());
  for (std::size_t b = 0; b < embeds.size(); ++b) {
    Mat mask = Mat::Zero(n, n);
    for (int j = 0; j < n; ++j)
      if (!layout.real_mask[b][j]) mask.col(j).setConstant(-1e30);
    Var x = embeds[b];
    for (int l = 0; l < cfg.block_layers; ++l)
      x = transformer_layer(P, x, "enc.blk" + std::to_string(l) + ".", cfg.heads, mask,
                            cfg.dropout, rng);
    block_outs.push_back(x);
  }
  std::vector<Var> cls_rows;
  cls_rows.reserve(layout.cls_positions.size());
  for (const auto& [b, off] : layout.cls_positions)
    cls_rows.push_back(slice_rows(block_outs[b], off, 1));
  return concat_rows(cls_rows);
}

// Document stage: add each sentence's block-position embedding, then the
// unmasked document stack over all u sentence rows.
inline ad::Var encode_document(ParamContext& P, ad::Var sent_reps, const BlockLayout& layout,
                               const EncoderConfig& cfg, std::mt19937_64* rng = nullptr) {
  using namespace ad;
  Var x = add(sent_reps, gather_rows(P["enc.blkpos_emb"], layout.sentence_block));
  for (int l = 0; l < cfg.doc_layers; ++l)
    x = transformer_layer(P, x, "enc.doc" + std::to_string(l) + ".", cfg.heads, Mat(),
                          cfg.dropout, rng);
  return x;
}

inline ad::Var pool_document(ad::Var sent_reps_doc) { return ad::colmean(sent_reps_doc); }

inline EncoderOutput encode(ParamContext& P, const BlockLayout& layout,
                            const EncoderConfig& cfg, std::mt19937_64* rng = nullptr) {
  EncoderOutput out;
  auto embeds = embed_tokens(P, layout, cfg);
  out.sent_reps = encode_blocks(P, embeds, layout, cfg, rng);
  out.sent_reps_doc = encode_document(P, out.sent_reps, layout, cfg, rng);
  out.doc_rep = pool_document(out.sent_reps_doc);
  ad::check_finite(out.doc_rep, "encoder output");
  return out;
}

}  // namespace gretel
