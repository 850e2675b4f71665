#pragma once

// Full model assembly: encoder + topic model + decoder over one parameter
// map, per-document forward pass producing the joint loss, topic export,
// and checkpoint round-tripping (config + vocabularies + tensors).

#include <algorithm>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gretel/corpus.hpp"
#include "gretel/decoder_loss.hpp"
#include "gretel/encoder.hpp"
#include "gretel/params.hpp"
#include "gretel/topic.hpp"

namespace gretel {

// Component ablation switches, all on by default.
struct AblationFlags {
  bool use_hte = true;              // off: single flat block, no document stack
  bool use_topic_loss = true;       // off: reconstruction + KL zeroed
  bool use_contrastive = true;      // off: eta forced to 0
  bool use_context = true;          // off: document topics from BoW only
  bool use_doc_transformer = true;  // off: document stack skipped
};

inline void to_json(nlohmann::json& j, const AblationFlags& f) {
  j = {{"use_hte", f.use_hte},
       {"use_topic_loss", f.use_topic_loss},
       {"use_contrastive", f.use_contrastive},
       {"use_context", f.use_context},
       {"use_doc_transformer", f.use_doc_transformer}};
}
inline void from_json(const nlohmann::json& j, AblationFlags& f) {
  j.at("use_hte").get_to(f.use_hte);
  j.at("use_topic_loss").get_to(f.use_topic_loss);
  j.at("use_contrastive").get_to(f.use_contrastive);
  j.at("use_context").get_to(f.use_context);
  j.at("use_doc_transformer").get_to(f.use_doc_transformer);
}

// A document preprocessed for one forward pass. Labels/graph cover only the
// kept (packed) sentences; dropped sentences are excluded from the loss.
struct PreparedDoc {
  std::string id;
  BlockLayout layout;
  BowVector bow;
  std::vector<int> labels;  // kept sentences
  SummaryGraph graph;
  bool truncated = false;
};

struct ForwardResult {
  ad::Var loss;
  LossBreakdown breakdown;
  Eigen::VectorXd sent_probs;  // per kept sentence
};

class Model {
 public:
  EncoderConfig enc_cfg;
  TopicConfig top_cfg;
  AblationFlags flags;
  Vocabulary bow_vocab;
  EncoderVocab enc_vocab;
  ParamMap params;

  void init(std::uint64_t seed) {
    enc_cfg.validate();
    top_cfg.validate();
    std::mt19937_64 rng(seed);
    params.tensors.clear();
    init_encoder_params(params, enc_cfg, rng);
    init_topic_params(params, bow_vocab.size(), enc_cfg.hidden, top_cfg.num_topics, rng);
    init_decoder_params(params, top_cfg.num_topics, bow_vocab.size(), rng);
  }

  // The W/O-HTE ablation is configured as geometry: one flat block covering
  // the whole token budget and no document stack (see apply_ablation_geometry).
  PreparedDoc prepare(const Document& doc, int oracle_budget, int max_tokens) const {
    PreparedDoc pd;
    pd.id = doc.id;
    pd.layout = pack_blocks(doc, enc_vocab, enc_cfg.block_len, enc_cfg.max_blocks, max_tokens);
    pd.bow = bow_features(doc, bow_vocab);
    pd.truncated = pd.layout.truncated;
    if (!doc.gold_summary.empty()) {
      OracleLabels full = greedy_oracle(doc, oracle_budget);
      OracleLabels kept;
      for (int j = 0; j < pd.layout.kept_sentences; ++j) {
        kept.labels.push_back(full.labels[j]);
        if (full.labels[j]) kept.selected.push_back(j);
      }
      pd.labels = kept.labels;
      pd.graph = build_graph(kept, pd.layout.kept_sentences);
    }
    return pd;
  }

  // drop_rng non-null enables dropout (training mode).
  ForwardResult forward(ParamContext& P, const PreparedDoc& pd, const Mat& eps_d,
                        const Mat& eps_s, std::mt19937_64* drop_rng = nullptr) const {
    using namespace ad;
    EncoderConfig ecfg = effective_encoder_config();
    EncoderOutput enc = encode(P, pd.layout, ecfg, drop_rng);

    DocTopicPosterior doc_post =
        infer_doc_topics(P, pd.bow, enc.doc_rep, eps_d, bow_vocab.size(), flags.use_context);
    SentTopicRep sent_rep = infer_sent_topics(P, enc.sent_reps_doc, eps_s);
    Var probs = predict_labels(P, sent_rep.theta);

    Tape& t = *probs.tape;
    LossParts parts;
    // Unlabeled documents (pure inference) skip the supervised terms.
    parts.label_nll = pd.labels.empty() ? scalar(t, 0.0) : label_nll(probs, pd.labels);
    if (flags.use_topic_loss) {
      parts.recon_nll = reconstruction_nll(P, pd.bow, doc_post.theta, bow_vocab.size());
      parts.kl = kl_term(doc_post.mu, doc_post.sigma, top_cfg.resolved_alpha(),
                         top_cfg.num_topics);
    } else {
      parts.recon_nll = scalar(t, 0.0);
      parts.kl = scalar(t, 0.0);
    }
    double eta = 0.0;
    if (flags.use_contrastive) {
      parts.contrastive = contrastive_loss(pd.graph, doc_post.theta, sent_rep.theta,
                                           top_cfg.gamma);
      eta = top_cfg.eta;
    } else {
      parts.contrastive = scalar(t, 0.0);
    }
    ForwardResult out;
    auto [total, breakdown] = total_loss(parts, eta);
    out.loss = total;
    out.breakdown = breakdown;
    out.sent_probs = probs.val().col(0);
    return out;
  }

  // Evaluation-mode sentence scores (noise at the posterior means, no dropout).
  Eigen::VectorXd score_sentences(const PreparedDoc& pd) const {
    ad::Tape tape;
    ParamContext P(tape, const_cast<ParamMap&>(params));
    Mat eps_d = Mat::Zero(1, top_cfg.num_topics);
    Mat eps_s = Mat::Zero(pd.layout.kept_sentences, top_cfg.num_topics);
    return forward(P, pd, eps_d, eps_s).sent_probs;
  }

  EncoderConfig effective_encoder_config() const {
    EncoderConfig ecfg = enc_cfg;
    if (!flags.use_doc_transformer || !flags.use_hte) ecfg.doc_layers = 0;
    return ecfg;
  }

  // One-block geometry for the W/O-HTE ablation; call before init().
  void apply_ablation_geometry(int max_tokens) {
    if (!flags.use_hte) {
      enc_cfg.block_len = max_tokens;
      enc_cfg.max_blocks = 1;
    }
  }

  // Evaluation-mode document topic mixture theta^d.
  Eigen::RowVectorXd doc_topic_mixture(const PreparedDoc& pd) const {
    ad::Tape tape;
    ParamContext P(tape, const_cast<ParamMap&>(params));
    EncoderOutput enc = encode(P, pd.layout, effective_encoder_config());
    Mat eps_d = Mat::Zero(1, top_cfg.num_topics);
    DocTopicPosterior post =
        infer_doc_topics(P, pd.bow, enc.doc_rep, eps_d, bow_vocab.size(), flags.use_context);
    return post.theta.val().row(0);
  }

  // Evaluation-mode per-sentence topic means mu^s.
  Mat sentence_topic_means(const PreparedDoc& pd) const {
    ad::Tape tape;
    ParamContext P(tape, const_cast<ParamMap&>(params));
    EncoderOutput enc = encode(P, pd.layout, effective_encoder_config());
    Mat eps_s = Mat::Zero(pd.layout.kept_sentences, top_cfg.num_topics);
    return infer_sent_topics(P, enc.sent_reps_doc, eps_s).theta.val();
  }

  // Row-softmaxed topic-word matrix, K x V.
  Mat topic_word_matrix() const {
    const Mat& beta = params.at("dec.beta");
    Mat out(beta.rows(), beta.cols());
    for (Eigen::Index k = 0; k < beta.rows(); ++k) {
      Eigen::RowVectorXd row = beta.row(k);
      row = (row.array() - row.maxCoeff()).exp();
      out.row(k) = row / row.sum();
    }
    return out;
  }

  // Top-w (word, probability) pairs per topic, ties by word index.
  std::vector<std::vector<std::pair<std::string, double>>> top_words(int top_w) const {
    Mat tw = topic_word_matrix();
    std::vector<std::vector<std::pair<std::string, double>>> topics;
    for (Eigen::Index k = 0; k < tw.rows(); ++k) {
      std::vector<int> order(tw.cols());
      for (int v = 0; v < tw.cols(); ++v) order[v] = v;
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return tw(k, a) > tw(k, b); });
      std::vector<std::pair<std::string, double>> words;
      for (int i = 0; i < std::min<int>(top_w, static_cast<int>(order.size())); ++i)
        words.emplace_back(bow_vocab.tokens[order[i]], tw(k, order[i]));
      topics.push_back(std::move(words));
    }
    return topics;
  }

  nlohmann::json config_json() const {
    nlohmann::json j;
    j["encoder"] = enc_cfg;
    j["topic"] = top_cfg;
    j["ablation"] = flags;
    j["bow_vocab"] = {{"tokens", bow_vocab.tokens},
                      {"doc_freq", bow_vocab.doc_freq},
                      {"min_freq", bow_vocab.min_freq},
                      {"max_size", bow_vocab.max_size}};
    std::vector<std::string> enc_tokens(enc_vocab.size_ - 4);
    for (const auto& [tok, id] : enc_vocab.index) enc_tokens[id - 4] = tok;
    j["encoder_vocab"] = enc_tokens;
    return j;
  }

  void save(const std::string& path) const { save_checkpoint(path, config_json(), params); }

  static Model load(const std::string& path) {
    Model m;
    nlohmann::json j = load_checkpoint(path, m.params);
    try {
      m.enc_cfg = j.at("encoder").get<EncoderConfig>();
      m.top_cfg = j.at("topic").get<TopicConfig>();
      m.flags = j.at("ablation").get<AblationFlags>();
      const auto& bv = j.at("bow_vocab");
      m.bow_vocab.tokens = bv.at("tokens").get<std::vector<std::string>>();
      m.bow_vocab.doc_freq = bv.at("doc_freq").get<std::vector<int>>();
      m.bow_vocab.min_freq = bv.at("min_freq").get<int>();
      m.bow_vocab.max_size = bv.at("max_size").get<int>();
      for (std::size_t i = 0; i < m.bow_vocab.tokens.size(); ++i)
        m.bow_vocab.index[m.bow_vocab.tokens[i]] = static_cast<int>(i);
      auto enc_tokens = j.at("encoder_vocab").get<std::vector<std::string>>();
      for (const auto& tok : enc_tokens) m.enc_vocab.index[tok] = m.enc_vocab.size_++;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("bad checkpoint header: ") + e.what());
    }
    // Shape validation against a freshly initialized parameter set.
    Model ref;
    ref.enc_cfg = m.enc_cfg;
    ref.top_cfg = m.top_cfg;
    ref.flags = m.flags;
    ref.bow_vocab = m.bow_vocab;
    ref.enc_vocab = m.enc_vocab;
    ref.init(0);
    if (ref.params.tensors.size() != m.params.tensors.size())
      throw DataError("checkpoint parameter count mismatch");
    for (const auto& [name, expect] : ref.params.tensors) {
      const Mat& got = m.params.at(name);
      if (got.rows() != expect.rows() || got.cols() != expect.cols())
        throw DataError("checkpoint shape mismatch for " + name);
    }
    return m;
  }
};

}  // namespace gretel
