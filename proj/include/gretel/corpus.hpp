#pragma once

// Corpus ingestion: tokenization, JSONL loading, vocabulary and BoW
// construction, greedy oracle labels, and block packing for the encoder.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "gretel/common.hpp"
#include "gretel/rouge.hpp"

namespace gretel {

struct Document {
  std::string id;
  std::vector<TokenList> sentences;
  std::vector<TokenList> gold_summary;  // may be empty for pure inference

  std::size_t num_sentences() const { return sentences.size(); }
};

using Tokenizer = std::function<TokenList(const std::string&)>;

// Default tokenizer: lowercase, strip punctuation, split on whitespace.
inline TokenList default_tokenize(const std::string& text) {
  TokenList out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    }
    // punctuation dropped
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// One document per line: {"id": str, "sentences": [str,...], "abstract": [str,...]}
inline std::vector<Document> load_jsonl(const std::string& path,
                                        const Tokenizer& tok = default_tokenize) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path);
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
    }
    Document d;
    d.id = j.value("id", std::to_string(lineno));
    for (const auto& s : j.at("sentences")) {
      TokenList t = tok(s.get<std::string>());
      if (!t.empty()) d.sentences.push_back(std::move(t));
    }
    if (j.contains("abstract")) {
      for (const auto& s : j.at("abstract")) {
        TokenList t = tok(s.get<std::string>());
        if (!t.empty()) d.gold_summary.push_back(std::move(t));
      }
    }
    if (d.sentences.empty())
      throw DataError(path + ":" + std::to_string(lineno) + ": document has no sentences");
    docs.push_back(std::move(d));
  }
  return docs;
}

inline std::set<std::string> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stopword file: " + path);
  std::set<std::string> out;
  std::string w;
  while (in >> w) out.insert(w);
  return out;
}

// ---------------------------------------------------------------------------
// Topic-model vocabulary (BoW space): stopwords excluded, frequency-pruned.

struct Vocabulary {
  std::unordered_map<std::string, int> index;       // token -> dense id
  std::vector<std::string> tokens;                  // id -> token
  std::vector<int> doc_freq;                        // id -> document frequency
  int min_freq = 1;
  int max_size = 0;

  int size() const { return static_cast<int>(tokens.size()); }
  int lookup(const std::string& t) const {
    auto it = index.find(t);
    return it == index.end() ? -1 : it->second;
  }
};

// Keeps tokens with document frequency >= min_freq, not in stopwords, up to
// max_size by descending frequency (ties by lexicographic token).
inline Vocabulary build_vocabulary(const std::vector<Document>& corpus, int min_freq,
                                   int max_size, const std::set<std::string>& stopwords = {}) {
  if (corpus.empty()) throw DataError("build_vocabulary: empty corpus");
  if (min_freq < 1) throw ConfigError("build_vocabulary: min_freq must be >= 1");
  std::map<std::string, int> df;
  for (const auto& d : corpus) {
    std::set<std::string> seen;
    for (const auto& s : d.sentences)
      for (const auto& t : s) seen.insert(t);
    for (const auto& t : seen) ++df[t];
  }
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [t, f] : df)
    if (f >= min_freq && !stopwords.count(t)) kept.emplace_back(t, f);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (max_size > 0 && static_cast<int>(kept.size()) > max_size) kept.resize(max_size);
  if (kept.empty()) throw DataError("build_vocabulary: corpus too small, empty vocabulary");
  Vocabulary v;
  v.min_freq = min_freq;
  v.max_size = max_size;
  for (const auto& [t, f] : kept) {
    v.index[t] = static_cast<int>(v.tokens.size());
    v.tokens.push_back(t);
    v.doc_freq.push_back(f);
  }
  return v;
}

struct BowVector {
  std::map<int, int> counts;  // token index -> count, all counts >= 1
  int total_count = 0;
};

inline BowVector bow_features(const Document& doc, const Vocabulary& vocab) {
  BowVector x;
  for (const auto& s : doc.sentences)
    for (const auto& t : s) {
      int id = vocab.lookup(t);
      if (id >= 0) {
        ++x.counts[id];
        ++x.total_count;
      }
    }
  return x;
}

// ---------------------------------------------------------------------------
// Greedy oracle labels.

struct OracleLabels {
  std::vector<int> labels;    // per sentence, 0/1
  std::vector<int> selected;  // S+, ascending sentence indices
};

// Iteratively adds the sentence that most increases ROUGE-2 F1 of the running
// selection against the gold summary; stops on no strict improvement or at
// the budget. Ties broken by lowest sentence index.
inline OracleLabels greedy_oracle(const Document& doc, int budget) {
  if (doc.gold_summary.empty()) throw DataError("greedy_oracle: document has no gold summary");
  if (budget < 1) throw ConfigError("greedy_oracle: budget must be >= 1");
  const TokenList gold = flatten(doc.gold_summary);
  const int u = static_cast<int>(doc.sentences.size());

  OracleLabels out;
  out.labels.assign(u, 0);
  std::vector<int> picked;
  double best_score = 0.0;
  while (static_cast<int>(picked.size()) < budget) {
    int best_cand = -1;
    double best_cand_score = best_score;
    for (int j = 0; j < u; ++j) {
      if (out.labels[j]) continue;
      std::vector<int> trial = picked;
      trial.push_back(j);
      std::sort(trial.begin(), trial.end());
      TokenList cand;
      for (int idx : trial)
        cand.insert(cand.end(), doc.sentences[idx].begin(), doc.sentences[idx].end());
      double sc = rouge_n(cand, gold, 2).f1;
      if (sc > best_cand_score) {  // strict improvement; first (lowest) index wins ties
        best_cand_score = sc;
        best_cand = j;
      }
    }
    if (best_cand < 0) break;
    picked.push_back(best_cand);
    out.labels[best_cand] = 1;
    best_score = best_cand_score;
  }
  std::sort(picked.begin(), picked.end());
  out.selected = std::move(picked);
  return out;
}

// ---------------------------------------------------------------------------
// Encoder token table and block packing.

struct EncoderVocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  std::unordered_map<std::string, int> index;
  int size_ = 4;

  int size() const { return size_; }
  int lookup(const std::string& t) const {
    auto it = index.find(t);
    return it == index.end() ? kUnk : it->second;
  }
};

// All corpus tokens get encoder ids (no stopword or frequency pruning; the
// encoder sees the full text), deterministic by frequency then token.
inline EncoderVocab build_encoder_vocab(const std::vector<Document>& corpus, int max_size = 0) {
  std::map<std::string, long> freq;
  for (const auto& d : corpus)
    for (const auto& s : d.sentences)
      for (const auto& t : s) ++freq[t];
  std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (max_size > 0 && static_cast<int>(items.size()) > max_size) items.resize(max_size);
  EncoderVocab v;
  for (const auto& [t, f] : items) v.index[t] = v.size_++;
  return v;
}

struct BlockLayout {
  int block_len = 0;                                // n
  std::vector<std::vector<int>> blocks;             // m blocks, each padded to n
  std::vector<std::vector<bool>> real_mask;         // true at non-pad positions
  std::vector<std::pair<int, int>> cls_positions;   // (block, offset) per kept sentence
  std::vector<int> sentence_block;                  // kept sentence -> block index
  int kept_sentences = 0;
  bool truncated = false;                           // some sentences were dropped

  int num_blocks() const { return static_cast<int>(blocks.size()); }
};

// Greedy in-order packing; a sentence (CLS + tokens + SEP) goes into the
// current block if it fits, else opens a new block. A sentence longer than
// n-2 is truncated to fit a single block. Packing stops at max_blocks or
// max_tokens; remaining sentences are dropped and flagged.
inline BlockLayout pack_blocks(const Document& doc, const EncoderVocab& vocab, int block_len,
                               int max_blocks, int max_tokens) {
  if (block_len < 3) throw ConfigError("pack_blocks: block_len must be >= 3");
  if (max_tokens < block_len) throw ConfigError("pack_blocks: max_tokens must be >= block_len");
  BlockLayout layout;
  layout.block_len = block_len;
  int used_in_block = 0;  // real tokens in current block
  int total_real = 0;
  auto open_block = [&]() {
    layout.blocks.emplace_back(block_len, EncoderVocab::kPad);
    layout.real_mask.emplace_back(block_len, false);
    used_in_block = 0;
  };
  for (std::size_t si = 0; si < doc.sentences.size(); ++si) {
    std::vector<int> ids;
    ids.reserve(doc.sentences[si].size());
    for (const auto& t : doc.sentences[si]) ids.push_back(vocab.lookup(t));
    if (static_cast<int>(ids.size()) > block_len - 2)
      ids.resize(block_len - 2);
    const int need = static_cast<int>(ids.size()) + 2;  // CLS + SEP
    if (layout.blocks.empty() || used_in_block + need > block_len) {
      if (layout.num_blocks() >= max_blocks || total_real + need > max_tokens) {
        layout.truncated = true;
        break;
      }
      open_block();
    } else if (total_real + need > max_tokens) {
      layout.truncated = true;
      break;
    }
    const int b = layout.num_blocks() - 1;
    auto& blk = layout.blocks[b];
    auto& mask = layout.real_mask[b];
    layout.cls_positions.emplace_back(b, used_in_block);
    layout.sentence_block.push_back(b);
    blk[used_in_block] = EncoderVocab::kCls;
    mask[used_in_block] = true;
    ++used_in_block;
    for (int id : ids) {
      blk[used_in_block] = id;
      mask[used_in_block] = true;
      ++used_in_block;
    }
    blk[used_in_block] = EncoderVocab::kSep;
    mask[used_in_block] = true;
    ++used_in_block;
    total_real += need;
    ++layout.kept_sentences;
  }
  if (layout.kept_sentences == 0)
    throw DataError("pack_blocks: no sentence fits the block budget for doc " + doc.id);
  return layout;
}

}  // namespace gretel
