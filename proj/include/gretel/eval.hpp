#pragma once

// Evaluation harness: summary selection, corpus-level ROUGE aggregation,
// NPMI topic coherence, the position distribution of extracted sentences,
// and the topic-vs-gold semantic-gap measurement.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gretel/corpus.hpp"
#include "gretel/rouge.hpp"

namespace gretel {

struct SummarySelection {
  std::vector<int> indices;  // strictly increasing document order
  std::vector<double> scores;  // per selected sentence, same order
};

// Top-v sentences by score (ties to the lower index), returned in document
// order. Invariant under monotone transformations of the scores.
inline SummarySelection select_summary(const std::vector<double>& scores, int v) {
  if (v < 1) throw ConfigError("select_summary: v must be >= 1");
  const int u = static_cast<int>(scores.size());
  std::vector<int> order(u);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  order.resize(std::min(v, u));
  std::sort(order.begin(), order.end());
  SummarySelection sel;
  sel.indices = order;
  for (int i : order) sel.scores.push_back(scores[i]);
  return sel;
}

inline std::vector<int> lead_selection(int u, int v) {
  std::vector<int> idx;
  for (int i = 0; i < std::min(u, v); ++i) idx.push_back(i);
  return idx;
}

struct RougeReport {
  RougeScore r1, r2, rl;
};

inline RougeReport score_selection(const Document& doc, const std::vector<int>& indices) {
  std::vector<TokenList> chosen;
  for (int i : indices) chosen.push_back(doc.sentences[i]);
  TokenList cand = flatten(chosen), gold = flatten(doc.gold_summary);
  RougeReport r;
  r.r1 = rouge_n(cand, gold, 1);
  r.r2 = rouge_n(cand, gold, 2);
  r.rl = rouge_l(cand, gold);
  return r;
}

// ---------------------------------------------------------------------------
// NPMI topic coherence, whole-document co-occurrence window.

struct NpmiScore {
  std::vector<double> per_topic;
  double mean = 0.0;
};

// Document-frequency index over unique tokens per document.
class CooccurrenceIndex {
 public:
  explicit CooccurrenceIndex(const std::vector<Document>& docs) : num_docs_(docs.size()) {
    doc_tokens_.reserve(docs.size());
    for (const auto& d : docs) {
      std::unordered_set<std::string> seen;
      for (const auto& s : d.sentences)
        for (const auto& t : s) seen.insert(t);
      for (const auto& t : seen) ++df_[t];
      doc_tokens_.push_back(std::move(seen));
    }
  }

  std::size_t num_docs() const { return num_docs_; }
  long df(const std::string& w) const {
    auto it = df_.find(w);
    return it == df_.end() ? 0 : it->second;
  }
  long joint_df(const std::string& a, const std::string& b) const {
    long n = 0;
    for (const auto& toks : doc_tokens_)
      if (toks.count(a) && toks.count(b)) ++n;
    return n;
  }

 private:
  std::size_t num_docs_;
  std::unordered_map<std::string, long> df_;
  std::vector<std::unordered_set<std::string>> doc_tokens_;
};

// Pair NPMI in [-1, 1]: log(P(i,j)/(P(i)P(j))) / -log P(i,j), probabilities
// df/(D+1) (one virtual empty document, so perfect co-occurrence scores
// exactly 1), eps-guarded logs, never-co-occurring pairs score -1.
inline double npmi_pair(const CooccurrenceIndex& ix, const std::string& a,
                        const std::string& b, double eps = 1e-12) {
  long dfj = ix.joint_df(a, b);
  if (dfj == 0) return -1.0;
  const double denom = static_cast<double>(ix.num_docs()) + 1.0;
  double pij = dfj / denom, pi = ix.df(a) / denom, pj = ix.df(b) / denom;
  return std::log((pij + eps) / (pi * pj + eps)) / -std::log(pij + eps);
}

// Per-topic mean over word pairs (i<j); topics with fewer than two
// in-corpus words are excluded with a warning.
inline NpmiScore npmi(const std::vector<std::vector<std::string>>& topics,
                      const CooccurrenceIndex& ix) {
  NpmiScore out;
  for (std::size_t k = 0; k < topics.size(); ++k) {
    std::vector<std::string> words;
    for (const auto& w : topics[k])
      if (ix.df(w) > 0) words.push_back(w);
    if (words.size() < 2) {
      std::cerr << "[gretel] warning: topic " << k << " has <2 in-corpus words, skipped\n";
      continue;
    }
    double sum = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < words.size(); ++i)
      for (std::size_t j = i + 1; j < words.size(); ++j) {
        sum += npmi_pair(ix, words[i], words[j]);
        ++pairs;
      }
    out.per_topic.push_back(sum / pairs);
  }
  if (!out.per_topic.empty())
    out.mean = std::accumulate(out.per_topic.begin(), out.per_topic.end(), 0.0) /
               out.per_topic.size();
  return out;
}

// ---------------------------------------------------------------------------
// Position distribution of extracted sentences (relative position in [0,1]).

struct PositionHistogram {
  std::vector<double> bin_edges;   // bins+1 edges over [0,1]
  std::vector<long> counts;
  std::vector<double> frequencies;
};

inline PositionHistogram position_histogram(const std::vector<SummarySelection>& selections,
                                            const std::vector<int>& doc_lengths, int bins) {
  if (bins < 1) throw ConfigError("position_histogram: bins must be >= 1");
  PositionHistogram h;
  for (int b = 0; b <= bins; ++b) h.bin_edges.push_back(static_cast<double>(b) / bins);
  h.counts.assign(bins, 0);
  long total = 0;
  for (std::size_t d = 0; d < selections.size(); ++d) {
    const int u = doc_lengths[d];
    for (int idx : selections[d].indices) {
      double pos = (u <= 1) ? 0.0 : static_cast<double>(idx) / (u - 1);
      int bin = std::min(bins - 1, static_cast<int>(pos * bins));
      ++h.counts[bin];
      ++total;
    }
  }
  h.frequencies.assign(bins, 0.0);
  if (total > 0)
    for (int b = 0; b < bins; ++b)
      h.frequencies[b] = static_cast<double>(h.counts[b]) / total;
  return h;
}

// ---------------------------------------------------------------------------
// Semantic-gap measurement: mean of (R-1 F1, R-2 F1) against the gold summary
// for a selection policy, averaged over documents.

inline double mean_r1_r2(const Document& doc, const std::vector<int>& indices) {
  RougeReport r = score_selection(doc, indices);
  return 0.5 * (r.r1.f1 + r.r2.f1);
}

// Selection by topic-word overlap: sentences ranked by how many of their
// token occurrences fall in the top-w words of the document's top topics.
inline SummarySelection topic_word_selection(
    const Document& doc, const std::vector<std::vector<std::string>>& topic_top_words,
    const Eigen::RowVectorXd& doc_topic_mixture, int v, int num_top_topics = 3) {
  std::vector<int> topic_order(doc_topic_mixture.size());
  std::iota(topic_order.begin(), topic_order.end(), 0);
  std::stable_sort(topic_order.begin(), topic_order.end(), [&](int a, int b) {
    return doc_topic_mixture(a) > doc_topic_mixture(b);
  });
  std::unordered_set<std::string> topical;
  for (int k = 0; k < std::min<int>(num_top_topics, topic_order.size()); ++k)
    for (const auto& w : topic_top_words[topic_order[k]]) topical.insert(w);
  std::vector<double> scores;
  for (const auto& s : doc.sentences) {
    int hits = 0;
    for (const auto& t : s) hits += topical.count(t) ? 1 : 0;
    scores.push_back(static_cast<double>(hits));
  }
  return select_summary(scores, v);
}

struct SemanticGap {
  double oracle_score = 0.0;      // mean(R1 F1, R2 F1), greedy oracle summary
  double topic_score = 0.0;       // same for the topic-word summary
  double lead_score = 0.0;        // LEAD-v reference point
};

inline SemanticGap topic_summary_gap(const std::vector<Document>& docs,
                                     const std::vector<std::vector<std::string>>& topic_top_words,
                                     const std::vector<Eigen::RowVectorXd>& doc_mixtures,
                                     int v, int num_top_topics = 3) {
  if (docs.empty()) throw ConfigError("topic_summary_gap: empty corpus");
  SemanticGap g;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const int u = static_cast<int>(docs[d].num_sentences());
    OracleLabels oracle = greedy_oracle(docs[d], v);
    g.oracle_score += mean_r1_r2(docs[d], oracle.selected);
    SummarySelection topic_sel =
        topic_word_selection(docs[d], topic_top_words, doc_mixtures[d], v, num_top_topics);
    g.topic_score += mean_r1_r2(docs[d], topic_sel.indices);
    g.lead_score += mean_r1_r2(docs[d], lead_selection(u, v));
  }
  g.oracle_score /= docs.size();
  g.topic_score /= docs.size();
  g.lead_score /= docs.size();
  return g;
}

}  // namespace gretel
