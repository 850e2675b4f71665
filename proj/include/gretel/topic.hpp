#pragma once

// Graph contrastive topic model, encoder side: logistic-normal document
// topic inference, Gaussian sentence topic inference, the document/oracle
// summary graph, and the supervised graph contrastive loss.

#include <cmath>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "gretel/corpus.hpp"
#include "gretel/params.hpp"
#include "gretel/tape.hpp"

namespace gretel {

struct TopicConfig {
  int num_topics = 8;           // K
  double eta = 0.5;             // contrastive weight
  double gamma = 1.0;           // negative-sample weight in the contrastive loss
  double alpha = 0.0;           // Dirichlet prior concentration; 0 -> default 1/K

  double resolved_alpha() const { return alpha > 0.0 ? alpha : 1.0 / num_topics; }
  void validate() const {
    if (num_topics < 2) throw ConfigError("topic: num_topics must be >= 2");
    if (eta < 0.0) throw ConfigError("topic: eta must be >= 0");
    if (alpha < 0.0) throw ConfigError("topic: alpha must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const TopicConfig& c) {
  j = {{"num_topics", c.num_topics}, {"eta", c.eta}, {"gamma", c.gamma}, {"alpha", c.alpha}};
}
inline void from_json(const nlohmann::json& j, TopicConfig& c) {
  j.at("num_topics").get_to(c.num_topics);
  j.at("eta").get_to(c.eta);
  j.at("gamma").get_to(c.gamma);
  j.at("alpha").get_to(c.alpha);
}

inline void init_topic_params(ParamMap& p, int vocab_size, int hidden, int num_topics,
                              std::mt19937_64& rng) {
  auto w = [&](const std::string& n, int r, int c) { gaussian_init(p.emplace(n, r, c), rng, 0.02); };
  w("top.fx.w", vocab_size, hidden);
  p.emplace("top.fx.b", 1, hidden);
  w("top.mu_d.w", hidden, num_topics);
  p.emplace("top.mu_d.b", 1, num_topics);
  w("top.ls_d.w", hidden, num_topics);
  p.emplace("top.ls_d.b", 1, num_topics);
  w("top.mu_s.w", hidden, num_topics);
  p.emplace("top.mu_s.b", 1, num_topics);
  w("top.ls_s.w", hidden, num_topics);
  p.emplace("top.ls_s.b", 1, num_topics);
}

inline Mat bow_dense_normalized(const BowVector& x, int vocab_size) {
  Mat v = Mat::Zero(1, vocab_size);
  for (const auto& [id, c] : x.counts) v(0, id) = c;
  if (x.total_count > 0) v /= static_cast<double>(x.total_count);
  return v;
}

struct DocTopicPosterior {
  ad::Var mu;      // 1 x K
  ad::Var sigma;   // 1 x K, positive diagonal variances
  ad::Var theta;   // 1 x K, on the simplex
};

struct SentTopicRep {
  ad::Var mu;      // u x K
  ad::Var sigma;   // u x K, positive
  ad::Var theta;   // u x K, unconstrained
};

// theta^d = softmax(mu + sigma^{1/2} * eps), with the variational nets fed by
// the normalized BoW projection plus (unless use_context=false) the pooled
// document representation.
inline DocTopicPosterior infer_doc_topics(ParamContext& P, const BowVector& bow,
                                          ad::Var doc_rep, const Mat& eps, int vocab_size,
                                          bool use_context = true) {
  using namespace ad;
  Var x = make(*doc_rep.tape, bow_dense_normalized(bow, vocab_size));
  Var g = affine(x, P["top.fx.w"], P["top.fx.b"]);
  if (use_context) g = add(g, doc_rep);
  DocTopicPosterior out;
  out.mu = affine(g, P["top.mu_d.w"], P["top.mu_d.b"]);
  out.sigma = exp_(affine(g, P["top.ls_d.w"], P["top.ls_d.b"]));
  Var sample = add(out.mu, cmul(sqrt_(out.sigma), make(*doc_rep.tape, eps)));
  out.theta = softmax_rows(sample);
  check_finite(out.theta, "document topic posterior");
  return out;
}

// theta^s = mu + sigma^{1/2} * eps, no softmax; one row per sentence.
inline SentTopicRep infer_sent_topics(ParamContext& P, ad::Var sent_reps_doc, const Mat& eps) {
  using namespace ad;
  SentTopicRep out;
  out.mu = affine(sent_reps_doc, P["top.mu_s.w"], P["top.mu_s.b"]);
  out.sigma = exp_(affine(sent_reps_doc, P["top.ls_s.w"], P["top.ls_s.b"]));
  out.theta = add(out.mu, cmul(sqrt_(out.sigma), make(*sent_reps_doc.tape, eps)));
  check_finite(out.theta, "sentence topic representations");
  return out;
}

// ---------------------------------------------------------------------------
// Summary graph: node 0 is the document, nodes 1..u the sentences (1-based);
// bipartite with self-loops, doc<->sentence edges only for oracle sentences.

struct SummaryGraph {
  Mat adjacency;  // (u+1) x (u+1), entries in {0,1}

  int num_nodes() const { return static_cast<int>(adjacency.rows()); }
};

inline SummaryGraph build_graph(const OracleLabels& labels, int num_sentences) {
  SummaryGraph g;
  g.adjacency = Mat::Identity(num_sentences + 1, num_sentences + 1);
  for (int idx : labels.selected) {
    if (idx < 0 || idx >= num_sentences) throw ConfigError("build_graph: label index out of range");
    g.adjacency(0, idx + 1) = 1.0;
    g.adjacency(idx + 1, 0) = 1.0;
  }
  return g;
}

// Safe exponential form of the contrastive objective:
//   L = -(1/|V|) sum_i log[ P_i / (P_i + gamma * N_i) ]
// with P_i the exp-cosine mass over positive neighbors (self excluded) and
// N_i the exp-cosine mass over non-neighbors. Nodes with no positive
// neighbor contribute 0; returns 0 when there are no negatives.
inline ad::Var contrastive_loss(const SummaryGraph& graph, ad::Var theta_d, ad::Var theta_s,
                                double gamma) {
  using namespace ad;
  Tape& t = *theta_d.tape;
  const int n = graph.num_nodes();
  Mat pos_mask = graph.adjacency;
  pos_mask.diagonal().setZero();
  Mat neg_mask = Mat::Ones(n, n) - graph.adjacency;

  std::vector<int> contributing;
  for (int i = 0; i < n; ++i)
    if (pos_mask.row(i).sum() > 0.0) contributing.push_back(i);
  if (contributing.empty()) return scalar(t, 0.0);
  if (neg_mask.sum() == 0.0) {
    std::cerr << "[gretel] warning: contrastive graph has no negatives, loss set to 0\n";
    return scalar(t, 0.0);
  }

  Var feats = normalize_rows(concat_rows({theta_d, theta_s}));
  Var sims = matmul(feats, transpose(feats));
  Var expsims = exp_(sims);
  Var pos = gather_rows(rowsum(cmul(expsims, make(t, pos_mask))), contributing);
  Var neg = gather_rows(rowsum(cmul(expsims, make(t, neg_mask))), contributing);
  Var terms = sub(log_(pos), log_(add(pos, scale(neg, gamma))));
  return scale(sum_all(terms), -1.0 / n);
}

// The contrastive objective exactly as printed (raw cosines, negated
// numerator, self-loops included). Undefined wherever the log argument is
// non-positive; NaN propagates. Inspection only, not differentiated.
inline double contrastive_loss_literal(const SummaryGraph& graph, const Mat& theta_d,
                                       const Mat& theta_s) {
  const int n = graph.num_nodes();
  Mat feats(n, theta_d.cols());
  feats.row(0) = theta_d.row(0);
  feats.bottomRows(n - 1) = theta_s;
  Mat normed = feats;
  for (int r = 0; r < n; ++r) normed.row(r) /= normed.row(r).norm();
  Mat cos = normed * normed.transpose();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double num = 0.0, den = 0.0;
    for (int j = 0; j < n; ++j) {
      if (graph.adjacency(i, j) > 0.0)
        num += -graph.adjacency(i, j) * cos(i, j);
      else
        den += cos(i, j);
    }
    total += std::log(num / den);
  }
  return -total / n;
}

}  // namespace gretel
