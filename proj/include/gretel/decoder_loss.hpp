#pragma once

// Probabilistic decoder and loss assembly: topic-mixture word distribution,
// multinomial reconstruction NLL, sentence label prediction, the closed-form
// KL to the Laplace-approximated Dirichlet prior, and the joint objective.

#include <cmath>
#include <iostream>
#include <random>
#include <string>

#include <json.hpp>

#include "gretel/corpus.hpp"
#include "gretel/params.hpp"
#include "gretel/tape.hpp"

namespace gretel {

inline void init_decoder_params(ParamMap& p, int num_topics, int vocab_size,
                                std::mt19937_64& rng) {
  gaussian_init(p.emplace("dec.beta", num_topics, vocab_size), rng, 0.02);
  gaussian_init(p.emplace("dec.fy.w", num_topics, 1), rng, 0.02);
  p.emplace("dec.fy.b", 1, 1);
}

// p(w) = theta^d . softmax_rows(beta); each beta row is normalized into a
// word distribution at use-site, the mixture lands on the V-simplex.
inline ad::Var word_distribution(ParamContext& P, ad::Var theta_d) {
  return ad::matmul(theta_d, ad::softmax_rows(P["dec.beta"]));
}

// -sum_v count_v log p(w_v); the count-independent multinomial constant is
// dropped, so reported values are comparable only within this codebase.
inline ad::Var reconstruction_nll(ParamContext& P, const BowVector& bow, ad::Var theta_d,
                                  int vocab_size) {
  using namespace ad;
  Tape& t = *theta_d.tape;
  if (bow.total_count == 0) {
    std::cerr << "[gretel] warning: empty BoW vector, reconstruction loss 0\n";
    return scalar(t, 0.0);
  }
  Mat counts = Mat::Zero(1, vocab_size);
  for (const auto& [id, c] : bow.counts) counts(0, id) = c;
  Var p = word_distribution(P, theta_d);
  return scale(sum_all(cmul(make(t, counts), log_(p))), -1.0);
}

// p~_j = sigmoid(f_y(theta^s_j)), one probability per sentence.
inline ad::Var predict_labels(ParamContext& P, ad::Var theta_s) {
  return ad::sigmoid(ad::affine(theta_s, P["dec.fy.w"], P["dec.fy.b"]));
}

// Mean binary cross-entropy, probabilities clamped at 1e-7 for stability.
inline ad::Var label_nll(ad::Var probs, const std::vector<int>& labels) {
  using namespace ad;
  Tape& t = *probs.tape;
  const int u = static_cast<int>(labels.size());
  if (probs.rows() != u) throw ConfigError("label_nll: length mismatch");
  Mat y(u, 1), ones = Mat::Ones(u, 1);
  for (int j = 0; j < u; ++j) y(j, 0) = labels[j];
  Var pc = clamp(probs, 1e-7, 1.0 - 1e-7);
  Var pos = cmul(make(t, y), log_(pc));
  Var neg = cmul(make(t, ones - y), log_(sub(make(t, ones), pc)));
  return scale(sum_all(add(pos, neg)), -1.0 / u);
}

// Variance of the logistic-normal approximation to a symmetric Dirichlet(alpha)
// prior: mu0 = 0, sigma0_k = (1/alpha)(1 - 2/K) + 1/(alpha K).
inline double dirichlet_prior_variance(double alpha, int K) {
  return (1.0 / alpha) * (1.0 - 2.0 / K) + 1.0 / (alpha * K);
}

// Closed-form KL( N(mu, diag sigma) || N(0, sigma0 I) ).
inline ad::Var kl_term(ad::Var mu, ad::Var sigma, double alpha, int K) {
  using namespace ad;
  Tape& t = *mu.tape;
  if ((sigma.val().array() <= 0.0).any()) throw NumericError("kl_term: non-positive variance");
  const double s0 = dirichlet_prior_variance(alpha, K);
  Var trace = scale(sum_all(sigma), 1.0 / s0);
  Var quad = scale(sum_all(cmul(mu, mu)), 1.0 / s0);
  Var logdet = sum_all(log_(sigma));
  Var constant = scalar(t, K * std::log(s0) - K);
  return scale(add(sub(add(trace, quad), logdet), constant), 0.5);
}

struct LossBreakdown {
  double label_nll = 0.0;
  double recon_nll = 0.0;
  double kl = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

inline void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = {{"label_nll", b.label_nll}, {"recon_nll", b.recon_nll}, {"kl", b.kl},
       {"contrastive", b.contrastive}, {"total", b.total}};
}

struct LossParts {
  ad::Var label_nll;
  ad::Var recon_nll;
  ad::Var kl;
  ad::Var contrastive;
};

// total = label_nll + recon_nll + kl + eta * contrastive (the ELBO negated
// into minimization form). Hard error naming the first non-finite part.
inline std::pair<ad::Var, LossBreakdown> total_loss(const LossParts& parts, double eta) {
  using namespace ad;
  auto part = [](const Var& v, const char* name) {
    double x = v.val()(0, 0);
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite loss part: ") + name);
    return x;
  };
  LossBreakdown b;
  b.label_nll = part(parts.label_nll, "label_nll");
  b.recon_nll = part(parts.recon_nll, "recon_nll");
  b.kl = part(parts.kl, "kl");
  b.contrastive = part(parts.contrastive, "contrastive");
  Var total = add(add(parts.label_nll, parts.recon_nll),
                  add(parts.kl, scale(parts.contrastive, eta)));
  b.total = total.val()(0, 0);
  return {total, b};
}

}  // namespace gretel
