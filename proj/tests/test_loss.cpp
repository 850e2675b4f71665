#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gradcheck.hpp"
#include "gretel/model.hpp"

using namespace gretel;
using ad::Tape;
using ad::Var;

namespace {

constexpr int kTopics = 4;
constexpr int kVocab = 9;

ParamMap decoder_params(std::uint64_t seed) {
  ParamMap p;
  std::mt19937_64 rng(seed);
  init_decoder_params(p, kTopics, kVocab, rng);
  return p;
}

// Per-dimension KL(N(mu,sigma) || N(0,s0)) by brute-force numerical
// integration; independent of the closed form under test.
double kl_quadrature(double mu, double sigma, double s0) {
  const double sd = std::sqrt(sigma);
  const double lo = mu - 12.0 * sd, hi = mu + 12.0 * sd;
  const int steps = 200000;
  const double dx = (hi - lo) / steps;
  double acc = 0.0;
  for (int i = 0; i < steps; ++i) {
    double x = lo + (i + 0.5) * dx;
    double logp = -0.5 * (x - mu) * (x - mu) / sigma - 0.5 * std::log(2.0 * M_PI * sigma);
    double logq = -0.5 * x * x / s0 - 0.5 * std::log(2.0 * M_PI * s0);
    acc += std::exp(logp) * (logp - logq) * dx;
  }
  return acc;
}

}  // namespace

TEST_CASE("word distribution rows live on the vocabulary simplex") {
  ParamMap params = decoder_params(1);
  Tape t;
  ParamContext P(t, params);
  Mat theta(2, kTopics);
  theta << 0.7, 0.1, 0.1, 0.1, 0.25, 0.25, 0.25, 0.25;
  Var p = word_distribution(P, ad::make(t, theta));
  REQUIRE(p.rows() == 2);
  REQUIRE(p.cols() == kVocab);
  CHECK(p.val().row(0).sum() == doctest::Approx(1.0));
  CHECK(p.val().row(1).sum() == doctest::Approx(1.0));
  CHECK(p.val().minCoeff() > 0.0);
}

TEST_CASE("one-hot mixture reproduces a single softmaxed beta row") {
  ParamMap params = decoder_params(2);
  Tape t;
  ParamContext P(t, params);
  Mat theta = Mat::Zero(1, kTopics);
  theta(0, 2) = 1.0;
  Var p = word_distribution(P, ad::make(t, theta));
  Eigen::RowVectorXd row = params.at("dec.beta").row(2);
  row = (row.array() - row.maxCoeff()).exp();
  row /= row.sum();
  CHECK((p.val().row(0) - row).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("uniform word distribution gives recon NLL = T log V") {
  ParamMap params = decoder_params(3);
  params.at("dec.beta").setZero();  // softmax rows become uniform
  Tape t;
  ParamContext P(t, params);
  BowVector bow;
  bow.counts = {{1, 3}, {4, 2}, {8, 5}};
  bow.total_count = 10;
  Mat theta(1, kTopics);
  theta << 0.4, 0.3, 0.2, 0.1;
  Var nll = reconstruction_nll(P, bow, ad::make(t, theta), kVocab);
  CHECK(nll.val()(0, 0) == doctest::Approx(10.0 * std::log(9.0)).epsilon(1e-12));

  BowVector empty;
  Var zero = reconstruction_nll(P, empty, ad::make(t, theta), kVocab);
  CHECK(zero.val()(0, 0) == 0.0);
}

TEST_CASE("label BCE fixtures") {
  Tape t;
  // probability 1/2 everywhere: BCE = log 2 whatever the labels
  Mat half = Mat::Constant(3, 1, 0.5);
  CHECK(label_nll(ad::make(t, half), {1, 0, 1}).val()(0, 0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // confident and correct: essentially zero (clamp at 1e-7)
  Mat sharp(2, 1);
  sharp << 1.0, 0.0;
  CHECK(label_nll(ad::make(t, sharp), {1, 0}).val()(0, 0) ==
        doctest::Approx(0.0).epsilon(1e-6));
  // hand value: p=(0.9, 0.2), y=(1, 0) -> -(log .9 + log .8)/2
  Mat p(2, 1);
  p << 0.9, 0.2;
  CHECK(label_nll(ad::make(t, p), {1, 0}).val()(0, 0) ==
        doctest::Approx(-(std::log(0.9) + std::log(0.8)) / 2.0).epsilon(1e-12));
  // length mismatch
  CHECK_THROWS_AS(label_nll(ad::make(t, p), {1, 0, 1}), ConfigError);
}

TEST_CASE("dirichlet prior variance fixture") {
  // alpha = 1/K, K = 8: (1/alpha)(1 - 2/K) + 1/(alpha K) = 8 * 0.75 + 1 = 7
  CHECK(dirichlet_prior_variance(1.0 / 8, 8) == doctest::Approx(7.0));
  CHECK(dirichlet_prior_variance(1.0, 2) == doctest::Approx(0.5));
}

TEST_CASE("KL vanishes exactly at the prior") {
  const double alpha = 1.0 / kTopics;
  const double s0 = dirichlet_prior_variance(alpha, kTopics);
  Tape t;
  Var mu = ad::make(t, Mat::Zero(1, kTopics));
  Var sigma = ad::make(t, Mat::Constant(1, kTopics, s0));
  CHECK(kl_term(mu, sigma, alpha, kTopics).val()(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("KL matches numerical integration dimension by dimension") {
  const double alpha = 0.4;
  const int K = 3;
  const double s0 = dirichlet_prior_variance(alpha, K);
  Mat mu(1, K), sigma(1, K);
  mu << 0.7, -1.2, 0.0;
  sigma << 0.5, 2.0, 1.3;
  double expect = 0.0;
  for (int k = 0; k < K; ++k) expect += kl_quadrature(mu(0, k), sigma(0, k), s0);
  Tape t;
  double got = kl_term(ad::make(t, mu), ad::make(t, sigma), alpha, K).val()(0, 0);
  CHECK(got == doctest::Approx(expect).epsilon(1e-6));
  CHECK(got > 0.0);
}

TEST_CASE("KL rejects non-positive variances") {
  Tape t;
  Mat sigma(1, 2);
  sigma << 1.0, -0.5;
  CHECK_THROWS_AS(kl_term(ad::make(t, Mat::Zero(1, 2)), ad::make(t, sigma), 0.5, 2),
                  NumericError);
}

TEST_CASE("total loss arithmetic and breakdown") {
  Tape t;
  LossParts parts{ad::scalar(t, 1.0), ad::scalar(t, 2.0), ad::scalar(t, 4.0),
                  ad::scalar(t, 2.0)};
  auto [total, b] = total_loss(parts, 0.5);
  CHECK(total.val()(0, 0) == doctest::Approx(8.0));
  CHECK(b.label_nll == 1.0);
  CHECK(b.recon_nll == 2.0);
  CHECK(b.kl == 4.0);
  CHECK(b.contrastive == 2.0);
  CHECK(b.total == doctest::Approx(8.0));

  LossParts bad{ad::scalar(t, 1.0), ad::scalar(t, std::nan("")), ad::scalar(t, 0.0),
                ad::scalar(t, 0.0)};
  try {
    total_loss(bad, 1.0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("recon_nll") != std::string::npos);
  }
}

TEST_CASE("decoder gradients match finite differences") {
  ParamMap params = decoder_params(4);
  BowVector bow;
  bow.counts = {{0, 1}, {2, 2}, {5, 1}};
  bow.total_count = 4;
  Mat theta(1, kTopics);
  theta << 0.5, 0.2, 0.2, 0.1;
  Mat theta_s(3, kTopics);
  theta_s << 0.3, -0.1, 0.7, 0.2, -0.5, 0.4, 0.1, 0.3, 0.6, -0.2, 0.0, 0.9;
  std::vector<int> labels{1, 0, 1};

  auto run = [&](Tape& t, ParamContext& P) {
    Var recon = reconstruction_nll(P, bow, ad::make(t, theta), kVocab);
    Var lbl = label_nll(predict_labels(P, ad::make(t, theta_s)), labels);
    return ad::add(recon, lbl);
  };
  Tape t;
  ParamContext P(t, params);
  Var loss = run(t, P);
  t.backward(loss.idx);
  ParamMap grads;
  P.accumulate_grads(grads);
  auto fwd = [&]() {
    Tape t2;
    ParamContext P2(t2, params);
    return run(t2, P2).val()(0, 0);
  };
  auto res = testing::gradcheck(params, fwd, grads, 1e-6);
  INFO("worst: ", res.worst_param, " rel err ", res.max_rel_err);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("full model joint loss gradients match finite differences") {
  Document doc;
  doc.id = "g";
  doc.sentences = {default_tokenize("alpha beta gamma"), default_tokenize("delta beta zeta"),
                   default_tokenize("alpha gamma zeta eta")};
  doc.gold_summary = {default_tokenize("alpha beta gamma")};

  Model m;
  m.bow_vocab = build_vocabulary({doc}, 1, 0);
  m.enc_vocab = build_encoder_vocab({doc});
  m.enc_cfg.hidden = 8;
  m.enc_cfg.block_layers = 1;
  m.enc_cfg.doc_layers = 1;
  m.enc_cfg.heads = 2;
  m.enc_cfg.ff_width = 10;
  m.enc_cfg.vocab_size = m.enc_vocab.size();
  m.enc_cfg.block_len = 8;
  m.enc_cfg.max_blocks = 3;
  m.top_cfg.num_topics = 3;
  m.init(7);

  auto pd = m.prepare(doc, 2, 64);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat eps_d(1, 3), eps_s(pd.layout.kept_sentences, 3);
  for (int c = 0; c < 3; ++c) {
    eps_d(0, c) = nd(rng);
    for (int r = 0; r < eps_s.rows(); ++r) eps_s(r, c) = nd(rng);
  }

  Tape t;
  ParamContext P(t, m.params);
  auto out = m.forward(P, pd, eps_d, eps_s);
  t.backward(out.loss.idx);
  ParamMap grads;
  P.accumulate_grads(grads);
  REQUIRE(grads.tensors.size() > 10);

  auto fwd = [&]() {
    Tape t2;
    ParamContext P2(t2, m.params);
    return m.forward(P2, pd, eps_d, eps_s).loss.val()(0, 0);
  };
  auto res = testing::gradcheck(m.params, fwd, grads, 1e-4);
  INFO("worst: ", res.worst_param, " rel err ", res.max_rel_err, " over ", res.checked);
  CHECK(res.max_rel_err < 1e-4);

  // the reported breakdown sums to the total under eta weighting
  CHECK(out.breakdown.total ==
        doctest::Approx(out.breakdown.label_nll + out.breakdown.recon_nll + out.breakdown.kl +
                        m.top_cfg.eta * out.breakdown.contrastive)
            .epsilon(1e-12));
}

TEST_CASE("ablation flags zero the corresponding loss parts") {
  Document doc;
  doc.id = "a";
  doc.sentences = {default_tokenize("one two three"), default_tokenize("four five six")};
  doc.gold_summary = {default_tokenize("one two three")};

  Model m;
  m.bow_vocab = build_vocabulary({doc}, 1, 0);
  m.enc_vocab = build_encoder_vocab({doc});
  m.enc_cfg.hidden = 8;
  m.enc_cfg.block_layers = 1;
  m.enc_cfg.doc_layers = 1;
  m.enc_cfg.heads = 2;
  m.enc_cfg.ff_width = 10;
  m.enc_cfg.vocab_size = m.enc_vocab.size();
  m.enc_cfg.block_len = 8;
  m.enc_cfg.max_blocks = 2;
  m.top_cfg.num_topics = 3;
  m.flags.use_topic_loss = false;
  m.flags.use_contrastive = false;
  m.init(1);

  auto pd = m.prepare(doc, 1, 64);
  Tape t;
  ParamContext P(t, m.params);
  auto out = m.forward(P, pd, Mat::Zero(1, 3), Mat::Zero(pd.layout.kept_sentences, 3));
  CHECK(out.breakdown.recon_nll == 0.0);
  CHECK(out.breakdown.kl == 0.0);
  CHECK(out.breakdown.contrastive == 0.0);
  CHECK(out.breakdown.total == doctest::Approx(out.breakdown.label_nll));
}
