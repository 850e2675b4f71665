#pragma once

// Joint training loop: Adam over all parameter tensors, linear warmup with
// inverse-sqrt decay, per-step JSONL loss logging, periodic validation and
// best-checkpoint selection.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "gretel/model.hpp"
#include "gretel/params.hpp"

namespace gretel {

struct TrainConfig {
  double learning_rate = 2e-3;
  int warmup_steps = 200;
  int total_steps = 2000;
  int checkpoint_every = 200;
  int batch_size = 8;
  std::uint64_t seed = 1;
  int max_tokens = 512;
  int oracle_budget = 3;  // v
  bool desk_scale = true;

  void validate() const {
    if (warmup_steps > total_steps && total_steps > 0)
      throw ConfigError("train: warmup_steps must be <= total_steps");
    if (learning_rate <= 0 || warmup_steps < 1 || batch_size < 1 || checkpoint_every < 1 ||
        max_tokens < 1 || oracle_budget < 1 || total_steps < 0)
      throw ConfigError("train: all numeric settings must be positive");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"warmup_steps", c.warmup_steps},
       {"total_steps", c.total_steps},     {"checkpoint_every", c.checkpoint_every},
       {"batch_size", c.batch_size},       {"seed", c.seed},
       {"max_tokens", c.max_tokens},       {"oracle_budget", c.oracle_budget},
       {"desk_scale", c.desk_scale}};
}

// Linear warmup to base_lr, then inverse-square-root decay.
inline double lr_schedule(int step, double base_lr, int warmup) {
  return base_lr * std::min(static_cast<double>(step) / warmup,
                            std::sqrt(static_cast<double>(warmup) / step));
}

class AdamOptimizer {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void step(ParamMap& params, const ParamMap& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (const auto& [name, g] : grads.tensors) {
      Mat& p = params.at(name);
      Mat& m = moment1_.emplace(name, Mat::Zero(p.rows(), p.cols())).first->second;
      Mat& v = moment2_.emplace(name, Mat::Zero(p.rows(), p.cols())).first->second;
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
      p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    }
  }

 private:
  long t_ = 0;
  std::map<std::string, Mat> moment1_, moment2_;
};

struct TrainState {
  int step = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_step = -1;
  std::string best_checkpoint;
};

// Mean total loss over a split, noise at the posterior means, no dropout.
inline double validate(const Model& model, const std::vector<PreparedDoc>& split) {
  if (split.empty()) throw ConfigError("validate: empty split");
  double total = 0.0;
  for (const auto& pd : split) {
    ad::Tape tape;
    ParamContext P(tape, const_cast<ParamMap&>(model.params));
    Mat eps_d = Mat::Zero(1, model.top_cfg.num_topics);
    Mat eps_s = Mat::Zero(pd.layout.kept_sentences, model.top_cfg.num_topics);
    total += model.forward(P, pd, eps_d, eps_s).breakdown.total;
  }
  return total / split.size();
}

inline std::vector<PreparedDoc> prepare_split(const Model& model,
                                              const std::vector<Document>& docs,
                                              const TrainConfig& cfg) {
  std::vector<PreparedDoc> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(model.prepare(d, cfg.oracle_budget, cfg.max_tokens));
  return out;
}

// Runs total_steps of Adam on the joint loss; logs one JSONL record per step,
// checkpoints every checkpoint_every steps, returns the best checkpoint by
// validation loss. NaN losses abort with the offending step and part.
inline TrainState train(Model& model, const std::vector<PreparedDoc>& train_split,
                        const std::vector<PreparedDoc>& valid_split, const TrainConfig& cfg,
                        const std::string& run_dir, std::ostream* log = nullptr) {
  cfg.validate();
  if (train_split.empty() || valid_split.empty())
    throw ConfigError("train: empty train or validation split");
  std::filesystem::create_directories(run_dir);

  TrainState state;
  auto checkpoint = [&](int step) {
    std::string path = run_dir + "/step_" + std::to_string(step) + ".ckpt";
    model.save(path);
    double vloss = validate(model, valid_split);
    if (vloss < state.best_val_loss) {
      state.best_val_loss = vloss;
      state.best_step = step;
      state.best_checkpoint = path;
      std::ofstream best(run_dir + "/best");
      best << step << "\n";
    }
    return vloss;
  };

  if (cfg.total_steps == 0) {
    checkpoint(0);
    return state;
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  AdamOptimizer opt;
  const int K = model.top_cfg.num_topics;

  std::vector<int> order(train_split.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  for (int step = 1; step <= cfg.total_steps; ++step) {
    ParamMap grads;
    LossBreakdown mean{};
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const PreparedDoc& pd = train_split[order[cursor++]];
      Mat eps_d(1, K), eps_s(pd.layout.kept_sentences, K);
      for (int k = 0; k < K; ++k) eps_d(0, k) = gauss(rng);
      for (Eigen::Index r = 0; r < eps_s.rows(); ++r)
        for (int k = 0; k < K; ++k) eps_s(r, k) = gauss(rng);

      ad::Tape tape;
      ParamContext P(tape, model.params);
      ForwardResult res;
      try {
        res = model.forward(P, pd, eps_d, eps_s,
                            model.enc_cfg.dropout > 0.0 ? &rng : nullptr);
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step) + ": " + e.what());
      }
      tape.backward(res.loss.idx);
      P.accumulate_grads(grads);
      mean.label_nll += res.breakdown.label_nll;
      mean.recon_nll += res.breakdown.recon_nll;
      mean.kl += res.breakdown.kl;
      mean.contrastive += res.breakdown.contrastive;
      mean.total += res.breakdown.total;
    }
    for (auto& [name, g] : grads.tensors) g /= cfg.batch_size;
    mean.label_nll /= cfg.batch_size;
    mean.recon_nll /= cfg.batch_size;
    mean.kl /= cfg.batch_size;
    mean.contrastive /= cfg.batch_size;
    mean.total /= cfg.batch_size;

    opt.step(model.params, grads, lr_schedule(step, cfg.learning_rate, cfg.warmup_steps));
    state.step = step;

    if (log) {
      nlohmann::json rec = mean;
      rec["step"] = step;
      *log << rec.dump() << "\n";
    }
    if (step % cfg.checkpoint_every == 0 || step == cfg.total_steps) checkpoint(step);
  }
  return state;
}

}  // namespace gretel
