#pragma once

// Named parameter tensors, their binding onto an autodiff tape, and the
// binary checkpoint format shared by all model components.

#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <string>

#include <json.hpp>

#include "gretel/common.hpp"
#include "gretel/tape.hpp"

namespace gretel {

using ad::Mat;

struct ParamMap {
  std::map<std::string, Mat> tensors;  // ordered: deterministic iteration

  Mat& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Mat& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  Mat& emplace(const std::string& name, Eigen::Index r, Eigen::Index c) {
    return tensors.emplace(name, Mat::Zero(r, c)).first->second;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [k, m] : tensors) n += m.size();
    return n;
  }
};

inline void gaussian_init(Mat& m, std::mt19937_64& rng, double std_dev) {
  std::normal_distribution<double> dist(0.0, std_dev);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
}

// Binds parameters as leaf Vars on a tape, one leaf per parameter per pass,
// and collects their gradients after backward().
class ParamContext {
 public:
  ParamContext(ad::Tape& tape, ParamMap& params) : tape_(tape), params_(params) {}

  ad::Var operator[](const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return ad::Var{&tape_, it->second};
    ad::Var v = ad::make(tape_, params_.at(name));
    bound_[name] = v.idx;
    return v;
  }

  // Accumulates tape gradients into `grads` (same keys/shapes as params).
  void accumulate_grads(ParamMap& grads) {
    for (const auto& [name, idx] : bound_) {
      if (!tape_.has_grad(idx)) continue;
      auto it = grads.tensors.find(name);
      if (it == grads.tensors.end())
        it = grads.tensors.emplace(name, Mat::Zero(params_.at(name).rows(),
                                                   params_.at(name).cols())).first;
      it->second += tape_.grad(idx);
    }
  }

 private:
  ad::Tape& tape_;
  ParamMap& params_;
  std::map<std::string, int> bound_;
};

// ---------------------------------------------------------------------------
// Checkpoint format: magic, version, JSON header (model config), then the
// named tensors as little-endian doubles. Loading validates names and shapes
// against the header-declared list.

constexpr char kCheckpointMagic[4] = {'G', 'R', 'T', 'L'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const nlohmann::json& header,
                            const ParamMap& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 4);
  std::uint32_t ver = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&ver), 4);
  std::string hdr = header.dump();
  std::uint64_t hlen = hdr.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hdr.data(), static_cast<std::streamsize>(hlen));
  std::uint64_t count = params.tensors.size();
  out.write(reinterpret_cast<const char*>(&count), 8);
  for (const auto& [name, m] : params.tensors) {
    std::uint64_t nlen = name.size();
    out.write(reinterpret_cast<const char*>(&nlen), 8);
    out.write(name.data(), static_cast<std::streamsize>(nlen));
    std::uint64_t rows = m.rows(), cols = m.cols();
    out.write(reinterpret_cast<const char*>(&rows), 8);
    out.write(reinterpret_cast<const char*>(&cols), 8);
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  if (!out) throw DataError("short write on checkpoint: " + path);
}

inline nlohmann::json load_checkpoint(const std::string& path, ParamMap& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kCheckpointMagic, 4))
    throw DataError("not a checkpoint file: " + path);
  std::uint32_t ver = 0;
  in.read(reinterpret_cast<char*>(&ver), 4);
  if (ver != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(ver));
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hdr(hlen, '\0');
  in.read(hdr.data(), static_cast<std::streamsize>(hlen));
  nlohmann::json header = nlohmann::json::parse(hdr);
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  params.tensors.clear();
  for (std::uint64_t k = 0; k < count; ++k) {
    std::uint64_t nlen = 0;
    in.read(reinterpret_cast<char*>(&nlen), 8);
    std::string name(nlen, '\0');
    in.read(name.data(), static_cast<std::streamsize>(nlen));
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 8);
    in.read(reinterpret_cast<char*>(&cols), 8);
    Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw DataError("truncated checkpoint: " + path);
    params.tensors.emplace(std::move(name), std::move(m));
  }
  return header;
}

}  // namespace gretel
