#pragma once

// Planted-salience synthetic corpus. Each document draws a topic group;
// its gold summary is written in that group's vocabulary and the planted
// salient sentences copy bigram chunks from it, at uniformly random
// positions. The remaining sentences use a disjoint noise vocabulary, so
// the learnable signal and the oracle labels coincide by construction.

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "gretel/corpus.hpp"

namespace gretel {

struct SynthConfig {
  int num_docs = 200;
  int num_groups = 8;
  int words_per_group = 12;
  int noise_words = 60;
  int sentences_min = 10;
  int sentences_max = 14;
  int salient_per_doc = 3;
  int summary_sentences = 2;
  int sentence_len_min = 6;
  int sentence_len_max = 9;
  std::uint64_t seed = 7;
};

inline std::vector<Document> generate_synthetic_corpus(const SynthConfig& cfg,
                                                       const std::string& id_prefix = "synth") {
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::vector<std::string>> groups(cfg.num_groups);
  for (int g = 0; g < cfg.num_groups; ++g)
    for (int w = 0; w < cfg.words_per_group; ++w)
      groups[g].push_back("topic" + std::to_string(g) + "w" + std::to_string(w));
  std::vector<std::string> noise;
  for (int w = 0; w < cfg.noise_words; ++w) noise.push_back("noise" + std::to_string(w));

  auto pick = [&](const std::vector<std::string>& pool, int len) {
    std::uniform_int_distribution<int> d(0, static_cast<int>(pool.size()) - 1);
    TokenList s;
    for (int i = 0; i < len; ++i) s.push_back(pool[d(rng)]);
    return s;
  };
  std::uniform_int_distribution<int> ulen(cfg.sentences_min, cfg.sentences_max);
  std::uniform_int_distribution<int> slen(cfg.sentence_len_min, cfg.sentence_len_max);
  std::uniform_int_distribution<int> gpick(0, cfg.num_groups - 1);

  std::vector<Document> docs;
  for (int d = 0; d < cfg.num_docs; ++d) {
    Document doc;
    doc.id = id_prefix + "-" + std::to_string(d);
    const int g = gpick(rng);
    for (int s = 0; s < cfg.summary_sentences; ++s)
      doc.gold_summary.push_back(pick(groups[g], slen(rng)));
    TokenList gold_flat = flatten(doc.gold_summary);

    const int u = ulen(rng);
    std::vector<int> positions(u);
    std::iota(positions.begin(), positions.end(), 0);
    std::shuffle(positions.begin(), positions.end(), rng);
    std::vector<bool> salient(u, false);
    for (int s = 0; s < cfg.salient_per_doc; ++s) salient[positions[s]] = true;

    for (int s = 0; s < u; ++s) {
      if (salient[s]) {
        // contiguous chunk of the gold summary, preserving its bigrams
        int len = std::min<int>(slen(rng), static_cast<int>(gold_flat.size()));
        std::uniform_int_distribution<int> start(0, static_cast<int>(gold_flat.size()) - len);
        int s0 = start(rng);
        doc.sentences.emplace_back(gold_flat.begin() + s0, gold_flat.begin() + s0 + len);
      } else {
        doc.sentences.push_back(pick(noise, slen(rng)));
      }
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

inline void write_jsonl(const std::vector<Document>& docs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus file: " + path);
  for (const auto& d : docs) {
    nlohmann::json j;
    j["id"] = d.id;
    std::vector<std::string> sents, gold;
    for (const auto& s : d.sentences) {
      std::string joined;
      for (const auto& t : s) joined += (joined.empty() ? "" : " ") + t;
      sents.push_back(joined);
    }
    for (const auto& s : d.gold_summary) {
      std::string joined;
      for (const auto& t : s) joined += (joined.empty() ? "" : " ") + t;
      gold.push_back(joined);
    }
    j["sentences"] = sents;
    j["abstract"] = gold;
    out << j.dump() << "\n";
  }
}

}  // namespace gretel
