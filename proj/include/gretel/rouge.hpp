#pragma once

// ROUGE-1/2/L between tokenized candidate and reference texts.
// Self-contained reimplementation; no stemming or stopword removal
// unless the caller preprocesses the token lists.

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace gretel {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline RougeScore make_rouge(double p, double r) {
  RougeScore s;
  s.precision = p;
  s.recall = r;
  s.f1 = (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
  return s;
}

using TokenList = std::vector<std::string>;

namespace detail {

inline std::map<std::vector<std::string>, int> ngram_counts(const TokenList& toks, int n) {
  std::map<std::vector<std::string>, int> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::vector<std::string> g(toks.begin() + i, toks.begin() + i + n);
    ++counts[g];
  }
  return counts;
}

}  // namespace detail

// Clipped n-gram overlap F1, n in {1,2}.
inline RougeScore rouge_n(const TokenList& candidate, const TokenList& reference, int n) {
  auto cand = detail::ngram_counts(candidate, n);
  auto ref = detail::ngram_counts(reference, n);
  long cand_total = 0, ref_total = 0, overlap = 0;
  for (const auto& [g, c] : cand) cand_total += c;
  for (const auto& [g, c] : ref) ref_total += c;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  if (cand_total == 0 || ref_total == 0) return RougeScore{};
  return make_rouge(static_cast<double>(overlap) / cand_total,
                    static_cast<double>(overlap) / ref_total);
}

inline std::size_t lcs_length(const TokenList& a, const TokenList& b) {
  const std::size_t na = a.size(), nb = b.size();
  if (na == 0 || nb == 0) return 0;
  std::vector<std::size_t> prev(nb + 1, 0), cur(nb + 1, 0);
  for (std::size_t i = 1; i <= na; ++i) {
    for (std::size_t j = 1; j <= nb; ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[nb];
}

inline RougeScore rouge_l(const TokenList& candidate, const TokenList& reference) {
  if (candidate.empty() || reference.empty()) return RougeScore{};
  const double l = static_cast<double>(lcs_length(candidate, reference));
  return make_rouge(l / candidate.size(), l / reference.size());
}

// Concatenates sentences into a single token list; the ROUGE granularity
// used everywhere in this project.
inline TokenList flatten(const std::vector<TokenList>& sentences) {
  TokenList out;
  for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace gretel
