#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pcmgen/rng.hpp"

namespace pcmgen::oracle {

// Brute-force BLEU: no maps, every n-gram compared position by position.
struct BruteBleu {
  double score;
  double bp;
  std::vector<double> p;
};

inline bool same_ngram(const std::vector<int>& a, std::size_t i, const std::vector<int>& b, std::size_t j, int n) {
  for (int k = 0; k < n; ++k) {
    if (a[i + static_cast<std::size_t>(k)] != b[j + static_cast<std::size_t>(k)]) return false;
  }
  return true;
}

inline std::size_t occurrences(const std::vector<int>& hay, const std::vector<int>& src, std::size_t at, int n) {
  std::size_t c = 0;
  for (std::size_t j = 0; j + static_cast<std::size_t>(n) <= hay.size(); ++j) c += same_ngram(src, at, hay, j, n);
  return c;
}

inline BruteBleu brute_bleu(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<std::vector<int>>>& refs) {
  std::vector<double> match(4, 0), total(4, 0);
  double c = 0, r = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    c += static_cast<double>(h.size());
    // Closest reference length, ties to the shorter.
    double best = -1;
    double best_diff = 1e300;
    for (const auto& ref : refs[s]) {
      const double diff = std::fabs(static_cast<double>(ref.size()) - static_cast<double>(h.size()));
      if (diff < best_diff || (diff == best_diff && static_cast<double>(ref.size()) < best)) {
        best_diff = diff;
        best = static_cast<double>(ref.size());
      }
    }
    r += best;
    for (int n = 1; n <= 4; ++n) {
      for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= h.size(); ++i) {
        total[static_cast<std::size_t>(n - 1)] += 1;
        // Count each distinct n-gram once, at its first occurrence.
        bool first = true;
        for (std::size_t j = 0; j < i && first; ++j) first = !same_ngram(h, j, h, i, n);
        if (!first) continue;
        const std::size_t in_hyp = occurrences(h, h, i, n);
        std::size_t in_ref = 0;
        for (const auto& ref : refs[s]) in_ref = std::max(in_ref, occurrences(ref, h, i, n));
        match[static_cast<std::size_t>(n - 1)] += static_cast<double>(std::min(in_hyp, in_ref));
      }
    }
  }
  BruteBleu out;
  long double log_sum = 0;
  for (int n = 0; n < 4; ++n) {
    const double pn = match[n] > 0 ? match[n] / total[n] : 0.5 / std::max(total[n], 1.0);
    out.p.push_back(pn);
    log_sum += std::log(static_cast<long double>(pn));
  }
  if (c == 0) {
    out.bp = 0;
    out.score = 0;
    return out;
  }
  out.bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  out.score = static_cast<double>(out.bp * std::exp(log_sum / 4));
  return out;
}

inline std::vector<int> random_seq(Rng& rng, int max_len, int alphabet) {
  std::vector<int> s(rng.below(static_cast<std::uint64_t>(max_len + 1)));
  for (auto& t : s) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(alphabet)));
  return s;
}

}  // namespace pcmgen::oracle
