#pragma once

// Corpus BLEU, cipher lexicon recovery, and the relevance/fluency judgment
// protocol (validation, aggregation, report rendering).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcmgen/synthlang.hpp"
#include "pcmgen/textcore.hpp"

namespace pcmgen {

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

struct BleuScore {
  int max_n = 4;
  std::vector<double> precisions;       // smoothed p_n
  std::vector<std::uint64_t> matches;   // clipped matches per order
  std::vector<std::uint64_t> totals;    // hypothesis n-grams per order
  double brevity_penalty = 0;
  std::uint64_t hyp_length = 0;
  std::uint64_t ref_length = 0;
  std::size_t empty_hypotheses = 0;
  double score = 0;
};

namespace detail {

template <typename Tok>
std::map<std::vector<Tok>, std::uint64_t> ngram_counts(const std::vector<Tok>& s, int n) {
  std::map<std::vector<Tok>, std::uint64_t> out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i) {
    ++out[std::vector<Tok>(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return out;
}

}  // namespace detail

/// Corpus-level BLEU with clipped counts (max over references), brevity
/// penalty against the closest reference length (ties to the shorter), and
/// zero-match smoothing p_n = 1 / (2 * total_n). An order with no hypothesis
/// n-grams at all uses total_n = 1 in that formula.
template <typename Tok>
BleuScore corpus_bleu(const std::vector<std::vector<Tok>>& hyps, const std::vector<std::vector<std::vector<Tok>>>& refs,
                      int max_n = 4) {
  if (hyps.size() != refs.size()) {
    throw ShapeError("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses vs " + std::to_string(refs.size()) +
                     " reference lists");
  }
  if (hyps.empty()) throw DataError("corpus_bleu: no hypotheses");
  if (max_n < 1) throw UsageError("corpus_bleu: max_n must be >= 1");
  BleuScore b;
  b.max_n = max_n;
  b.matches.assign(static_cast<std::size_t>(max_n), 0);
  b.totals.assign(static_cast<std::size_t>(max_n), 0);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto& h = hyps[i];
    if (refs[i].empty()) throw DataError("corpus_bleu: hypothesis " + std::to_string(i) + " has no references");
    if (h.empty()) ++b.empty_hypotheses;
    b.hyp_length += h.size();
    std::size_t best = refs[i].front().size();
    for (const auto& r : refs[i]) {
      const auto d = [&](std::size_t len) { return len > h.size() ? len - h.size() : h.size() - len; };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    b.ref_length += best;
    for (int n = 1; n <= max_n; ++n) {
      const auto hc = detail::ngram_counts(h, n);
      std::map<std::vector<Tok>, std::uint64_t> max_ref;
      for (const auto& r : refs[i]) {
        for (const auto& [g, c] : detail::ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : hc) {
        auto it = max_ref.find(g);
        b.matches[static_cast<std::size_t>(n - 1)] += std::min(c, it == max_ref.end() ? 0 : it->second);
        b.totals[static_cast<std::size_t>(n - 1)] += c;
      }
    }
  }
  double log_sum = 0;
  for (int n = 0; n < max_n; ++n) {
    const auto m = b.matches[static_cast<std::size_t>(n)];
    const auto t = b.totals[static_cast<std::size_t>(n)];
    const double p = m > 0 ? static_cast<double>(m) / static_cast<double>(t)
                           : 1.0 / (2.0 * static_cast<double>(std::max<std::uint64_t>(t, 1)));
    b.precisions.push_back(p);
    log_sum += std::log(p);
  }
  if (b.hyp_length == 0) {
    b.brevity_penalty = 0;
    b.score = 0;
    return b;
  }
  b.brevity_penalty = b.hyp_length > b.ref_length
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(b.ref_length) / static_cast<double>(b.hyp_length));
  b.score = b.brevity_penalty * std::exp(log_sum / max_n);
  return b;
}

/// Single-reference convenience overload.
template <typename Tok>
BleuScore corpus_bleu(const std::vector<std::vector<Tok>>& hyps, const std::vector<std::vector<Tok>>& refs, int max_n = 4) {
  std::vector<std::vector<std::vector<Tok>>> wrapped;
  wrapped.reserve(refs.size());
  for (const auto& r : refs) wrapped.push_back({r});
  return corpus_bleu(hyps, wrapped, max_n);
}

inline std::string format_bleu(const BleuScore& b) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "BLEU %.4f", b.score);
  out += buf;
  for (std::size_t n = 0; n < b.precisions.size(); ++n) {
    std::snprintf(buf, sizeof buf, " p%zu %.4f (%llu/%llu)", n + 1, b.precisions[n],
                  static_cast<unsigned long long>(b.matches[n]), static_cast<unsigned long long>(b.totals[n]));
    out += buf;
  }
  std::snprintf(buf, sizeof buf, " BP %.4f hyp_len %llu ref_len %llu", b.brevity_penalty,
                static_cast<unsigned long long>(b.hyp_length), static_cast<unsigned long long>(b.ref_length));
  out += buf;
  if (b.empty_hypotheses) out += " empty_hyps " + std::to_string(b.empty_hypotheses);
  return out;
}

inline nlohmann::json bleu_json(const BleuScore& b) {
  return {{"score", b.score},           {"precisions", b.precisions},      {"matches", b.matches},
          {"totals", b.totals},         {"brevity_penalty", b.brevity_penalty}, {"hyp_length", b.hyp_length},
          {"ref_length", b.ref_length}, {"empty_hypotheses", b.empty_hypotheses}};
}

// ---------------------------------------------------------------------------
// Lexicon recovery
// ---------------------------------------------------------------------------

using TranslateFn = std::function<Tokens(const Tokens&)>;

/// Fraction of `words` whose single-word translation is exactly the oracle
/// cipher word.
inline double lexicon_recovery(const TranslateFn& translate, const CipherSpec& spec,
                               const std::vector<std::string>& words) {
  if (words.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& w : words) {
    const Tokens expect = oracle_translate({w}, spec, CipherDirection::Encrypt);
    if (translate({w}) == expect) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(words.size());
}

// ---------------------------------------------------------------------------
// Human judgments
// ---------------------------------------------------------------------------

struct HumanJudgment {
  std::string item_id;
  std::string annotator_id;
  int relevance = 0;  // 0 or 1
  int fluency = 0;    // 0, 1 or 2
  std::int64_t ts = 0;  // unix milliseconds

  bool operator==(const HumanJudgment&) const = default;
};

inline void validate_judgment(const HumanJudgment& j) {
  if (j.item_id.empty()) throw ValidationError("item_id must be non-empty", "item_id");
  if (j.annotator_id.empty()) throw ValidationError("annotator_id must be non-empty", "annotator_id");
  if (j.relevance != 0 && j.relevance != 1) throw ValidationError("relevance must be 0 or 1", "relevance");
  if (j.fluency < 0 || j.fluency > 2) throw ValidationError("fluency must be 0, 1 or 2", "fluency");
}

inline nlohmann::json judgment_json(const HumanJudgment& j) {
  return {{"item_id", j.item_id}, {"annotator_id", j.annotator_id}, {"relevance", j.relevance},
          {"fluency", j.fluency}, {"ts", j.ts}};
}

/// Strict parse: every field present with the right type, then range checks.
inline HumanJudgment judgment_from_json(const nlohmann::json& v) {
  if (!v.is_object()) throw ValidationError("judgment must be a JSON object", "body");
  HumanJudgment j;
  auto str = [&](const char* f) {
    if (!v.contains(f) || !v.at(f).is_string()) throw ValidationError(std::string(f) + " must be a string", f);
    return v.at(f).get<std::string>();
  };
  auto integer = [&](const char* f) {
    if (!v.contains(f) || !v.at(f).is_number_integer()) {
      throw ValidationError(std::string(f) + " must be an integer", f);
    }
    return v.at(f).get<std::int64_t>();
  };
  j.item_id = str("item_id");
  j.annotator_id = str("annotator_id");
  const auto rel = integer("relevance");
  const auto flu = integer("fluency");
  if (rel < 0 || rel > 1) throw ValidationError("relevance must be 0 or 1", "relevance");
  if (flu < 0 || flu > 2) throw ValidationError("fluency must be 0, 1 or 2", "fluency");
  j.relevance = static_cast<int>(rel);
  j.fluency = static_cast<int>(flu);
  if (v.contains("ts")) j.ts = integer("ts");
  validate_judgment(j);
  return j;
}

struct SystemReport {
  std::string system;
  double relevance = 0;
  double fluency = 0;
  std::size_t items = 0;
  std::size_t judgments = 0;
  std::size_t missing = 0;  // (item, annotator) slots without a judgment
};

struct EvalReport {
  std::vector<SystemReport> systems;  // sorted by system label
  std::size_t items = 0;
  std::size_t annotators = 0;
  std::size_t judgments = 0;
  bool empty() const { return judgments == 0; }
};

inline constexpr const char* kUnlabeledSystem = "(unlabeled)";

/// Per-system arithmetic means over all judgments. Items judged by fewer
/// than all annotators are averaged over what exists; the shortfall is
/// counted in `missing`. Order of `judgments` does not matter.
inline EvalReport aggregate_judgments(const std::vector<HumanJudgment>& judgments,
                                      const std::map<std::string, std::string>& system_of_item) {
  EvalReport r;
  std::set<std::string> annotators;
  std::map<std::string, std::set<std::string>> items_per_system;
  std::map<std::string, std::pair<long long, long long>> sums;
  std::map<std::string, std::size_t> counts;
  for (const auto& j : judgments) {
    validate_judgment(j);
    annotators.insert(j.annotator_id);
    auto it = system_of_item.find(j.item_id);
    const std::string sys = it == system_of_item.end() ? kUnlabeledSystem : it->second;
    items_per_system[sys].insert(j.item_id);
    sums[sys].first += j.relevance;
    sums[sys].second += j.fluency;
    ++counts[sys];
  }
  r.annotators = annotators.size();
  r.judgments = judgments.size();
  for (const auto& [sys, items] : items_per_system) {
    SystemReport s;
    s.system = sys;
    s.items = items.size();
    s.judgments = counts[sys];
    s.relevance = static_cast<double>(sums[sys].first) / static_cast<double>(s.judgments);
    s.fluency = static_cast<double>(sums[sys].second) / static_cast<double>(s.judgments);
    s.missing = s.items * r.annotators - s.judgments;
    r.items += s.items;
    r.systems.push_back(s);
  }
  return r;
}

inline std::string format_mean(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

/// Plain-text table: one "system  relevance / fluency" row per system.
inline std::string render_report(const EvalReport& r) {
  if (r.empty()) return "no data\n";
  std::size_t width = std::string("Model").size();
  for (const auto& s : r.systems) width = std::max(width, s.system.size());
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size() + 2, ' '); };
  std::string out = pad("Model") + "Relevance / Fluency\n";
  for (const auto& s : r.systems) {
    out += pad(s.system) + format_mean(s.relevance) + " / " + format_mean(s.fluency) + "\n";
  }
  out += "\nitems " + std::to_string(r.items) + ", annotators " + std::to_string(r.annotators) + ", judgments " +
         std::to_string(r.judgments);
  std::size_t missing = 0;
  for (const auto& s : r.systems) missing += s.missing;
  if (missing) out += ", missing " + std::to_string(missing);
  out += "\n";
  return out;
}

inline nlohmann::json report_json(const EvalReport& r) {
  if (r.empty()) return {{"status", "no data"}, {"systems", nlohmann::json::array()}, {"table", render_report(r)}};
  nlohmann::json systems = nlohmann::json::array();
  for (const auto& s : r.systems) {
    systems.push_back({{"system", s.system}, {"relevance", s.relevance}, {"fluency", s.fluency},
                       {"items", s.items}, {"judgments", s.judgments}, {"missing", s.missing},
                       {"row", format_mean(s.relevance) + " / " + format_mean(s.fluency)}});
  }
  return {{"status", "ok"},           {"systems", systems},         {"items", r.items},
          {"annotators", r.annotators}, {"judgments", r.judgments}, {"table", render_report(r)}};
}

}  // namespace pcmgen
