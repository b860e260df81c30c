#pragma once

// Self-training: translate in-domain English with model_unsup into pseudo
// Pidgin, filter the pairs, then keep training on them together with the
// denoising and back-translation objectives.

#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcmgen/corpus.hpp"
#include "pcmgen/unsup.hpp"

namespace pcmgen {

/// One pair per input, in input order. Targets are decoded into Pidgin with
/// `dcfg`; scores are the model's mean per-token log-probability.
inline std::vector<PseudoPair> generate_pseudo(const Model& model, const std::vector<Tokens>& english,
                                               const DecodeConfig& dcfg = {}, std::size_t batch_size = 64) {
  dcfg.validate();
  const Vocab& vocab = model.vocab();
  std::vector<PseudoPair> out;
  out.reserve(english.size());
  for_each_batch(english.size(), batch_size, [&](std::size_t b, std::size_t e) {
    std::vector<Sentence> src;
    for (std::size_t i = b; i < e; ++i) src.push_back(encode(english[i], vocab, Lang::English));
    std::vector<Sentence> tgt;
    if (dcfg.mode == DecodeConfig::Mode::Greedy) {
      tgt = model.greedy_batch(src, Lang::Pidgin, dcfg.max_len);
    } else {
      for (const auto& s : src) tgt.push_back(model.beam_search(s, Lang::Pidgin, dcfg));
    }
    const auto scores = model.score_batch(src, tgt);
    for (std::size_t i = 0; i < src.size(); ++i) {
      out.push_back({english[b + i], decode(tgt[i], vocab), scores[i]});
    }
  });
  return out;
}

struct FilterReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t bad_ratio = 0;
  std::size_t repeated_token = 0;
  std::size_t duplicate = 0;
};

inline constexpr double kMinLengthRatio = 0.5;
inline constexpr double kMaxLengthRatio = 2.0;

/// Drops pairs whose target/source length ratio falls outside [0.5, 2],
/// whose target repeats a single token (two or more times), or that repeat
/// an earlier (source, target). Rules are checked in that order and each
/// dropped pair is counted once. Idempotent.
inline std::vector<PseudoPair> filter_pseudo(const std::vector<PseudoPair>& pairs, FilterReport* report = nullptr) {
  FilterReport rep;
  rep.input = pairs.size();
  std::vector<PseudoPair> out;
  std::set<std::pair<Tokens, Tokens>> seen;
  for (const auto& p : pairs) {
    const double ratio = p.source.empty() ? 0.0
                                          : static_cast<double>(p.target.size()) / static_cast<double>(p.source.size());
    if (ratio < kMinLengthRatio || ratio > kMaxLengthRatio) {
      ++rep.bad_ratio;
      continue;
    }
    bool repeated = p.target.size() >= 2;
    for (std::size_t i = 1; repeated && i < p.target.size(); ++i) repeated = p.target[i] == p.target[0];
    if (repeated) {
      ++rep.repeated_token;
      continue;
    }
    if (!seen.insert({p.source, p.target}).second) {
      ++rep.duplicate;
      continue;
    }
    out.push_back(p);
  }
  rep.kept = out.size();
  if (report) *report = rep;
  return out;
}

inline nlohmann::json filter_report_json(const FilterReport& r) {
  return {{"input", r.input}, {"kept", r.kept}, {"dropped_ratio", r.bad_ratio},
          {"dropped_repeated_token", r.repeated_token}, {"dropped_duplicate", r.duplicate}};
}

struct SelfTrainConfig {
  UnsupTrainConfig base;
  double pseudo_batch_ratio = 1.0;  // pseudo batches per AE+BT cycle
  double lambda_pseudo = 1.0;
  std::string pseudo_path;  // existing pseudo-pair TSV; empty = generate
};

inline void to_json(nlohmann::json& j, const SelfTrainConfig& c) {
  j = c.base;
  j["pseudo_batch_ratio"] = c.pseudo_batch_ratio;
  j["lambda_pseudo"] = c.lambda_pseudo;
  j["pseudo_path"] = c.pseudo_path;
}

inline void from_json(const nlohmann::json& j, SelfTrainConfig& c) {
  c.base = j.get<UnsupTrainConfig>();
  c.pseudo_batch_ratio = j.value("pseudo_batch_ratio", c.pseudo_batch_ratio);
  c.lambda_pseudo = j.value("lambda_pseudo", c.lambda_pseudo);
  c.pseudo_path = j.value("pseudo_path", c.pseudo_path);
}

/// Warm-starts from `model_unsup` and trains English->Pidgin on the pseudo
/// pairs alongside the unsupervised objectives.
inline Model self_train(const Model& model_unsup, const std::vector<PseudoPair>& pairs,
                        const std::vector<Sentence>& en, const std::vector<Sentence>& pcm, const SelfTrainConfig& cfg,
                        const TrainHooks& hooks = {}, TrainLog* log = nullptr) {
  if (pairs.empty()) throw DataError("self-training needs at least one pseudo pair");
  if (cfg.pseudo_batch_ratio < 0 || cfg.lambda_pseudo < 0) {
    throw UsageError("pseudo_batch_ratio and lambda_pseudo must be >= 0");
  }
  const Vocab& vocab = model_unsup.vocab();
  std::vector<Sentence> src, tgt;
  src.reserve(pairs.size());
  tgt.reserve(pairs.size());
  for (const auto& p : pairs) {
    src.push_back(encode(p.source, vocab, Lang::English));
    tgt.push_back(encode(p.target, vocab, Lang::Pidgin));
  }
  PseudoBatches pb;
  pb.source = &src;
  pb.target = &tgt;
  pb.per_step = cfg.pseudo_batch_ratio;
  pb.weight = cfg.lambda_pseudo;
  return train_translation(model_unsup, en, pcm, cfg.base, cfg.pseudo_batch_ratio > 0 ? &pb : nullptr, hooks, log);
}

}  // namespace pcmgen
