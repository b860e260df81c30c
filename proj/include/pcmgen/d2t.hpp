#pragma once

// Data-to-English generation from linearized MRs, and the MR -> English ->
// Pidgin pipeline.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcmgen/corpus.hpp"
#include "pcmgen/unsup.hpp"

namespace pcmgen {

inline std::string open_marker(std::string_view attr) { return "<" + std::string(attr) + ">"; }
inline std::string close_marker(std::string_view attr) { return "</" + std::string(attr) + ">"; }

/// All 16 slot marker tokens, canonical order, open before close.
inline Tokens marker_tokens() {
  Tokens out;
  for (auto a : kMrAttributes) {
    out.push_back(open_marker(a));
    out.push_back(close_marker(a));
  }
  return out;
}

inline bool is_marker(std::string_view token) {
  for (auto a : kMrAttributes) {
    if (token == open_marker(a) || token == close_marker(a)) return true;
  }
  return false;
}

/// `<attr> value tokens </attr>` blocks in canonical attribute order; values
/// are normalized.
inline Tokens linearize_mr(const MeaningRepresentation& mr) {
  validate_mr(mr);
  Tokens out;
  for (auto a : kMrAttributes) {
    const std::string* v = mr.find(a);
    if (!v) continue;
    out.push_back(open_marker(a));
    for (auto& t : normalize_tokens(*v)) out.push_back(std::move(t));
    out.push_back(close_marker(a));
  }
  return out;
}

/// Inverse of linearize_mr: slots in canonical order with normalized values.
inline MeaningRepresentation delinearize_mr(const Tokens& tokens) {
  MeaningRepresentation mr;
  std::size_t i = 0;
  while (i < tokens.size()) {
    const std::string& open = tokens[i];
    if (open.size() < 3 || open.front() != '<' || open.back() != '>' || open[1] == '/') {
      throw ParseError("expected an opening slot marker, found '" + open + "'", i);
    }
    const std::string attr = open.substr(1, open.size() - 2);
    if (attribute_index(attr) < 0) throw ValidationError("unknown attribute '" + attr + "'", attr);
    const std::string close = close_marker(attr);
    std::size_t j = i + 1;
    Tokens value;
    while (j < tokens.size() && tokens[j] != close) {
      if (is_marker(tokens[j])) throw ParseError("nested slot marker '" + tokens[j] + "'", j);
      value.push_back(tokens[j]);
      ++j;
    }
    if (j == tokens.size()) throw ParseError("unterminated slot '" + attr + "'", i);
    if (value.empty()) throw ParseError("empty value for slot '" + attr + "'", i);
    mr.slots.push_back({attr, join(value)});
    i = j + 1;
  }
  validate_mr(mr);
  return mr;
}

/// Token lists to build a shared vocabulary that covers d2t sources and
/// targets (markers included).
inline std::vector<Tokens> d2t_vocab_sentences(const std::vector<D2TExample>& examples) {
  std::vector<Tokens> out;
  out.reserve(2 * examples.size() + 1);
  out.push_back(marker_tokens());
  for (const auto& ex : examples) {
    out.push_back(linearize_mr(ex.mr));
    out.push_back(ex.reference);
  }
  return out;
}

struct D2TTrainConfig {
  int steps = 3000;
  int batch_size = 32;
  double lr = 1e-3;
  double clip_norm = 5.0;
  int log_every = 100;
  std::uint64_t seed = 1;

  void validate() const {
    if (steps < 0 || batch_size < 1 || !(lr > 0) || log_every < 1) {
      throw UsageError("d2t config: steps >= 0, batch_size >= 1, lr > 0, log_every >= 1 required");
    }
  }
};

inline void to_json(nlohmann::json& j, const D2TTrainConfig& c) {
  j = {{"steps", c.steps}, {"batch_size", c.batch_size}, {"lr", c.lr},
       {"clip_norm", c.clip_norm}, {"log_every", c.log_every}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, D2TTrainConfig& c) {
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.log_every = j.value("log_every", c.log_every);
  c.seed = j.value("seed", c.seed);
}

/// (linearized MR, first reference) per distinct MR, as English sentences.
inline std::pair<std::vector<Sentence>, std::vector<Sentence>> d2t_training_pairs(
    const std::vector<D2TExample>& examples, const Vocab& vocab) {
  std::pair<std::vector<Sentence>, std::vector<Sentence>> out;
  for (const auto& g : group_by_mr(examples)) {
    out.first.push_back(encode(linearize_mr(g.mr), vocab, Lang::English));
    out.second.push_back(encode(g.references.front(), vocab, Lang::English));
  }
  return out;
}

/// Supervised training of a seq2seq model from linearized MRs to English.
inline Model train_d2t(Model model, const std::vector<D2TExample>& examples, const D2TTrainConfig& cfg,
                       std::ostream* log = nullptr) {
  cfg.validate();
  if (examples.empty()) throw DataError("no d2t training examples");
  for (const auto& m : marker_tokens()) {
    if (!model.vocab().contains(m)) throw DataError("vocabulary lacks slot marker " + m);
  }
  const auto [src, tgt] = d2t_training_pairs(examples, model.vocab());
  Rng rng(cfg.seed);
  BatchStream stream(src, rng.fork(1));
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  AdamState<float> adam(model.params(), acfg);
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<Sentence> bs, bt;
    for (auto i : stream.next_indices(static_cast<std::size_t>(cfg.batch_size))) {
      bs.push_back(src[i]);
      bt.push_back(tgt[i]);
    }
    Tape<float> tape(model.params());
    Var loss;
    double value = 0;
    Gradients<float> g;
    try {
      loss = model.forward_loss(tape, bs, bt);
      value = tape.value(loss)(0, 0);
      g = tape.backward(loss);
    } catch (const NumericError& e) {
      throw DivergenceError("d2t training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    const double norm = clip_global_norm(g, cfg.clip_norm);
    if (!std::isfinite(norm)) throw DivergenceError("d2t gradient norm not finite at step " + std::to_string(step));
    adam_step(model.params(), g, adam);
    if (log && (step % cfg.log_every == 0 || step == cfg.steps)) {
      *log << "d2t step " << step << " loss " << value << " |g| " << norm << "\n";
    }
  }
  return model;
}

/// English generation for one MR.
inline Tokens generate_english(const Model& d2t, const MeaningRepresentation& mr, const DecodeConfig& dcfg = {}) {
  const Sentence src = encode(linearize_mr(mr), d2t.vocab(), Lang::English);
  return decode(d2t.translate(src, Lang::English, dcfg), d2t.vocab());
}

inline Tokens translate_tokens(const Model& mt, const Tokens& text, Lang from, Lang to, const DecodeConfig& dcfg = {}) {
  return decode(mt.translate(encode(text, mt.vocab(), from), to, dcfg), mt.vocab());
}

struct PipelineOutput {
  Tokens english;
  Tokens pidgin;
  std::size_t marker_violations = 0;  // marker tokens in the English output
};

inline void check_compatible(const Model& d2t, const Model& mt) {
  if (d2t.vocab_hash() != mt.vocab_hash()) {
    throw DataError("d2t and translation checkpoints use different vocabularies (hash " + hex64(d2t.vocab_hash()) +
                    " vs " + hex64(mt.vocab_hash()) + ")");
  }
}

/// MR -> English (d2t) -> Pidgin (mt). Both texts are returned.
inline PipelineOutput pipeline_generate(const MeaningRepresentation& mr, const Model& d2t, const Model& mt,
                                        const DecodeConfig& dcfg = {}) {
  check_compatible(d2t, mt);
  PipelineOutput out;
  out.english = generate_english(d2t, mr, dcfg);
  for (const auto& t : out.english) out.marker_violations += is_marker(t);
  out.pidgin = translate_tokens(mt, out.english, Lang::English, Lang::Pidgin, dcfg);
  return out;
}

/// Fraction of outputs containing the MR's name value as a contiguous token
/// run.
inline double name_realization(const std::vector<MeaningRepresentation>& mrs, const std::vector<Tokens>& outputs) {
  if (mrs.size() != outputs.size()) throw ShapeError("name_realization: size mismatch");
  if (mrs.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < mrs.size(); ++i) {
    const std::string* name = mrs[i].find("name");
    if (!name) continue;
    const Tokens needle = normalize_tokens(*name);
    const auto& hay = outputs[i];
    hits += std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
  }
  return static_cast<double>(hits) / static_cast<double>(mrs.size());
}

}  // namespace pcmgen
