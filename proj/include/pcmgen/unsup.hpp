#pragma once

// Unsupervised translation training: denoising autoencoding plus on-the-fly
// back-translation over two monolingual corpora. The training loop here is
// shared with self-training, which adds supervised pseudo-pair batches.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcmgen/seq2seq.hpp"

namespace pcmgen {

struct NoiseConfig {
  double p_drop = 0.1;
  int k = 3;

  void validate() const {
    if (!(p_drop >= 0 && p_drop < 1)) throw UsageError("noise p_drop must be in [0, 1)");
    if (k < 1) throw UsageError("noise shuffle window k must be >= 1");
  }
};

/// Word dropout (at least one token always survives) followed by a local
/// shuffle: each survivor at index i gets key i + U[0, k) and tokens are
/// stably sorted by key, so no token moves more than k-1 places.
inline Sentence add_noise(const Sentence& s, const NoiseConfig& cfg, Rng& rng) {
  Sentence out;
  out.lang = s.lang;
  if (s.empty()) return out;
  out.ids.reserve(s.size());
  for (int id : s.ids) {
    if (!rng.bernoulli(cfg.p_drop)) out.ids.push_back(id);
  }
  if (out.ids.empty()) out.ids.push_back(s.ids[rng.below(s.size())]);
  if (cfg.k > 1 && out.ids.size() > 1) {
    std::vector<std::pair<double, int>> keyed;
    keyed.reserve(out.ids.size());
    for (std::size_t i = 0; i < out.ids.size(); ++i) {
      keyed.emplace_back(static_cast<double>(i) + rng.uniform(0.0, cfg.k), out.ids[i]);
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < keyed.size(); ++i) out.ids[i] = keyed[i].second;
  }
  return out;
}

/// Reconstruct the clean batch from its noised copy, both tagged `lang`.
template <typename T>
Var denoising_loss(Tape<T>& tape, const Seq2SeqModel<T>& model, const std::vector<Sentence>& batch, Lang lang,
                   const NoiseConfig& noise, Rng& rng) {
  std::vector<Sentence> clean;
  std::vector<Sentence> noisy;
  clean.reserve(batch.size());
  noisy.reserve(batch.size());
  for (const auto& s : batch) {
    if (s.lang != lang) throw ShapeError("denoising batch holds a sentence in the wrong language");
    clean.push_back(s);
    noisy.push_back(add_noise(s, noise, rng));
  }
  return model.forward_loss(tape, noisy, clean);
}

/// Length cap for generated back-translations, relative to the longest source.
inline int backtranslation_max_len(const std::vector<Sentence>& batch, int hard_cap = 60) {
  std::size_t longest = 1;
  for (const auto& s : batch) longest = std::max(longest, s.size());
  return std::min(hard_cap, static_cast<int>(longest + longest / 2 + 5));
}

/// Greedy translation into the other language on a private tape, so the
/// generation pass contributes nothing to any gradient.
template <typename T>
std::vector<Sentence> back_translate(const Seq2SeqModel<T>& model, const std::vector<Sentence>& batch, Lang src_lang) {
  for (const auto& s : batch) {
    if (s.lang != src_lang) throw ShapeError("back-translation batch holds a sentence in the wrong language");
  }
  return model.greedy_batch(batch, other(src_lang), backtranslation_max_len(batch));
}

/// forward_loss(translations -> originals). `synthetic` receives the
/// generated sources when non-null.
template <typename T>
Var backtranslation_loss(Tape<T>& tape, const Seq2SeqModel<T>& model, const std::vector<Sentence>& batch,
                         Lang src_lang, std::vector<Sentence>* synthetic = nullptr) {
  std::vector<Sentence> synth = back_translate(model, batch, src_lang);
  Var loss = model.forward_loss(tape, synth, batch);
  if (synthetic) *synthetic = std::move(synth);
  return loss;
}

struct UnsupTrainConfig {
  double lambda_ae = 1.0;
  double lambda_bt = 1.0;
  int steps = 10000;
  int batch_size = 32;
  double lr = 1e-3;
  int eval_every = 500;
  int log_every = 100;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  NoiseConfig noise;

  void validate(bool allow_zero_weights = false) const {
    if (lambda_ae < 0 || lambda_bt < 0) throw UsageError("loss weights must be >= 0");
    if (!allow_zero_weights && lambda_ae == 0 && lambda_bt == 0) {
      throw UsageError("lambda_ae and lambda_bt cannot both be 0");
    }
    if (steps < 0) throw UsageError("steps must be >= 0");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (!(lr > 0)) throw UsageError("lr must be > 0");
    if (eval_every < 1 || log_every < 1) throw UsageError("eval_every and log_every must be >= 1");
    noise.validate();
  }
};

inline void to_json(nlohmann::json& j, const NoiseConfig& c) { j = {{"p_drop", c.p_drop}, {"k", c.k}}; }

inline void from_json(const nlohmann::json& j, NoiseConfig& c) {
  c.p_drop = j.value("p_drop", c.p_drop);
  c.k = j.value("k", c.k);
}

inline void to_json(nlohmann::json& j, const UnsupTrainConfig& c) {
  j = {{"lambda_ae", c.lambda_ae}, {"lambda_bt", c.lambda_bt}, {"steps", c.steps},
       {"batch_size", c.batch_size}, {"lr", c.lr}, {"eval_every", c.eval_every},
       {"log_every", c.log_every}, {"clip_norm", c.clip_norm}, {"seed", c.seed},
       {"noise", c.noise}};
}

inline void from_json(const nlohmann::json& j, UnsupTrainConfig& c) {
  c.lambda_ae = j.value("lambda_ae", c.lambda_ae);
  c.lambda_bt = j.value("lambda_bt", c.lambda_bt);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.log_every = j.value("log_every", c.log_every);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  if (j.contains("noise")) c.noise = j.at("noise").get<NoiseConfig>();
}

/// Endless shuffled pass over a corpus; reshuffles at each epoch boundary.
class BatchStream {
 public:
  BatchStream(const std::vector<Sentence>& data, Rng rng) : data_(&data), rng_(rng) {
    order_.resize(data.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::vector<std::size_t> next_indices(std::size_t n) {
    std::vector<std::size_t> out;
    out.reserve(n);
    while (out.size() < n) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

  std::vector<Sentence> next(std::size_t n) {
    std::vector<Sentence> out;
    for (auto i : next_indices(n)) out.push_back((*data_)[i]);
    return out;
  }

 private:
  const std::vector<Sentence>* data_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

struct StepStats {
  int step = 0;
  double ae_en = 0, ae_pcm = 0, bt_en = 0, bt_pcm = 0, pseudo = 0;
  double grad_norm = 0;
};

struct TrainLog {
  std::vector<StepStats> steps;                // every step
  std::vector<std::pair<int, double>> evals;   // (step, dev score)
  int best_step = 0;
  double best_score = -1;
};

/// Supervised English->Pidgin pairs mixed into training (self-training).
struct PseudoBatches {
  const std::vector<Sentence>* source = nullptr;
  const std::vector<Sentence>* target = nullptr;
  double per_step = 1.0;  // batches per AE+BT cycle; fractional values accumulate
  double weight = 1.0;
};

struct TrainHooks {
  /// Higher is better; when set, the best-scoring checkpoint is returned.
  std::function<double(const Model&)> dev_score;
  /// Called with the last good parameters before a divergence is raised.
  std::function<void(const Model&, int step)> on_divergence;
  std::ostream* log = nullptr;
};

namespace detail {

inline void check_corpus(const std::vector<Sentence>& c, Lang lang, const char* what) {
  if (c.empty()) throw DataError(std::string(what) + " corpus is empty");
  for (const auto& s : c) {
    if (s.empty()) throw DataError(std::string(what) + " corpus contains an empty sentence");
    if (s.lang != lang) throw DataError(std::string(what) + " corpus has a sentence in the wrong language");
  }
}

}  // namespace detail

/// The shared loop. Each step accumulates the weighted AE(en), AE(pcm),
/// BT(en->pcm->en), BT(pcm->en->pcm) and any pseudo-pair losses, clips the
/// global gradient norm and applies one Adam update. All randomness comes
/// from cfg.seed.
inline Model train_translation(Model model, const std::vector<Sentence>& en, const std::vector<Sentence>& pcm,
                               const UnsupTrainConfig& cfg, const PseudoBatches* pseudo = nullptr,
                               const TrainHooks& hooks = {}, TrainLog* log_out = nullptr) {
  const bool has_pseudo = pseudo && pseudo->source && !pseudo->source->empty();
  cfg.validate(has_pseudo);
  const bool need_mono = cfg.lambda_ae > 0 || cfg.lambda_bt > 0;
  if (need_mono) {
    detail::check_corpus(en, Lang::English, "English");
    detail::check_corpus(pcm, Lang::Pidgin, "Pidgin");
  }
  if (has_pseudo && pseudo->source->size() != pseudo->target->size()) {
    throw DataError("pseudo-pair source and target counts differ");
  }

  // The four streams are always forked, in this order, so each one's seed
  // does not depend on which objectives are enabled.
  Rng master(cfg.seed);
  Rng en_rng = master.fork(1);
  Rng pcm_rng = master.fork(2);
  Rng noise_rng = master.fork(3);
  Rng pseudo_rng = master.fork(4);
  std::optional<BatchStream> en_stream, pcm_stream, pseudo_stream;
  if (need_mono) {
    en_stream.emplace(en, en_rng);
    pcm_stream.emplace(pcm, pcm_rng);
  }
  if (has_pseudo) pseudo_stream.emplace(*pseudo->source, pseudo_rng);

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  AdamState<float> adam(model.params(), acfg);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  TrainLog local_log;
  TrainLog& tl = log_out ? *log_out : local_log;
  ParameterStore<float> best = model.params();
  ParameterStore<float> last_good = model.params();
  int last_good_step = 0;
  tl.best_step = 0;
  tl.best_score = -1;

  auto evaluate = [&](int step) {
    if (!hooks.dev_score) return;
    const double score = hooks.dev_score(model);
    tl.evals.emplace_back(step, score);
    if (hooks.log) *hooks.log << "step " << step << " dev " << score << "\n";
    if (score > tl.best_score) {
      tl.best_score = score;
      tl.best_step = step;
      best = model.params();
    }
  };
  evaluate(0);

  double pseudo_credit = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    StepStats st;
    st.step = step;
    Gradients<float> total = zero_gradients(model.params());
    auto run = [&](auto&& build, double weight, double& slot) {
      Tape<float> tape(model.params());
      Var loss = build(tape);
      slot = tape.value(loss)(0, 0);
      if (!std::isfinite(slot)) throw NumericError("training loss is not finite");
      accumulate(total, tape.backward(loss), static_cast<float>(weight));
    };
    try {
      if (cfg.lambda_ae > 0) {
        const auto be = en_stream->next(bs);
        run([&](Tape<float>& t) { return denoising_loss(t, model, be, Lang::English, cfg.noise, noise_rng); },
            cfg.lambda_ae, st.ae_en);
        const auto bp = pcm_stream->next(bs);
        run([&](Tape<float>& t) { return denoising_loss(t, model, bp, Lang::Pidgin, cfg.noise, noise_rng); },
            cfg.lambda_ae, st.ae_pcm);
      }
      if (cfg.lambda_bt > 0) {
        const auto be = en_stream->next(bs);
        run([&](Tape<float>& t) { return backtranslation_loss(t, model, be, Lang::English); }, cfg.lambda_bt,
            st.bt_en);
        const auto bp = pcm_stream->next(bs);
        run([&](Tape<float>& t) { return backtranslation_loss(t, model, bp, Lang::Pidgin); }, cfg.lambda_bt,
            st.bt_pcm);
      }
      if (has_pseudo) {
        pseudo_credit += pseudo->per_step;
        int n = 0;
        double sum = 0;
        while (pseudo_credit >= 1.0) {
          pseudo_credit -= 1.0;
          std::vector<Sentence> src, tgt;
          for (auto i : pseudo_stream->next_indices(bs)) {
            src.push_back((*pseudo->source)[i]);
            tgt.push_back((*pseudo->target)[i]);
          }
          double l = 0;
          run([&](Tape<float>& t) { return model.forward_loss(t, src, tgt); }, pseudo->weight, l);
          sum += l;
          ++n;
        }
        st.pseudo = n ? sum / n : 0.0;
      }
      st.grad_norm = clip_global_norm(total, cfg.clip_norm);
      if (!std::isfinite(st.grad_norm)) throw NumericError("gradient norm is not finite");
      adam_step(model.params(), total, adam);
    } catch (const NumericError& e) {
      model.params() = last_good;
      if (hooks.on_divergence) hooks.on_divergence(model, last_good_step);
      throw DivergenceError("training diverged at step " + std::to_string(step) + " (" + e.what() +
                            "); last good parameters are from step " + std::to_string(last_good_step));
    }
    tl.steps.push_back(st);
    if (hooks.log && (step % cfg.log_every == 0 || step == cfg.steps)) {
      *hooks.log << "step " << step << " ae_en " << st.ae_en << " ae_pcm " << st.ae_pcm << " bt_en "
                 << st.bt_en << " bt_pcm " << st.bt_pcm;
      if (has_pseudo) *hooks.log << " pseudo " << st.pseudo;
      *hooks.log << " |g| " << st.grad_norm << "\n";
    }
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      last_good = model.params();
      last_good_step = step;
      evaluate(step);
    }
  }

  if (hooks.dev_score) model.params() = best;
  return model;
}

/// Denoising + back-translation only.
inline Model unsup_train(Model init, const std::vector<Sentence>& en, const std::vector<Sentence>& pcm,
                         const UnsupTrainConfig& cfg, const TrainHooks& hooks = {}, TrainLog* log = nullptr) {
  return train_translation(std::move(init), en, pcm, cfg, nullptr, hooks, log);
}

}  // namespace pcmgen
