#pragma once

// Shared attentional encoder-decoder used for every model in the pipeline.
//
// Encoder: bidirectional GRU over source embeddings (+ EOS).
// Decoder: GRU whose input at every step is the previous token embedding
// plus a language embedding; the first input is the target language token.
// Attention: dot product between the decoder state and a linear projection
// of the encoder states. Output: tanh([h; context] W + b) times the
// embedding table transposed (tied), plus a vocabulary bias.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "pcmgen/checkpoint.hpp"
#include "pcmgen/embed.hpp"
#include "pcmgen/error.hpp"
#include "pcmgen/rng.hpp"
#include "pcmgen/tensor.hpp"
#include "pcmgen/textcore.hpp"

namespace pcmgen {

struct ModelDims {
  int emb = kEmbeddingDim;
  int hidden = 256;
};

struct DecodeConfig {
  enum class Mode { Greedy, Beam };
  Mode mode = Mode::Greedy;
  int width = 1;
  int max_len = 60;
  double length_penalty = 0.6;

  static DecodeConfig greedy(int max_len = 60) { return {Mode::Greedy, 1, max_len, 0.6}; }
  static DecodeConfig beam(int width, int max_len = 60) { return {Mode::Beam, width, max_len, 0.6}; }

  void validate() const {
    if (width < 1) throw UsageError("beam width must be >= 1");
    if (max_len < 1) throw UsageError("max_len must be >= 1");
  }
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

/// Time-major padded ids: position t of item b lives at t * rows + b.
template <typename T>
struct PaddedBatch {
  int rows = 0;
  int len = 0;
  std::vector<int> ids;
  std::vector<T> mask;  // 1 for real tokens, 0 for padding

  std::span<const T> mask_at(int t) const {
    return std::span<const T>(mask).subspan(static_cast<std::size_t>(t * rows), static_cast<std::size_t>(rows));
  }
};

/// Source side: tokens followed by EOS.
template <typename T>
PaddedBatch<T> source_batch(const std::vector<Sentence>& src) {
  PaddedBatch<T> b;
  b.rows = static_cast<int>(src.size());
  for (const auto& s : src) b.len = std::max(b.len, static_cast<int>(s.size()) + 1);
  b.ids.assign(static_cast<std::size_t>(b.len * b.rows), special::kPad);
  b.mask.assign(b.ids.size(), T(0));
  for (int r = 0; r < b.rows; ++r) {
    const auto& ids = src[static_cast<std::size_t>(r)].ids;
    for (int t = 0; t <= static_cast<int>(ids.size()); ++t) {
      const auto at = static_cast<std::size_t>(t * b.rows + r);
      b.ids[at] = t < static_cast<int>(ids.size()) ? ids[static_cast<std::size_t>(t)] : special::kEos;
      b.mask[at] = T(1);
    }
  }
  return b;
}

/// Decoder side for teacher forcing: inputs [LANG y1..yn], outputs [y1..yn EOS].
template <typename T>
std::pair<PaddedBatch<T>, std::vector<int>> target_batch(const std::vector<Sentence>& tgt, Lang lang) {
  PaddedBatch<T> in;
  in.rows = static_cast<int>(tgt.size());
  for (const auto& s : tgt) in.len = std::max(in.len, static_cast<int>(s.size()) + 1);
  in.ids.assign(static_cast<std::size_t>(in.len * in.rows), special::kPad);
  in.mask.assign(in.ids.size(), T(0));
  std::vector<int> out(in.ids.size(), special::kPad);
  for (int r = 0; r < in.rows; ++r) {
    const auto& ids = tgt[static_cast<std::size_t>(r)].ids;
    const int n = static_cast<int>(ids.size());
    for (int t = 0; t <= n; ++t) {
      const auto at = static_cast<std::size_t>(t * in.rows + r);
      in.ids[at] = t == 0 ? lang_token(lang) : ids[static_cast<std::size_t>(t - 1)];
      in.mask[at] = T(1);
      out[at] = t < n ? ids[static_cast<std::size_t>(t)] : special::kEos;
    }
  }
  return {std::move(in), std::move(out)};
}

struct Seq2SeqParamIds {
  int embed, lang;
  int enc_fw_wx, enc_fw_bx, enc_fw_wh, enc_fw_bh;
  int enc_bw_wx, enc_bw_bx, enc_bw_wh, enc_bw_bh;
  int init_w, init_b, att_w;
  int dec_wx, dec_bx, dec_wh, dec_bh;
  int out_w, out_b, vocab_b;
};

template <typename T>
class Seq2SeqModel {
 public:
  using ParamIds = Seq2SeqParamIds;

  struct Encoded {
    Var states;  // (S*B) x 2H
    Var keys;    // (S*B) x H
    Var init;    // B x H
    Var mask;    // B x S additive: 0 or -1e9
    int rows = 0;
    int len = 0;
  };

  Seq2SeqModel() = default;

  /// Fresh model with uniform(+-0.1) parameters.
  static Seq2SeqModel create(std::shared_ptr<const Vocab> vocab, ModelDims dims, std::uint64_t seed) {
    Seq2SeqModel m;
    m.vocab_ = std::move(vocab);
    m.dims_ = dims;
    Rng rng(seed);
    m.build([&](Eigen::Index r, Eigen::Index c) { return uniform_matrix<T>(r, c, 0.1, rng); });
    return m;
  }

  static Seq2SeqModel create(const Vocab& vocab, ModelDims dims, std::uint64_t seed) {
    return create(std::make_shared<const Vocab>(vocab), dims, seed);
  }

  /// Copies pretrained vectors into embedding rows whose token matches.
  /// Returns the number of rows initialized.
  int init_embeddings(const WordVectors& wv) {
    if (wv.vectors.cols() != dims_.emb) {
      throw ShapeError("embedding dim " + std::to_string(wv.vectors.cols()) + " does not match model dim " +
                       std::to_string(dims_.emb));
    }
    auto& E = params_.value(ids_.embed);
    int hits = 0;
    for (std::size_t i = 0; i < wv.words.size(); ++i) {
      if (!vocab_->contains(wv.words[i])) continue;
      E.row(vocab_->id(wv.words[i])) = wv.vectors.row(static_cast<Eigen::Index>(i)).template cast<T>();
      ++hits;
    }
    return hits;
  }

  const Vocab& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocab> shared_vocab() const { return vocab_; }
  std::uint64_t vocab_hash() const { return vocab_->hash(); }
  ModelDims dims() const { return dims_; }
  const ParamIds& ids() const { return ids_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  template <typename U>
  Seq2SeqModel<U> cast() const {
    Seq2SeqModel<U> out;
    out.vocab_ = vocab_;
    out.dims_ = dims_;
    out.params_ = params_.template cast<U>();
    out.ids_ = ids_;
    return out;
  }

  // -------------------------------------------------------------------------
  // Graph construction
  // -------------------------------------------------------------------------

  Encoded encode(Tape<T>& tape, const PaddedBatch<T>& src) const {
    const int B = src.rows;
    const int S = src.len;
    const int H = dims_.hidden;
    Var E = tape.parameter(ids_.embed);
    Var X = tape.embedding(E, src.ids);
    auto direction = [&](int wx, int bx, int wh, int bh, bool reverse) {
      Var GX = tape.add_bias(tape.matmul(X, tape.parameter(wx)), tape.parameter(bx));
      Var Wh = tape.parameter(wh);
      Var Bh = tape.parameter(bh);
      Var h = tape.constant(Mat<T>::Zero(B, H));
      std::vector<Var> out(static_cast<std::size_t>(S));
      for (int k = 0; k < S; ++k) {
        const int t = reverse ? S - 1 - k : k;
        Var gx = tape.slice_rows(GX, static_cast<Eigen::Index>(t) * B, B);
        Var gh = tape.add_bias(tape.matmul(h, Wh), Bh);
        h = tape.blend(tape.gru(gx, gh, h), h, src.mask_at(t));
        out[static_cast<std::size_t>(t)] = h;
      }
      return std::make_pair(out, h);
    };
    auto [fw, fw_last] = direction(ids_.enc_fw_wx, ids_.enc_fw_bx, ids_.enc_fw_wh, ids_.enc_fw_bh, false);
    auto [bw, bw_last] = direction(ids_.enc_bw_wx, ids_.enc_bw_bx, ids_.enc_bw_wh, ids_.enc_bw_bh, true);
    std::vector<Var> per_step;
    per_step.reserve(static_cast<std::size_t>(S));
    for (int t = 0; t < S; ++t) {
      per_step.push_back(tape.concat({fw[static_cast<std::size_t>(t)], bw[static_cast<std::size_t>(t)]}));
    }
    Encoded enc;
    enc.rows = B;
    enc.len = S;
    enc.states = tape.stack_rows(per_step);
    enc.keys = tape.matmul(enc.states, tape.parameter(ids_.att_w));
    enc.init = tape.tanh(tape.add_bias(tape.matmul(tape.concat({fw_last, bw_last}), tape.parameter(ids_.init_w)),
                                       tape.parameter(ids_.init_b)));
    Mat<T> mask(B, S);
    for (int b = 0; b < B; ++b) {
      for (int t = 0; t < S; ++t) {
        mask(b, t) = src.mask[static_cast<std::size_t>(t * B + b)] > T(0) ? T(0) : T(-1e9);
      }
    }
    enc.mask = tape.constant(std::move(mask));
    return enc;
  }

  /// Attention weights for decoder state h (B x S).
  Var attention(Tape<T>& tape, const Encoded& enc, Var h) const {
    return tape.softmax(tape.add(tape.attention_scores(h, enc.keys), enc.mask));
  }

  /// One decoder transition. Returns the new state and the B x E output
  /// feature (pre-projection).
  std::pair<Var, Var> decoder_cell(Tape<T>& tape, const Encoded& enc, Var gx, Var h) const {
    Var gh = tape.add_bias(tape.matmul(h, tape.parameter(ids_.dec_wh)), tape.parameter(ids_.dec_bh));
    Var hn = tape.gru(gx, gh, h);
    Var ctx = tape.attention_context(attention(tape, enc, hn), enc.states);
    Var feat = tape.tanh(tape.add_bias(tape.matmul(tape.concat({hn, ctx}), tape.parameter(ids_.out_w)),
                                       tape.parameter(ids_.out_b)));
    return {hn, feat};
  }

  Var decoder_inputs(Tape<T>& tape, std::span<const int> ids, Lang lang) const {
    std::vector<int> lang_ids(ids.size(), static_cast<int>(lang));
    Var x = tape.add(tape.embedding(tape.parameter(ids_.embed), ids),
                     tape.embedding(tape.parameter(ids_.lang), lang_ids));
    return tape.add_bias(tape.matmul(x, tape.parameter(ids_.dec_wx)), tape.parameter(ids_.dec_bx));
  }

  Var project(Tape<T>& tape, Var features) const {
    return tape.add_bias(tape.matmul_nt(features, tape.parameter(ids_.embed)), tape.parameter(ids_.vocab_b));
  }

  /// Teacher-forced logits ((T*B) x V, time-major) and their target ids.
  std::pair<Var, std::vector<int>> forward_logits(Tape<T>& tape, const std::vector<Sentence>& src,
                                                  const std::vector<Sentence>& tgt) const {
    if (src.empty() || src.size() != tgt.size()) {
      throw ShapeError("forward: " + std::to_string(src.size()) + " sources vs " +
                       std::to_string(tgt.size()) + " targets");
    }
    const Lang lang = tgt.front().lang;
    for (const auto& s : tgt) {
      if (s.lang != lang) throw ShapeError("forward: mixed target languages in one batch");
    }
    const auto sb = source_batch<T>(src);
    auto [tin, tout] = target_batch<T>(tgt, lang);
    const Encoded enc = encode(tape, sb);
    Var GX = decoder_inputs(tape, tin.ids, lang);
    Var h = enc.init;
    std::vector<Var> feats;
    feats.reserve(static_cast<std::size_t>(tin.len));
    for (int t = 0; t < tin.len; ++t) {
      Var gx = tape.slice_rows(GX, static_cast<Eigen::Index>(t) * tin.rows, tin.rows);
      auto [hn, feat] = decoder_cell(tape, enc, gx, h);
      h = hn;
      feats.push_back(feat);
    }
    return {project(tape, tape.stack_rows(feats)), std::move(tout)};
  }

  /// Mean token cross entropy over non-PAD target positions.
  Var forward_loss(Tape<T>& tape, const std::vector<Sentence>& src, const std::vector<Sentence>& tgt) const {
    auto [logits, targets] = forward_logits(tape, src, tgt);
    return tape.cross_entropy(logits, targets, special::kPad);
  }

  // -------------------------------------------------------------------------
  // Inference
  // -------------------------------------------------------------------------

  /// Mean per-token log-probability of each target (EOS included).
  std::vector<double> score_batch(const std::vector<Sentence>& src, const std::vector<Sentence>& tgt) const {
    Tape<T> tape(params_);
    auto [logits, targets] = forward_logits(tape, src, tgt);
    const auto& L = tape.value(logits);
    const int B = static_cast<int>(src.size());
    std::vector<double> sum(static_cast<std::size_t>(B), 0.0);
    std::vector<int> count(static_cast<std::size_t>(B), 0);
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
      const int t = targets[static_cast<std::size_t>(i)];
      if (t == special::kPad) continue;
      const auto b = static_cast<std::size_t>(i % B);
      sum[b] += log_softmax_at(L.row(i), t);
      ++count[b];
    }
    for (std::size_t b = 0; b < sum.size(); ++b) sum[b] /= std::max(count[b], 1);
    return sum;
  }

  double score(const Sentence& src, const Sentence& tgt) const { return score_batch({src}, {tgt}).front(); }

  /// Greedy decoding of a batch. Output carries `lang`; stops at EOS or max_len.
  std::vector<Sentence> greedy_batch(const std::vector<Sentence>& src, Lang lang, int max_len,
                                     std::vector<double>* mean_logprob = nullptr) const {
    std::vector<Sentence> out(src.size());
    for (auto& s : out) s.lang = lang;
    if (src.empty()) return out;
    Tape<T> tape(params_);
    const Encoded enc = encode(tape, source_batch<T>(src));
    const int B = enc.rows;
    std::vector<int> prev(static_cast<std::size_t>(B), lang_token(lang));
    std::vector<bool> done(static_cast<std::size_t>(B), false);
    std::vector<double> lp(static_cast<std::size_t>(B), 0.0);
    Var h = enc.init;
    int remaining = B;
    for (int step = 0; step < max_len && remaining > 0; ++step) {
      Var gx = decoder_inputs(tape, prev, lang);
      auto [hn, feat] = decoder_cell(tape, enc, gx, h);
      h = hn;
      const auto& L = tape.value(project(tape, feat));
      for (int b = 0; b < B; ++b) {
        if (done[static_cast<std::size_t>(b)]) continue;
        const Eigen::Matrix<T, 1, Eigen::Dynamic> logp = log_softmax_row(L.row(b));
        const int tok = best_token(logp);
        lp[static_cast<std::size_t>(b)] += static_cast<double>(logp[tok]);
        prev[static_cast<std::size_t>(b)] = tok;
        if (tok == special::kEos) {
          done[static_cast<std::size_t>(b)] = true;
          --remaining;
        } else {
          out[static_cast<std::size_t>(b)].ids.push_back(tok);
        }
      }
    }
    if (mean_logprob) {
      mean_logprob->resize(static_cast<std::size_t>(B));
      for (int b = 0; b < B; ++b) {
        const auto n = out[static_cast<std::size_t>(b)].ids.size() + (done[static_cast<std::size_t>(b)] ? 1 : 0);
        (*mean_logprob)[static_cast<std::size_t>(b)] = lp[static_cast<std::size_t>(b)] / static_cast<double>(std::max<std::size_t>(n, 1));
      }
    }
    return out;
  }

  Sentence beam_search(const Sentence& src, Lang lang, const DecodeConfig& cfg) const {
    cfg.validate();
    Tape<T> tape(params_);
    const Encoded one = encode(tape, source_batch<T>({src}));
    const int S = one.len;
    const Mat<T> states = tape.value(one.states);
    const Mat<T> keys = tape.value(one.keys);
    const Mat<T> mask = tape.value(one.mask);

    struct Hyp {
      std::vector<int> tokens;
      double score = 0;
      Mat<T> h;
    };
    struct Finished {
      std::vector<int> tokens;
      double normalized;
    };
    auto penalty = [&](std::size_t len) {
      return std::pow((5.0 + static_cast<double>(len)) / 6.0, cfg.length_penalty);
    };

    std::vector<Hyp> alive{{{}, 0.0, tape.value(one.init)}};
    std::vector<Finished> finished;
    const int W = cfg.width;
    for (int step = 0; step < cfg.max_len && !alive.empty(); ++step) {
      const int n = static_cast<int>(alive.size());
      Encoded enc;
      enc.rows = n;
      enc.len = S;
      Mat<T> rs(static_cast<Eigen::Index>(S) * n, states.cols());
      Mat<T> rk(static_cast<Eigen::Index>(S) * n, keys.cols());
      for (int t = 0; t < S; ++t) {
        for (int b = 0; b < n; ++b) {
          rs.row(t * n + b) = states.row(t);
          rk.row(t * n + b) = keys.row(t);
        }
      }
      enc.states = tape.constant(std::move(rs));
      enc.keys = tape.constant(std::move(rk));
      enc.mask = tape.constant(mask.replicate(n, 1));
      Mat<T> h(n, dims_.hidden);
      std::vector<int> prev;
      for (int b = 0; b < n; ++b) {
        h.row(b) = alive[static_cast<std::size_t>(b)].h;
        const auto& toks = alive[static_cast<std::size_t>(b)].tokens;
        prev.push_back(toks.empty() ? lang_token(lang) : toks.back());
      }
      Var gx = decoder_inputs(tape, prev, lang);
      auto [hn, feat] = decoder_cell(tape, enc, gx, tape.constant(std::move(h)));
      const auto& L = tape.value(project(tape, feat));
      const Mat<T>& H = tape.value(hn);

      struct Cand {
        double total;
        int beam;
        int token;
      };
      std::vector<Cand> cands;
      for (int b = 0; b < n; ++b) {
        const Eigen::Matrix<T, 1, Eigen::Dynamic> logp = log_softmax_row(L.row(b));
        for (int v = 0; v < logp.size(); ++v) {
          if (!allowed(v)) continue;
          cands.push_back({alive[static_cast<std::size_t>(b)].score + static_cast<double>(logp[v]), b, v});
        }
      }
      const auto k = std::min<std::size_t>(static_cast<std::size_t>(W), cands.size());
      std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(),
                        [](const Cand& a, const Cand& b) {
                          if (a.total != b.total) return a.total > b.total;
                          if (a.beam != b.beam) return a.beam < b.beam;
                          return a.token < b.token;
                        });
      std::vector<Hyp> next;
      for (std::size_t i = 0; i < k; ++i) {
        const auto& c = cands[i];
        const auto& parent = alive[static_cast<std::size_t>(c.beam)];
        if (c.token == special::kEos) {
          finished.push_back({parent.tokens, c.total / penalty(parent.tokens.size() + 1)});
        } else {
          Hyp hyp{parent.tokens, c.total, H.row(c.beam)};
          hyp.tokens.push_back(c.token);
          next.push_back(std::move(hyp));
        }
      }
      alive = std::move(next);
      if (static_cast<int>(finished.size()) >= W) break;
    }
    for (const auto& h : alive) finished.push_back({h.tokens, h.score / penalty(h.tokens.size())});
    Sentence out;
    out.lang = lang;
    if (finished.empty()) return out;
    std::size_t best = 0;
    for (std::size_t i = 1; i < finished.size(); ++i) {
      if (finished[i].normalized > finished[best].normalized) best = i;
    }
    out.ids = finished[best].tokens;
    return out;
  }

  Sentence translate(const Sentence& src, Lang lang, const DecodeConfig& cfg = {}) const {
    cfg.validate();
    if (cfg.mode == DecodeConfig::Mode::Greedy) return greedy_batch({src}, lang, cfg.max_len).front();
    return beam_search(src, lang, cfg);
  }

  // -------------------------------------------------------------------------
  // Checkpoints
  // -------------------------------------------------------------------------

  Checkpoint to_checkpoint(std::uint64_t seed, const nlohmann::json& extra = nlohmann::json::object()) const {
    Checkpoint ck;
    ck.seed = seed;
    ck.meta = extra;
    ck.meta["kind"] = "seq2seq";
    ck.meta["emb"] = dims_.emb;
    ck.meta["hidden"] = dims_.hidden;
    ck.meta["vocab"] = vocab_->serialize();
    ck.meta["vocab_hash"] = hex64(vocab_->hash());
    for (int i = 0; i < params_.size(); ++i) {
      ck.tensors.emplace_back(params_.name(i), params_.value(i).template cast<float>());
    }
    return ck;
  }

  static Seq2SeqModel from_checkpoint(const Checkpoint& ck) {
    if (ck.meta.value("kind", "") != "seq2seq") throw DataError("checkpoint is not a seq2seq model");
    auto vocab = std::make_shared<const Vocab>(Vocab::deserialize(ck.meta.at("vocab").get<std::string>()));
    if (hex64(vocab->hash()) != ck.meta.at("vocab_hash").get<std::string>()) {
      throw DataError("checkpoint vocab hash does not match its embedded vocab");
    }
    Seq2SeqModel m;
    m.vocab_ = std::move(vocab);
    m.dims_ = {ck.meta.at("emb").get<int>(), ck.meta.at("hidden").get<int>()};
    m.build([](Eigen::Index r, Eigen::Index c) { return Mat<T>::Zero(r, c).eval(); });
    if (ck.tensors.size() != static_cast<std::size_t>(m.params_.size())) {
      throw DataError("checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                      std::to_string(m.params_.size()));
    }
    for (int i = 0; i < m.params_.size(); ++i) {
      const Matrix& t = ck.tensor(m.params_.name(i));
      auto& p = m.params_.value(i);
      if (t.rows() != p.rows() || t.cols() != p.cols()) {
        throw DataError("checkpoint tensor '" + m.params_.name(i) + "' is " + shape_str(t.rows(), t.cols()) +
                        ", expected " + shape_str(p.rows(), p.cols()));
      }
      p = t.template cast<T>();
    }
    return m;
  }

  void save(const std::string& path, std::uint64_t seed, const nlohmann::json& extra = nlohmann::json::object()) const {
    save_checkpoint(path, to_checkpoint(seed, extra));
  }

  static Seq2SeqModel load(const std::string& path) { return from_checkpoint(load_checkpoint(path)); }

  static bool allowed(int token) {
    return token != special::kPad && token != special::kBos && token != special::kLangEn &&
           token != special::kLangPcm;
  }

  template <typename Row>
  static Eigen::Matrix<T, 1, Eigen::Dynamic> log_softmax_row(const Row& row) {
    const T mx = row.maxCoeff();
    const T lse = mx + std::log((row.array() - mx).exp().sum());
    return (row.array() - lse).matrix();
  }

  template <typename Row>
  static double log_softmax_at(const Row& row, int t) {
    const double mx = static_cast<double>(row.maxCoeff());
    const double lse = mx + std::log(static_cast<double>((row.array() - row.maxCoeff()).exp().sum()));
    return static_cast<double>(row[t]) - lse;
  }

  /// Highest-scoring emittable token, lowest id on ties.
  static int best_token(const Eigen::Matrix<T, 1, Eigen::Dynamic>& logp) {
    int best = -1;
    for (int v = 0; v < logp.size(); ++v) {
      if (!allowed(v)) continue;
      if (best < 0 || logp[v] > logp[best]) best = v;
    }
    return best;
  }

 private:
  template <typename U>
  friend class Seq2SeqModel;

  template <typename Init>
  void build(Init&& init) {
    const int V = vocab_->size();
    const int E = dims_.emb;
    const int H = dims_.hidden;
    auto add = [&](const char* name, Eigen::Index r, Eigen::Index c) { return params_.add(name, init(r, c)); };
    ids_.embed = add("embed", V, E);
    ids_.lang = add("lang_embed", 2, E);
    ids_.enc_fw_wx = add("enc_fw.wx", E, 3 * H);
    ids_.enc_fw_bx = add("enc_fw.bx", 1, 3 * H);
    ids_.enc_fw_wh = add("enc_fw.wh", H, 3 * H);
    ids_.enc_fw_bh = add("enc_fw.bh", 1, 3 * H);
    ids_.enc_bw_wx = add("enc_bw.wx", E, 3 * H);
    ids_.enc_bw_bx = add("enc_bw.bx", 1, 3 * H);
    ids_.enc_bw_wh = add("enc_bw.wh", H, 3 * H);
    ids_.enc_bw_bh = add("enc_bw.bh", 1, 3 * H);
    ids_.init_w = add("dec_init.w", 2 * H, H);
    ids_.init_b = add("dec_init.b", 1, H);
    ids_.att_w = add("attention.w", 2 * H, H);
    ids_.dec_wx = add("dec.wx", E, 3 * H);
    ids_.dec_bx = add("dec.bx", 1, 3 * H);
    ids_.dec_wh = add("dec.wh", H, 3 * H);
    ids_.dec_bh = add("dec.bh", 1, 3 * H);
    ids_.out_w = add("out.w", 3 * H, E);
    ids_.out_b = add("out.b", 1, E);
    ids_.vocab_b = add("out.vocab_bias", 1, V);
  }

  std::shared_ptr<const Vocab> vocab_;
  ModelDims dims_;
  ParameterStore<T> params_;
  ParamIds ids_{};
};

using Model = Seq2SeqModel<float>;

/// Sentences grouped into contiguous batches.
template <typename F>
void for_each_batch(std::size_t n, std::size_t batch_size, F&& f) {
  for (std::size_t b = 0; b < n; b += batch_size) f(b, std::min(n, b + batch_size));
}

/// Greedy translation of many sentences in fixed-size batches.
template <typename T>
std::vector<Sentence> translate_all(const Seq2SeqModel<T>& model, const std::vector<Sentence>& src, Lang lang,
                                    int max_len = 60, std::size_t batch_size = 64) {
  std::vector<Sentence> out;
  out.reserve(src.size());
  for_each_batch(src.size(), batch_size, [&](std::size_t b, std::size_t e) {
    std::vector<Sentence> chunk(src.begin() + static_cast<std::ptrdiff_t>(b), src.begin() + static_cast<std::ptrdiff_t>(e));
    auto res = model.greedy_batch(chunk, lang, max_len);
    for (auto& s : res) out.push_back(std::move(s));
  });
  return out;
}

}  // namespace pcmgen
