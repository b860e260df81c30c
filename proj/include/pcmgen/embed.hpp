#pragma once

// Subword-aware skip-gram with negative sampling, trained on the
// concatenated English + Pidgin corpus. A word's vector is the mean of its
// own row and the rows of its hashed character n-grams, so the two
// languages share one space through common surface forms.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <unicode/utf8.h>

#include "pcmgen/error.hpp"
#include "pcmgen/rng.hpp"
#include "pcmgen/tensor.hpp"
#include "pcmgen/textcore.hpp"

namespace pcmgen {

inline constexpr int kEmbeddingDim = 100;
inline constexpr std::uint32_t kNgramBuckets = 1u << 18;
inline constexpr int kMinNgram = 3;
inline constexpr int kMaxNgram = 6;

/// Character n-grams (3..6 code points) of "<word>", each hashed with
/// 32-bit FNV-1a over its UTF-8 bytes, modulo `buckets`.
inline std::vector<std::uint32_t> extract_ngrams(std::string_view word,
                                                 std::uint32_t buckets = kNgramBuckets) {
  const std::string padded = "<" + std::string(word) + ">";
  std::vector<std::size_t> starts;  // byte offset of each code point, plus end
  const auto* p = reinterpret_cast<const std::uint8_t*>(padded.data());
  const auto n = static_cast<std::int32_t>(padded.size());
  for (std::int32_t i = 0; i < n;) {
    starts.push_back(static_cast<std::size_t>(i));
    UChar32 c;
    U8_NEXT(p, i, n, c);
  }
  starts.push_back(padded.size());
  const std::size_t chars = starts.size() - 1;
  std::vector<std::uint32_t> ids;
  for (int len = kMinNgram; len <= kMaxNgram; ++len) {
    for (std::size_t b = 0; b + static_cast<std::size_t>(len) <= chars; ++b) {
      const std::string_view gram(padded.data() + starts[b], starts[b + len] - starts[b]);
      ids.push_back(fnv1a32(gram) % buckets);
    }
  }
  return ids;
}

struct SkipgramConfig {
  int dim = kEmbeddingDim;
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double lr = 0.025;
  double subsample = 1e-4;
  std::uint64_t min_count = 1;
  std::uint32_t buckets = kNgramBuckets;
  std::uint64_t seed = 1;
  /// > 1 enables lock-free (Hogwild) updates across threads. Results are
  /// then not reproducible; keep at 1 for anything that must be.
  int threads = 1;
};

class SubwordEmbedding {
 public:
  SubwordEmbedding() = default;

  int dim() const { return static_cast<int>(word_rows_.cols()); }
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<double>& epoch_losses() const { return epoch_losses_; }
  std::uint64_t seed() const { return seed_; }
  const Matrix& word_rows() const { return word_rows_; }
  const Matrix& bucket_rows() const { return buckets_; }
  const std::vector<std::uint32_t>& ngrams(int i) const { return ngrams_[static_cast<std::size_t>(i)]; }

  std::optional<int> index(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Mean of the word row and its n-gram bucket rows.
  Eigen::RowVectorXf vector(int i) const {
    const auto& grams = ngrams_[static_cast<std::size_t>(i)];
    Eigen::RowVectorXf v = word_rows_.row(i);
    for (auto g : grams) v += buckets_.row(static_cast<Eigen::Index>(g));
    return v / static_cast<float>(grams.size() + 1);
  }

  Matrix composed() const {
    Matrix out(size(), dim());
    for (int i = 0; i < size(); ++i) out.row(i) = vector(i);
    return out;
  }

  float max_row_norm() const {
    float mx = 0;
    for (int i = 0; i < size(); ++i) mx = std::max(mx, vector(i).norm());
    return mx;
  }

  float cosine(int a, int b) const {
    const auto va = vector(a);
    const auto vb = vector(b);
    const float d = va.norm() * vb.norm();
    return d > 0 ? va.dot(vb) / d : 0.0f;
  }

  /// Top k by cosine, query excluded, descending with lexicographic ties.
  std::vector<std::pair<std::string, float>> nearest_neighbors(std::string_view word, int k) const {
    auto q = index(word);
    if (!q) throw DataError("unknown word '" + std::string(word) + "'");
    std::vector<std::pair<std::string, float>> out;
    if (k <= 0) return out;
    const Matrix all = composed();
    const Eigen::RowVectorXf qv = all.row(*q);
    const float qn = qv.norm();
    for (int i = 0; i < size(); ++i) {
      if (i == *q) continue;
      const float d = qn * all.row(i).norm();
      out.emplace_back(words_[static_cast<std::size_t>(i)], d > 0 ? qv.dot(all.row(i)) / d : 0.0f);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (out.size() > static_cast<std::size_t>(k)) out.resize(static_cast<std::size_t>(k));
    return out;
  }

  /// First line `<count> <dim>`, then `word v1 ... vd` (composed vectors).
  std::string to_text() const {
    std::string out = std::to_string(size()) + " " + std::to_string(dim()) + "\n";
    std::array<char, 32> buf{};
    for (int i = 0; i < size(); ++i) {
      out += words_[static_cast<std::size_t>(i)];
      const auto v = vector(i);
      for (Eigen::Index j = 0; j < v.size(); ++j) {
        auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v[j]);
        out += ' ';
        out.append(buf.data(), end);
      }
      out += '\n';
    }
    return out;
  }

  friend SubwordEmbedding train_skipgram(const std::vector<Tokens>&, const SkipgramConfig&,
                                         std::ostream*);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::vector<std::uint32_t>> ngrams_;
  Matrix word_rows_;
  Matrix buckets_;
  std::vector<double> epoch_losses_;
  std::uint64_t seed_ = 0;
};

/// Word vectors as read back from the text format.
struct WordVectors {
  std::vector<std::string> words;
  Matrix vectors;

  std::optional<int> index(std::string_view w) const {
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (words[i] == w) return static_cast<int>(i);
    }
    return std::nullopt;
  }
};

inline WordVectors parse_word_vectors(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::size_t count = 0;
  int dim = 0;
  if (!(in >> count >> dim) || dim <= 0) throw DataError("embedding file: bad `<count> <dim>` header");
  WordVectors wv;
  wv.vectors.resize(static_cast<Eigen::Index>(count), dim);
  for (std::size_t i = 0; i < count; ++i) {
    std::string w;
    if (!(in >> w)) throw DataError("embedding file: truncated at word " + std::to_string(i));
    wv.words.push_back(w);
    for (int j = 0; j < dim; ++j) {
      std::string tok;
      in >> tok;
      float f = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), f);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw DataError("embedding file: bad value for '" + w + "'");
      }
      wv.vectors(static_cast<Eigen::Index>(i), j) = f;
    }
  }
  return wv;
}

inline WordVectors load_word_vectors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embeddings " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_word_vectors(ss.str());
}

namespace detail {

struct SkipgramWorkspace {
  Eigen::RowVectorXf hidden;
  Eigen::RowVectorXf grad;
};

// One positive and `negatives` negative logistic updates; returns the loss.
inline double skipgram_update(const std::vector<std::uint32_t>& input_rows, int word, int target,
                              Matrix& word_rows, Matrix& buckets, Matrix& output,
                              const std::vector<int>& neg_table, int negatives, float lr, Rng& rng,
                              SkipgramWorkspace& ws) {
  ws.hidden = word_rows.row(word);
  for (auto g : input_rows) ws.hidden += buckets.row(static_cast<Eigen::Index>(g));
  ws.hidden /= static_cast<float>(input_rows.size() + 1);
  ws.grad.setZero(ws.hidden.size());
  double loss = 0;
  auto binary = [&](int id, bool label) {
    const float score = Tape<float>::stable_sigmoid(ws.hidden.dot(output.row(id)));
    const float alpha = lr * ((label ? 1.0f : 0.0f) - score);
    ws.grad += alpha * output.row(id);
    output.row(id) += alpha * ws.hidden;
    const float p = label ? score : 1.0f - score;
    loss -= std::log(std::max(p, 1e-7f));
  };
  binary(target, true);
  for (int k = 0; k < negatives; ++k) {
    int neg = target;
    for (int tries = 0; neg == target && tries < 16; ++tries) {
      neg = neg_table[rng.below(neg_table.size())];
    }
    if (neg == target) continue;
    binary(neg, false);
  }
  word_rows.row(word) += ws.grad;
  for (auto g : input_rows) buckets.row(static_cast<Eigen::Index>(g)) += ws.grad;
  return loss;
}

}  // namespace detail

/// Trains on the concatenation of both monolingual corpora.
inline SubwordEmbedding train_skipgram(const std::vector<Tokens>& corpus, const SkipgramConfig& cfg,
                                       std::ostream* log = nullptr) {
  if (cfg.dim <= 0 || cfg.window <= 0 || cfg.negatives <= 0 || cfg.epochs <= 0 || cfg.lr <= 0 ||
      cfg.subsample <= 0 || cfg.buckets == 0 || cfg.threads <= 0) {
    throw UsageError("skip-gram configuration values must all be positive");
  }
  VocabBuilder vb;
  vb.add_all(corpus);
  if (vb.total_tokens() < 1000) {
    throw DataError("skip-gram corpus too small: " + std::to_string(vb.total_tokens()) +
                    " tokens (need at least 1000)");
  }
  const Vocab vocab = vb.build(cfg.min_count);

  SubwordEmbedding emb;
  emb.seed_ = cfg.seed;
  std::vector<double> freq;
  for (int id = special::kCount; id < vocab.size(); ++id) {
    emb.index_.emplace(vocab.token(id), static_cast<int>(emb.words_.size()));
    emb.words_.push_back(vocab.token(id));
    emb.ngrams_.push_back(extract_ngrams(vocab.token(id), cfg.buckets));
    freq.push_back(static_cast<double>(vocab.frequency(id)));
  }
  const int nwords = emb.size();

  Rng init_rng(cfg.seed);
  const double bound = 1.0 / cfg.dim;
  emb.word_rows_ = uniform_matrix<float>(nwords, cfg.dim, bound, init_rng);
  emb.buckets_ = uniform_matrix<float>(cfg.buckets, cfg.dim, bound, init_rng);
  Matrix output = Matrix::Zero(nwords, cfg.dim);

  double total = 0;
  for (double f : freq) total += f;
  std::vector<int> neg_table;
  {
    constexpr std::size_t kTableSize = 1'000'000;
    double z = 0;
    for (double f : freq) z += std::pow(f, 0.75);
    for (int i = 0; i < nwords; ++i) {
      const auto n = static_cast<std::size_t>(std::pow(freq[static_cast<std::size_t>(i)], 0.75) / z * kTableSize);
      neg_table.insert(neg_table.end(), std::max<std::size_t>(n, 1), i);
    }
  }
  std::vector<double> keep_prob(static_cast<std::size_t>(nwords));
  for (int i = 0; i < nwords; ++i) {
    const double f = freq[static_cast<std::size_t>(i)] / total;
    keep_prob[static_cast<std::size_t>(i)] = std::min(1.0, std::sqrt(cfg.subsample / f) + cfg.subsample / f);
  }

  std::vector<std::vector<int>> encoded;
  encoded.reserve(corpus.size());
  for (const auto& s : corpus) {
    std::vector<int> ids;
    for (const auto& t : s) {
      if (auto i = emb.index(t)) ids.push_back(*i);
    }
    if (!ids.empty()) encoded.push_back(std::move(ids));
  }

  const double budget = static_cast<double>(cfg.epochs) * static_cast<double>(vb.total_tokens());
  std::uint64_t processed = 0;

  auto run_shard = [&](std::size_t begin, std::size_t end, Rng& rng, std::uint64_t& seen,
                       double& loss, std::uint64_t& updates) {
    detail::SkipgramWorkspace ws;
    std::vector<int> line;
    for (std::size_t s = begin; s < end; ++s) {
      line.clear();
      for (int id : encoded[s]) {
        if (rng.uniform() < keep_prob[static_cast<std::size_t>(id)]) line.push_back(id);
      }
      const double progress = static_cast<double>(processed + seen) / budget;
      const auto lr = static_cast<float>(cfg.lr * std::max(1e-4, 1.0 - progress));
      seen += encoded[s].size();
      for (std::size_t w = 0; w < line.size(); ++w) {
        const int b = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.window)));
        for (int c = -b; c <= b; ++c) {
          if (c == 0) continue;
          const auto pos = static_cast<std::ptrdiff_t>(w) + c;
          if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(line.size())) continue;
          loss += detail::skipgram_update(emb.ngrams_[static_cast<std::size_t>(line[w])], line[w],
                                          line[static_cast<std::size_t>(pos)], emb.word_rows_,
                                          emb.buckets_, output, neg_table, cfg.negatives, lr, rng, ws);
          ++updates;
        }
      }
    }
  };

  Rng rng(cfg.seed ^ 0x5eedULL);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss = 0;
    std::uint64_t updates = 0;
    if (cfg.threads == 1) {
      std::uint64_t seen = 0;
      run_shard(0, encoded.size(), rng, seen, loss, updates);
      processed += seen;
    } else {
      const auto nt = static_cast<std::size_t>(cfg.threads);
      std::vector<Rng> rngs;
      for (std::size_t t = 0; t < nt; ++t) rngs.push_back(rng.fork(t + 1));
      std::vector<double> losses(nt, 0);
      std::vector<std::uint64_t> counts(nt, 0), seens(nt, 0);
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < nt; ++t) {
        const std::size_t b = encoded.size() * t / nt;
        const std::size_t e = encoded.size() * (t + 1) / nt;
        pool.emplace_back([&, t, b, e] { run_shard(b, e, rngs[t], seens[t], losses[t], counts[t]); });
      }
      for (auto& th : pool) th.join();
      for (std::size_t t = 0; t < nt; ++t) {
        loss += losses[t];
        updates += counts[t];
        processed += seens[t];
      }
    }
    const double mean = updates ? loss / static_cast<double>(updates) : 0.0;
    emb.epoch_losses_.push_back(mean);
    if (log) *log << "skipgram epoch " << (epoch + 1) << "/" << cfg.epochs << " loss " << mean << "\n";
  }

  if (!emb.word_rows_.allFinite() || !emb.buckets_.allFinite()) {
    throw DivergenceError("skip-gram training produced non-finite embeddings");
  }
  const float norm = emb.max_row_norm();
  if (norm > 100.0f) {
    throw DivergenceError("skip-gram embedding row norm " + std::to_string(norm) + " exceeds 100");
  }
  return emb;
}

}  // namespace pcmgen
