#pragma once

// Synthetic language pairs with an exact translation oracle: a "plain"
// language generated by a sparse bigram grammar and a "cipher" language that
// relabels each word through a known bijective lexicon. Also a small
// restaurant-domain MR grammar standing in for E2E when it is absent.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcmgen/checkpoint.hpp"
#include "pcmgen/corpus.hpp"

namespace pcmgen {

enum class CipherDirection { Encrypt, Decrypt };

struct CipherSpec {
  int vocab_size = 200;
  double overlap = 0.3;    // fraction of words that map to themselves
  double swap_prob = 0.0;  // adjacent swaps applied to the cipher training corpus
  std::uint64_t seed = 1;
  std::vector<std::string> plain;   // plain[i] -> cipher[i]
  std::vector<std::string> cipher;

  int fixed_points() const {
    int n = 0;
    for (std::size_t i = 0; i < plain.size(); ++i) n += plain[i] == cipher[i];
    return n;
  }
};

namespace detail {

inline std::string random_word(Rng& rng) {
  static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                            "sh", "ch", "br", "tr", "kl"};
  static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  const auto syllables = 1 + rng.below(3);
  std::string w;
  for (std::uint64_t s = 0; s < syllables; ++s) {
    w += kOnsets[rng.below(std::size(kOnsets))];
    w += kVowels[rng.below(std::size(kVowels))];
  }
  if (rng.bernoulli(0.3)) w += kOnsets[rng.below(14)];
  return w;
}

}  // namespace detail

/// Builds the lexicon. Exactly floor(overlap * vocab_size) fixed points;
/// the remaining cipher words are distinct from every plain word.
inline CipherSpec make_cipher_spec(int vocab_size, double overlap, double swap_prob, std::uint64_t seed) {
  if (vocab_size < 2) throw UsageError("cipher vocab_size must be >= 2");
  if (!(overlap >= 0 && overlap <= 1)) throw UsageError("cipher overlap must be in [0, 1]");
  if (!(swap_prob >= 0 && swap_prob <= 1)) throw UsageError("cipher swap_prob must be in [0, 1]");
  CipherSpec spec;
  spec.vocab_size = vocab_size;
  spec.overlap = overlap;
  spec.swap_prob = swap_prob;
  spec.seed = seed;
  Rng rng(seed);
  std::unordered_set<std::string> used;
  while (static_cast<int>(spec.plain.size()) < vocab_size) {
    std::string w = detail::random_word(rng);
    if (used.insert(w).second) spec.plain.push_back(std::move(w));
  }
  const int fixed = static_cast<int>(std::floor(overlap * vocab_size + 1e-9));
  std::vector<int> order(static_cast<std::size_t>(vocab_size));
  for (int i = 0; i < vocab_size; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  std::vector<bool> is_fixed(static_cast<std::size_t>(vocab_size), false);
  for (int i = 0; i < fixed; ++i) is_fixed[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
  spec.cipher.resize(spec.plain.size());
  for (int i = 0; i < vocab_size; ++i) {
    if (is_fixed[static_cast<std::size_t>(i)]) {
      spec.cipher[static_cast<std::size_t>(i)] = spec.plain[static_cast<std::size_t>(i)];
      continue;
    }
    std::string w;
    do {
      w = detail::random_word(rng);
    } while (!used.insert(w).second);
    spec.cipher[static_cast<std::size_t>(i)] = std::move(w);
  }
  if (spec.fixed_points() != fixed) throw Error("cipher lexicon construction produced wrong fixed-point count");
  return spec;
}

inline CipherSpec make_cipher_spec(const CipherSpec& params) {
  return make_cipher_spec(params.vocab_size, params.overlap, params.swap_prob, params.seed);
}

/// Lexicon substitution. Throws DataError on a token outside the lexicon.
inline Tokens oracle_translate(const Tokens& sentence, const CipherSpec& spec, CipherDirection dir) {
  const auto& from = dir == CipherDirection::Encrypt ? spec.plain : spec.cipher;
  const auto& to = dir == CipherDirection::Encrypt ? spec.cipher : spec.plain;
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < from.size(); ++i) index.emplace(from[i], i);
  Tokens out;
  out.reserve(sentence.size());
  for (const auto& t : sentence) {
    auto it = index.find(t);
    if (it == index.end()) throw DataError("token '" + t + "' is not in the cipher lexicon");
    out.push_back(to[it->second]);
  }
  return out;
}

/// Sparse bigram grammar over the plain vocabulary: Zipfian start words,
/// a handful of Zipf-weighted successors per word, lengths uniform in
/// [min_len, max_len].
class BigramGrammar {
 public:
  BigramGrammar(const CipherSpec& spec, std::uint64_t seed, int min_len = 4, int max_len = 12)
      : min_len_(min_len), max_len_(max_len) {
    if (min_len < 1 || max_len < min_len) throw UsageError("grammar lengths must satisfy 1 <= min <= max");
    Rng rng(seed);
    const int V = static_cast<int>(spec.plain.size());
    std::vector<int> rank(static_cast<std::size_t>(V));
    for (int i = 0; i < V; ++i) rank[static_cast<std::size_t>(i)] = i;
    rng.shuffle(rank);
    start_.resize(static_cast<std::size_t>(V));
    for (int i = 0; i < V; ++i) start_[static_cast<std::size_t>(rank[static_cast<std::size_t>(i)])] = 1.0 / (i + 1);
    succ_.resize(static_cast<std::size_t>(V));
    weights_.resize(static_cast<std::size_t>(V));
    for (int w = 0; w < V; ++w) {
      const int k = 6 + static_cast<int>(rng.below(3));
      std::set<int> chosen;
      while (static_cast<int>(chosen.size()) < std::min(k, V)) {
        // Successors biased toward globally frequent words.
        const int r = static_cast<int>(std::floor(std::pow(rng.uniform(), 2.0) * V));
        chosen.insert(rank[static_cast<std::size_t>(r)]);
      }
      std::vector<int> list(chosen.begin(), chosen.end());
      rng.shuffle(list);
      for (std::size_t j = 0; j < list.size(); ++j) {
        succ_[static_cast<std::size_t>(w)].push_back(list[j]);
        weights_[static_cast<std::size_t>(w)].push_back(1.0 / static_cast<double>(j + 1));
      }
    }
    words_ = spec.plain;
  }

  Tokens sample(Rng& rng) const {
    const int len = min_len_ + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len_ - min_len_ + 1)));
    Tokens out;
    auto w = static_cast<int>(rng.categorical(start_));
    out.push_back(words_[static_cast<std::size_t>(w)]);
    while (static_cast<int>(out.size()) < len) {
      const auto& s = succ_[static_cast<std::size_t>(w)];
      w = s[rng.categorical(weights_[static_cast<std::size_t>(w)])];
      out.push_back(words_[static_cast<std::size_t>(w)]);
    }
    return out;
  }

 private:
  int min_len_, max_len_;
  std::vector<std::string> words_;
  std::vector<double> start_;
  std::vector<std::vector<int>> succ_;
  std::vector<std::vector<double>> weights_;
};

struct ParallelPair {
  Tokens plain;
  Tokens cipher;
};

struct SynthCorpus {
  MonoCorpus plain;   // English side
  MonoCorpus cipher;  // Pidgin side
  std::vector<std::size_t> plain_ids;   // sample ids, disjoint from cipher_ids
  std::vector<std::size_t> cipher_ids;
  std::vector<ParallelPair> dev;
  std::vector<ParallelPair> test;
};

inline void apply_adjacent_swaps(Tokens& t, double q, Rng& rng) {
  if (q <= 0) return;
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    if (rng.bernoulli(q)) std::swap(t[i], t[i + 1]);
  }
}

/// Two non-parallel training corpora drawn from disjoint samples, plus
/// held-out parallel dev and test pairs whose plain sides never occur in
/// the plain training corpus. References are built before any swapping.
inline SynthCorpus make_corpus(const CipherSpec& spec, const BigramGrammar& grammar, std::size_t n_sentences,
                               std::size_t n_dev, std::size_t n_test, std::uint64_t seed) {
  if (n_sentences < 100) throw UsageError("make_corpus needs at least 100 sentences per side");
  Rng rng(seed);
  Rng swap_rng = rng.fork(7);
  SynthCorpus out;
  out.plain.lang = Lang::English;
  out.cipher.lang = Lang::Pidgin;
  std::size_t next_id = 0;
  std::set<Tokens> plain_seen;
  for (std::size_t i = 0; i < n_sentences; ++i) {
    Tokens s = grammar.sample(rng);
    plain_seen.insert(s);
    out.plain.sentences.push_back(std::move(s));
    out.plain_ids.push_back(next_id++);
  }
  for (std::size_t i = 0; i < n_sentences; ++i) {
    Tokens c = oracle_translate(grammar.sample(rng), spec, CipherDirection::Encrypt);
    apply_adjacent_swaps(c, spec.swap_prob, swap_rng);
    out.cipher.sentences.push_back(std::move(c));
    out.cipher_ids.push_back(next_id++);
  }
  auto held_out = [&](std::size_t n, std::vector<ParallelPair>& dst) {
    std::size_t attempts = 0;
    while (dst.size() < n) {
      if (++attempts > 1000 * (n + 1)) throw DataError("grammar too small to draw held-out sentences");
      Tokens s = grammar.sample(rng);
      if (!plain_seen.insert(s).second) continue;
      Tokens c = oracle_translate(s, spec, CipherDirection::Encrypt);
      dst.push_back({std::move(s), std::move(c)});
    }
  };
  held_out(n_dev, out.dev);
  held_out(n_test, out.test);
  return out;
}

/// Plain words by descending frequency in `corpus`, ties lexicographic.
inline std::vector<std::string> most_frequent(const std::vector<Tokens>& corpus, std::size_t top_m) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : corpus) {
    for (const auto& t : s) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> v(counts.begin(), counts.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(top_m, v.size()); ++i) out.push_back(v[i].first);
  return out;
}

inline std::string parallel_tsv(const std::vector<ParallelPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) out += join(p.plain) + '\t' + join(p.cipher) + '\n';
  return out;
}

inline std::vector<ParallelPair> parse_parallel_tsv(std::string_view text) {
  std::vector<ParallelPair> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) {
      throw DataError("parallel TSV line " + std::to_string(line_no) + ": expected 2 tab-separated fields");
    }
    out.push_back({tokenize(line.substr(0, tab)), tokenize(line.substr(tab + 1))});
  }
  return out;
}

inline std::string lexicon_tsv(const CipherSpec& spec) {
  std::string out;
  for (std::size_t i = 0; i < spec.plain.size(); ++i) out += spec.plain[i] + '\t' + spec.cipher[i] + '\n';
  return out;
}

inline CipherSpec parse_lexicon_tsv(std::string_view text) {
  CipherSpec spec;
  for (const auto& p : parse_parallel_tsv(text)) {
    if (p.plain.size() != 1 || p.cipher.size() != 1) throw DataError("lexicon entries must be single words");
    spec.plain.push_back(p.plain[0]);
    spec.cipher.push_back(p.cipher[0]);
  }
  spec.vocab_size = static_cast<int>(spec.plain.size());
  if (std::set<std::string>(spec.cipher.begin(), spec.cipher.end()).size() != spec.cipher.size() ||
      std::set<std::string>(spec.plain.begin(), spec.plain.end()).size() != spec.plain.size()) {
    throw DataError("lexicon is not a bijection");
  }
  spec.overlap = spec.vocab_size ? static_cast<double>(spec.fixed_points()) / spec.vocab_size : 0.0;
  return spec;
}

struct SynthFiles {
  static constexpr const char* kPlain = "plain.en.txt";
  static constexpr const char* kCipher = "cipher.pcm.txt";
  static constexpr const char* kDev = "dev.tsv";
  static constexpr const char* kTest = "test.tsv";
  static constexpr const char* kLexicon = "lexicon.tsv";
  static constexpr const char* kSpec = "spec.json";
};

/// Writes the dataset into `dir` (created if needed).
inline void write_synth(const std::filesystem::path& dir, const CipherSpec& spec, const SynthCorpus& c,
                        const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  auto lines = [](const std::vector<Tokens>& v) {
    std::string s;
    for (const auto& t : v) s += join(t) + '\n';
    return s;
  };
  atomic_write((dir / SynthFiles::kPlain).string(), lines(c.plain.sentences));
  atomic_write((dir / SynthFiles::kCipher).string(), lines(c.cipher.sentences));
  atomic_write((dir / SynthFiles::kDev).string(), parallel_tsv(c.dev));
  atomic_write((dir / SynthFiles::kTest).string(), parallel_tsv(c.test));
  atomic_write((dir / SynthFiles::kLexicon).string(), lexicon_tsv(spec));
  nlohmann::json j = extra;
  j["vocab_size"] = spec.vocab_size;
  j["overlap"] = spec.overlap;
  j["swap_prob"] = spec.swap_prob;
  j["seed"] = spec.seed;
  j["fixed_points"] = spec.fixed_points();
  atomic_write((dir / SynthFiles::kSpec).string(), j.dump(2) + "\n");
}

/// Everything needed to regenerate a cipher dataset. The lexicon, grammar and
/// corpus seeds are seed, seed + 1 and seed + 2.
struct SynthConfig {
  int vocab_size = 200;
  double overlap = 0.3;
  double swap_prob = 0.0;
  std::size_t sentences = 5000;
  std::size_t dev = 200;
  std::size_t test = 500;
  int min_len = 4;
  int max_len = 12;
  std::uint64_t seed = 1;
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"overlap", c.overlap}, {"swap_prob", c.swap_prob},
       {"sentences", c.sentences},   {"dev", c.dev},         {"test", c.test},
       {"min_len", c.min_len},       {"max_len", c.max_len}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.overlap = j.value("overlap", c.overlap);
  c.swap_prob = j.value("swap_prob", c.swap_prob);
  c.sentences = j.value("sentences", c.sentences);
  c.dev = j.value("dev", c.dev);
  c.test = j.value("test", c.test);
  c.min_len = j.value("min_len", c.min_len);
  c.max_len = j.value("max_len", c.max_len);
  c.seed = j.value("seed", c.seed);
}

struct SynthData {
  CipherSpec spec;
  SynthCorpus corpus;
};

inline SynthData make_synth(const SynthConfig& c) {
  SynthData d;
  d.spec = make_cipher_spec(c.vocab_size, c.overlap, c.swap_prob, c.seed);
  const BigramGrammar grammar(d.spec, c.seed + 1, c.min_len, c.max_len);
  d.corpus = make_corpus(d.spec, grammar, c.sentences, c.dev, c.test, c.seed + 2);
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic restaurant MRs
// ---------------------------------------------------------------------------

struct MrGrammarConfig {
  int names = 40;
  std::uint64_t seed = 1;
};

/// Generates (MR, reference) examples with template realizations. Names come
/// from a finite pool of invented two-word restaurant names.
class MrGrammar {
 public:
  explicit MrGrammar(MrGrammarConfig cfg = {}) : cfg_(cfg) {
    static constexpr const char* kFirst[] = {"blue",   "golden", "red",    "green",  "silver", "old",
                                             "little", "royal",  "wild",   "crown",  "rice",   "eagle",
                                             "cotton", "river",  "twenty", "vaults", "phoenix", "wrestlers"};
    static constexpr const char* kSecond[] = {"spice", "palace", "dragon", "garden", "boat",  "mill",
                                              "cup",   "house",  "plough", "rose",   "bibimbap", "oak"};
    Rng rng(cfg.seed);
    std::set<std::string> seen;
    const auto limit = std::size(kFirst) * std::size(kSecond);
    while (names_.size() < static_cast<std::size_t>(cfg.names) && seen.size() < limit) {
      std::string n = std::string(kFirst[rng.below(std::size(kFirst))]) + " " + kSecond[rng.below(std::size(kSecond))];
      if (seen.insert(n).second) names_.push_back(n);
    }
  }

  const std::vector<std::string>& names() const { return names_; }

  D2TExample sample(Rng& rng) const {
    static constexpr const char* kEat[] = {"pub", "restaurant", "coffee shop"};
    static constexpr const char* kFood[] = {"chinese", "english", "french", "indian", "italian", "japanese",
                                            "fast food"};
    static constexpr const char* kPrice[] = {"cheap", "moderate", "high"};
    static constexpr const char* kRating[] = {"low", "average", "high"};
    static constexpr const char* kArea[] = {"city centre", "riverside"};
    auto pick = [&](const auto& arr) { return std::string(arr[rng.below(std::size(arr))]); };

    MeaningRepresentation mr;
    const std::string name = names_[rng.below(names_.size())];
    mr.slots.push_back({"name", name});
    std::string eat, food, price, rating, area, family, near;
    if (rng.bernoulli(0.8)) mr.slots.push_back({"eatType", eat = pick(kEat)});
    if (rng.bernoulli(0.6)) mr.slots.push_back({"food", food = pick(kFood)});
    if (rng.bernoulli(0.5)) mr.slots.push_back({"priceRange", price = pick(kPrice)});
    if (rng.bernoulli(0.4)) mr.slots.push_back({"customerRating", rating = pick(kRating)});
    if (rng.bernoulli(0.6)) mr.slots.push_back({"area", area = pick(kArea)});
    if (rng.bernoulli(0.4)) mr.slots.push_back({"familyFriendly", family = rng.bernoulli(0.5) ? "yes" : "no"});
    if (rng.bernoulli(0.3)) {
      do {
        near = names_[rng.below(names_.size())];
      } while (near == name && names_.size() > 1);
      mr.slots.push_back({"near", near});
    }
    // Slots are emitted in a random order, as in E2E files.
    rng.shuffle(mr.slots);

    std::string text = name + " is a " + (price.empty() ? "" : price + " priced ") + (eat.empty() ? "place" : eat);
    if (!food.empty()) text += rng.bernoulli(0.5) ? " serving " + food + " food" : " that provides " + food + " food";
    if (!area.empty()) text += " in the " + area;
    if (!near.empty()) text += " near " + near;
    text += " .";
    if (!rating.empty()) text += " it has a " + rating + " customer rating .";
    if (!family.empty()) text += family == "yes" ? " it is family friendly ." : " it is not family friendly .";
    return {mr, normalize_tokens(text)};
  }

  std::vector<D2TExample> sample_many(std::size_t n, Rng& rng) const {
    std::vector<D2TExample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample(rng));
    return out;
  }

 private:
  MrGrammarConfig cfg_;
  std::vector<std::string> names_;
};

/// E2E-style `mr,ref` CSV text.
inline std::string e2e_csv(const std::vector<D2TExample>& examples) {
  std::string out = "mr,ref\n";
  for (const auto& ex : examples) out += csv_quote(format_mr(ex.mr)) + "," + csv_quote(join(ex.reference)) + "\n";
  return out;
}

}  // namespace pcmgen
