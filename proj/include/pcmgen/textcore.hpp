#pragma once

// Text normalization, tokenization and the shared English/Pidgin vocabulary.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "pcmgen/error.hpp"
#include "pcmgen/rng.hpp"

namespace pcmgen {

enum class Lang : std::uint8_t { English = 0, Pidgin = 1 };

inline constexpr std::string_view lang_code(Lang lang) {
  return lang == Lang::English ? "en" : "pcm";
}

inline constexpr Lang other(Lang lang) {
  return lang == Lang::English ? Lang::Pidgin : Lang::English;
}

inline Lang parse_lang(std::string_view code) {
  if (code == "en") return Lang::English;
  if (code == "pcm") return Lang::Pidgin;
  throw UsageError("unknown language '" + std::string(code) + "' (expected en or pcm)");
}

using Tokens = std::vector<std::string>;

namespace special {
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kLangEn = 4;
inline constexpr int kLangPcm = 5;
inline constexpr int kCount = 6;
inline constexpr std::string_view kSurface[kCount] = {"<pad>", "<unk>", "<s>",
                                                      "</s>",  "<en>",  "<pcm>"};
}  // namespace special

inline constexpr int lang_token(Lang lang) {
  return lang == Lang::English ? special::kLangEn : special::kLangPcm;
}

/// Token ids plus a language tag. Corpora never store PAD, BOS or EOS.
struct Sentence {
  std::vector<int> ids;
  Lang lang = Lang::English;

  bool operator==(const Sentence&) const = default;
  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
};

inline bool is_valid_utf8(std::string_view s) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(s.data());
  const auto n = static_cast<std::int32_t>(s.size());
  std::int32_t i = 0;
  while (i < n) {
    UChar32 c;
    U8_NEXT(p, i, n, c);
    if (c < 0) return false;
  }
  return true;
}

/// NFC, lowercase, punctuation split into standalone tokens, whitespace
/// collapsed to single spaces. Idempotent.
inline std::string normalize(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");

  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<std::int32_t>(text.size())));
  u = nfc->normalize(u, status);
  u.toLower(icu::Locale::getRoot());
  u = nfc->normalize(u, status);
  if (U_FAILURE(status)) throw Error("ICU normalization failed");

  icu::UnicodeString spaced;
  for (std::int32_t i = 0; i < u.length();) {
    const UChar32 c = u.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c) || u_iscntrl(c)) {
      spaced.append(UChar32{' '});
    } else if (u_ispunct(c)) {
      spaced.append(UChar32{' '});
      spaced.append(c);
      spaced.append(UChar32{' '});
    } else {
      spaced.append(c);
    }
  }

  std::string utf8;
  spaced.toUTF8String(utf8);
  std::string out;
  out.reserve(utf8.size());
  bool pending_space = false;
  for (char ch : utf8) {
    if (ch == ' ') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(ch);
  }
  return out;
}

/// Splits normalized text on single spaces.
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(' ', start);
    if (end == std::string_view::npos) end = text.size();
    if (end > start) out.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

inline std::string join(const Tokens& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

/// Bijective token <-> id map. Specials occupy ids 0..5; the rest are
/// ordered by descending frequency, ties lexicographic.
class Vocab {
 public:
  static constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

  Vocab() {
    for (int i = 0; i < special::kCount; ++i) push(std::string(special::kSurface[i]), 0);
  }

  int id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? special::kUnk : it->second;
  }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::uint64_t frequency(int id) const { return freqs_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }

  /// `token<TAB>id<TAB>frequency` per line, specials first.
  std::string serialize() const {
    std::string out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      out += tokens_[i];
      out += '\t';
      out += std::to_string(i);
      out += '\t';
      out += std::to_string(freqs_[i]);
      out += '\n';
    }
    return out;
  }

  static Vocab deserialize(std::string_view text) {
    Vocab v;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (line.empty()) continue;
      const auto t1 = line.find('\t');
      const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
      if (t2 == std::string_view::npos) {
        throw DataError("vocab line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
      }
      std::string token(line.substr(0, t1));
      int id = 0;
      std::uint64_t freq = 0;
      try {
        id = std::stoi(std::string(line.substr(t1 + 1, t2 - t1 - 1)));
        freq = std::stoull(std::string(line.substr(t2 + 1)));
      } catch (const std::exception&) {
        throw DataError("vocab line " + std::to_string(line_no) + ": bad id or frequency");
      }
      if (id < special::kCount) {
        if (token != special::kSurface[id]) {
          throw DataError("vocab line " + std::to_string(line_no) + ": special id mismatch");
        }
        continue;
      }
      if (id != v.size()) {
        throw DataError("vocab line " + std::to_string(line_no) + ": ids not contiguous");
      }
      if (v.contains(token)) {
        throw DataError("vocab line " + std::to_string(line_no) + ": duplicate token '" + token + "'");
      }
      v.push(std::move(token), freq);
    }
    return v;
  }

  std::uint64_t hash() const { return fnv1a64(serialize()); }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocab to " + path);
    out << serialize();
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocab " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_ && freqs_ == o.freqs_; }

 private:
  friend class VocabBuilder;

  void push(std::string token, std::uint64_t freq) {
    index_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(token));
    freqs_.push_back(freq);
  }

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> freqs_;
  std::unordered_map<std::string, int> index_;
};

class VocabBuilder {
 public:
  void add(const Tokens& sentence) {
    for (const auto& t : sentence) {
      ++counts_[t];
      ++total_;
    }
  }
  void add_all(const std::vector<Tokens>& sentences) {
    for (const auto& s : sentences) add(s);
  }

  std::uint64_t total_tokens() const { return total_; }

  Vocab build(std::uint64_t min_count = 1, std::size_t max_size = Vocab::kUnlimited) const {
    if (total_ == 0) throw DataError("cannot build a vocabulary from zero tokens");
    std::vector<std::pair<std::string, std::uint64_t>> entries;
    for (const auto& [tok, n] : counts_) {
      bool is_special = false;
      for (auto s : special::kSurface) is_special |= (tok == s);
      if (!is_special && n >= min_count) entries.emplace_back(tok, n);
    }
    // std::map iteration is already lexicographic; stable sort keeps that for ties.
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (entries.size() > max_size) entries.resize(max_size);
    Vocab v;
    for (auto& [tok, n] : entries) v.push(std::move(tok), n);
    return v;
  }

 private:
  std::map<std::string, std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

inline Vocab build_vocab(const std::vector<Tokens>& sentences, std::uint64_t min_count = 1,
                         std::size_t max_size = Vocab::kUnlimited) {
  VocabBuilder b;
  b.add_all(sentences);
  return b.build(min_count, max_size);
}

inline Sentence encode(const Tokens& tokens, const Vocab& vocab, Lang lang) {
  Sentence s;
  s.lang = lang;
  s.ids.reserve(tokens.size());
  for (const auto& t : tokens) s.ids.push_back(vocab.id(t));
  return s;
}

inline Tokens decode(const Sentence& sentence, const Vocab& vocab) {
  Tokens out;
  out.reserve(sentence.ids.size());
  for (int id : sentence.ids) out.push_back(vocab.token(id));
  return out;
}

/// normalize + tokenize.
inline Tokens normalize_tokens(std::string_view text) { return tokenize(normalize(text)); }

}  // namespace pcmgen
