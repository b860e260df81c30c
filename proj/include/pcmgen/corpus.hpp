#pragma once

// Corpus ingestion: E2E meaning representations, monolingual text and the
// pseudo-parallel TSV produced by self-training.

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pcmgen/error.hpp"
#include "pcmgen/textcore.hpp"

namespace pcmgen {

// ---------------------------------------------------------------------------
// Meaning representations
// ---------------------------------------------------------------------------

/// E2E attributes in canonical order.
inline constexpr std::array<std::string_view, 8> kMrAttributes = {
    "name", "eatType", "food", "priceRange", "customerRating", "area", "familyFriendly", "near"};

/// Index into kMrAttributes, or -1. Accepts the released corpus spelling
/// "customer rating" as an alias.
inline int attribute_index(std::string_view attr) {
  if (attr == "customer rating") attr = "customerRating";
  for (std::size_t i = 0; i < kMrAttributes.size(); ++i) {
    if (kMrAttributes[i] == attr) return static_cast<int>(i);
  }
  return -1;
}

struct MrSlot {
  std::string attribute;
  std::string value;
  bool operator==(const MrSlot&) const = default;
};

struct MeaningRepresentation {
  std::vector<MrSlot> slots;

  bool operator==(const MeaningRepresentation&) const = default;

  const std::string* find(std::string_view attr) const {
    for (const auto& s : slots) {
      if (s.attribute == attr) return &s.value;
    }
    return nullptr;
  }
};

inline void validate_mr(const MeaningRepresentation& mr) {
  if (mr.slots.empty()) throw ValidationError("meaning representation has no slots", "mr");
  std::set<std::string> seen;
  for (const auto& s : mr.slots) {
    if (attribute_index(s.attribute) < 0) {
      throw ValidationError("unknown attribute '" + s.attribute + "'", s.attribute);
    }
    if (!seen.insert(s.attribute).second) {
      throw ValidationError("duplicate attribute '" + s.attribute + "'", s.attribute);
    }
  }
}

/// Parses `attr[value], attr[value], ...`. Values are kept verbatim.
inline MeaningRepresentation parse_mr(std::string_view text) {
  MeaningRepresentation mr;
  std::size_t pos = 0;
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r' || text.back() == '\n')) {
    text.remove_suffix(1);
  }
  if (text.empty()) throw ParseError("empty meaning representation", 0);
  while (true) {
    const std::size_t open = text.find('[', pos);
    if (open == std::string_view::npos) throw ParseError("expected '['", pos);
    if (open == pos) throw ParseError("empty attribute name", pos);
    const std::size_t close = text.find(']', open + 1);
    if (close == std::string_view::npos) throw ParseError("unterminated '['", open);
    const std::string_view attr = text.substr(pos, open - pos);
    if (attr.find(']') != std::string_view::npos || attr.find(',') != std::string_view::npos) {
      throw ParseError("stray delimiter in attribute name", pos);
    }
    const std::string_view value = text.substr(open + 1, close - open - 1);
    if (value.find('[') != std::string_view::npos) {
      throw ParseError("nested '[' in value", open + 1 + value.find('['));
    }
    std::string canonical(attr);
    if (canonical == "customer rating") canonical = "customerRating";
    mr.slots.push_back({std::move(canonical), std::string(value)});
    pos = close + 1;
    if (pos == text.size()) break;
    if (text.compare(pos, 2, ", ") != 0) throw ParseError("expected ', ' between slots", pos);
    pos += 2;
  }
  validate_mr(mr);
  return mr;
}

/// Inverse of parse_mr on canonical attribute spellings.
inline std::string format_mr(const MeaningRepresentation& mr) {
  std::string out;
  for (std::size_t i = 0; i < mr.slots.size(); ++i) {
    if (i) out += ", ";
    out += mr.slots[i].attribute;
    out += '[';
    out += mr.slots[i].value;
    out += ']';
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180 quoting)
// ---------------------------------------------------------------------------

/// Splits CSV text into records. Quoted fields may contain commas, newlines
/// and doubled quotes. Returns the 1-based starting line of each record too.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(std::string_view text) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  std::size_t row_line = 1;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.emplace_back(row_line, std::move(row));
    row.clear();
  };
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_row();
      ++line;
      row_line = line;
    } else if (c == '\r') {
      // dropped; CRLF handled by the following '\n'
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted CSV field", text.size());
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

inline std::string csv_quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// E2E
// ---------------------------------------------------------------------------

struct D2TExample {
  MeaningRepresentation mr;
  Tokens reference;  // normalized English
};

struct LoadReport {
  std::size_t rows = 0;
  std::size_t skipped = 0;
  std::vector<std::string> problems;
};

/// One example per well-formed row of a `mr,ref` CSV. Malformed rows are
/// skipped and counted in `report`.
inline std::vector<D2TExample> load_e2e(const std::string& path, LoadReport* report = nullptr,
                                        std::ostream* log = nullptr) {
  const std::string text = read_file(path);
  auto records = parse_csv(text);
  if (records.empty()) throw DataError(path + ": missing header");
  const auto& header = records.front().second;
  if (header.size() < 2 || header[0] != "mr" || header[1] != "ref") {
    throw DataError(path + ": expected header 'mr,ref'");
  }
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  std::vector<D2TExample> out;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& [line, fields] = records[r];
    ++rep.rows;
    try {
      if (fields.size() != header.size()) throw DataError("wrong field count");
      D2TExample ex;
      ex.mr = parse_mr(fields[0]);
      ex.reference = normalize_tokens(fields[1]);
      if (ex.reference.empty()) throw DataError("empty reference");
      out.push_back(std::move(ex));
    } catch (const DataError& e) {
      ++rep.skipped;
      rep.problems.push_back(path + ":" + std::to_string(line) + ": " + e.what());
    }
  }
  if (log) {
    *log << "loaded " << path << ": " << rep.rows << " rows, " << out.size() << " examples, "
         << rep.skipped << " skipped\n";
    for (const auto& p : rep.problems) *log << "  skipped " << p << "\n";
  }
  return out;
}

/// Examples grouped by MR, order of first appearance. Training uses
/// references[0]; evaluation uses all of them.
struct MrGroup {
  MeaningRepresentation mr;
  std::vector<Tokens> references;
};

inline std::vector<MrGroup> group_by_mr(const std::vector<D2TExample>& examples) {
  std::vector<MrGroup> groups;
  std::map<std::string, std::size_t> index;
  for (const auto& ex : examples) {
    const std::string key = format_mr(ex.mr);
    auto [it, inserted] = index.emplace(key, groups.size());
    if (inserted) groups.push_back({ex.mr, {}});
    groups[it->second].references.push_back(ex.reference);
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Monolingual corpora
// ---------------------------------------------------------------------------

struct MonoCorpus {
  Lang lang = Lang::English;
  std::vector<Tokens> sentences;
  std::string source_path;

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }
  std::size_t unique_tokens() const {
    std::set<std::string_view> seen;
    for (const auto& s : sentences) {
      for (const auto& t : s) seen.insert(t);
    }
    return seen.size();
  }
};

inline MonoCorpus load_mono(const std::string& path, Lang lang, std::ostream* log = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus " + path);
  MonoCorpus corpus;
  corpus.lang = lang;
  corpus.source_path = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!is_valid_utf8(line)) {
      throw DataError(path + ":" + std::to_string(line_no) + ": invalid UTF-8");
    }
    Tokens toks = normalize_tokens(line);
    if (!toks.empty()) corpus.sentences.push_back(std::move(toks));
  }
  if (log) {
    *log << "loaded " << path << " (" << lang_code(lang) << "): " << corpus.sentences.size()
         << " sentences, " << corpus.unique_tokens() << " unique tokens\n";
  }
  return corpus;
}

inline void write_lines(const std::vector<Tokens>& sentences, std::ostream& out) {
  for (const auto& s : sentences) out << join(s) << '\n';
}

inline std::vector<Sentence> encode_all(const std::vector<Tokens>& sentences, const Vocab& vocab,
                                        Lang lang) {
  std::vector<Sentence> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(encode(s, vocab, lang));
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo-parallel pairs
// ---------------------------------------------------------------------------

/// English source, model-generated Pidgin target, mean per-token log-prob.
struct PseudoPair {
  Tokens source;
  Tokens target;
  double score = 0.0;

  bool operator==(const PseudoPair&) const = default;
};

inline std::string format_score(double score) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), score);
  return std::string(buf.data(), end);
}

inline std::string format_pseudo_line(const PseudoPair& p) {
  return join(p.source) + '\t' + join(p.target) + '\t' + format_score(p.score);
}

inline PseudoPair parse_pseudo_line(std::string_view line, std::size_t line_no) {
  const auto where = [&] { return "pseudo TSV line " + std::to_string(line_no) + ": "; };
  const auto t1 = line.find('\t');
  const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
  if (t2 == std::string_view::npos || line.find('\t', t2 + 1) != std::string_view::npos) {
    throw DataError(where() + "expected 3 tab-separated fields");
  }
  PseudoPair p;
  p.source = tokenize(line.substr(0, t1));
  p.target = tokenize(line.substr(t1 + 1, t2 - t1 - 1));
  const std::string_view num = line.substr(t2 + 1);
  auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), p.score);
  if (ec != std::errc() || ptr != num.data() + num.size()) {
    throw DataError(where() + "bad score '" + std::string(num) + "'");
  }
  if (!std::isfinite(p.score)) throw DataError(where() + "score is not finite");
  if (p.source.empty()) throw DataError(where() + "empty source");
  return p;
}

inline void write_pseudo(const std::vector<PseudoPair>& pairs, std::ostream& out) {
  for (const auto& p : pairs) out << format_pseudo_line(p) << '\n';
}

inline void write_pseudo(const std::vector<PseudoPair>& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_pseudo(pairs, out);
}

inline std::vector<PseudoPair> read_pseudo(std::istream& in) {
  std::vector<PseudoPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(parse_pseudo_line(line, line_no));
  }
  return out;
}

inline std::vector<PseudoPair> read_pseudo(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_pseudo(in);
}

}  // namespace pcmgen
