#pragma once

// Layered run configuration: built-in defaults, then an optional JSON file,
// then `--set a.b=value` overrides. Keys that the defaults do not define are
// rejected so a typo cannot silently fall back to a default.

#include <nlohmann/json.hpp>

#include <string>
#include <string_view>
#include <vector>

#include "pcmgen/corpus.hpp"
#include "pcmgen/embed.hpp"
#include "pcmgen/error.hpp"
#include "pcmgen/seq2seq.hpp"

namespace pcmgen {

inline void to_json(nlohmann::json& j, const SkipgramConfig& c) {
  j = {{"dim", c.dim},         {"window", c.window},       {"negatives", c.negatives},
       {"epochs", c.epochs},   {"lr", c.lr},               {"subsample", c.subsample},
       {"min_count", c.min_count}, {"buckets", c.buckets}, {"seed", c.seed},
       {"threads", c.threads}};
}

inline void from_json(const nlohmann::json& j, SkipgramConfig& c) {
  c.dim = j.value("dim", c.dim);
  c.window = j.value("window", c.window);
  c.negatives = j.value("negatives", c.negatives);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.subsample = j.value("subsample", c.subsample);
  c.min_count = j.value("min_count", c.min_count);
  c.buckets = j.value("buckets", c.buckets);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
}

inline void to_json(nlohmann::json& j, const ModelDims& d) { j = {{"emb", d.emb}, {"hidden", d.hidden}}; }

inline void from_json(const nlohmann::json& j, ModelDims& d) {
  d.emb = j.value("emb", d.emb);
  d.hidden = j.value("hidden", d.hidden);
  if (d.emb < 1 || d.hidden < 1) throw UsageError("emb and hidden must be >= 1");
}

namespace detail {

inline void check_known(const nlohmann::json& defaults, const nlohmann::json& given, const std::string& prefix) {
  if (!given.is_object()) throw UsageError("config " + (prefix.empty() ? std::string("root") : prefix) + " must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) throw UsageError("unknown config key '" + path + "'");
    if (defaults.at(key).is_object()) check_known(defaults.at(key), value, path);
  }
}

inline std::vector<std::string> split_dotted(std::string_view key) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    parts.emplace_back(key.substr(start, dot - start));
    if (parts.back().empty()) throw UsageError("bad config key '" + std::string(key) + "'");
    if (dot == std::string_view::npos) return parts;
    start = dot + 1;
  }
}

}  // namespace detail

/// Applies one `a.b=value` override. The value is parsed as JSON when it can
/// be, so `lr=1e-4` is a number and `pseudo_path=out.tsv` a string.
inline void apply_override(nlohmann::json& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw UsageError("--set expects key=value, got '" + std::string(assignment) + "'");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  nlohmann::json* node = &cfg;
  const auto parts = detail::split_dotted(key);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw UsageError("unknown config key '" + key + "'");
    node = &(*node)[parts[i]];
  }
  if (node->is_object()) throw UsageError("config key '" + key + "' is a section, set its fields instead");
  auto value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  *node = std::move(value);
}

/// Merges `file` (may be empty for none) and `overrides` over `defaults`.
inline nlohmann::json resolve_config(nlohmann::json defaults, const std::string& file,
                                     const std::vector<std::string>& overrides) {
  if (!file.empty()) {
    const auto given = nlohmann::json::parse(read_file(file), nullptr, false);
    if (given.is_discarded()) throw UsageError("config " + file + " is not valid JSON");
    detail::check_known(defaults, given, "");
    defaults.merge_patch(given);
  }
  for (const auto& o : overrides) apply_override(defaults, o);
  return defaults;
}

/// Converts a resolved config to `T`, reporting type mismatches as usage errors.
template <typename T>
T config_from(const nlohmann::json& j) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
}

}  // namespace pcmgen
