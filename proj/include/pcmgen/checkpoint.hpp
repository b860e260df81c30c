#pragma once

// Checkpoint file: one line of JSON header, then the tensor payload as
// little-endian float32, row-major. Header tensor offsets are relative to
// the first payload byte.
//
//   {"format":"pcmgen-checkpoint","version":1,"seed":S,"meta":{...},
//    "tensors":[{"name":..,"rows":..,"cols":..,"offset":..}, ...]}\n
//   <payload>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pcmgen/error.hpp"
#include "pcmgen/tensor.hpp"

namespace pcmgen {

inline constexpr int kCheckpointVersion = 1;

/// Writes to `path.tmp` then renames, so readers never see a partial file.
inline void atomic_write(const std::string& path, std::string_view data) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw DataError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

struct Checkpoint {
  std::uint64_t seed = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors) {
      if (n == name) return m;
    }
    throw DataError("checkpoint has no tensor '" + name + "'");
  }
};

inline void append_le_floats(std::string& out, const Matrix& m) {
  const std::size_t offset = out.size();
  out.resize(offset + static_cast<std::size_t>(m.size()) * 4);
  char* dst = out.data() + offset;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(m.data()[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(dst + 4 * i, &bits, 4);
  }
}

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json header;
  header["format"] = "pcmgen-checkpoint";
  header["version"] = kCheckpointVersion;
  header["seed"] = ck.seed;
  header["meta"] = ck.meta;
  nlohmann::json list = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, m] : ck.tensors) {
    list.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", payload.size()}});
    append_le_floats(payload, m);
  }
  header["tensors"] = std::move(list);
  std::string out = header.dump();
  out += '\n';
  out += payload;
  return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw DataError("checkpoint: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != "pcmgen-checkpoint") throw DataError("checkpoint: wrong format tag");
  if (header.value("version", 0) != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + header.value("version", nlohmann::json()).dump());
  }
  const std::string_view payload = bytes.substr(nl + 1);
  Checkpoint ck;
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.meta = header.at("meta");
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto bytes_needed = static_cast<std::size_t>(rows * cols) * 4;
    if (rows < 0 || cols < 0 || offset + bytes_needed > payload.size()) {
      throw DataError("checkpoint: tensor '" + t.at("name").get<std::string>() + "' exceeds payload");
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, payload.data() + offset + 4 * static_cast<std::size_t>(i), 4);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      m.data()[i] = std::bit_cast<float>(bits);
    }
    if (!m.allFinite()) throw DataError("checkpoint: non-finite values in '" + t.at("name").get<std::string>() + "'");
    ck.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  atomic_write(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace pcmgen
