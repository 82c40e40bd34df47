#pragma once

// Self-describing checkpoint container.
//
//   bytes 0..7   magic "MINDCAP\0"
//   u32          format version (1)
//   u64          header length H
//   H bytes      JSON header: kind, config, config_hash, metadata, rng_state,
//                tensors[{name, rows, cols, offset}] (offset in doubles)
//   ...          tensor payload, little-endian IEEE-754 doubles, row-major
//
// The header is written with sorted keys so identical content produces
// identical bytes.

#include "mindcap/core/autograd.hpp"
#include "mindcap/core/digest.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

namespace mindcap {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian host");

struct Checkpoint {
  std::string kind;
  json config = json::object();
  std::string config_hash;
  json metadata = json::object();
  std::string rng_state;
  std::map<std::string, ag::Mat> tensors;

  // Merges tensors under a name prefix, e.g. "be." for the brain encoder.
  void put_all(const std::map<std::string, ag::Mat>& ts, const std::string& prefix) {
    for (const auto& [k, v] : ts) tensors[prefix + k] = v;
  }

  std::map<std::string, ag::Mat> with_prefix(const std::string& prefix) const {
    std::map<std::string, ag::Mat> out;
    for (const auto& [k, v] : tensors)
      if (k.rfind(prefix, 0) == 0) out[k.substr(prefix.size())] = v;
    return out;
  }
};

inline constexpr char kCheckpointMagic[8] = {'M', 'I', 'N', 'D', 'C', 'A', 'P', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  json header;
  header["kind"] = ck.kind;
  header["config"] = ck.config;
  header["config_hash"] = ck.config_hash;
  header["metadata"] = ck.metadata;
  header["rng_state"] = ck.rng_state;
  json dir = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : ck.tensors) {
    dir.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size());
  }
  header["tensors"] = dir;
  const std::string h = header.dump();

  std::string out;
  out.append(kCheckpointMagic, 8);
  const std::uint32_t ver = kCheckpointVersion;
  out.append(reinterpret_cast<const char*>(&ver), sizeof ver);
  const std::uint64_t hl = h.size();
  out.append(reinterpret_cast<const char*>(&hl), sizeof hl);
  out += h;
  for (const auto& [name, m] : ck.tensors)
    out.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<size_t>(m.size()));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>") {
  auto fail = [&](const std::string& why) { throw std::runtime_error("checkpoint " + origin + ": " + why); };
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) fail("bad magic");
  std::uint32_t ver = 0;
  std::memcpy(&ver, bytes.data() + 8, sizeof ver);
  if (ver != kCheckpointVersion) fail("unsupported version " + std::to_string(ver));
  std::uint64_t hl = 0;
  std::memcpy(&hl, bytes.data() + 12, sizeof hl);
  if (20 + hl > bytes.size()) fail("truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(20, hl));
  } catch (const json::exception& e) {
    fail(std::string("header is not valid JSON: ") + e.what());
  }
  Checkpoint ck;
  ck.kind = header.at("kind").get<std::string>();
  ck.config = header.at("config");
  ck.config_hash = header.at("config_hash").get<std::string>();
  ck.metadata = header.at("metadata");
  ck.rng_state = header.at("rng_state").get<std::string>();
  const size_t payload = 20 + hl;
  std::uint64_t expected = 0;
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto off = t.at("offset").get<std::uint64_t>();
    if (off != expected) fail("tensor offsets are not contiguous");
    const size_t begin = payload + off * sizeof(double);
    const size_t n = static_cast<size_t>(rows * cols);
    if (begin + n * sizeof(double) > bytes.size()) fail("truncated tensor " + t.at("name").get<std::string>());
    ag::Mat m(rows, cols);
    std::memcpy(m.data(), bytes.data() + begin, n * sizeof(double));
    ck.tensors[t.at("name").get<std::string>()] = std::move(m);
    expected += n;
  }
  if (payload + expected * sizeof(double) != bytes.size()) fail("trailing bytes after payload");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write for checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path.string());
}

inline std::string config_hash(const json& config) { return sha256_hex(config.dump()); }

}  // namespace mindcap
