#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "cfa_lab/pipeline/message.hpp"

namespace cfa_lab {

inline constexpr char kCheckpointMagic[4] = {'C', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// magic "CFCK", version u32, entry count u32, then per entry: name length
// u32, UTF-8 name, rank u32, dims u32 x rank, f32 data. Entries are written
// in name order, so equal stores give equal bytes.
inline std::vector<std::uint8_t> checkpoint_bytes(const ParamStore& store) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  wire::put_u32(out, kCheckpointVersion);
  wire::put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, g] : store.entries()) {
    wire::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    wire::put_u32(out, static_cast<std::uint32_t>(g.rank()));
    for (int d : g.shape()) wire::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : g.values()) wire::put_f32(out, v);
  }
  return out;
}

inline ParamStore parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "checkpoint") {
  wire::Reader r{bytes.data(), bytes.size()};
  if (!r.has(12) || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw LoadError(origin + ": not a checkpoint (bad magic)");
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw LoadError(origin + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  ParamStore store;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string where = origin + ": entry " + std::to_string(e);
    if (!r.has(4)) throw LoadError(where + ": truncated name length");
    const std::uint32_t len = r.u32();
    if (!r.has(len)) throw LoadError(where + ": truncated name");
    const std::string name(reinterpret_cast<const char*>(bytes.data() + r.pos), len);
    r.pos += len;
    const std::string named = origin + ": entry '" + name + "'";
    if (!r.has(4)) throw LoadError(named + ": truncated rank");
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 4) throw LoadError(named + ": invalid rank " + std::to_string(rank));
    if (!r.has(4ull * rank)) throw LoadError(named + ": truncated dims");
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32();
      if (d == 0 || d > (1u << 24)) throw LoadError(named + ": invalid dimension " + std::to_string(d));
      shape.push_back(static_cast<int>(d));
      n *= d;
    }
    if (n > (1ull << 28) || !r.has(4 * n)) throw LoadError(named + ": truncated data");
    std::vector<float> v(n);
    for (auto& x : v) x = r.f32();
    if (store.contains(name)) throw LoadError(named + ": duplicate entry");
    store.add(name, Grid::from(std::move(shape), std::move(v), true));
  }
  if (r.pos != bytes.size()) throw LoadError(origin + ": trailing bytes after the last entry");
  return store;
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  write_file(path, checkpoint_bytes(store));
}

inline ParamStore load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path), path.string());
}

}  // namespace cfa_lab
