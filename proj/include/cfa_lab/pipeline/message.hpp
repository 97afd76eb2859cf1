#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "cfa_lab/numeric.hpp"
#include "cfa_lab/world/geometry.hpp"

namespace cfa_lab {

// Little-endian byte writer / reader shared by the message and checkpoint
// formats.
namespace wire {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

struct Reader {
  const std::uint8_t* data;
  std::size_t size, pos = 0;

  bool has(std::size_t n) const { return size - pos >= n; }
  std::uint16_t u16() {
    const std::uint16_t v = static_cast<std::uint16_t>(data[pos] | (data[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
};

}  // namespace wire

inline constexpr char kMessageMagic[4] = {'C', 'F', 'A', '1'};
inline constexpr std::uint16_t kMessageVersion = 1;
inline constexpr std::size_t kMessageHeaderBytes = 32;

// One adapted feature broadcast: header plus (C, H, W) row-major f32 payload.
struct BroadcastMessage {
  std::uint16_t version = kMessageVersion;
  std::uint32_t agent_id = 0;
  std::uint16_t width = 0, height = 0, channels = 0;
  float pose_x = 0, pose_y = 0, pose_yaw = 0;
  std::vector<float> payload;

  std::size_t payload_bytes() const { return 4 * static_cast<std::size_t>(width) * height * channels; }

  static BroadcastMessage from_feature(std::uint32_t agent_id, const Pose& pose, const Grid& feature) {
    if (feature.rank() != 4 || feature.dim(0) != 1)
      throw DimensionError("message: feature must be [1,C,H,W], got " + shape_str(feature.shape()));
    for (int a = 1; a < 4; ++a)
      if (feature.dim(a) > 0xffff) throw ProtocolError("message: feature axis exceeds 65535");
    BroadcastMessage m;
    m.agent_id = agent_id;
    m.channels = static_cast<std::uint16_t>(feature.dim(1));
    m.height = static_cast<std::uint16_t>(feature.dim(2));
    m.width = static_cast<std::uint16_t>(feature.dim(3));
    m.pose_x = static_cast<float>(pose.x);
    m.pose_y = static_cast<float>(pose.y);
    m.pose_yaw = static_cast<float>(pose.yaw);
    m.payload.assign(feature.values().begin(), feature.values().end());
    return m;
  }

  Grid feature() const { return Grid::from({1, channels, height, width}, payload); }
  Pose pose() const { return {pose_x, pose_y, pose_yaw}; }
};

// Header: magic[4], version u16, agent_id u32, W u16, H u16, C u16,
// pose 3 x f32, payload_len u32; all little-endian.
inline std::vector<std::uint8_t> serialize(const BroadcastMessage& m) {
  if (m.payload.size() * 4 != m.payload_bytes())
    throw ProtocolError("serialize: payload holds " + std::to_string(m.payload.size()) + " values, header implies " +
                        std::to_string(m.payload_bytes() / 4));
  std::vector<std::uint8_t> out;
  out.reserve(kMessageHeaderBytes + m.payload_bytes());
  out.insert(out.end(), kMessageMagic, kMessageMagic + 4);
  wire::put_u16(out, m.version);
  wire::put_u32(out, m.agent_id);
  wire::put_u16(out, m.width);
  wire::put_u16(out, m.height);
  wire::put_u16(out, m.channels);
  wire::put_f32(out, m.pose_x);
  wire::put_f32(out, m.pose_y);
  wire::put_f32(out, m.pose_yaw);
  wire::put_u32(out, static_cast<std::uint32_t>(m.payload_bytes()));
  for (float v : m.payload) wire::put_f32(out, v);
  return out;
}

inline BroadcastMessage deserialize(const std::vector<std::uint8_t>& bytes) {
  wire::Reader r{bytes.data(), bytes.size()};
  if (!r.has(kMessageHeaderBytes)) throw ProtocolError("deserialize: header truncated");
  if (std::memcmp(bytes.data(), kMessageMagic, 4) != 0) throw ProtocolError("deserialize: bad magic");
  r.pos = 4;
  BroadcastMessage m;
  m.version = r.u16();
  if (m.version != kMessageVersion) throw ProtocolError("deserialize: unsupported version " + std::to_string(m.version));
  m.agent_id = r.u32();
  m.width = r.u16();
  m.height = r.u16();
  m.channels = r.u16();
  m.pose_x = r.f32();
  m.pose_y = r.f32();
  m.pose_yaw = r.f32();
  const std::uint32_t len = r.u32();
  if (len != m.payload_bytes())
    throw ProtocolError("deserialize: payload_len " + std::to_string(len) + " does not match 4*W*H*C = " +
                        std::to_string(m.payload_bytes()));
  if (bytes.size() - r.pos != len)
    throw ProtocolError("deserialize: payload_len " + std::to_string(len) + " but " +
                        std::to_string(bytes.size() - r.pos) + " payload bytes present");
  m.payload.resize(len / 4);
  for (auto& v : m.payload) v = r.f32();
  return m;
}

}  // namespace cfa_lab
