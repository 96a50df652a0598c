// Copyright 2026 The coopdet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Query message wire format and byte accounting.
//
// Layout, little-endian, no padding:
//   0   'C' 'Q' 'R' 'Y'
//   4   u16 version (= 1)
//   6   u16 sender
//   8   u32 N_q
//   12  u32 C_q
//   16  f32 pose x, y, z, yaw
//   32  f32 reference points [N_q × 3], row-major
//   ..  f32 query features   [N_q × C_q], row-major
//
// payload_bytes counts only the query features (N_q·C_q·4); the header, pose
// and reference points are metadata_bytes.

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coopdet/geometry.hpp"
#include "coopdet/point_detr.hpp"

namespace coopdet {

constexpr std::uint16_t kWireVersion = 1;
constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kPoseBytes = 16;

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WirePose {
  float x = 0, y = 0, z = 0, yaw = 0;
  friend bool operator==(const WirePose&, const WirePose&) = default;

  AgentPose to_pose() const { return {x, y, z, yaw}; }
  static WirePose from(const AgentPose& p) {
    return {float(p.x), float(p.y), float(p.z), float(p.yaw)};
  }
};

struct QueryMessage {
  std::uint16_t sender = 0;
  std::uint32_t num_queries = 0;
  std::uint32_t query_dim = 0;
  WirePose pose;
  std::vector<float> reference_points;  // [N_q×3]
  std::vector<float> queries;           // [N_q×C_q]

  std::uint64_t payload_bytes() const { return std::uint64_t(num_queries) * query_dim * 4; }
  std::uint64_t metadata_bytes() const {
    return kHeaderBytes + kPoseBytes + std::uint64_t(num_queries) * 3 * 4;
  }
  std::uint64_t wire_bytes() const { return payload_bytes() + metadata_bytes(); }
};

// Bitwise equality; NaN payloads compare by bit pattern.
inline bool bit_equal(const QueryMessage& a, const QueryMessage& b) {
  auto same = [](const std::vector<float>& x, const std::vector<float>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::bit_cast<std::uint32_t>(x[i]) != std::bit_cast<std::uint32_t>(y[i])) return false;
    return true;
  };
  auto pose_bits = [](const WirePose& p) {
    return std::vector<float>{p.x, p.y, p.z, p.yaw};
  };
  return a.sender == b.sender && a.num_queries == b.num_queries && a.query_dim == b.query_dim &&
         same(pose_bits(a.pose), pose_bits(b.pose)) && same(a.reference_points, b.reference_points) &&
         same(a.queries, b.queries);
}

inline QueryMessage make_message(const std::vector<ObjectQuery>& qs, std::uint16_t sender,
                                 const AgentPose& pose) {
  QueryMessage m;
  m.sender = sender;
  m.num_queries = std::uint32_t(qs.size());
  m.query_dim = qs.empty() ? 0 : std::uint32_t(qs[0].feature.size());
  m.pose = WirePose::from(pose);
  for (const auto& q : qs) {
    if (q.feature.size() != m.query_dim) throw std::invalid_argument("queries must share C_q");
    m.reference_points.insert(m.reference_points.end(), q.ref, q.ref + 3);
    m.queries.insert(m.queries.end(), q.feature.begin(), q.feature.end());
  }
  return m;
}

inline std::vector<ObjectQuery> object_queries(const QueryMessage& m) {
  std::vector<ObjectQuery> out(m.num_queries);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].owner = m.sender;
    for (int k = 0; k < 3; ++k) out[i].ref[k] = m.reference_points[i * 3 + k];
    out[i].feature.assign(m.queries.begin() + std::ptrdiff_t(i * m.query_dim),
                          m.queries.begin() + std::ptrdiff_t((i + 1) * m.query_dim));
  }
  return out;
}

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(std::uint8_t(v & 0xff));
  b.push_back(std::uint8_t(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) b.push_back(std::uint8_t((v >> s) & 0xff));
}
inline void put_f32(std::vector<std::uint8_t>& b, float f) { put_u32(b, std::bit_cast<std::uint32_t>(f)); }

struct Reader {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > b.size()) throw DecodeError("truncated query message");
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = std::uint16_t(b[pos] | (b[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[pos + std::size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const QueryMessage& m) {
  if (m.reference_points.size() != std::size_t(m.num_queries) * 3 ||
      m.queries.size() != std::size_t(m.num_queries) * m.query_dim)
    throw std::invalid_argument("query message arrays do not match N_q, C_q");
  std::vector<std::uint8_t> b;
  b.reserve(m.wire_bytes());
  for (const char c : {'C', 'Q', 'R', 'Y'}) b.push_back(std::uint8_t(c));
  detail::put_u16(b, kWireVersion);
  detail::put_u16(b, m.sender);
  detail::put_u32(b, m.num_queries);
  detail::put_u32(b, m.query_dim);
  for (const float f : {m.pose.x, m.pose.y, m.pose.z, m.pose.yaw}) detail::put_f32(b, f);
  for (const float f : m.reference_points) detail::put_f32(b, f);
  for (const float f : m.queries) detail::put_f32(b, f);
  return b;
}

inline QueryMessage deserialize(const std::vector<std::uint8_t>& bytes) {
  detail::Reader r{bytes};
  r.need(4);
  if (!(bytes[0] == 'C' && bytes[1] == 'Q' && bytes[2] == 'R' && bytes[3] == 'Y'))
    throw DecodeError("bad magic");
  r.pos = 4;
  const auto version = r.u16();
  if (version != kWireVersion) throw DecodeError("unsupported version " + std::to_string(version));
  QueryMessage m;
  m.sender = r.u16();
  m.num_queries = r.u32();
  m.query_dim = r.u32();
  const std::uint64_t expect = m.wire_bytes();
  if (expect != bytes.size())
    throw DecodeError("length mismatch: header implies " + std::to_string(expect) + " bytes, got " +
                      std::to_string(bytes.size()));
  m.pose = {r.f32(), r.f32(), r.f32(), r.f32()};
  m.reference_points.resize(std::size_t(m.num_queries) * 3);
  for (auto& f : m.reference_points) f = r.f32();
  m.queries.resize(std::size_t(m.num_queries) * m.query_dim);
  for (auto& f : m.queries) f = r.f32();
  return m;
}

// Greedy admission in ascending sender order; a message that does not fit
// is dropped whole and later ones are still tried.
inline std::vector<QueryMessage> enforce_budget(std::vector<QueryMessage> msgs, std::uint64_t budget) {
  std::stable_sort(msgs.begin(), msgs.end(),
                   [](const QueryMessage& a, const QueryMessage& b) { return a.sender < b.sender; });
  std::vector<QueryMessage> admitted;
  std::uint64_t used = 0;
  for (auto& m : msgs) {
    if (used + m.payload_bytes() <= budget) {
      used += m.payload_bytes();
      admitted.push_back(std::move(m));
    }
  }
  return admitted;
}

inline std::uint64_t query_payload_bytes(std::uint64_t num_queries, std::uint64_t query_dim) {
  return num_queries * query_dim * 4;
}

inline std::uint64_t bev_baseline_bytes(std::uint64_t H, std::uint64_t W, std::uint64_t C,
                                        std::uint64_t bytes_per_elem) {
  if (!H || !W || !C || !bytes_per_elem) throw std::invalid_argument("dimensions must be positive");
  return H * W * C * bytes_per_elem;
}

// Megabytes with MB = 10⁶ bytes, rounded to three decimals.
inline double to_mb(std::uint64_t bytes) { return std::round(double(bytes) / 1e3) / 1e3; }

inline std::optional<double> log2_bytes(std::uint64_t bytes) {
  if (bytes == 0) return std::nullopt;
  return std::log2(double(bytes));
}

struct CommReport {
  std::vector<std::uint64_t> payload_per_frame;
  std::vector<std::uint64_t> metadata_per_frame;

  void add_frame(const std::vector<QueryMessage>& delivered) {
    std::uint64_t p = 0, m = 0;
    for (const auto& msg : delivered) {
      p += msg.payload_bytes();
      m += msg.metadata_bytes();
    }
    payload_per_frame.push_back(p);
    metadata_per_frame.push_back(m);
  }
  std::uint64_t total_payload() const {
    std::uint64_t t = 0;
    for (const auto v : payload_per_frame) t += v;
    return t;
  }
  std::uint64_t total_metadata() const {
    std::uint64_t t = 0;
    for (const auto v : metadata_per_frame) t += v;
    return t;
  }
  double mean_payload() const {
    return payload_per_frame.empty() ? 0.0 : double(total_payload()) / double(payload_per_frame.size());
  }
  std::optional<double> log2_mean_payload() const {
    const double m = mean_payload();
    if (m <= 0) return std::nullopt;
    return std::log2(m);
  }
};

}  // namespace coopdet
