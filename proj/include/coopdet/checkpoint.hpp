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

// Checkpoint file: "CDCK", u32 version, u32 JSON length, the experiment
// config as JSON, u32 parameter count, then per parameter u32 name length,
// name, u32 rank, u32 dims, f32 data. Little-endian throughout.

#include <bit>
#include <cstdint>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "coopdet/config.hpp"

namespace coopdet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void write_u32(std::ostream& o, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char(v >> 24)};
  o.write(b, 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint truncated");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline std::string read_string(std::istream& in, std::uint32_t n) {
  if (n > (1u << 28)) throw CheckpointError("checkpoint string too long");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw CheckpointError("checkpoint truncated");
  return s;
}

}  // namespace detail

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ExperimentConfig& cfg,
                            const CoopModel<float>& model) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw CheckpointError("cannot write " + path);
  o.write("CDCK", 4);
  detail::write_u32(o, kCheckpointVersion);
  const auto js = to_json(cfg).dump();
  detail::write_u32(o, std::uint32_t(js.size()));
  o.write(js.data(), std::streamsize(js.size()));
  const auto& entries = model.parameters().entries();
  detail::write_u32(o, std::uint32_t(entries.size()));
  for (const auto& [name, t] : entries) {
    detail::write_u32(o, std::uint32_t(name.size()));
    o.write(name.data(), std::streamsize(name.size()));
    detail::write_u32(o, std::uint32_t(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) detail::write_u32(o, std::uint32_t(t.dim(d)));
    for (const float v : t.data()) detail::write_u32(o, std::bit_cast<std::uint32_t>(v));
  }
  if (!o) throw CheckpointError("write failed: " + path);
}

inline ExperimentConfig read_checkpoint_config(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "CDCK") throw CheckpointError("not a checkpoint file");
  if (detail::read_u32(in) != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");
  const auto js = detail::read_string(in, detail::read_u32(in));
  try {
    return experiment_from_json(json::parse(js));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
}

// Copies stored values into `model`; names and shapes must match exactly.
inline void read_checkpoint_parameters(std::istream& in, CoopModel<float>& model) {
  auto& entries = model.parameters().entries();
  if (detail::read_u32(in) != entries.size()) throw CheckpointError("parameter count mismatch");
  for (auto& [name, t] : entries) {
    const auto got = detail::read_string(in, detail::read_u32(in));
    if (got != name) throw CheckpointError("expected parameter " + name + ", found " + got);
    const auto rank = detail::read_u32(in);
    if (rank != t.rank()) throw CheckpointError("rank mismatch for " + name);
    for (std::size_t d = 0; d < rank; ++d)
      if (detail::read_u32(in) != t.dim(d)) throw CheckpointError("shape mismatch for " + name);
    auto data = t.mutable_data();
    for (auto& v : data) v = std::bit_cast<float>(detail::read_u32(in));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in checkpoint");
}

struct LoadedModel {
  ExperimentConfig config;
  std::unique_ptr<CoopModel<float>> model;
};

inline LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  LoadedModel r;
  r.config = read_checkpoint_config(in);
  r.model = std::make_unique<CoopModel<float>>(r.config.model);
  read_checkpoint_parameters(in, *r.model);
  return r;
}

}  // namespace coopdet
