// Copyright 2026 The atr Authors.
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

// Checkpoint file layout:
//   "CKPT" | version (1 byte) | header length (u32 LE) | header (UTF-8 JSON)
//   | parameter arrays as float64 LE, in the header's "arrays" order.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atr/embedding_io.hpp"
#include "atr/model.hpp"
#include "atr/params.hpp"

namespace atr {

inline constexpr char kCheckpointMagic[4] = {'C', 'K', 'P', 'T'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  ParamSet params;
  std::size_t epoch = 0;
  /// Validation metrics at save time.
  nlohmann::json validation = nlohmann::json::object();
  /// Fully resolved run configuration.
  nlohmann::json run_config = nlohmann::json::object();
  /// Training RNG state after `epoch`.
  std::string rng_state;
};

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  check_params(ck.params, ck.model);
  nlohmann::json arrays = nlohmann::json::array();
  for (std::size_t i = 0; i < ck.params.size(); ++i)
    arrays.push_back({{"name", ck.params.name(i)}, {"shape", ck.params.value(i).shape()}});
  const nlohmann::json header = {{"model", to_json(ck.model)},   {"epoch", ck.epoch},
                                 {"validation", ck.validation},  {"config", ck.run_config},
                                 {"rng_state", ck.rng_state},    {"arrays", arrays}};
  const std::string h = header.dump();
  std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + 4);
  out.push_back(kCheckpointVersion);
  detail::store_u32_le(static_cast<std::uint32_t>(h.size()), out);
  out.insert(out.end(), h.begin(), h.end());
  out.reserve(out.size() + 8 * ck.params.element_count());
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    for (double v : ck.params.value(i).data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int s = 0; s < 64; s += 8) out.push_back(static_cast<unsigned char>((bits >> s) & 0xffu));
    }
  }
  return out;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  detail::write_all(path, encode_checkpoint(ck));
}

/// Decodes a checkpoint. When `expected` is given, the stored model
/// configuration must equal it.
inline Checkpoint decode_checkpoint(std::span<const unsigned char> bytes,
                                    const std::optional<ModelConfig>& expected = std::nullopt,
                                    const std::string& origin = "<checkpoint>") {
  constexpr std::size_t kPrefix = 9;
  if (bytes.size() < kPrefix) {
    throw DataError(origin + ": truncated checkpoint: expected " + std::to_string(kPrefix) +
                        "-byte preamble, got " + std::to_string(bytes.size()) + " bytes",
                    bytes.size());
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw DataError(origin + ": bad magic, expected \"CKPT\"", 0);
  if (bytes[4] != kCheckpointVersion) {
    throw DataError(origin + ": unsupported checkpoint version " + std::to_string(bytes[4]) +
                        " (expected " + std::to_string(kCheckpointVersion) + ")",
                    4);
  }
  const std::size_t hlen = detail::load_u32_le(bytes.data() + 5);
  if (bytes.size() < kPrefix + hlen) {
    throw DataError(origin + ": truncated checkpoint: expected header of " + std::to_string(hlen) +
                        " bytes, got " + std::to_string(bytes.size() - kPrefix),
                    bytes.size());
  }
  nlohmann::json header;
  Checkpoint ck;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPrefix, bytes.begin() + static_cast<std::ptrdiff_t>(kPrefix + hlen));
    ck.model = model_config_from_json(header.at("model"));
    ck.epoch = header.at("epoch").get<std::size_t>();
    ck.validation = header.at("validation");
    ck.run_config = header.at("config");
    ck.rng_state = header.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": malformed checkpoint header: " + e.what(), kPrefix);
  } catch (const ConfigError& e) {
    throw DataError(origin + ": malformed checkpoint header: " + e.what(), kPrefix);
  }
  if (expected && !(*expected == ck.model)) {
    throw DataError(origin + ": checkpoint model " + to_json(ck.model).dump() +
                    " does not match requested " + to_json(*expected).dump());
  }
  std::size_t off = kPrefix + hlen;
  try {
    for (const auto& a : header.at("arrays")) {
      const auto name = a.at("name").get<std::string>();
      Shape shape = a.at("shape").get<Shape>();
      const std::size_t n = numel(shape);
      if (bytes.size() - off < 8 * n) {
        throw DataError(origin + ": truncated checkpoint: expected array '" + name + "' of " +
                            std::to_string(8 * n) + " bytes, got " + std::to_string(bytes.size() - off),
                        off);
      }
      std::vector<double> data(n);
      for (std::size_t i = 0; i < n; ++i, off += 8) {
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[off + static_cast<std::size_t>(b)];
        data[i] = std::bit_cast<double>(bits);
      }
      ck.params.add(name, Array(std::move(shape), std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": malformed array table: " + e.what(), kPrefix);
  }
  if (off != bytes.size()) {
    throw DataError(origin + ": " + std::to_string(bytes.size() - off) + " trailing bytes", off);
  }
  check_params(ck.params, ck.model);
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const std::optional<ModelConfig>& expected = std::nullopt) {
  const auto bytes = detail::read_all(path);
  return decode_checkpoint(bytes, expected, path.string());
}

}  // namespace atr
