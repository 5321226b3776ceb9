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

// EMB1 embedding files: 4-byte magic "EMB1", u32 LE rows, u32 LE cols,
// then rows*cols IEEE-754 float32 LE values in row-major order. Nothing
// may follow the payload.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "atr/array.hpp"
#include "atr/error.hpp"

namespace atr {

/// Variable-length sequence of fixed-dimension vectors: one caption's
/// words or one clip's audio segments.
struct EmbeddingSequence {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  EmbeddingSequence() = default;
  EmbeddingSequence(std::size_t r, std::size_t d, std::vector<double> values)
      : rows(r), dim(d), data(std::move(values)) {
    if (rows == 0 || dim == 0) throw DataError("embedding sequence must have rows >= 1 and dim >= 1");
    if (data.size() != rows * dim) throw DataError("embedding sequence data size mismatch");
  }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data).subspan(i * dim, dim);
  }

  Array to_array() const { return Array({rows, dim}, data); }

  bool operator==(const EmbeddingSequence&) const = default;
};

inline constexpr char kEmbMagic[4] = {'E', 'M', 'B', '1'};
inline constexpr std::size_t kEmbHeaderBytes = 12;

namespace detail {

inline std::uint32_t load_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void store_u32_le(std::uint32_t v, std::vector<unsigned char>& out) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<unsigned char>((v >> s) & 0xffu));
}

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_all(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to '" + path.string() + "'");
}

}  // namespace detail

/// Parses an EMB1 buffer. `origin` names the source in error messages.
inline EmbeddingSequence parse_embedding(std::span<const unsigned char> bytes,
                                         const std::string& origin = "<buffer>") {
  if (bytes.size() < kEmbHeaderBytes) {
    throw DataError(origin + ": truncated header: expected " + std::to_string(kEmbHeaderBytes) +
                        " bytes, got " + std::to_string(bytes.size()),
                    bytes.size());
  }
  if (std::memcmp(bytes.data(), kEmbMagic, 4) != 0) throw DataError(origin + ": bad magic, expected \"EMB1\"", 0);
  const std::uint64_t rows = detail::load_u32_le(bytes.data() + 4);
  const std::uint64_t cols = detail::load_u32_le(bytes.data() + 8);
  if (rows == 0 || cols == 0) {
    throw DataError(origin + ": empty sequence (rows=" + std::to_string(rows) +
                        ", cols=" + std::to_string(cols) + ")",
                    4);
  }
  // rows, cols < 2^32 so the product fits in 64 bits; the byte count may not.
  const std::uint64_t count = rows * cols;
  constexpr std::uint64_t kMaxCount =
      (std::numeric_limits<std::uint64_t>::max() - kEmbHeaderBytes) / 4;
  if (count > kMaxCount || count > std::numeric_limits<std::size_t>::max() / sizeof(double)) {
    throw DataError(origin + ": rows*cols overflows (" + std::to_string(rows) + "*" +
                        std::to_string(cols) + ")",
                    4);
  }
  const std::uint64_t expected = kEmbHeaderBytes + 4 * count;
  if (bytes.size() != expected) {
    throw DataError(origin + ": payload size mismatch: expected " + std::to_string(expected) +
                        " bytes, got " + std::to_string(bytes.size()),
                    std::min<std::uint64_t>(bytes.size(), expected));
  }
  std::vector<double> data(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t off = kEmbHeaderBytes + 4 * i;
    const float f = std::bit_cast<float>(detail::load_u32_le(bytes.data() + off));
    if (!std::isfinite(f)) throw DataError(origin + ": non-finite value", off);
    data[i] = static_cast<double>(f);
  }
  return EmbeddingSequence(rows, cols, std::move(data));
}

inline EmbeddingSequence read_embedding_file(const std::filesystem::path& path) {
  const auto bytes = detail::read_all(path);
  return parse_embedding(bytes, path.string());
}

/// Serializes to EMB1. Values are narrowed to float32.
inline std::vector<unsigned char> encode_embedding(const EmbeddingSequence& seq) {
  if (seq.rows == 0 || seq.dim == 0) throw DataError("cannot encode empty sequence");
  if (seq.rows > std::numeric_limits<std::uint32_t>::max() ||
      seq.dim > std::numeric_limits<std::uint32_t>::max()) {
    throw DataError("sequence extents exceed 32-bit header fields");
  }
  std::vector<unsigned char> out(kEmbMagic, kEmbMagic + 4);
  out.reserve(kEmbHeaderBytes + 4 * seq.data.size());
  detail::store_u32_le(static_cast<std::uint32_t>(seq.rows), out);
  detail::store_u32_le(static_cast<std::uint32_t>(seq.dim), out);
  for (double v : seq.data) {
    const auto f = static_cast<float>(v);
    if (!std::isfinite(f)) throw DataError("cannot encode non-finite value");
    detail::store_u32_le(std::bit_cast<std::uint32_t>(f), out);
  }
  return out;
}

inline void write_embedding_file(const std::filesystem::path& path, const EmbeddingSequence& seq) {
  detail::write_all(path, encode_embedding(seq));
}

}  // namespace atr
