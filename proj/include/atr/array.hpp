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

#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "atr/error.hpp"

namespace atr {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. Plain value type.
class Array {
 public:
  Array() = default;

  explicit Array(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(numel(shape_), fill) {
    check_shape();
  }

  Array(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != numel(shape_)) {
      throw ShapeError("array data has " + std::to_string(data_.size()) +
                       " elements but shape " + atr::to_string(shape_) +
                       " needs " + std::to_string(numel(shape_)));
    }
  }

  static Array scalar(double v) { return Array({1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D access; caller guarantees rank 2.
  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * shape_[1] + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  std::span<const double> row(std::size_t r) const {
    const std::size_t w = shape_.back();
    return std::span<const double>(data_).subspan(r * w, w);
  }
  std::span<double> row(std::size_t r) {
    const std::size_t w = shape_.back();
    return std::span<double>(data_).subspan(r * w, w);
  }

  bool operator==(const Array&) const = default;

 private:
  void check_shape() const {
    if (shape_.empty()) throw ShapeError("array shape must have rank >= 1");
    for (auto d : shape_) {
      if (d == 0) {
        throw ShapeError("array extents must be positive, got " +
                         atr::to_string(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace atr
