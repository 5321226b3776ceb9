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

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "atr/array.hpp"
#include "atr/error.hpp"

namespace atr {

/// Ordered collection of named trainable arrays. The order is the
/// serialization order and the order gradients are reported in.
class ParamSet {
 public:
  void add(std::string name, Array value) {
    if (find(name)) throw ConfigError("duplicate parameter '" + name + "'");
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Array& value(std::size_t i) { return values_.at(i); }
  const Array& value(std::size_t i) const { return values_.at(i); }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return std::nullopt;
  }

  const Array& at(const std::string& name) const {
    auto i = find(name);
    if (!i) throw ConfigError("no parameter named '" + name + "'");
    return values_[*i];
  }
  Array& at(const std::string& name) {
    auto i = find(name);
    if (!i) throw ConfigError("no parameter named '" + name + "'");
    return values_[*i];
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<Array> values_;
};

struct SgdConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.001;
  std::optional<double> max_grad_norm;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    if (max_grad_norm && !(*max_grad_norm > 0.0))
      throw ConfigError("max grad norm must be > 0 when set");
  }
};

/// Plain SGD with coupled L2 decay: p <- p - lr * (g + wd * p). When
/// max_grad_norm is set, g is first rescaled so its global norm does not
/// exceed it. Throws NumericalError on any non-finite gradient, leaving
/// params untouched.
inline void sgd_step(ParamSet& params, const std::vector<Array>& grads,
                     const SgdConfig& cfg) {
  cfg.validate();
  if (grads.size() != params.size()) {
    throw ShapeError("sgd_step: " + std::to_string(grads.size()) +
                     " gradients for " + std::to_string(params.size()) + " parameters");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params.value(i).shape()) {
      throw ShapeError("sgd_step: gradient " + to_string(grads[i].shape()) +
                       " does not match parameter '" + params.name(i) + "' " +
                       to_string(params.value(i).shape()));
    }
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      const double g = grads[i][j];
      if (!std::isfinite(g)) {
        throw NumericalError("non-finite gradient in '" + params.name(i) +
                             "' at element " + std::to_string(j));
      }
      sq += g * g;
    }
  }
  double clip = 1.0;
  if (cfg.max_grad_norm) {
    const double norm = std::sqrt(sq);
    if (norm > *cfg.max_grad_norm) clip = *cfg.max_grad_norm / norm;
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Array& p = params.value(i);
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] -= cfg.learning_rate * (clip * grads[i][j] + cfg.weight_decay * p[j]);
    }
  }
}

}  // namespace atr
