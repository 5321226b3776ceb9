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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "atr/autodiff.hpp"

namespace atr {

struct GradcheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

/// Error between an analytic and a numeric derivative, relative to the
/// larger magnitude of the two, with `floor` as the smallest denominator.
inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences with step h. `fn` receives one Var per input array
/// and must return a scalar Var on the same tape.
template <class Fn>
GradcheckResult gradcheck(Fn&& fn, const std::vector<Array>& inputs, double h = 1e-5,
                          double floor = 1e-6) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& a : inputs) vars.push_back(tape.leaf(a));
    Var root = fn(tape, std::span<const Var>(vars));
    tape.backward(root);
    for (const auto& v : vars) analytic.emplace_back(v.grad().begin(), v.grad().end());
  }

  auto evaluate = [&](const std::vector<Array>& xs) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& a : xs) vars.push_back(tape.constant(a));
    return fn(tape, std::span<const Var>(vars)).value()[0];
  };

  GradcheckResult result;
  std::vector<Array> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      work[k][i] = x0 + h;
      const double fp = evaluate(work);
      work[k][i] = x0 - h;
      const double fm = evaluate(work);
      work[k][i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      result.max_abs_error = std::max(result.max_abs_error, std::abs(a - numeric));
      result.max_rel_error = std::max(result.max_rel_error, relative_error(a, numeric, floor));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace atr
