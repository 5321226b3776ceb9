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
#include <string>
#include <vector>

#include "atr/autodiff.hpp"

namespace atr {

struct LossConfig {
  double margin = 0.2;
  std::size_t batch_size = 128;

  void validate() const {
    if (!(margin >= 0.0)) throw ConfigError("margin must be >= 0");
    if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  }
};

/// Bidirectional max-margin ranking loss over a B x B score block with
/// positives on the diagonal:
///   L = 1/B sum_i sum_{j != i} [max(0, m + s(i,j) - s(i,i))
///                              + max(0, m + s(j,i) - s(i,i))]
inline Var ranking_loss(Var scores, double margin) {
  const Shape& s = scores.shape();
  if (s.size() != 2 || s[0] != s[1]) throw ShapeError("ranking_loss: scores must be square, got " + to_string(s));
  const std::size_t b = s[0];
  if (b < 2) throw ShapeError("ranking_loss: batch size must be >= 2");
  const std::size_t pairs = b * (b - 1);
  std::vector<std::size_t> row, col, diag;
  row.reserve(pairs);
  col.reserve(pairs);
  diag.reserve(pairs);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      row.push_back(i * b + j);   // caption i against audio j
      col.push_back(j * b + i);   // audio i against caption j
      diag.push_back(i * b + i);
    }
  Tape& tape = scores.tape();
  Var positive = gather(scores, std::move(diag), {pairs});
  Var m = tape.constant(Array({pairs}, margin));
  Var caption_hinge = relu(add(sub(gather(scores, std::move(row), {pairs}), positive), m));
  Var audio_hinge = relu(add(sub(gather(scores, std::move(col), {pairs}), positive), m));
  return scale(add(sum(caption_hinge), sum(audio_hinge)), 1.0 / static_cast<double>(b));
}

inline double ranking_loss(const Array& scores, double margin) {
  Tape tape;
  return ranking_loss(tape.constant(scores), margin).value()[0];
}

}  // namespace atr
