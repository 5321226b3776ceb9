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
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "atr/autodiff.hpp"
#include "atr/pooling.hpp"

namespace atr {

/// One branch's FC projection (dim x pooled_dim, dim) and context gate
/// (dim x dim, dim).
struct ProjectionParams {
  Array fc_weight, fc_bias;
  Array gate_weight, gate_bias;
};

struct ProjectionVars {
  Var fc_weight, fc_bias;
  Var gate_weight, gate_bias;
};

inline ProjectionParams init_projection(std::size_t pooled_dim, std::size_t dim,
                                        std::mt19937_64& rng) {
  ProjectionParams p;
  p.fc_weight = detail::xavier_uniform({dim, pooled_dim}, pooled_dim, dim, rng);
  p.fc_bias = Array({dim});
  p.gate_weight = detail::xavier_uniform({dim, dim}, dim, dim, rng);
  p.gate_bias = Array({dim});
  return p;
}

/// X = fc_weight * pooled + fc_bias, then Y = sigmoid(gate_weight * X +
/// gate_bias) * X elementwise. Accepts one pooled vector [P] or a batch
/// [B, P]; a single vector is evaluated as a batch of one.
inline Var project_and_gate(Var pooled, const ProjectionVars& p) {
  const bool single = pooled.shape().size() == 1;
  if (single) pooled = reshape(pooled, {1, pooled.shape()[0]});
  detail::require_rank("project_and_gate", pooled.shape(), 2);
  if (p.fc_weight.shape().size() != 2 || p.fc_weight.shape()[1] != pooled.shape()[1]) {
    throw ShapeError(detail::shapes_msg("project_and_gate", pooled.shape(), p.fc_weight.shape()));
  }
  Var x = add(matmul(pooled, transpose(p.fc_weight)), p.fc_bias);
  Var gate = sigmoid(add(matmul(x, transpose(p.gate_weight)), p.gate_bias));
  Var y = mul(gate, x);
  return single ? reshape(y, {y.shape()[1]}) : y;
}

/// Cosine scores between the rows of `captions` [n, d] and `audios` [m, d].
inline Var cosine_scores(Var captions, Var audios) {
  return matmul(l2_normalize(captions), transpose(l2_normalize(audios)));
}

/// Caption x audio cosine scores with ground truth.
struct SimilarityMatrix {
  Array scores;
  /// Matching audio column for every caption row.
  std::vector<std::size_t> truth;
  /// Caption rows of every audio column.
  std::vector<std::vector<std::size_t>> groups;

  std::size_t captions() const { return scores.dim(0); }
  std::size_t audios() const { return scores.dim(1); }
};

inline std::vector<std::vector<std::size_t>> group_by_truth(const std::vector<std::size_t>& truth,
                                                            std::size_t n_audio) {
  std::vector<std::vector<std::size_t>> groups(n_audio);
  for (std::size_t r = 0; r < truth.size(); ++r) {
    if (truth[r] >= n_audio) {
      throw ShapeError("caption " + std::to_string(r) + " points at audio " +
                       std::to_string(truth[r]) + " of " + std::to_string(n_audio));
    }
    groups[truth[r]].push_back(r);
  }
  return groups;
}

/// Normalizes every vector, then scores by dot product. An empty `truth`
/// means caption i matches audio i. Zero vectors yield zero scores and a
/// warning.
inline SimilarityMatrix similarity_matrix(const Array& caption_vectors, const Array& audio_vectors,
                                          std::vector<std::size_t> truth = {}) {
  detail::require_rank("similarity_matrix", caption_vectors.shape(), 2);
  detail::require_rank("similarity_matrix", audio_vectors.shape(), 2);
  if (caption_vectors.dim(1) != audio_vectors.dim(1)) {
    throw ShapeError(detail::shapes_msg("similarity_matrix", caption_vectors.shape(),
                                        audio_vectors.shape()));
  }
  if (truth.empty()) {
    if (caption_vectors.dim(0) != audio_vectors.dim(0)) {
      throw ShapeError("similarity_matrix: implicit diagonal truth needs equal counts");
    }
    truth.resize(caption_vectors.dim(0));
    std::iota(truth.begin(), truth.end(), std::size_t{0});
  }
  if (truth.size() != caption_vectors.dim(0)) throw ShapeError("similarity_matrix: truth size mismatch");
  Tape tape;
  Var s = cosine_scores(tape.constant(caption_vectors), tape.constant(audio_vectors));
  SimilarityMatrix out;
  out.scores = s.value();
  out.groups = group_by_truth(truth, audio_vectors.dim(0));
  out.truth = std::move(truth);
  return out;
}

}  // namespace atr
