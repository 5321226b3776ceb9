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

// Standard finite-difference checks: every differentiable operation on
// small random inputs, and every full training head (pooling, projection,
// gating, normalization, ranking loss) for each pooling method.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "atr/batching.hpp"
#include "atr/gradcheck.hpp"
#include "atr/loss.hpp"
#include "atr/model.hpp"

namespace atr {

struct GradcheckCase {
  std::string name;
  std::function<Var(Tape&, std::span<const Var>)> fn;
  std::vector<Array> inputs;
};

struct GradcheckOutcome {
  std::string name;
  GradcheckResult result;
  bool passed = false;
};

namespace detail {

inline Array uniform_array(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Array a(std::move(shape));
  for (auto& v : a.storage()) v = d(rng);
  return a;
}

// Pushes entries at least `gap` away from zero.
inline Array away_from_zero(Array a, double gap) {
  for (auto& v : a.storage())
    if (std::abs(v) < gap) v = v < 0 ? v - 2 * gap : v + 2 * gap;
  return a;
}

}  // namespace detail

/// One case per operation kind; 3x4 operands drawn uniformly from [-1, 1].
/// Each scalar root is sum(op(...) * R) for a fixed random R.
inline std::vector<GradcheckCase> op_gradcheck_cases(std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  auto u = [&](Shape s, double lo = -1.0, double hi = 1.0) {
    return detail::uniform_array(std::move(s), rng, lo, hi);
  };
  std::vector<GradcheckCase> cases;
  auto weighted = [](Var out, const Array& r) {
    return sum(mul(out, out.tape().constant(r)));
  };
  auto add_case = [&](std::string name, std::vector<Array> inputs, Shape out_shape,
                      std::function<Var(std::span<const Var>)> op) {
    Array r = u(out_shape);
    cases.push_back({std::move(name),
                     [op, r, weighted](Tape&, std::span<const Var> v) { return weighted(op(v), r); },
                     std::move(inputs)});
  };
  const Mask mask{1, 0, 1};

  add_case("matmul", {u({3, 4}), u({4, 3})}, {3, 3}, [](auto v) { return matmul(v[0], v[1]); });
  add_case("matmul-vector", {u({3, 4}), u({4})}, {3}, [](auto v) { return matmul(v[0], v[1]); });
  add_case("add", {u({3, 4}), u({3, 4})}, {3, 4}, [](auto v) { return add(v[0], v[1]); });
  add_case("add-bias-row", {u({3, 4}), u({4})}, {3, 4}, [](auto v) { return add(v[0], v[1]); });
  add_case("sub", {u({3, 4}), u({3, 4})}, {3, 4}, [](auto v) { return sub(v[0], v[1]); });
  add_case("mul", {u({3, 4}), u({3, 4})}, {3, 4}, [](auto v) { return mul(v[0], v[1]); });
  add_case("div", {u({3, 4}), u({3, 4}, 0.5, 1.5)}, {3, 4}, [](auto v) { return div(v[0], v[1]); });
  add_case("exp", {u({3, 4})}, {3, 4}, [](auto v) { return exp(v[0]); });
  add_case("log", {u({3, 4}, 0.5, 1.5)}, {3, 4}, [](auto v) { return log(v[0]); });
  add_case("tanh", {u({3, 4})}, {3, 4}, [](auto v) { return tanh(v[0]); });
  add_case("sigmoid", {u({3, 4})}, {3, 4}, [](auto v) { return sigmoid(v[0]); });
  add_case("relu-hinge", {detail::away_from_zero(u({3, 4}), 1e-2)}, {3, 4},
           [](auto v) { return relu(v[0]); });
  add_case("row-softmax", {u({3, 4})}, {3, 4}, [](auto v) { return row_softmax(v[0]); });
  add_case("masked-sum", {u({3, 4})}, {4}, [mask](auto v) { return masked_sum(v[0], mask); });
  add_case("masked-mean", {u({3, 4})}, {4}, [mask](auto v) { return masked_mean(v[0], mask); });
  add_case("masked-max", {u({3, 4})}, {4}, [mask](auto v) { return masked_max(v[0], mask); });
  add_case("reshape", {u({3, 4})}, {4, 3}, [](auto v) { return reshape(v[0], {4, 3}); });
  add_case("concat", {u({3, 4}), u({2, 4})}, {5, 4}, [](auto v) { return concat({v[0], v[1]}); });
  add_case("l2-normalize", {u({3, 4})}, {3, 4}, [](auto v) { return l2_normalize(v[0]); });
  add_case("transpose", {u({3, 4})}, {4, 3}, [](auto v) { return transpose(v[0]); });
  add_case("scalar-scale", {u({3, 4})}, {3, 4}, [](auto v) { return scale(v[0], 0.7); });
  add_case("sum", {u({3, 4})}, {1}, [](auto v) { return sum(v[0]); });
  add_case("gather", {u({3, 4})}, {2, 3},
           [](auto v) { return gather(v[0], {0, 5, 5, 11, 3, 7}, {2, 3}); });
  return cases;
}

/// Small model configuration used by the head checks.
inline ModelConfig head_check_config(Pooling pooling) {
  ModelConfig cfg;
  cfg.pooling = pooling;
  cfg.text_dim = 3;
  cfg.audio_dim = 4;
  cfg.dim = 5;
  cfg.clusters_text = 2;
  cfg.clusters_audio = 3;
  return cfg;
}

/// Pooling -> FC -> gating -> L2 -> cosine -> ranking loss over a padded
/// batch of 3 variable-length pairs, differentiated with respect to every
/// model parameter.
inline GradcheckCase head_gradcheck_case(Pooling pooling, std::uint64_t seed = 11,
                                         double margin = 0.5) {
  const ModelConfig cfg = head_check_config(pooling);
  std::mt19937_64 rng(seed);
  ParamSet ps = init_params(cfg, rng);
  // Random biases in place of the zero init.
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps.name(i).find("bias") != std::string::npos || ps.name(i).find(".b_") != std::string::npos) {
      ps.value(i) = detail::uniform_array(ps.value(i).shape(), rng, -0.5, 0.5);
    }
  }
  std::vector<EmbeddingSequence> caps, auds;
  const std::size_t cap_len[] = {2, 4, 3}, aud_len[] = {3, 2, 4};
  for (std::size_t b = 0; b < 3; ++b) {
    auto c = detail::uniform_array({cap_len[b], cfg.text_dim}, rng, -1.0, 1.0);
    auto a = detail::uniform_array({aud_len[b], cfg.audio_dim}, rng, -1.0, 1.0);
    caps.emplace_back(cap_len[b], cfg.text_dim, c.storage());
    auds.emplace_back(aud_len[b], cfg.audio_dim, a.storage());
  }
  std::vector<const EmbeddingSequence*> cp, ap;
  for (std::size_t b = 0; b < 3; ++b) {
    cp.push_back(&caps[b]);
    ap.push_back(&auds[b]);
  }
  Batch batch;
  batch.captions = pad_sequences(cp);
  batch.audio = pad_sequences(ap);
  batch.item_ids = {"a", "b", "c"};

  std::vector<Array> inputs;
  for (std::size_t i = 0; i < ps.size(); ++i) inputs.push_back(ps.value(i));
  return {std::string("head/") + pooling_name(pooling),
          [ps, cfg, batch, margin](Tape& tape, std::span<const Var> v) {
            const BoundModel m = assemble_model(ps, std::vector<Var>(v.begin(), v.end()), cfg);
            return ranking_loss(batch_scores(tape, m, batch, cfg), margin);
          },
          std::move(inputs)};
}

inline std::vector<GradcheckCase> head_gradcheck_cases(std::uint64_t seed = 11) {
  std::vector<GradcheckCase> out;
  for (auto p : {Pooling::mean, Pooling::max, Pooling::lstm, Pooling::netvlad, Pooling::netrvlad})
    out.push_back(head_gradcheck_case(p, seed));
  return out;
}

inline GradcheckOutcome run_gradcheck_case(const GradcheckCase& c, double tolerance,
                                           double h = 1e-5) {
  GradcheckOutcome o;
  o.name = c.name;
  o.result = gradcheck(c.fn, c.inputs, h);
  o.passed = o.result.max_rel_error <= tolerance;
  return o;
}

}  // namespace atr
