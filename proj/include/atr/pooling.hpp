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

// Sequence aggregation. Every pooling function takes a zero-padded
// max_len x dim sequence plus its true length; rows at or beyond `length`
// never influence the result.

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "atr/autodiff.hpp"
#include "atr/error.hpp"

namespace atr {

enum class Pooling { mean, max, lstm, netvlad, netrvlad };

inline const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::mean: return "mean";
    case Pooling::max: return "max";
    case Pooling::lstm: return "lstm";
    case Pooling::netvlad: return "netvlad";
    case Pooling::netrvlad: return "netrvlad";
  }
  return "?";
}

inline Pooling parse_pooling(const std::string& s) {
  for (auto p : {Pooling::mean, Pooling::max, Pooling::lstm, Pooling::netvlad, Pooling::netrvlad})
    if (s == pooling_name(p)) return p;
  throw ConfigError("unknown pooling '" + s + "' (expected mean, max, lstm, netvlad or netrvlad)");
}

namespace detail {
inline void check_sequence(const char* op, const Var& seq, std::size_t length) {
  detail::require_rank(op, seq.shape(), 2);
  if (length == 0) throw ShapeError(std::string(op) + ": sequence length must be >= 1");
  if (length > seq.shape()[0]) {
    throw ShapeError(std::string(op) + ": length " + std::to_string(length) + " exceeds " +
                     std::to_string(seq.shape()[0]) + " rows");
  }
}

inline double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline Array xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                            std::mt19937_64& rng) {
  const double a = xavier_bound(fan_in, fan_out);
  std::uniform_real_distribution<double> dist(-a, a);
  Array out(std::move(shape));
  for (auto& v : out.storage()) v = dist(rng);
  return out;
}
}  // namespace detail

/// Average of the first `length` rows.
inline Var pool_mean(Var seq, std::size_t length) {
  detail::check_sequence("pool_mean", seq, length);
  return masked_mean(seq, prefix_mask(seq.shape()[0], length));
}

/// Per-dimension maximum over the first `length` rows.
inline Var pool_max(Var seq, std::size_t length) {
  detail::check_sequence("pool_max", seq, length);
  return masked_max(seq, prefix_mask(seq.shape()[0], length));
}

// ---------------------------------------------------------------------------
// LSTM + mean

/// Gate weights act on [x_t; h_{t-1}] and are hidden x (input + hidden).
struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Array w_input, w_forget, w_output, w_cell;
  Array b_input, b_forget, b_output, b_cell;
};

struct LstmVars {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Var w_input, w_forget, w_output, w_cell;
  Var b_input, b_forget, b_output, b_cell;
};

/// Xavier-uniform gate weights, zero biases except the forget gate at 1.
inline LstmParams init_lstm(std::size_t input_dim, std::size_t hidden_dim, std::mt19937_64& rng) {
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  const Shape ws{hidden_dim, input_dim + hidden_dim};
  for (Array* w : {&p.w_input, &p.w_forget, &p.w_output, &p.w_cell})
    *w = detail::xavier_uniform(ws, input_dim + hidden_dim, hidden_dim, rng);
  p.b_input = Array({hidden_dim});
  p.b_forget = Array({hidden_dim}, 1.0);
  p.b_output = Array({hidden_dim});
  p.b_cell = Array({hidden_dim});
  return p;
}

/// Runs a single-layer LSTM from a zero state over the first `length`
/// steps and averages the hidden states.
inline Var pool_lstm_mean(Var seq, std::size_t length, const LstmVars& p) {
  detail::check_sequence("pool_lstm_mean", seq, length);
  const std::size_t in = seq.shape()[1], hid = p.hidden_dim;
  if (in != p.input_dim) {
    throw ShapeError("pool_lstm_mean: sequence dim " + std::to_string(in) +
                     " does not match LSTM input dim " + std::to_string(p.input_dim));
  }
  const Shape ws{hid, in + hid};
  for (const Var* w : {&p.w_input, &p.w_forget, &p.w_output, &p.w_cell})
    if (w->shape() != ws) throw ShapeError("pool_lstm_mean: gate weight " + to_string(w->shape()) + " expected " + to_string(ws));
  for (const Var* b : {&p.b_input, &p.b_forget, &p.b_output, &p.b_cell})
    if (b->shape() != Shape{hid}) throw ShapeError("pool_lstm_mean: gate bias " + to_string(b->shape()));

  Tape& tape = seq.tape();
  Var h = tape.constant(Array({hid}));
  Var c = tape.constant(Array({hid}));
  std::vector<Var> hidden;
  hidden.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    Var x = reshape(slice_rows(seq, t, 1), {in});
    Var xh = concat({x, h});
    Var i = sigmoid(add(matmul(p.w_input, xh), p.b_input));
    Var f = sigmoid(add(matmul(p.w_forget, xh), p.b_forget));
    Var o = sigmoid(add(matmul(p.w_output, xh), p.b_output));
    Var g = tanh(add(matmul(p.w_cell, xh), p.b_cell));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, tanh(c));
    hidden.push_back(h);
  }
  Var stacked = reshape(concat(std::span<const Var>(hidden)), {length, hid});
  return masked_mean(stacked, Mask(length, 1));
}

// ---------------------------------------------------------------------------
// NetVLAD / NetRVLAD

/// Soft-assignment weights (clusters x dim), biases (clusters) and, for
/// NetVLAD only, cluster centers (clusters x dim).
struct VladParams {
  std::size_t clusters = 0;
  std::size_t dim = 0;
  Array weights;
  Array biases;
  std::optional<Array> centers;
};

struct VladVars {
  Var weights;
  Var biases;
  std::optional<Var> centers;
};

/// w ~ Xavier-uniform over (dim, clusters), b = 0, c ~ N(0, 1/sqrt(dim)).
inline VladParams init_vlad(std::size_t clusters, std::size_t dim, bool with_centers,
                            std::mt19937_64& rng) {
  if (clusters == 0) throw ConfigError("VLAD cluster count must be >= 1");
  VladParams p;
  p.clusters = clusters;
  p.dim = dim;
  p.weights = detail::xavier_uniform({clusters, dim}, dim, clusters, rng);
  p.biases = Array({clusters});
  if (with_centers) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    Array c({clusters, dim});
    for (auto& v : c.storage()) v = dist(rng);
    p.centers = std::move(c);
  }
  return p;
}

namespace detail {
// Masked soft assignments (rows x K); padded rows are exactly zero.
inline Var vlad_assignments(const char* op, Var seq, std::size_t length, const VladVars& p) {
  check_sequence(op, seq, length);
  const std::size_t rows = seq.shape()[0], m = seq.shape()[1];
  require_rank(op, p.weights.shape(), 2);
  const std::size_t k = p.weights.shape()[0];
  if (p.weights.shape()[1] != m) throw ShapeError(shapes_msg(op, seq.shape(), p.weights.shape()));
  if (p.biases.shape() != Shape{k}) throw ShapeError(shapes_msg(op, p.weights.shape(), p.biases.shape()));
  Var a = row_softmax(add(matmul(seq, transpose(p.weights)), p.biases));
  Array mask({rows, k});
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = 0; j < k; ++j) mask(i, j) = 1.0;
  return mul(a, seq.tape().constant(std::move(mask)));
}
}  // namespace detail

/// V_k = sum_i a_k(x_i) (x_i - c_k), flattened cluster-major to K*M.
inline Var pool_netvlad(Var seq, std::size_t length, const VladVars& p) {
  if (!p.centers) throw ShapeError("pool_netvlad: cluster centers required");
  Var a = detail::vlad_assignments("pool_netvlad", seq, length, p);
  const std::size_t rows = seq.shape()[0], m = seq.shape()[1], k = a.shape()[1];
  if (p.centers->shape() != Shape{k, m}) {
    throw ShapeError(detail::shapes_msg("pool_netvlad", p.weights.shape(), p.centers->shape()));
  }
  Var at = transpose(a);
  Var weighted = matmul(at, seq);
  Var mass = matmul(at, seq.tape().constant(Array({rows, m}, 1.0)));
  Var v = sub(weighted, mul(mass, *p.centers));
  return reshape(v, {k * m});
}

/// R_k = sum_i a_k(x_i) x_i, flattened cluster-major to K*M.
inline Var pool_netrvlad(Var seq, std::size_t length, const VladVars& p) {
  Var a = detail::vlad_assignments("pool_netrvlad", seq, length, p);
  const std::size_t m = seq.shape()[1], k = a.shape()[1];
  return reshape(matmul(transpose(a), seq), {k * m});
}

}  // namespace atr
