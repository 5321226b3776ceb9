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

// Two-branch retrieval model: pooling -> FC -> context gating per branch,
// cosine similarity across branches.

#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atr/alignment.hpp"
#include "atr/batching.hpp"
#include "atr/params.hpp"
#include "atr/pooling.hpp"

namespace atr {

enum class Branch { text, audio };

inline const char* branch_name(Branch b) { return b == Branch::text ? "text" : "audio"; }

struct ModelConfig {
  Pooling pooling = Pooling::netrvlad;
  std::size_t audio_dim = 2048;
  std::size_t text_dim = 300;
  std::size_t dim = 2048;
  std::size_t clusters_text = 20;
  std::size_t clusters_audio = 12;

  std::size_t input_dim(Branch b) const { return b == Branch::text ? text_dim : audio_dim; }
  std::size_t clusters(Branch b) const { return b == Branch::text ? clusters_text : clusters_audio; }

  /// Width of the pooled vector: the input dim (LSTM hidden size equals the
  /// input dim) or clusters * input dim for the VLAD variants.
  std::size_t pooled_dim(Branch b) const {
    switch (pooling) {
      case Pooling::netvlad:
      case Pooling::netrvlad: return clusters(b) * input_dim(b);
      default: return input_dim(b);
    }
  }

  void validate() const {
    if (audio_dim == 0 || text_dim == 0 || dim == 0) throw ConfigError("model dimensions must be >= 1");
    if ((pooling == Pooling::netvlad || pooling == Pooling::netrvlad) &&
        (clusters_text == 0 || clusters_audio == 0)) {
      throw ConfigError("VLAD cluster counts must be >= 1");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"pooling", pooling_name(c.pooling)}, {"audio_dim", c.audio_dim},
          {"text_dim", c.text_dim},             {"dim", c.dim},
          {"clusters_text", c.clusters_text},   {"clusters_audio", c.clusters_audio}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  c.audio_dim = j.at("audio_dim").get<std::size_t>();
  c.text_dim = j.at("text_dim").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.clusters_text = j.at("clusters_text").get<std::size_t>();
  c.clusters_audio = j.at("clusters_audio").get<std::size_t>();
  return c;
}

/// Fresh parameters, text branch first. Names are "<branch>.<module>.<array>".
inline ParamSet init_params(const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ParamSet ps;
  for (Branch b : {Branch::text, Branch::audio}) {
    const std::string pre = std::string(branch_name(b)) + ".";
    const std::size_t in = cfg.input_dim(b);
    switch (cfg.pooling) {
      case Pooling::netvlad:
      case Pooling::netrvlad: {
        auto v = init_vlad(cfg.clusters(b), in, cfg.pooling == Pooling::netvlad, rng);
        ps.add(pre + "vlad.weights", std::move(v.weights));
        ps.add(pre + "vlad.biases", std::move(v.biases));
        if (v.centers) ps.add(pre + "vlad.centers", std::move(*v.centers));
        break;
      }
      case Pooling::lstm: {
        auto l = init_lstm(in, in, rng);
        ps.add(pre + "lstm.w_input", std::move(l.w_input));
        ps.add(pre + "lstm.w_forget", std::move(l.w_forget));
        ps.add(pre + "lstm.w_output", std::move(l.w_output));
        ps.add(pre + "lstm.w_cell", std::move(l.w_cell));
        ps.add(pre + "lstm.b_input", std::move(l.b_input));
        ps.add(pre + "lstm.b_forget", std::move(l.b_forget));
        ps.add(pre + "lstm.b_output", std::move(l.b_output));
        ps.add(pre + "lstm.b_cell", std::move(l.b_cell));
        break;
      }
      default: break;
    }
    auto p = init_projection(cfg.pooled_dim(b), cfg.dim, rng);
    ps.add(pre + "fc.weight", std::move(p.fc_weight));
    ps.add(pre + "fc.bias", std::move(p.fc_bias));
    ps.add(pre + "gate.weight", std::move(p.gate_weight));
    ps.add(pre + "gate.bias", std::move(p.gate_bias));
  }
  return ps;
}

/// Throws DataError unless `ps` has exactly the names and shapes `cfg` implies.
inline void check_params(const ParamSet& ps, const ModelConfig& cfg) {
  std::mt19937_64 rng(0);
  const ParamSet ref = init_params(cfg, rng);
  if (ps.size() != ref.size()) {
    throw DataError("parameter count " + std::to_string(ps.size()) + " does not match config (" +
                    std::to_string(ref.size()) + ")");
  }
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ps.name(i) != ref.name(i) || ps.value(i).shape() != ref.value(i).shape()) {
      throw DataError("parameter '" + ps.name(i) + "' " + to_string(ps.value(i).shape()) +
                      " does not match config's '" + ref.name(i) + "' " +
                      to_string(ref.value(i).shape()));
    }
  }
}

struct BranchVars {
  std::optional<VladVars> vlad;
  std::optional<LstmVars> lstm;
  ProjectionVars projection;
};

/// Parameters placed on a tape. `leaves` follows ParamSet order.
struct BoundModel {
  BranchVars text, audio;
  std::vector<Var> leaves;

  const BranchVars& branch(Branch b) const { return b == Branch::text ? text : audio; }
};

/// Wires existing tape values (one per parameter, in ParamSet order) into
/// the model structure `cfg` describes.
inline BoundModel assemble_model(const ParamSet& ps, std::vector<Var> leaves, const ModelConfig& cfg) {
  if (leaves.size() != ps.size()) throw ShapeError("assemble_model: leaf count does not match parameters");
  BoundModel m;
  m.leaves = std::move(leaves);
  auto var = [&](const std::string& name) {
    auto i = ps.find(name);
    if (!i) throw DataError("missing parameter '" + name + "'");
    return m.leaves[*i];
  };
  for (Branch b : {Branch::text, Branch::audio}) {
    BranchVars& bv = b == Branch::text ? m.text : m.audio;
    const std::string pre = std::string(branch_name(b)) + ".";
    if (cfg.pooling == Pooling::netvlad || cfg.pooling == Pooling::netrvlad) {
      VladVars v{var(pre + "vlad.weights"), var(pre + "vlad.biases"), std::nullopt};
      if (cfg.pooling == Pooling::netvlad) v.centers = var(pre + "vlad.centers");
      bv.vlad = v;
    } else if (cfg.pooling == Pooling::lstm) {
      LstmVars l;
      l.input_dim = l.hidden_dim = cfg.input_dim(b);
      l.w_input = var(pre + "lstm.w_input");
      l.w_forget = var(pre + "lstm.w_forget");
      l.w_output = var(pre + "lstm.w_output");
      l.w_cell = var(pre + "lstm.w_cell");
      l.b_input = var(pre + "lstm.b_input");
      l.b_forget = var(pre + "lstm.b_forget");
      l.b_output = var(pre + "lstm.b_output");
      l.b_cell = var(pre + "lstm.b_cell");
      bv.lstm = l;
    }
    bv.projection = {var(pre + "fc.weight"), var(pre + "fc.bias"), var(pre + "gate.weight"),
                     var(pre + "gate.bias")};
  }
  return m;
}

inline BoundModel bind_params(Tape& tape, const ParamSet& ps, const ModelConfig& cfg, bool tracked) {
  std::vector<Var> leaves;
  leaves.reserve(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i)
    leaves.push_back(tracked ? tape.leaf(ps.value(i)) : tape.constant(ps.value(i)));
  return assemble_model(ps, std::move(leaves), cfg);
}

inline Var pool_sequence(Var seq, std::size_t length, Pooling pooling, const BranchVars& bv) {
  switch (pooling) {
    case Pooling::mean: return pool_mean(seq, length);
    case Pooling::max: return pool_max(seq, length);
    case Pooling::lstm: return pool_lstm_mean(seq, length, *bv.lstm);
    case Pooling::netvlad: return pool_netvlad(seq, length, *bv.vlad);
    case Pooling::netrvlad: return pool_netrvlad(seq, length, *bv.vlad);
  }
  throw ConfigError("unknown pooling");
}

/// Pooled vectors of a padded batch, stacked to [B, pooled_dim].
inline Var pool_batch(Tape& tape, const PaddedSequences& seqs, Pooling pooling, const BranchVars& bv) {
  std::vector<Var> pooled;
  pooled.reserve(seqs.count());
  for (std::size_t b = 0; b < seqs.count(); ++b)
    pooled.push_back(pool_sequence(tape.constant(seqs.item(b)), seqs.lengths[b], pooling, bv));
  const std::size_t width = pooled[0].shape()[0];
  return reshape(concat(std::span<const Var>(pooled)), {seqs.count(), width});
}

/// Gated, unnormalized shared-space vectors [B, dim] for a padded batch.
inline Var encode(Tape& tape, const PaddedSequences& seqs, Pooling pooling, const BranchVars& bv) {
  return project_and_gate(pool_batch(tape, seqs, pooling, bv), bv.projection);
}

/// B x B caption-audio cosine scores of a training batch.
inline Var batch_scores(Tape& tape, const BoundModel& m, const Batch& batch, const ModelConfig& cfg) {
  Var c = encode(tape, batch.captions, cfg.pooling, m.text);
  Var a = encode(tape, batch.audio, cfg.pooling, m.audio);
  return cosine_scores(c, a);
}

/// Shared-space vectors for arbitrary sequences of one branch, evaluated
/// in chunks of `chunk` without gradient tracking. Rows are independent of
/// chunking.
inline Array embed(const ParamSet& ps, const ModelConfig& cfg, Branch branch,
                   std::span<const EmbeddingSequence* const> seqs, std::size_t chunk = 128) {
  if (seqs.empty()) throw ShapeError("embed: no sequences");
  for (const auto* s : seqs) {
    if (s->dim != cfg.input_dim(branch)) {
      throw ShapeError(std::string("embed: ") + branch_name(branch) + " sequence dim " +
                       std::to_string(s->dim) + " does not match model input dim " +
                       std::to_string(cfg.input_dim(branch)));
    }
  }
  Array out({seqs.size(), cfg.dim});
  for (std::size_t first = 0; first < seqs.size(); first += chunk) {
    const std::size_t n = std::min(chunk, seqs.size() - first);
    Tape tape;
    const BoundModel m = bind_params(tape, ps, cfg, false);
    const auto padded = pad_sequences(seqs.subspan(first, n));
    Var y = encode(tape, padded, cfg.pooling, m.branch(branch));
    std::copy(y.value().storage().begin(), y.value().storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(first * cfg.dim));
  }
  return out;
}

}  // namespace atr
