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
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atr/batching.hpp"
#include "atr/checkpoint.hpp"
#include "atr/evaluation.hpp"
#include "atr/loss.hpp"
#include "atr/model.hpp"
#include "atr/params.hpp"

namespace atr {

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  SgdConfig sgd;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  /// Epochs without validation improvement before stopping; 0 disables.
  std::size_t patience = 10;
  CaptionChoice caption_choice = CaptionChoice::sample;
};

struct EpochLog {
  std::size_t epoch = 0;
  /// Mean batch loss; absent for the epoch-0 evaluation of the initial model.
  std::optional<double> loss;
  std::size_t batches = 0;
  MetricsReport validation;
  bool improved = false;
};

inline nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"loss", e.loss ? nlohmann::json(*e.loss) : nlohmann::json(nullptr)},
          {"batches", e.batches},
          {"val", {{"t2a", to_json(e.validation.text_to_audio)}, {"a2t", to_json(e.validation.audio_to_text)}}},
          {"improved", e.improved}};
}

struct TrainResult {
  Checkpoint best;
  ParamSet last;
  std::vector<EpochLog> log;
};

inline std::string rng_state_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

struct StepResult {
  double loss = 0.0;
  std::vector<Array> grads;
};

/// Loss and parameter gradients of one batch.
inline StepResult batch_gradients(const ParamSet& ps, const ModelConfig& cfg, const Batch& batch,
                                  double margin) {
  Tape tape;
  const BoundModel m = bind_params(tape, ps, cfg, true);
  Var loss = ranking_loss(batch_scores(tape, m, batch, cfg), margin);
  tape.backward(loss);
  StepResult r;
  r.loss = loss.value()[0];
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto g = m.leaves[i].grad();
    r.grads.emplace_back(ps.value(i).shape(), std::vector<double>(g.begin(), g.end()));
  }
  return r;
}

/// Forward, backward and one SGD update. Returns the pre-update loss.
inline double train_step(ParamSet& ps, const ModelConfig& cfg, const Batch& batch,
                         const LossConfig& loss, const SgdConfig& sgd) {
  auto r = batch_gradients(ps, cfg, batch, loss.margin);
  if (!std::isfinite(r.loss)) throw NumericalError("non-finite loss");
  sgd_step(ps, r.grads, sgd);
  return r.loss;
}

/// Mini-batch training with per-epoch validation. Keeps the parameters
/// maximizing validation R@1(t2a) + R@1(a2t); the untrained model is the
/// epoch-0 candidate.
inline TrainResult train(const RetrievalDataset& ds, const TrainConfig& cfg,
                         const nlohmann::json& run_config = nlohmann::json::object(),
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.model.validate();
  cfg.loss.validate();
  cfg.sgd.validate();
  if (ds.audio_dim != cfg.model.audio_dim || ds.text_dim != cfg.model.text_dim) {
    throw DataError("dataset dims (audio " + std::to_string(ds.audio_dim) + ", text " +
                    std::to_string(ds.text_dim) + ") do not match model (audio " +
                    std::to_string(cfg.model.audio_dim) + ", text " +
                    std::to_string(cfg.model.text_dim) + ")");
  }
  for (Split s : {Split::train, Split::val}) {
    if (ds.indices(s).empty()) throw ConfigError(std::string("split '") + split_name(s) + "' is empty");
  }

  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  result.last = init_params(cfg.model, rng);

  auto snapshot = [&](std::size_t epoch, const MetricsReport& val) {
    result.best.model = cfg.model;
    result.best.params = result.last;
    result.best.epoch = epoch;
    result.best.validation = to_json(val);
    result.best.run_config = run_config;
    result.best.rng_state = rng_state_string(rng);
  };

  EpochLog initial;
  initial.validation = evaluate_split(result.last, cfg.model, ds, Split::val);
  initial.improved = true;
  double best_score = initial.validation.selection_score();
  snapshot(0, initial.validation);
  result.log.push_back(initial);
  if (on_epoch) on_epoch(initial);

  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto stream = make_batches(ds, Split::train, cfg.loss.batch_size, rng(), cfg.caption_choice);
    double total = 0.0;
    std::size_t batches = 0;
    while (auto batch = stream.next()) {
      auto r = batch_gradients(result.last, cfg.model, *batch, cfg.loss.margin);
      if (!std::isfinite(r.loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches));
      }
      try {
        sgd_step(result.last, r.grads, cfg.sgd);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batches));
      }
      total += r.loss;
      ++batches;
    }
    EpochLog log;
    log.epoch = epoch;
    log.batches = batches;
    if (batches) log.loss = total / static_cast<double>(batches);
    log.validation = evaluate_split(result.last, cfg.model, ds, Split::val);
    const double score = log.validation.selection_score();
    if (score > best_score) {
      best_score = score;
      log.improved = true;
      stale = 0;
      snapshot(epoch, log.validation);
    } else {
      ++stale;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (cfg.patience && stale >= cfg.patience) break;
  }
  return result;
}

}  // namespace atr
