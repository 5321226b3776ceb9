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
#include <algorithm>
#include <cmath>
#include <sstream>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "atr/checkpoint.hpp"
#include "atr/gradcheck.hpp"
#include "atr/trainer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace atr {
namespace {

using oracle::random_array;
using oracle::to_matrix;

// --- ranking loss ----------------------------------------------------------------

TEST(RankingLoss, SeparatedScoresGiveZero) {
  Array s({3, 3}, -1.0);
  for (std::size_t i = 0; i < 3; ++i) s(i, i) = 1.0;
  EXPECT_EQ(ranking_loss(s, 0.2), 0.0);
}

TEST(RankingLoss, UniformThreeByThree) {
  EXPECT_NEAR(ranking_loss(Array({3, 3}, 0.37), 0.2), 0.8, 1e-12);
}

TEST(RankingLoss, ClosedFormForUniformScores) {
  for (std::size_t b : {2u, 3u, 8u})
    for (double m : {0.0, 0.2, 1.0})
      for (double c : {-1.0, 0.0, 0.6}) {
        EXPECT_NEAR(ranking_loss(Array({b, b}, c), m), 2.0 * m * static_cast<double>(b - 1), 1e-12)
            << "B=" << b << " m=" << m;
      }
}

TEST(RankingLoss, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(50);
  const Array s4 = random_array({4, 4}, rng);
  EXPECT_NEAR(ranking_loss(s4, 0.2), oracle::ranking_loss(to_matrix(s4, 4), 0.2), 1e-12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 2 + rng() % 7;
    const double m = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const Array s = random_array({b, b}, rng);
    EXPECT_NEAR(ranking_loss(s, m), oracle::ranking_loss(to_matrix(s, b), m), 1e-12);
  }
}

TEST(RankingLoss, NonNegativeAndZeroOnlyWhenAllHingesInactive) {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 2 + rng() % 4;
    const double m = 0.2;
    Array s = random_array({b, b}, rng);
    if (trial % 2) {
      for (std::size_t i = 0; i < b; ++i) s(i, i) += 2.5;
    }
    bool inactive = true;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j)
        if (i != j && (s(i, i) < s(i, j) + m || s(i, i) < s(j, i) + m)) inactive = false;
    const double l = ranking_loss(s, m);
    EXPECT_GE(l, 0.0);
    EXPECT_EQ(l == 0.0, inactive);
  }
}

TEST(RankingLoss, ShiftInvariance) {
  std::mt19937_64 rng(52);
  for (int trial = 0; trial < 50; ++trial) {
    const Array s = random_array({5, 5}, rng);
    Array shifted = s;
    const double c = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
    for (auto& v : shifted.storage()) v += c;
    EXPECT_NEAR(ranking_loss(s, 0.2), ranking_loss(shifted, 0.2), 1e-12);
  }
}

TEST(RankingLoss, GradientVanishesOffTheActiveSet) {
  // Entries (0,1) and (2,0) sit inside the margin of both diagonal entries
  // they compete with; every other hinge is inactive.
  Array s({3, 3}, -1.0);
  for (std::size_t i = 0; i < 3; ++i) s(i, i) = 1.0;
  s(0, 1) = 0.9;  // caption 0 vs audio 1
  s(2, 0) = 0.95;  // audio 0 vs caption 2
  Tape t;
  Var v = t.leaf(s);
  t.backward(ranking_loss(v, 0.2));
  const auto g = v.grad();
  const double inv_b = 1.0 / 3.0;
  const Array want({3, 3}, {-2 * inv_b, 2 * inv_b, 0, 0, -inv_b, 0, 2 * inv_b, 0, -inv_b});
  for (std::size_t k = 0; k < 9; ++k) EXPECT_EQ(g[k], want[k]) << "entry " << k;
}

TEST(RankingLoss, GradientPassesFiniteDifferences) {
  std::mt19937_64 rng(53);
  const Array s = random_array({4, 4}, rng);
  auto fn = [](Tape&, std::span<const Var> in) { return ranking_loss(in[0], 0.2); };
  EXPECT_LE(gradcheck(fn, {s}).max_rel_error, 1e-4);
}

TEST(RankingLoss, Rejections) {
  EXPECT_THROW(ranking_loss(Array({1, 1}), 0.2), ShapeError);
  EXPECT_THROW(ranking_loss(Array({2, 3}), 0.2), ShapeError);
  EXPECT_THROW((LossConfig{-0.1, 128}.validate()), ConfigError);
  EXPECT_THROW((LossConfig{0.2, 1}.validate()), ConfigError);
}

// --- model + training ------------------------------------------------------------

RetrievalDataset small_dataset(std::size_t items = 24, std::uint64_t seed = 3) {
  SynthConfig sc;
  sc.n_items = items;
  sc.n_val = 6;
  sc.n_test = 6;
  sc.latent_dim = 4;
  sc.audio_dim = 6;
  sc.text_dim = 5;
  sc.frames_max = 6;
  sc.words_max = 5;
  sc.captions_per_item = 2;
  sc.seed = seed;
  return synth_dataset(sc);
}

ModelConfig small_model(Pooling pooling) {
  ModelConfig m;
  m.pooling = pooling;
  m.audio_dim = 6;
  m.text_dim = 5;
  m.dim = 8;
  m.clusters_text = 3;
  m.clusters_audio = 2;
  return m;
}

TEST(Model, ParameterLayout) {
  std::mt19937_64 rng(0);
  const auto ps = init_params(small_model(Pooling::netvlad), rng);
  ASSERT_EQ(ps.size(), 14u);
  EXPECT_EQ(ps.name(0), "text.vlad.weights");
  EXPECT_EQ(ps.value(0).shape(), (Shape{3, 5}));
  EXPECT_EQ(ps.name(2), "text.vlad.centers");
  EXPECT_EQ(ps.name(3), "text.fc.weight");
  EXPECT_EQ(ps.value(3).shape(), (Shape{8, 15}));
  EXPECT_EQ(ps.name(7), "audio.vlad.weights");
  EXPECT_EQ(ps.value(10).shape(), (Shape{8, 12}));

  rng.seed(0);
  EXPECT_EQ(init_params(small_model(Pooling::mean), rng).size(), 8u);
  rng.seed(0);
  EXPECT_EQ(init_params(small_model(Pooling::lstm), rng).size(), 24u);
}

TEST(Model, EmbeddingIsIndependentOfChunking) {
  const auto ds = small_dataset();
  for (auto pooling : {Pooling::mean, Pooling::lstm, Pooling::netrvlad}) {
    std::mt19937_64 rng(1);
    const auto cfg = small_model(pooling);
    const auto ps = init_params(cfg, rng);
    std::vector<const EmbeddingSequence*> seqs;
    for (const auto& it : ds.items) seqs.push_back(&it.audio);
    EXPECT_EQ(embed(ps, cfg, Branch::audio, seqs, 128), embed(ps, cfg, Branch::audio, seqs, 5))
        << pooling_name(pooling);
  }
}

TEST(Training, SgdStepOnFixedBatchDecreasesLoss) {
  const auto ds = small_dataset();
  for (auto pooling : {Pooling::mean, Pooling::max, Pooling::lstm, Pooling::netvlad, Pooling::netrvlad}) {
    std::mt19937_64 rng(2);
    const auto cfg = small_model(pooling);
    auto ps = init_params(cfg, rng);
    const std::vector<std::size_t> items{0, 1, 2, 3, 4, 5};
    const std::vector<std::size_t> caps(6, 0);
    const Batch batch = make_batch(ds, items, caps);
    SgdConfig sgd;
    sgd.learning_rate = 1e-4;
    const double before = batch_gradients(ps, cfg, batch, 0.2).loss;
    ASSERT_GT(before, 0.0);
    EXPECT_EQ(train_step(ps, cfg, batch, LossConfig{0.2, 6}, sgd), before);
    EXPECT_LT(batch_gradients(ps, cfg, batch, 0.2).loss, before) << pooling_name(pooling);
  }
}

TrainConfig small_train_config(Pooling pooling, std::size_t epochs) {
  TrainConfig tc;
  tc.model = small_model(pooling);
  tc.loss.batch_size = 4;
  tc.epochs = epochs;
  tc.seed = 5;
  return tc;
}

TEST(Training, ZeroEpochsReturnsInitialParameters) {
  const auto ds = small_dataset();
  const auto tc = small_train_config(Pooling::netrvlad, 0);
  const auto r = train(ds, tc);
  std::mt19937_64 rng(tc.seed);
  const auto init = init_params(tc.model, rng);
  EXPECT_EQ(r.best.params, init);
  EXPECT_EQ(r.last, init);
  EXPECT_EQ(r.best.epoch, 0u);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_FALSE(r.log[0].loss);
  const auto val = evaluate_split(init, tc.model, ds, Split::val);
  EXPECT_EQ(r.best.validation, to_json(val));
}

TEST(Training, FixedSeedIsBitReproducible) {
  const auto ds = small_dataset();
  const auto tc = small_train_config(Pooling::netvlad, 4);
  const auto a = train(ds, tc), b = train(ds, tc);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t e = 0; e < a.log.size(); ++e) EXPECT_EQ(to_json(a.log[e]).dump(), to_json(b.log[e]).dump());
  EXPECT_EQ(encode_checkpoint(a.best), encode_checkpoint(b.best));
  EXPECT_EQ(a.last, b.last);
}

TEST(Training, LogsEveryEpochAndTracksBest) {
  const auto ds = small_dataset();
  auto tc = small_train_config(Pooling::mean, 6);
  tc.patience = 0;
  std::vector<std::size_t> seen;
  const auto r = train(ds, tc, {{"tag", "x"}}, [&](const EpochLog& e) { seen.push_back(e.epoch); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
  double best = -1.0;
  std::size_t best_epoch = 0;
  for (const auto& e : r.log) {
    if (e.loss) {
      EXPECT_EQ(e.batches, 3u);
    }
    const double score = e.validation.selection_score();
    EXPECT_EQ(e.improved, score > best);
    if (score > best) {
      best = score;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(r.best.epoch, best_epoch);
  EXPECT_EQ(r.best.run_config.at("tag"), "x");
}

TEST(Training, PatienceStopsEarly) {
  const auto ds = small_dataset();
  auto tc = small_train_config(Pooling::mean, 50);
  tc.patience = 1;
  tc.sgd.learning_rate = 1e-12;
  tc.sgd.weight_decay = 0.0;
  const auto r = train(ds, tc);
  EXPECT_EQ(r.log.size(), 2u);
}

TEST(Training, Rejections) {
  auto ds = small_dataset();
  auto tc = small_train_config(Pooling::mean, 1);
  tc.model.audio_dim = 7;
  EXPECT_THROW(train(ds, tc), DataError);
  tc = small_train_config(Pooling::mean, 1);
  for (auto& it : ds.items)
    if (it.split == Split::val) it.split = Split::test;
  EXPECT_THROW(train(ds, tc), ConfigError);
}

TEST(Training, NonFiniteLossNamesEpochAndBatch) {
  const auto ds = small_dataset();
  auto tc = small_train_config(Pooling::mean, 3);
  tc.sgd.learning_rate = 1e300;
  tc.sgd.weight_decay = 0.0;
  try {
    train(ds, tc);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

TEST(Training, MeanPoolingLearnsSyntheticData) {
  SynthConfig sc;
  sc.n_items = 80;
  sc.n_val = 16;
  const auto ds = synth_dataset(sc);
  TrainConfig tc;
  tc.model.pooling = Pooling::mean;
  tc.model.audio_dim = sc.audio_dim;
  tc.model.text_dim = sc.text_dim;
  tc.model.dim = 32;
  tc.epochs = 200;
  tc.patience = 0;
  const auto r = train(ds, tc);
  const auto m = evaluate_split(r.best.params, tc.model, ds, Split::train);
  EXPECT_GE(m.text_to_audio.r1, 90.0);
  EXPECT_GE(m.audio_to_text.r1, 90.0);
}

// --- checkpoints -----------------------------------------------------------------

Checkpoint sample_checkpoint(Pooling pooling) {
  Checkpoint ck;
  ck.model = small_model(pooling);
  std::mt19937_64 rng(9);
  ck.params = init_params(ck.model, rng);
  ck.epoch = 7;
  ck.validation = {{"t2a", {{"R@1", 12.5}}}};
  ck.run_config = {{"seed", 9}};
  ck.rng_state = rng_state_string(rng);
  return ck;
}

TEST(Checkpoint, RoundTripReproducesScoresBitForBit) {
  const auto ds = small_dataset();
  testing::TempDir dir;
  for (auto pooling : {Pooling::mean, Pooling::max, Pooling::lstm, Pooling::netvlad, Pooling::netrvlad}) {
    const auto ck = sample_checkpoint(pooling);
    save_checkpoint(ck, dir / "m.ckpt");
    const auto back = load_checkpoint(dir / "m.ckpt", ck.model);
    EXPECT_EQ(back.params, ck.params);
    EXPECT_EQ(back.model, ck.model);
    EXPECT_EQ(back.epoch, 7u);
    EXPECT_EQ(back.validation, ck.validation);
    EXPECT_EQ(back.run_config, ck.run_config);
    EXPECT_EQ(back.rng_state, ck.rng_state);
    const auto a = split_similarity(ck.params, ck.model, ds, Split::train);
    const auto b = split_similarity(back.params, back.model, ds, Split::train);
    EXPECT_EQ(a.scores, b.scores);
  }
}

TEST(Checkpoint, RngStateRestoresGenerator) {
  const auto ck = sample_checkpoint(Pooling::mean);
  std::mt19937_64 restored;
  std::istringstream(ck.rng_state) >> restored;
  std::mt19937_64 rng(9);
  init_params(ck.model, rng);
  EXPECT_EQ(restored(), rng());
}

TEST(Checkpoint, TruncatedFileNamesExpectedSection) {
  const auto bytes = encode_checkpoint(sample_checkpoint(Pooling::netrvlad));
  auto cut = [&](std::size_t n) { return std::vector<unsigned char>(bytes.begin(), bytes.begin() + n); };
  auto message = [](const std::vector<unsigned char>& b) {
    try {
      decode_checkpoint(b);
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message(cut(5)).find("preamble"), std::string::npos);
  EXPECT_NE(message(cut(20)).find("header"), std::string::npos);
  EXPECT_NE(message(cut(bytes.size() - 3)).find("array 'audio.gate.bias'"), std::string::npos);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_NE(message(extra).find("trailing"), std::string::npos);
}

TEST(Checkpoint, RejectsMagicVersionAndConfigMismatch) {
  const auto ck = sample_checkpoint(Pooling::netrvlad);
  auto bytes = encode_checkpoint(ck);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), DataError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(decode_checkpoint(bad), DataError);

  ModelConfig k12 = small_model(Pooling::netrvlad);
  k12.clusters_audio = 12;
  Checkpoint big = ck;
  big.model = k12;
  std::mt19937_64 rng(1);
  big.params = init_params(k12, rng);
  ModelConfig k20 = k12;
  k20.clusters_audio = 20;
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(big), k20), DataError);
  EXPECT_NO_THROW(decode_checkpoint(encode_checkpoint(big), k12));
}

TEST(Checkpoint, RejectsParamsThatDoNotMatchDeclaredConfig) {
  auto bytes = encode_checkpoint(sample_checkpoint(Pooling::netrvlad));
  const std::string from = "\"dim\":8", to = "\"dim\":9";
  auto at = std::search(bytes.begin(), bytes.end(), from.begin(), from.end());
  ASSERT_NE(at, bytes.end());
  std::copy(to.begin(), to.end(), at);
  EXPECT_THROW(decode_checkpoint(bytes), DataError);
}

}  // namespace
}  // namespace atr
