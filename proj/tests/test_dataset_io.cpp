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
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "atr/batching.hpp"
#include "atr/dataset.hpp"
#include "atr/embedding_io.hpp"
#include "test_util.hpp"

namespace atr {
namespace {

using testing::TempDir;
using testing::WarningCapture;

std::vector<unsigned char> emb_bytes(std::uint32_t rows, std::uint32_t cols,
                                     const std::vector<float>& values) {
  std::vector<unsigned char> b{'E', 'M', 'B', '1'};
  auto u32 = [&](std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) b.push_back(static_cast<unsigned char>(v >> s));
  };
  u32(rows);
  u32(cols);
  for (float f : values) u32(std::bit_cast<std::uint32_t>(f));
  return b;
}

TEST(EmbeddingFile, ReadsRowMajorPayload) {
  TempDir dir;
  testing::write_bytes(dir / "a.emb", emb_bytes(2, 3, {1, 2, 3, 4, 5, 6}));
  const auto seq = read_embedding_file(dir / "a.emb");
  EXPECT_EQ(seq.rows, 2u);
  EXPECT_EQ(seq.dim, 3u);
  EXPECT_EQ(seq.data, (std::vector<double>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(std::vector<double>(seq.row(1).begin(), seq.row(1).end()), (std::vector<double>{4, 5, 6}));
}

TEST(EmbeddingFile, WriteReadWriteIsBitIdentical) {
  TempDir dir;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> d(-1e6f, 1e6f);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> vals(7 * 5);
    for (auto& v : vals) v = d(rng);
    vals[3] = std::numeric_limits<float>::denorm_min();
    vals[4] = -0.0f;
    const auto bytes = emb_bytes(7, 5, vals);
    const auto seq = parse_embedding(bytes);
    write_embedding_file(dir / "r.emb", seq);
    EXPECT_EQ(testing::read_bytes(dir / "r.emb"), bytes);
    EXPECT_EQ(read_embedding_file(dir / "r.emb"), seq);
  }
}

TEST(EmbeddingFile, TruncatedFileNamesExpectedAndActualSize) {
  auto bytes = emb_bytes(2, 3, {1, 2, 3, 4, 5, 6});
  bytes.resize(13);
  try {
    parse_embedding(bytes);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected 36"), std::string::npos) << msg;
    EXPECT_NE(msg.find("got 13"), std::string::npos) << msg;
    ASSERT_TRUE(e.offset());
  }
  bytes.resize(7);
  EXPECT_THROW(parse_embedding(bytes), DataError);
}

TEST(EmbeddingFile, RejectsMalformedInput) {
  auto bad_magic = emb_bytes(1, 1, {1});
  bad_magic[3] = '2';
  EXPECT_THROW(parse_embedding(bad_magic), DataError);

  auto trailing = emb_bytes(1, 2, {1, 2});
  trailing.push_back(0);
  EXPECT_THROW(parse_embedding(trailing), DataError);

  EXPECT_THROW(parse_embedding(emb_bytes(0, 3, {})), DataError);

  try {
    parse_embedding(emb_bytes(0xffffffffu, 0xffffffffu, {}));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("overflow"), std::string::npos) << e.what();
  }

  try {
    parse_embedding(emb_bytes(1, 3, {1.0f, std::numeric_limits<float>::quiet_NaN(), 2.0f}));
    FAIL();
  } catch (const DataError& e) {
    ASSERT_TRUE(e.offset());
    EXPECT_EQ(*e.offset(), 16u);
  }
}

// --- manifests ----------------------------------------------------------------

void write_seq(const std::filesystem::path& p, std::size_t rows, std::size_t dim, double v) {
  write_embedding_file(p, EmbeddingSequence(rows, dim, std::vector<double>(rows * dim, v)));
}

nlohmann::json make_manifest(const TempDir& dir, std::size_t items, std::size_t captions,
                             std::size_t text_dim = 3) {
  nlohmann::json j = {{"audio_dim", 4}, {"text_dim", text_dim}, {"items", nlohmann::json::array()}};
  for (std::size_t i = 0; i < items; ++i) {
    const std::string id = "clip" + std::to_string(i);
    write_seq(dir / (id + ".emb"), 2 + i, 4, 0.5);
    nlohmann::json caps = nlohmann::json::array();
    for (std::size_t c = 0; c < captions; ++c) {
      const std::string rel = id + "_" + std::to_string(c) + ".emb";
      write_seq(dir / rel, 1 + c, text_dim, 0.25);
      caps.push_back(rel);
    }
    j["items"].push_back({{"id", id}, {"split", i == 0 ? "val" : "train"}, {"audio", id + ".emb"}, {"captions", caps}});
  }
  return j;
}

void save_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream(p) << j.dump(1);
}

TEST(Manifest, LoadsAllCaptions) {
  TempDir dir;
  save_json(dir / "manifest.json", make_manifest(dir, 3, 5));
  const auto ds = load_dataset(dir / "manifest.json");
  ASSERT_EQ(ds.items.size(), 3u);
  const auto c = ds.counts();
  EXPECT_EQ(c.captions, 15u);
  EXPECT_EQ(c.train, 2u);
  EXPECT_EQ(c.val, 1u);
  EXPECT_EQ(ds.items[2].audio.rows, 4u);
}

TEST(Manifest, RejectsItemWithoutCaptions) {
  TempDir dir;
  auto j = make_manifest(dir, 3, 2);
  j["items"][1]["captions"] = nlohmann::json::array();
  save_json(dir / "manifest.json", j);
  EXPECT_THROW(load_dataset(dir / "manifest.json"), DataError);
}

TEST(Manifest, MixedTextDimsNameBothItems) {
  TempDir dir;
  auto j = make_manifest(dir, 2, 1, 300);
  write_seq(dir / "odd.emb", 2, 299, 0.1);
  j["items"][1]["captions"][0] = "odd.emb";
  save_json(dir / "manifest.json", j);
  try {
    load_dataset(dir / "manifest.json");
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("clip0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("clip1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("299"), std::string::npos) << msg;
    EXPECT_NE(msg.find("300"), std::string::npos) << msg;
  }
}

TEST(Manifest, RejectsMissingFileDuplicateIdAndBadSplit) {
  TempDir dir;
  auto j = make_manifest(dir, 2, 1);
  auto missing = j;
  missing["items"][0]["audio"] = "nope.emb";
  save_json(dir / "m1.json", missing);
  EXPECT_THROW(load_dataset(dir / "m1.json"), DataError);

  auto dup = j;
  dup["items"][1]["id"] = "clip0";
  save_json(dir / "m2.json", dup);
  EXPECT_THROW(load_dataset(dir / "m2.json"), DataError);

  auto split = j;
  split["items"][1]["split"] = "dev";
  save_json(dir / "m3.json", split);
  EXPECT_THROW(load_dataset(dir / "m3.json"), DataError);

  EXPECT_THROW(load_dataset(dir / "absent.json"), DataError);
}

// --- synthetic data -----------------------------------------------------------

SynthConfig small_synth() {
  SynthConfig c;
  c.n_items = 10;
  c.n_val = 2;
  c.n_test = 3;
  c.latent_dim = 4;
  c.audio_dim = 6;
  c.text_dim = 5;
  c.captions_per_item = 2;
  c.seed = 42;
  return c;
}

TEST(Synth, SameSeedIsByteIdentical) {
  TempDir a, b;
  save_dataset(synth_dataset(small_synth()), a.path());
  save_dataset(synth_dataset(small_synth()), b.path());
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    EXPECT_EQ(testing::read_bytes(entry.path()), testing::read_bytes(b.path() / rel)) << rel;
  }
  auto other = small_synth();
  other.seed = 43;
  EXPECT_NE(synth_dataset(other), synth_dataset(small_synth()));
}

TEST(Synth, SavedDatasetLoadsBackEqual) {
  TempDir dir;
  const auto ds = synth_dataset(small_synth());
  const auto manifest = save_dataset(ds, dir.path());
  EXPECT_EQ(load_dataset(manifest), ds);
  const auto c = ds.counts();
  EXPECT_EQ(c.train, 5u);
  EXPECT_EQ(c.val, 2u);
  EXPECT_EQ(c.test, 3u);
  EXPECT_EQ(c.captions, 20u);
}

TEST(Synth, NoiselessSequencesAreLinearImagesOfTheLatent) {
  auto cfg = small_synth();
  cfg.noise_sigma = 0.0;
  SynthTrace trace;
  const auto ds = synth_dataset(cfg, &trace);
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const auto& z = trace.latents[i];
    auto image = [&](const Array& p, std::size_t d) {
      double v = 0.0;
      for (std::size_t l = 0; l < z.size(); ++l) v += p(d, l) * z[l];
      return static_cast<double>(static_cast<float>(v));
    };
    const auto& it = ds.items[i];
    for (std::size_t r = 0; r < it.audio.rows; ++r)
      for (std::size_t d = 0; d < cfg.audio_dim; ++d)
        ASSERT_EQ(it.audio.row(r)[d], image(trace.audio_projection, d));
    for (const auto& c : it.captions)
      for (std::size_t r = 0; r < c.rows; ++r)
        for (std::size_t d = 0; d < cfg.text_dim; ++d)
          ASSERT_EQ(c.row(r)[d], image(trace.text_projection, d));
  }
}

TEST(Synth, RejectsDegenerateConfig) {
  auto c = small_synth();
  c.frames_min = 5;
  c.frames_max = 4;
  EXPECT_THROW(synth_dataset(c), ConfigError);
  c = small_synth();
  c.words_max = 1;
  EXPECT_THROW(synth_dataset(c), ConfigError);
  c = small_synth();
  c.n_items = 1;
  c.n_val = c.n_test = 0;
  EXPECT_THROW(synth_dataset(c), ConfigError);
}

// --- batching -----------------------------------------------------------------

RetrievalDataset train_only(std::size_t n, std::size_t captions = 1) {
  auto c = small_synth();
  c.n_items = n;
  c.n_val = c.n_test = 0;
  c.captions_per_item = captions;
  return synth_dataset(c);
}

std::vector<std::size_t> batch_sizes(BatchStream s) {
  std::vector<std::size_t> out;
  while (auto b = s.next()) out.push_back(b->size());
  return out;
}

TEST(Batching, KeepsPartialFinalBatch) {
  const auto ds = train_only(10);
  EXPECT_EQ(batch_sizes(make_batches(ds, Split::train, 4, 1, CaptionChoice::first)),
            (std::vector<std::size_t>{4, 4, 2}));
}

TEST(Batching, SkipsSingleItemFinalBatchWithWarning) {
  const auto ds = train_only(9);
  WarningCapture cap;
  auto s = make_batches(ds, Split::train, 8, 1, CaptionChoice::first);
  EXPECT_EQ(batch_sizes(s), (std::vector<std::size_t>{8}));
  ASSERT_EQ(cap.messages.size(), 1u);
  EXPECT_NE(cap.messages[0].find("1-item"), std::string::npos);
}

TEST(Batching, SameSeedSameOrder) {
  const auto ds = train_only(20, 3);
  auto a = make_batches(ds, Split::train, 4, 99, CaptionChoice::sample);
  auto b = make_batches(ds, Split::train, 4, 99, CaptionChoice::sample);
  auto c = make_batches(ds, Split::train, 4, 100, CaptionChoice::sample);
  EXPECT_EQ(a.order(), b.order());
  EXPECT_NE(a.order(), c.order());
  while (auto x = a.next()) {
    auto y = b.next();
    ASSERT_TRUE(y);
    EXPECT_EQ(x->item_ids, y->item_ids);
    EXPECT_EQ(x->caption_indices, y->caption_indices);
    EXPECT_EQ(x->captions.data, y->captions.data);
  }
}

TEST(Batching, RejectsBatchSizeBelowTwoAndEmptySplit) {
  const auto ds = train_only(5);
  EXPECT_THROW(make_batches(ds, Split::train, 1, 0, CaptionChoice::first), ConfigError);
  EXPECT_THROW(make_batches(ds, Split::test, 4, 0, CaptionChoice::first), ConfigError);
}

TEST(Batching, DiagonalPairingAndZeroPadding) {
  const auto ds = train_only(11, 3);
  auto s = make_batches(ds, Split::train, 4, 5, CaptionChoice::sample);
  std::size_t seen = 0;
  std::vector<std::size_t> caption_use(3, 0);
  while (auto b = s.next()) {
    for (std::size_t i = 0; i < b->size(); ++i) {
      const auto& item = ds.items[b->item_indices[i]];
      EXPECT_EQ(b->item_ids[i], item.id);
      const auto& cap = item.captions[b->caption_indices[i]];
      ++caption_use[b->caption_indices[i]];
      EXPECT_EQ(b->captions.lengths[i], cap.rows);
      EXPECT_EQ(b->audio.lengths[i], item.audio.rows);
      const Array padded_cap = b->captions.item(i);
      const Array padded_aud = b->audio.item(i);
      for (std::size_t r = 0; r < padded_cap.dim(0); ++r)
        for (std::size_t d = 0; d < padded_cap.dim(1); ++d)
          EXPECT_EQ(padded_cap(r, d), r < cap.rows ? cap.row(r)[d] : 0.0);
      for (std::size_t r = 0; r < padded_aud.dim(0); ++r)
        for (std::size_t d = 0; d < padded_aud.dim(1); ++d)
          EXPECT_EQ(padded_aud(r, d), r < item.audio.rows ? item.audio.row(r)[d] : 0.0);
      ++seen;
    }
  }
  EXPECT_EQ(seen, 11u);
  // Sampling draws beyond the first caption.
  EXPECT_GT(caption_use[1] + caption_use[2], 0u);

  auto first = make_batches(ds, Split::train, 4, 5, CaptionChoice::first);
  while (auto b = first.next())
    for (auto c : b->caption_indices) EXPECT_EQ(c, 0u);
}

}  // namespace
}  // namespace atr
