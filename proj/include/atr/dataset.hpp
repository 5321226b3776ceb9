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

#include <array>
#include <cmath>
#include <cstdio>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atr/embedding_io.hpp"
#include "atr/error.hpp"

namespace atr {

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

struct DatasetItem {
  std::string id;
  Split split = Split::train;
  EmbeddingSequence audio;
  std::vector<EmbeddingSequence> captions;

  bool operator==(const DatasetItem&) const = default;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  std::size_t captions = 0;
};

/// Audio items with one or more captions each, partitioned into splits.
struct RetrievalDataset {
  std::size_t audio_dim = 0;
  std::size_t text_dim = 0;
  std::vector<DatasetItem> items;

  /// Item indices belonging to `split`, in dataset order.
  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < items.size(); ++i)
      if (items[i].split == split) out.push_back(i);
    return out;
  }

  SplitCounts counts() const {
    SplitCounts c;
    for (const auto& it : items) {
      (it.split == Split::train ? c.train : it.split == Split::val ? c.val : c.test)++;
      c.captions += it.captions.size();
    }
    return c;
  }

  /// Throws DataError on any violated invariant.
  void validate() const {
    std::map<std::string, std::size_t> seen;
    const DatasetItem* first_audio = nullptr;
    const DatasetItem* first_text = nullptr;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& it = items[i];
      if (!seen.emplace(it.id, i).second) throw DataError("duplicate item id '" + it.id + "'");
      if (it.captions.empty()) throw DataError("item '" + it.id + "' has no captions");
      if (it.audio.dim != audio_dim) {
        throw DataError("audio dim mismatch: item '" + it.id + "' has " +
                        std::to_string(it.audio.dim) +
                        (first_audio ? ", item '" + first_audio->id + "' has " +
                                           std::to_string(first_audio->audio.dim)
                                     : std::string()) +
                        " (declared " + std::to_string(audio_dim) + ")");
      }
      if (!first_audio) first_audio = &it;
      for (const auto& c : it.captions) {
        if (c.dim != text_dim) {
          throw DataError("text dim mismatch: item '" + it.id + "' has " + std::to_string(c.dim) +
                          (first_text ? ", item '" + first_text->id + "' has " +
                                            std::to_string(first_text->captions[0].dim)
                                      : std::string()) +
                          " (declared " + std::to_string(text_dim) + ")");
        }
      }
      if (!first_text) first_text = &it;
    }
  }

  bool operator==(const RetrievalDataset&) const = default;
};

/// Loads manifest.json and every embedding file it references. Paths in the
/// manifest are relative to its directory.
inline RetrievalDataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest '" + manifest_path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + manifest_path.string() + "' is not valid JSON: " + e.what());
  }
  const auto base = manifest_path.parent_path();
  RetrievalDataset ds;
  try {
    ds.audio_dim = j.at("audio_dim").get<std::size_t>();
    ds.text_dim = j.at("text_dim").get<std::size_t>();
    for (const auto& ji : j.at("items")) {
      DatasetItem item;
      item.id = ji.at("id").get<std::string>();
      item.split = parse_split(ji.at("split").get<std::string>());
      const auto load = [&](const std::string& rel) {
        const auto p = base / rel;
        if (!std::filesystem::exists(p)) {
          throw DataError("item '" + item.id + "': missing file '" + p.string() + "'");
        }
        return read_embedding_file(p);
      };
      item.audio = load(ji.at("audio").get<std::string>());
      for (const auto& c : ji.at("captions")) item.captions.push_back(load(c.get<std::string>()));
      ds.items.push_back(std::move(item));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + manifest_path.string() + "': " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("manifest '" + manifest_path.string() + "': " + e.what());
  }
  ds.validate();
  return ds;
}

/// Writes `dir/manifest.json` plus `audio/` and `captions/` EMB1 files.
inline std::filesystem::path save_dataset(const RetrievalDataset& ds,
                                          const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir / "audio");
  std::filesystem::create_directories(dir / "captions");
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : ds.items) {
    const std::string audio_rel = "audio/" + it.id + ".emb";
    write_embedding_file(dir / audio_rel, it.audio);
    nlohmann::json caps = nlohmann::json::array();
    for (std::size_t k = 0; k < it.captions.size(); ++k) {
      const std::string rel = "captions/" + it.id + "_" + std::to_string(k) + ".emb";
      write_embedding_file(dir / rel, it.captions[k]);
      caps.push_back(rel);
    }
    items.push_back({{"id", it.id}, {"split", split_name(it.split)}, {"audio", audio_rel},
                     {"captions", caps}});
  }
  const nlohmann::json manifest = {
      {"audio_dim", ds.audio_dim}, {"text_dim", ds.text_dim}, {"items", items}};
  const auto path = dir / "manifest.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << manifest.dump(2) << '\n';
  return path;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  std::size_t n_items = 64;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  std::size_t latent_dim = 16;
  std::size_t audio_dim = 32;
  std::size_t text_dim = 24;
  std::size_t frames_min = 4, frames_max = 12;
  std::size_t words_min = 3, words_max = 10;
  std::size_t captions_per_item = 1;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_items < 2) throw ConfigError("synth: n-items must be >= 2");
    if (n_val + n_test > n_items) throw ConfigError("synth: n-val + n-test exceeds n-items");
    if (frames_min == 0 || words_min == 0) throw ConfigError("synth: sequence lengths must be >= 1");
    if (frames_max < frames_min) throw ConfigError("synth: frames range max < min");
    if (words_max < words_min) throw ConfigError("synth: words range max < min");
    if (latent_dim == 0 || audio_dim == 0 || text_dim == 0) throw ConfigError("synth: dimensions must be >= 1");
    if (captions_per_item == 0) throw ConfigError("synth: captions-per-item must be >= 1");
    if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise-sigma must be >= 0");
  }
};

/// Generator internals, exposed for inspection in tests.
struct SynthTrace {
  Array audio_projection;  // audio_dim x latent_dim
  Array text_projection;   // text_dim x latent_dim
  std::vector<std::vector<double>> latents;
};

/// Per item, z ~ N(0, I). Every audio frame is P_a z + e and every word is
/// P_t z + e with e ~ N(0, sigma^2). P_a and P_t are shared by all items
/// with entries ~ N(0, 1/(latent_dim * out_dim)), so E|P z|^2 = 1. Values
/// are rounded to float32 so the in-memory dataset equals its on-disk form.
/// The first n_items - n_val - n_test items are train, then val, then test.
inline RetrievalDataset synth_dataset(const SynthConfig& cfg, SynthTrace* trace = nullptr) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  auto projection = [&](std::size_t out_dim) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim * out_dim));
    Array p({out_dim, cfg.latent_dim});
    for (auto& v : p.storage()) v = sd * unit(rng);
    return p;
  };
  const Array pa = projection(cfg.audio_dim);
  const Array pt = projection(cfg.text_dim);

  auto emit = [&](const Array& proj, const std::vector<double>& z, std::size_t rows) {
    const std::size_t dim = proj.dim(0);
    std::vector<double> data(rows * dim);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t d = 0; d < dim; ++d) {
        double v = 0.0;
        for (std::size_t l = 0; l < z.size(); ++l) v += proj(d, l) * z[l];
        if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * unit(rng);
        data[r * dim + d] = static_cast<double>(static_cast<float>(v));
      }
    return EmbeddingSequence(rows, dim, std::move(data));
  };

  RetrievalDataset ds;
  ds.audio_dim = cfg.audio_dim;
  ds.text_dim = cfg.text_dim;
  const std::size_t n_train = cfg.n_items - cfg.n_val - cfg.n_test;
  std::uniform_int_distribution<std::size_t> frames(cfg.frames_min, cfg.frames_max);
  std::uniform_int_distribution<std::size_t> words(cfg.words_min, cfg.words_max);
  if (trace) {
    trace->audio_projection = pa;
    trace->text_projection = pt;
    trace->latents.clear();
  }
  for (std::size_t i = 0; i < cfg.n_items; ++i) {
    std::vector<double> z(cfg.latent_dim);
    for (auto& v : z) v = unit(rng);
    DatasetItem item;
    char id[32];
    std::snprintf(id, sizeof id, "item%05zu", i);
    item.id = id;
    item.split = i < n_train ? Split::train : i < n_train + cfg.n_val ? Split::val : Split::test;
    item.audio = emit(pa, z, frames(rng));
    for (std::size_t c = 0; c < cfg.captions_per_item; ++c) item.captions.push_back(emit(pt, z, words(rng)));
    ds.items.push_back(std::move(item));
    if (trace) trace->latents.push_back(std::move(z));
  }
  return ds;
}

}  // namespace atr
