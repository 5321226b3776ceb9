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
#include <cstddef>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atr/alignment.hpp"
#include "atr/dataset.hpp"
#include "atr/model.hpp"

namespace atr {

enum class Direction { text_to_audio, audio_to_text };

inline const char* direction_name(Direction d) {
  return d == Direction::text_to_audio ? "t2a" : "a2t";
}

inline Direction parse_direction(const std::string& s) {
  if (s == "t2a" || s == "text_to_audio") return Direction::text_to_audio;
  if (s == "a2t" || s == "audio_to_text") return Direction::audio_to_text;
  throw ConfigError("unknown direction '" + s + "' (expected t2a or a2t)");
}

/// 1-based rank of each query's ground truth.
struct RankVector {
  Direction direction = Direction::text_to_audio;
  std::vector<std::size_t> ranks;
  std::size_t candidates = 0;
};

/// Ties rank pessimistically: every competitor scoring at least as high as
/// the ground truth is placed ahead of it. For audio queries with several
/// matching captions the best-scoring one counts, and the other matching
/// captions are not competitors.
inline RankVector rank_queries(const SimilarityMatrix& sim, Direction dir) {
  if (sim.scores.size() == 0 || sim.truth.empty()) throw ShapeError("rank_queries: empty similarity matrix");
  const std::size_t nc = sim.captions(), na = sim.audios();
  RankVector rv;
  rv.direction = dir;
  if (dir == Direction::text_to_audio) {
    rv.candidates = na;
    rv.ranks.resize(nc);
    for (std::size_t r = 0; r < nc; ++r) {
      const std::size_t t = sim.truth[r];
      const double s = sim.scores(r, t);
      std::size_t ahead = 0;
      for (std::size_t j = 0; j < na; ++j)
        if (j != t && sim.scores(r, j) >= s) ++ahead;
      rv.ranks[r] = ahead + 1;
    }
    return rv;
  }
  if (sim.groups.size() != na) throw ShapeError("rank_queries: audio grouping missing");
  rv.candidates = nc;
  rv.ranks.resize(na);
  for (std::size_t j = 0; j < na; ++j) {
    const auto& group = sim.groups[j];
    if (group.empty()) throw ShapeError("rank_queries: audio " + std::to_string(j) + " has no captions");
    double best = sim.scores(group[0], j);
    for (auto r : group) best = std::max(best, sim.scores(r, j));
    std::size_t ahead = 0;
    for (std::size_t r = 0; r < nc; ++r)
      if (sim.truth[r] != j && sim.scores(r, j) >= best) ++ahead;
    rv.ranks[j] = ahead + 1;
  }
  return rv;
}

struct DirectionMetrics {
  double r1 = 0, r5 = 0, r10 = 0;  // percent
  double median_rank = 0;
  double mean_rank = 0;
  std::size_t queries = 0;
  std::size_t candidates = 0;
};

/// R@K in percent; median takes the lower middle for even counts.
inline DirectionMetrics compute_metrics(const RankVector& rv) {
  if (rv.ranks.empty()) throw ShapeError("compute_metrics: no ranks");
  DirectionMetrics m;
  const double n = static_cast<double>(rv.ranks.size());
  auto recall = [&](std::size_t k) {
    return 100.0 * static_cast<double>(std::count_if(rv.ranks.begin(), rv.ranks.end(),
                                                     [k](std::size_t r) { return r <= k; })) / n;
  };
  m.r1 = recall(1);
  m.r5 = recall(5);
  m.r10 = recall(10);
  std::vector<std::size_t> sorted = rv.ranks;
  std::sort(sorted.begin(), sorted.end());
  m.median_rank = static_cast<double>(sorted[(sorted.size() - 1) / 2]);
  m.mean_rank = static_cast<double>(std::accumulate(sorted.begin(), sorted.end(), std::size_t{0})) / n;
  m.queries = rv.ranks.size();
  m.candidates = rv.candidates;
  return m;
}

struct MetricsReport {
  DirectionMetrics text_to_audio;
  DirectionMetrics audio_to_text;
  nlohmann::json config = nlohmann::json::object();

  /// Model-selection score: R@1 summed over both directions.
  double selection_score() const { return text_to_audio.r1 + audio_to_text.r1; }
};

inline nlohmann::json to_json(const DirectionMetrics& m) {
  return {{"R@1", m.r1},         {"R@5", m.r5},       {"R@10", m.r10},
          {"MedR", m.median_rank}, {"MnR", m.mean_rank}, {"queries", m.queries},
          {"candidates", m.candidates}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"t2a", to_json(r.text_to_audio)}, {"a2t", to_json(r.audio_to_text)}, {"config", r.config}};
}

/// Aligned table with one row per direction.
inline std::string to_table(const MetricsReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "direction" << std::right;
  for (const char* h : {"R@1", "R@5", "R@10", "MedR", "MnR", "queries"}) os << std::setw(9) << h;
  os << '\n';
  auto line = [&](const char* name, const DirectionMetrics& m) {
    os << std::left << std::setw(16) << name << std::right << std::fixed << std::setprecision(1);
    for (double v : {m.r1, m.r5, m.r10, m.median_rank, m.mean_rank}) os << std::setw(9) << v;
    os << std::setw(9) << m.queries << '\n';
  };
  line("Text => Audio", r.text_to_audio);
  line("Audio => Text", r.audio_to_text);
  return os.str();
}

/// Caption x audio similarity over every caption of a split's items.
inline SimilarityMatrix split_similarity(const ParamSet& ps, const ModelConfig& cfg,
                                         const RetrievalDataset& ds, Split split) {
  const auto idx = ds.indices(split);
  if (idx.empty()) throw ConfigError(std::string("split '") + split_name(split) + "' is empty");
  std::vector<const EmbeddingSequence*> caps, auds;
  std::vector<std::size_t> truth;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    const auto& it = ds.items[idx[a]];
    auds.push_back(&it.audio);
    for (const auto& c : it.captions) {
      caps.push_back(&c);
      truth.push_back(a);
    }
  }
  return similarity_matrix(embed(ps, cfg, Branch::text, caps), embed(ps, cfg, Branch::audio, auds),
                           std::move(truth));
}

inline MetricsReport evaluate_split(const ParamSet& ps, const ModelConfig& cfg,
                                    const RetrievalDataset& ds, Split split) {
  const auto sim = split_similarity(ps, cfg, ds, split);
  MetricsReport r;
  r.text_to_audio = compute_metrics(rank_queries(sim, Direction::text_to_audio));
  r.audio_to_text = compute_metrics(rank_queries(sim, Direction::audio_to_text));
  r.config = to_json(cfg);
  r.config["split"] = split_name(split);
  return r;
}

struct Candidate {
  std::string id;
  const EmbeddingSequence* sequence = nullptr;
};

struct RetrievalHit {
  std::string id;
  double score = 0.0;
};

struct RetrievalResult {
  std::vector<RetrievalHit> hits;
  /// Set when top_k exceeded the candidate count.
  bool truncated = false;
};

/// Top-k candidates by descending cosine score, ties ordered by id. For
/// t2a the query is a caption and candidates are audio clips; a2t swaps.
inline RetrievalResult retrieve(const ParamSet& ps, const ModelConfig& cfg,
                                const EmbeddingSequence& query, const std::vector<Candidate>& candidates,
                                std::size_t top_k, Direction dir) {
  if (candidates.empty()) throw ConfigError("retrieve: no candidates");
  const Branch qb = dir == Direction::text_to_audio ? Branch::text : Branch::audio;
  const Branch cb = dir == Direction::text_to_audio ? Branch::audio : Branch::text;
  const EmbeddingSequence* q = &query;
  std::vector<const EmbeddingSequence*> cs;
  for (const auto& c : candidates) cs.push_back(c.sequence);
  const Array qv = embed(ps, cfg, qb, std::span<const EmbeddingSequence* const>(&q, 1));
  const Array cv = embed(ps, cfg, cb, cs);
  std::vector<double> scores(candidates.size());
  if (dir == Direction::text_to_audio) {
    const auto sim = similarity_matrix(qv, cv, std::vector<std::size_t>{0});
    for (std::size_t j = 0; j < scores.size(); ++j) scores[j] = sim.scores(0, j);
  } else {
    const auto sim = similarity_matrix(cv, qv, std::vector<std::size_t>(candidates.size(), 0));
    for (std::size_t r = 0; r < scores.size(); ++r) scores[r] = sim.scores(r, 0);
  }
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return candidates[a].id < candidates[b].id;
  });
  RetrievalResult out;
  out.truncated = top_k > candidates.size();
  const std::size_t k = std::min(top_k, candidates.size());
  for (std::size_t i = 0; i < k; ++i) out.hits.push_back({candidates[order[i]].id, scores[order[i]]});
  return out;
}

}  // namespace atr
