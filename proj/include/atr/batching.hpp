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
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "atr/dataset.hpp"

namespace atr {

/// Zero-padded stack of sequences: data is count x max_len x dim.
struct PaddedSequences {
  Array data;
  std::vector<std::size_t> lengths;

  std::size_t count() const { return lengths.size(); }
  std::size_t max_len() const { return data.dim(1); }
  std::size_t dim() const { return data.dim(2); }

  /// Padded max_len x dim slice for entry b.
  Array item(std::size_t b) const {
    const std::size_t n = max_len() * dim();
    auto first = data.storage().begin() + static_cast<std::ptrdiff_t>(b * n);
    return Array({max_len(), dim()}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
  }
};

inline PaddedSequences pad_sequences(std::span<const EmbeddingSequence* const> seqs) {
  if (seqs.empty()) throw ShapeError("pad_sequences: no sequences");
  const std::size_t dim = seqs[0]->dim;
  std::size_t max_len = 0;
  for (const auto* s : seqs) {
    if (s->dim != dim) {
      throw ShapeError("pad_sequences: mixed dims " + std::to_string(dim) + " and " +
                       std::to_string(s->dim));
    }
    max_len = std::max(max_len, s->rows);
  }
  PaddedSequences out{Array({seqs.size(), max_len, dim}), {}};
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    std::copy(seqs[b]->data.begin(), seqs[b]->data.end(),
              out.data.storage().begin() + static_cast<std::ptrdiff_t>(b * max_len * dim));
    out.lengths.push_back(seqs[b]->rows);
  }
  return out;
}

/// Positive pairs on the diagonal: caption b belongs to audio b.
struct Batch {
  PaddedSequences captions;
  PaddedSequences audio;
  std::vector<std::string> item_ids;
  std::vector<std::size_t> item_indices;
  std::vector<std::size_t> caption_indices;

  std::size_t size() const { return item_ids.size(); }
};

inline Batch make_batch(const RetrievalDataset& ds, std::span<const std::size_t> items,
                        std::span<const std::size_t> caption_choice) {
  std::vector<const EmbeddingSequence*> caps, auds;
  Batch b;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = ds.items.at(items[i]);
    caps.push_back(&it.captions.at(caption_choice[i]));
    auds.push_back(&it.audio);
    b.item_ids.push_back(it.id);
    b.item_indices.push_back(items[i]);
    b.caption_indices.push_back(caption_choice[i]);
  }
  b.captions = pad_sequences(caps);
  b.audio = pad_sequences(auds);
  return b;
}

enum class CaptionChoice { sample, first };

/// One epoch of batches over a split. Item order is a seeded shuffle; the
/// final partial batch is kept unless it holds a single item, which is
/// skipped with a warning.
class BatchStream {
 public:
  BatchStream(const RetrievalDataset& ds, Split split, std::size_t batch_size, std::uint64_t seed,
              CaptionChoice choice)
      : ds_(&ds), batch_size_(batch_size) {
    if (batch_size < 2) throw ConfigError("batch size must be >= 2, got " + std::to_string(batch_size));
    order_ = ds.indices(split);
    if (order_.empty()) throw ConfigError(std::string("split '") + split_name(split) + "' is empty");
    std::mt19937_64 rng(seed);
    std::shuffle(order_.begin(), order_.end(), rng);
    captions_.resize(order_.size(), 0);
    if (choice == CaptionChoice::sample) {
      for (std::size_t i = 0; i < order_.size(); ++i) {
        std::uniform_int_distribution<std::size_t> pick(0, ds.items[order_[i]].captions.size() - 1);
        captions_[i] = pick(rng);
      }
    }
  }

  std::optional<Batch> next() {
    const std::size_t remaining = order_.size() - pos_;
    if (remaining == 0) return std::nullopt;
    if (remaining == 1) {
      warn("skipping 1-item final batch (item '" + ds_->items[order_[pos_]].id +
           "'): ranking loss needs at least 2 items");
      ++skipped_;
      pos_ = order_.size();
      return std::nullopt;
    }
    const std::size_t n = std::min(batch_size_, remaining);
    auto items = std::span<const std::size_t>(order_).subspan(pos_, n);
    auto caps = std::span<const std::size_t>(captions_).subspan(pos_, n);
    pos_ += n;
    return make_batch(*ds_, items, caps);
  }

  /// Shuffled item order for the epoch.
  const std::vector<std::size_t>& order() const { return order_; }
  std::size_t skipped() const { return skipped_; }

 private:
  const RetrievalDataset* ds_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> captions_;
  std::size_t pos_ = 0;
  std::size_t skipped_ = 0;
};

inline BatchStream make_batches(const RetrievalDataset& ds, Split split, std::size_t batch_size,
                                std::uint64_t seed, CaptionChoice choice) {
  return BatchStream(ds, split, batch_size, seed, choice);
}

}  // namespace atr
