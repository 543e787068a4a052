// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "salkv/attention.hpp"
#include "salkv/tensor.hpp"

namespace salkv {

/// Sequence of `seq_len` tokens cut into blocks of `block_len` tokens.
/// The last block is partial when seq_len is not a multiple of block_len.
struct BlockGeometry {
  std::size_t seq_len = 1;
  std::size_t block_len = 1;

  void validate() const;
  std::size_t num_blocks() const {
    return (seq_len + block_len - 1) / block_len;
  }
};

struct BlockBounds {
  std::size_t block = 0;
  std::size_t lower = 0;  // first token of the block
  std::size_t upper = 0;  // one past the last token, clamped to seq_len

  friend bool operator==(const BlockBounds&, const BlockBounds&) = default;
};

BlockBounds block_bounds(std::size_t i, const BlockGeometry& geom);

/// Marker stored in ComponentMaxima where the query index set is empty.
inline constexpr double kEmptyComponent = -1.0;
inline bool is_empty_component(double x) { return x == kEmptyComponent; }

/// Per-key maxima of attention over the three query classes, each [B, L].
///  low:  queries whose block starts after the key (later blocks)
///  diag: queries in the key's own block
///  up:   queries whose block ends at or before the key (earlier blocks)
struct ComponentMaxima {
  Tensor low;
  Tensor diag;
  Tensor up;
};

/// Order in which the query-max and the head-mean are applied.
/// kMaxThenMean is the defining order; kMeanThenMax exists for comparison.
enum class HeadAggregation { kMaxThenMean, kMeanThenMax };

enum class Precision { kFloat64, kFloat32 };

/// Peak size, in elements, of the attention-row buffers a salience call held.
struct WorkingSetProbe {
  std::size_t peak_row_elements = 0;
};

ComponentMaxima component_maxima(
    const Tensor& p, const BlockGeometry& geom,
    HeadAggregation agg = HeadAggregation::kMaxThenMean);

/// Mean of the non-empty components at each key. With L a multiple of L_B
/// and at least two blocks this is (diag+low)/2 on the first block,
/// (up+diag+low)/3 on interior blocks and (diag+up)/2 on the last block.
Tensor fuse_salience(const ComponentMaxima& cm, const BlockGeometry& geom);

/// Dense reference: materializes the full [B,N,L,L] attention tensor.
Tensor salience_scores(const Tensor& q, const Tensor& k,
                       const BlockGeometry& geom,
                       HeadAggregation agg = HeadAggregation::kMaxThenMean,
                       WorkingSetProbe* probe = nullptr);
Tensor salience_scores(const AttentionBatch& batch, const BlockGeometry& geom,
                       HeadAggregation agg = HeadAggregation::kMaxThenMean);

struct StreamingOptions {
  std::size_t chunk_len = 1;
  HeadAggregation agg = HeadAggregation::kMaxThenMean;
  Precision precision = Precision::kFloat64;
};

/// Streams query rows in chunks of `chunk_len`, keeping per-head running
/// maxima. Keys are never chunked, so each row softmax is exact. Chunks that
/// cross a block boundary are split so every piece lies in one query block.
/// Row buffers are O(chunk_len * L).
Tensor blockwise_salience(const Tensor& q, const Tensor& k,
                          const BlockGeometry& geom,
                          const StreamingOptions& opts,
                          WorkingSetProbe* probe = nullptr);
Tensor blockwise_salience(const AttentionBatch& batch,
                          const BlockGeometry& geom, std::size_t chunk_len);

}  // namespace salkv
