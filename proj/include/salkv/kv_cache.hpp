// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "salkv/salience.hpp"
#include "salkv/tensor.hpp"

namespace salkv {

using TokenId = std::uint64_t;

/// kSalience, kMax and kAvg all keep the top-scoring tokens; they differ only
/// in how the scores are produced (see policy_scores). kRandom is a seeded
/// control baseline.
enum class EvictionPolicy { kSalience, kFifo, kMax, kAvg, kRandom };

/// kConcatThenTopK ranks history and the incoming chunk together.
/// kEvictThenAppend shrinks history first so the chunk always survives.
enum class EvictionOrder { kConcatThenTopK, kEvictThenAppend };

std::string_view to_string(EvictionPolicy policy);
EvictionPolicy parse_policy(std::string_view name);
std::string_view to_string(EvictionOrder order);
EvictionOrder parse_eviction_order(std::string_view name);

struct CacheConfig {
  std::size_t capacity = 0;
  std::size_t sink_count = 0;  // first tokens ever inserted are pinned
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  EvictionPolicy policy = EvictionPolicy::kSalience;
  EvictionOrder order = EvictionOrder::kConcatThenTopK;
  std::uint64_t seed = 0;  // kRandom only

  void validate() const;
};

struct CacheEntry {
  TokenId token_id = 0;
  std::vector<double> k;  // [N*D]
  std::vector<double> v;  // [N*D]
  double salience = 0.0;
  bool pinned = false;
};

/// Outcome of one append. retained and evicted partition the candidates;
/// all id lists are ascending. scores[i] belongs to candidates[i].
struct EvictionReport {
  std::vector<TokenId> candidates;
  std::vector<double> scores;
  std::vector<TokenId> retained;
  std::vector<TokenId> evicted;

  bool any_evicted() const { return !evicted.empty(); }
};

struct Selection {
  Tensor keys;    // [M, N, D]
  Tensor values;  // [M, N, D]
  std::vector<TokenId> token_ids;
};

/// Bounded per-token key/value store. Entries stay sorted by token_id and
/// each carries the salience it was scored with on insertion.
class KvCache {
 public:
  explicit KvCache(CacheConfig config);

  /// Appends `keys`/`values` [C, N, D] with fresh token ids and evicts down to
  /// capacity under the configured policy and order. Throws CapacityError if
  /// C > capacity - sink_count.
  EvictionReport append_chunk(const Tensor& keys, const Tensor& values,
                              std::span<const double> scores);

  /// Appends and then keeps exactly `decision.retained`. Used to keep caches
  /// of other layers index-synchronized with a leader cache.
  EvictionReport append_following(const Tensor& keys, const Tensor& values,
                                  const EvictionReport& decision);

  Selection select() const;

  const std::vector<CacheEntry>& entries() const { return entries_; }
  std::vector<TokenId> token_ids() const;
  std::vector<double> salience() const;
  std::size_t size() const { return entries_.size(); }
  const CacheConfig& config() const { return config_; }
  TokenId next_token_id() const { return next_id_; }

  /// Rebuilds a cache from saved state (snapshot loading).
  static KvCache restore(CacheConfig config, std::vector<CacheEntry> entries,
                         TokenId next_id);

 private:
  void check_chunk(const Tensor& keys, const Tensor& values,
                   std::size_t n_scores) const;
  // Chooses which of `pool` (indices into candidate entries) survive to fill
  // `slots`. Pinned entries must already be excluded from `pool`.
  std::vector<std::size_t> choose(const std::vector<CacheEntry>& cands,
                                  std::vector<std::size_t> pool,
                                  std::size_t slots, EvictionPolicy policy);
  EvictionReport finish(std::vector<CacheEntry> cands,
                        const std::vector<bool>& keep);

  CacheConfig config_;
  std::vector<CacheEntry> entries_;
  TokenId next_id_ = 0;
  std::mt19937_64 rng_;

  friend EvictionReport fifo_evict(KvCache&, const Tensor&, const Tensor&);
};

/// Appends under FIFO regardless of the configured policy: the oldest
/// unpinned tokens go first and scores are recorded as zero.
EvictionReport fifo_evict(KvCache& cache, const Tensor& keys,
                          const Tensor& values);

/// Score vector [B, Lk] a policy ranks by. kSalience needs square `p` and the
/// geometry; kMax is the head-mean of each key's maximum over all queries;
/// kAvg is the head-mean of each key's mean over all queries.
Tensor policy_scores(EvictionPolicy policy, const Tensor& p,
                     const std::optional<BlockGeometry>& geom = std::nullopt);

}  // namespace salkv
