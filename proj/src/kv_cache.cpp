// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#include "salkv/kv_cache.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "salkv/errors.hpp"

namespace salkv {

std::string_view to_string(EvictionPolicy policy) {
  switch (policy) {
    case EvictionPolicy::kSalience: return "salience";
    case EvictionPolicy::kFifo: return "fifo";
    case EvictionPolicy::kMax: return "max";
    case EvictionPolicy::kAvg: return "avg";
    case EvictionPolicy::kRandom: return "random";
  }
  return "unknown";
}

EvictionPolicy parse_policy(std::string_view name) {
  for (EvictionPolicy p :
       {EvictionPolicy::kSalience, EvictionPolicy::kFifo, EvictionPolicy::kMax,
        EvictionPolicy::kAvg, EvictionPolicy::kRandom}) {
    if (to_string(p) == name) return p;
  }
  throw ArgumentError("unknown policy '" + std::string(name) + "'");
}

std::string_view to_string(EvictionOrder order) {
  return order == EvictionOrder::kConcatThenTopK ? "concat-then-topk"
                                                 : "evict-then-append";
}

EvictionOrder parse_eviction_order(std::string_view name) {
  if (name == "concat-then-topk") return EvictionOrder::kConcatThenTopK;
  if (name == "evict-then-append") return EvictionOrder::kEvictThenAppend;
  throw ArgumentError("unknown eviction order '" + std::string(name) + "'");
}

void CacheConfig::validate() const {
  if (capacity == 0) throw ConfigError("cache capacity must be >= 1");
  if (sink_count >= capacity) {
    throw ConfigError("sink_count " + std::to_string(sink_count) +
                      " must be below capacity " + std::to_string(capacity));
  }
  if (heads == 0 || head_dim == 0) {
    throw ConfigError("cache heads and head_dim must be >= 1");
  }
}

KvCache::KvCache(CacheConfig config) : config_(config), rng_(config.seed) {
  config_.validate();
}

KvCache KvCache::restore(CacheConfig config, std::vector<CacheEntry> entries,
                         TokenId next_id) {
  KvCache cache(config);
  const std::size_t width = config.heads * config.head_dim;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const CacheEntry& e = entries[i];
    if (e.k.size() != width || e.v.size() != width) {
      throw ShapeError("restored entry has wrong key/value width");
    }
    if (i > 0 && entries[i - 1].token_id >= e.token_id) {
      throw ArgumentError("restored entries must have ascending token ids");
    }
    if (e.token_id >= next_id) {
      throw ArgumentError("restored token id beyond next_token_id");
    }
  }
  if (entries.size() > config.capacity) {
    throw CapacityError("restored cache exceeds capacity");
  }
  cache.entries_ = std::move(entries);
  cache.next_id_ = next_id;
  return cache;
}

void KvCache::check_chunk(const Tensor& keys, const Tensor& values,
                          std::size_t n_scores) const {
  if (keys.rank() != 3 || keys.dim(1) != config_.heads ||
      keys.dim(2) != config_.head_dim) {
    throw ShapeError("chunk keys must be [C," + std::to_string(config_.heads) +
                     "," + std::to_string(config_.head_dim) + "], got " +
                     keys.shape_string());
  }
  if (values.shape() != keys.shape()) {
    throw ShapeError("chunk values " + values.shape_string() +
                     " must match keys " + keys.shape_string());
  }
  if (n_scores != keys.dim(0)) {
    throw ShapeError("got " + std::to_string(n_scores) + " scores for " +
                     std::to_string(keys.dim(0)) + " tokens");
  }
  if (keys.dim(0) > config_.capacity - config_.sink_count) {
    throw CapacityError("chunk of " + std::to_string(keys.dim(0)) +
                        " tokens cannot fit in capacity " +
                        std::to_string(config_.capacity) + " with " +
                        std::to_string(config_.sink_count) + " sink tokens");
  }
}

std::vector<std::size_t> KvCache::choose(const std::vector<CacheEntry>& cands,
                                         std::vector<std::size_t> pool,
                                         std::size_t slots,
                                         EvictionPolicy policy) {
  if (slots >= pool.size()) return pool;
  switch (policy) {
    case EvictionPolicy::kFifo:
      // Pool is in ascending token order; keep the newest.
      pool.erase(pool.begin(), pool.end() - static_cast<std::ptrdiff_t>(slots));
      return pool;
    case EvictionPolicy::kRandom:
      std::shuffle(pool.begin(), pool.end(), rng_);
      pool.resize(slots);
      return pool;
    default:
      // Higher score first; equal scores prefer the more recent token.
      std::partial_sort(pool.begin(),
                        pool.begin() + static_cast<std::ptrdiff_t>(slots),
                        pool.end(), [&](std::size_t a, std::size_t b) {
                          if (cands[a].salience != cands[b].salience) {
                            return cands[a].salience > cands[b].salience;
                          }
                          return cands[a].token_id > cands[b].token_id;
                        });
      pool.resize(slots);
      return pool;
  }
}

EvictionReport KvCache::finish(std::vector<CacheEntry> cands,
                               const std::vector<bool>& keep) {
  EvictionReport report;
  entries_.clear();
  for (std::size_t i = 0; i < cands.size(); ++i) {
    report.candidates.push_back(cands[i].token_id);
    report.scores.push_back(cands[i].salience);
    if (keep[i]) {
      report.retained.push_back(cands[i].token_id);
      entries_.push_back(std::move(cands[i]));
    } else {
      report.evicted.push_back(cands[i].token_id);
    }
  }
  return report;
}

namespace {

std::vector<CacheEntry> make_entries(const Tensor& keys, const Tensor& values,
                                     std::span<const double> scores,
                                     TokenId& next_id, std::size_t sink_count) {
  const std::size_t width = keys.dim(1) * keys.dim(2);
  std::vector<CacheEntry> out;
  out.reserve(keys.dim(0));
  for (std::size_t t = 0; t < keys.dim(0); ++t) {
    CacheEntry e;
    e.token_id = next_id++;
    e.k.assign(keys.values().begin() + t * width,
               keys.values().begin() + (t + 1) * width);
    e.v.assign(values.values().begin() + t * width,
               values.values().begin() + (t + 1) * width);
    e.salience = scores[t];
    e.pinned = e.token_id < sink_count;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

EvictionReport KvCache::append_chunk(const Tensor& keys, const Tensor& values,
                                     std::span<const double> scores) {
  check_chunk(keys, values, scores.size());
  for (double s : scores) {
    if (!std::isfinite(s)) {
      throw NumericError("non-finite salience for incoming token");
    }
  }
  const std::size_t history = entries_.size();
  std::vector<CacheEntry> cands = std::move(entries_);
  std::vector<CacheEntry> incoming =
      make_entries(keys, values, scores, next_id_, config_.sink_count);
  for (CacheEntry& e : incoming) cands.push_back(std::move(e));

  std::vector<bool> keep(cands.size(), true);
  if (cands.size() > config_.capacity) {
    std::size_t pinned = 0;
    std::vector<std::size_t> pool;
    // Under evict-then-append only history competes; the chunk always stays.
    const std::size_t pool_end = config_.order == EvictionOrder::kEvictThenAppend
                                     ? history
                                     : cands.size();
    for (std::size_t i = 0; i < cands.size(); ++i) {
      if (cands[i].pinned) {
        ++pinned;
      } else if (i < pool_end) {
        pool.push_back(i);
      }
    }
    const std::size_t fixed = pinned + (cands.size() - pool_end);
    const std::size_t slots = config_.capacity - std::min(fixed, config_.capacity);
    for (std::size_t i : pool) keep[i] = false;
    for (std::size_t i : choose(cands, pool, slots, config_.policy)) {
      keep[i] = true;
    }
  }
  return finish(std::move(cands), keep);
}

EvictionReport KvCache::append_following(const Tensor& keys,
                                         const Tensor& values,
                                         const EvictionReport& decision) {
  check_chunk(keys, values, keys.rank() == 3 ? keys.dim(0) : 0);
  std::vector<double> scores(keys.dim(0), 0.0);
  std::vector<CacheEntry> cands = std::move(entries_);
  std::vector<CacheEntry> incoming =
      make_entries(keys, values, scores, next_id_, config_.sink_count);
  for (CacheEntry& e : incoming) cands.push_back(std::move(e));

  std::vector<TokenId> ids;
  for (const CacheEntry& e : cands) ids.push_back(e.token_id);
  if (ids != decision.candidates) {
    throw ArgumentError("follower cache is out of sync with the decision");
  }
  // Carry the leader's scores so both caches report the same salience.
  for (std::size_t i = 0; i < cands.size(); ++i) {
    cands[i].salience = decision.scores[i];
  }
  std::vector<bool> keep(cands.size(), false);
  for (std::size_t i = 0, r = 0; i < cands.size(); ++i) {
    if (r < decision.retained.size() && decision.retained[r] == ids[i]) {
      keep[i] = true;
      ++r;
    }
  }
  return finish(std::move(cands), keep);
}

Selection KvCache::select() const {
  const std::size_t m = entries_.size();
  const std::size_t width = config_.heads * config_.head_dim;
  Selection sel{Tensor({m, config_.heads, config_.head_dim}),
                Tensor({m, config_.heads, config_.head_dim}),
                {}};
  sel.token_ids.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(entries_[i].k.begin(), entries_[i].k.end(),
              sel.keys.values().begin() + i * width);
    std::copy(entries_[i].v.begin(), entries_[i].v.end(),
              sel.values.values().begin() + i * width);
    sel.token_ids.push_back(entries_[i].token_id);
  }
  return sel;
}

std::vector<TokenId> KvCache::token_ids() const {
  std::vector<TokenId> ids;
  ids.reserve(entries_.size());
  for (const CacheEntry& e : entries_) ids.push_back(e.token_id);
  return ids;
}

std::vector<double> KvCache::salience() const {
  std::vector<double> s;
  s.reserve(entries_.size());
  for (const CacheEntry& e : entries_) s.push_back(e.salience);
  return s;
}

EvictionReport fifo_evict(KvCache& cache, const Tensor& keys,
                          const Tensor& values) {
  const EvictionPolicy saved = cache.config_.policy;
  cache.config_.policy = EvictionPolicy::kFifo;
  std::vector<double> zeros(keys.rank() == 3 ? keys.dim(0) : 0, 0.0);
  try {
    EvictionReport r = cache.append_chunk(keys, values, zeros);
    cache.config_.policy = saved;
    return r;
  } catch (...) {
    cache.config_.policy = saved;
    throw;
  }
}

Tensor policy_scores(EvictionPolicy policy, const Tensor& p,
                     const std::optional<BlockGeometry>& geom) {
  if (p.rank() != 4) {
    throw ShapeError("policy scores need attention [B,N,Lq,Lk], got " +
                     p.shape_string());
  }
  detail::check_finite(p, "attention weights");
  const std::size_t batch = p.dim(0), heads = p.dim(1), lq = p.dim(2),
                    lk = p.dim(3);
  switch (policy) {
    case EvictionPolicy::kSalience: {
      if (!geom) throw ArgumentError("salience policy needs a block geometry");
      return fuse_salience(component_maxima(p, *geom), *geom);
    }
    case EvictionPolicy::kMax:
    case EvictionPolicy::kAvg: {
      if (lq == 0) throw ShapeError("attention has no query rows");
      const bool use_max = policy == EvictionPolicy::kMax;
      Tensor out({batch, lk});
      std::vector<double> col(lk);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t n = 0; n < heads; ++n) {
          std::fill(col.begin(), col.end(), use_max ? -INFINITY : 0.0);
          for (std::size_t i = 0; i < lq; ++i) {
            for (std::size_t j = 0; j < lk; ++j) {
              const double x = p(b, n, i, j);
              col[j] = use_max ? std::max(col[j], x) : col[j] + x;
            }
          }
          for (std::size_t j = 0; j < lk; ++j) {
            out(b, j) += use_max ? col[j] : col[j] / static_cast<double>(lq);
          }
        }
        for (std::size_t j = 0; j < lk; ++j) {
          out(b, j) /= static_cast<double>(heads);
        }
      }
      return out;
    }
    default:
      throw ArgumentError("policy '" + std::string(to_string(policy)) +
                          "' does not rank by scores");
  }
}

}  // namespace salkv
