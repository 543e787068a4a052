// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "salkv/harness.hpp"
#include "salkv/kv_cache.hpp"
#include "salkv/salience.hpp"
#include "salkv/seh.hpp"

namespace salkv {

/// Flat `key = value` run configuration. Defaults are the desk-scale setup:
/// 64-token frames, 3-frame chunks, a 3-chunk cache with a one-frame sink and
/// blocks as long as a chunk.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t layers = 2;
  std::size_t frame_tokens = 64;
  std::size_t chunk_frames = 3;
  std::size_t capacity = 576;
  std::optional<std::size_t> block_len;  // defaults to the chunk token count
  EvictionPolicy policy = EvictionPolicy::kSalience;
  EvictionOrder eviction_order = EvictionOrder::kConcatThenTopK;
  std::size_t sink_count = 64;
  std::vector<double> timesteps{1.0, 0.75, 0.5, 0.25};
  ScoreSource score_source = ScoreSource::kOracle;
  HeadAggregation head_aggregation = HeadAggregation::kMaxThenMean;
  double beacon_weight = 2.0;
  std::size_t seh_hidden = 64;
  std::size_t seh_out = 12;
  AdamWConfig optimizer{};
  double smooth_l1_beta = 1.0;
  std::size_t train_frames = 9;

  std::size_t chunk_tokens() const { return frame_tokens * chunk_frames; }
  std::size_t resolved_block_len() const { return block_len.value_or(chunk_tokens()); }

  ToyModelConfig model_config() const;
  CacheConfig cache_config() const;
  DenoiseSchedule schedule() const;
  SehDims seh_dims() const;

  /// Throws ConfigError, e.g. when the cache cannot hold one chunk.
  void validate() const;
};

/// Unknown keys and malformed values raise ConfigError naming the line.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

std::string_view to_string(ScoreSource source);
std::string_view to_string(HeadAggregation agg);
HeadAggregation parse_head_aggregation(std::string_view name);

}  // namespace salkv
