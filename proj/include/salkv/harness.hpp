// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "salkv/kv_cache.hpp"
#include "salkv/salience.hpp"
#include "salkv/seh.hpp"
#include "salkv/tensor.hpp"

namespace salkv {

/// Channel 0 of every token state is a conditioning "beacon" that the model
/// never writes. Its query and key projections share one direction per head,
/// so raising a token's beacon raises the attention every query pays it.
inline constexpr std::size_t kBeaconChannel = 0;

struct ToyModelConfig {
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t layers = 2;
  std::size_t frame_tokens = 64;
  std::size_t chunk_frames = 3;
  double beacon_weight = 2.0;
  std::uint64_t seed = 0;

  std::size_t model_dim() const { return heads * head_dim; }
  std::size_t chunk_tokens() const { return frame_tokens * chunk_frames; }
  void validate() const;
};

/// Per-layer projections as [1, N, T, D] tensors.
struct LayerQkv {
  Tensor q;
  Tensor k;
  Tensor v;
};

/// Fixed random attention stack standing in for the generator. States are
/// [T, model_dim]. Each layer attends from the chunk to [context ; chunk]
/// with no mask and adds the projected readout residually; the output is
/// tanh of the final state.
class ToyModel {
 public:
  explicit ToyModel(ToyModelConfig config);

  struct Output {
    Tensor x0;                     // [T, model_dim]
    std::vector<LayerQkv> layers;  // one per layer
  };

  /// `context` holds one cache selection per layer, or is empty.
  Output forward(const Tensor& x, std::span<const Selection> context) const;

  const ToyModelConfig& config() const { return config_; }

 private:
  struct Layer {
    Tensor wq, wk, wv, wo;  // [model_dim, model_dim]
  };
  ToyModelConfig config_;
  std::vector<Layer> layers_;
};

/// Timesteps t_T > ... > t_0 >= 0 in [0, 1]. The re-noising mix is
/// x = alpha(t) * x0 + sigma(t) * eps with alpha = 1 - t.
struct DenoiseSchedule {
  std::vector<double> timesteps{1.0, 0.75, 0.5, 0.25};

  void validate() const;
  static double alpha(double t) { return 1.0 - t; }
  static double sigma(double t);
};

enum class ScoreSource { kOracle, kSeh };

/// Tokens whose beacon is raised to 1 + gain (all others sit at 1).
struct PlantSpec {
  std::vector<TokenId> anchors;
  double gain = 0.0;

  double beacon(TokenId id) const;
};

struct RolloutConfig {
  CacheConfig cache;  // heads/head_dim are taken from the model
  std::size_t num_frames = 9;
  std::uint64_t seed = 0;
  ScoreSource source = ScoreSource::kOracle;
  std::size_t block_len = 0;  // 0 selects the chunk token count
  HeadAggregation head_aggregation = HeadAggregation::kMaxThenMean;
  const SehParams* seh = nullptr;
  PlantSpec plant;
  bool keep_tensors = false;
  bool record_timing = false;
};

struct ChunkRecord {
  std::size_t chunk = 0;  // 1-based
  TokenId first_token = 0;
  std::size_t tokens = 0;
  std::size_t cache_before = 0;
  std::size_t cache_after = 0;
  std::size_t context_tokens = 0;  // cache tokens attended while generating
  EvictionReport report;
  std::vector<double> scores;
  std::vector<double> teacher;  // filled by train_seh_loop
  /// Share of this chunk's attention over the previous eviction's candidates
  /// that falls on the retained ones.
  std::optional<double> retained_mass;
  std::uint64_t state_digest = 0;
  double wall_ms = 0.0;

  // Populated only with keep_tensors.
  Tensor x0;
  LayerQkv final_qkv;
};

struct RolloutTrace {
  std::vector<ChunkRecord> chunks;
  std::vector<TokenId> resident;  // cache contents after the last chunk

  std::size_t eviction_events() const;
  std::optional<double> mean_retained_mass() const;
};

RolloutTrace rollout_infer(const ToyModel& model, const DenoiseSchedule& sched,
                           const RolloutConfig& cfg);

/// Salience of the full sequence [L, model_dim] under bidirectional attention
/// (no cache), scored on the final layer with blocks of `block_len` tokens.
Tensor teacher_salience(const ToyModel& model, const Tensor& states,
                        std::size_t block_len);

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t train_frames = 9;
  std::uint64_t seed = 0;
  double smooth_l1_beta = 1.0;
  std::size_t block_len = 0;  // 0 selects the chunk token count
};

struct TrainCurves {
  std::vector<double> loss;
  std::vector<double> overlap;           // SEH vs teacher, k = L/2
  std::vector<double> baseline_overlap;  // random scores vs teacher
};

TrainCurves train_seh_loop(const ToyModel& model, const DenoiseSchedule& sched,
                           const CacheConfig& cache, const TrainConfig& cfg,
                           SehParams& params, OptimizerState& opt);

struct PlantedBenchmarkConfig {
  ToyModelConfig model;
  DenoiseSchedule sched;
  CacheConfig cache;
  std::size_t num_frames = 30;
  std::size_t anchor_chunks = 1;     // anchors are drawn from these chunks
  std::size_t anchors_per_chunk = 8;
  double anchor_gain = 4.0;
  std::optional<std::vector<TokenId>> anchors;  // overrides the random draw
  std::vector<EvictionPolicy> policies{
      EvictionPolicy::kSalience, EvictionPolicy::kFifo, EvictionPolicy::kMax,
      EvictionPolicy::kAvg, EvictionPolicy::kRandom};
};

struct PolicyRecall {
  EvictionPolicy policy = EvictionPolicy::kSalience;
  double anchor_recall = 0.0;
  double mean_retained_mass = 0.0;
  std::size_t eviction_events = 0;
};

/// Rolls out once per policy with oracle scoring and reports how many planted
/// anchors are still resident at the end.
std::vector<PolicyRecall> planted_salience_benchmark(
    const PlantedBenchmarkConfig& cfg, std::uint64_t seed);

/// One JSON object per chunk, newline-terminated.
void write_trace_jsonl(const RolloutTrace& trace, std::ostream& out,
                       bool include_timing = false);

}  // namespace salkv
