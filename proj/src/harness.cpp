// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#include "salkv/harness.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <random>
#include <string>

#include "json.hpp"

#include "salkv/attention.hpp"
#include "salkv/errors.hpp"
#include "salkv/metrics.hpp"

namespace salkv {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

// x [T, dm] times w [dm, dm], split into heads: [1, N, T, D].
Tensor project_heads(const Tensor& x, const Tensor& w, std::size_t heads,
                     std::size_t d) {
  const std::size_t t_len = x.dim(0), dm = x.dim(1);
  Tensor out({1, heads, t_len, d});
  std::vector<double> row(dm);
  for (std::size_t t = 0; t < t_len; ++t) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t i = 0; i < dm; ++i) {
      const double xi = x(t, i);
      if (xi == 0.0) continue;
      for (std::size_t o = 0; o < dm; ++o) row[o] += xi * w(i, o);
    }
    for (std::size_t n = 0; n < heads; ++n) {
      for (std::size_t e = 0; e < d; ++e) out(0, n, t, e) = row[n * d + e];
    }
  }
  return out;
}

// Prepends cached rows [M, N, D] to chunk rows [1, N, T, D].
Tensor with_context(const Selection* sel, const Tensor& chunk, bool keys) {
  if (!sel || sel->token_ids.empty()) return chunk;
  const Tensor& ctx = keys ? sel->keys : sel->values;
  const std::size_t m = ctx.dim(0), heads = chunk.dim(1), t_len = chunk.dim(2),
                    d = chunk.dim(3);
  Tensor out({1, heads, m + t_len, d});
  for (std::size_t n = 0; n < heads; ++n) {
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t e = 0; e < d; ++e) out(0, n, j, e) = ctx(j, n, e);
    }
    for (std::size_t j = 0; j < t_len; ++j) {
      for (std::size_t e = 0; e < d; ++e) out(0, n, m + j, e) = chunk(0, n, j, e);
    }
  }
  return out;
}

// [1, N, T, D] -> [T, N, D].
Tensor token_major(const Tensor& x) {
  const std::size_t heads = x.dim(1), t_len = x.dim(2), d = x.dim(3);
  Tensor out({t_len, heads, d});
  for (std::size_t n = 0; n < heads; ++n) {
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t e = 0; e < d; ++e) out(t, n, e) = x(0, n, t, e);
    }
  }
  return out;
}

// Concatenates [1, N, T_i, D] tensors along the token axis.
Tensor concat_tokens(const std::vector<const Tensor*>& parts) {
  const std::size_t heads = parts.front()->dim(1), d = parts.front()->dim(3);
  std::size_t total = 0;
  for (const Tensor* p : parts) total += p->dim(2);
  Tensor out({1, heads, total, d});
  for (std::size_t n = 0; n < heads; ++n) {
    std::size_t off = 0;
    for (const Tensor* p : parts) {
      for (std::size_t t = 0; t < p->dim(2); ++t) {
        for (std::size_t e = 0; e < d; ++e) out(0, n, off + t, e) = (*p)(0, n, t, e);
      }
      off += p->dim(2);
    }
  }
  return out;
}

std::uint64_t digest(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double x : t.data()) {
    h ^= std::bit_cast<std::uint64_t>(x);
    h *= 0x100000001b3ULL;
  }
  return h;
}

void set_beacons(Tensor& x, TokenId first, const PlantSpec& plant) {
  for (std::size_t t = 0; t < x.dim(0); ++t) {
    x(t, kBeaconChannel) = plant.beacon(first + t);
  }
}

std::size_t resolve_block_len(std::size_t block_len, std::size_t chunk_tokens) {
  return block_len == 0 ? chunk_tokens : block_len;
}

}  // namespace

void ToyModelConfig::validate() const {
  if (heads == 0 || head_dim == 0 || layers == 0 || frame_tokens == 0 ||
      chunk_frames == 0) {
    throw ConfigError("toy model dimensions must all be >= 1");
  }
  if (model_dim() < 2) throw ConfigError("model_dim must be >= 2");
}

ToyModel::ToyModel(ToyModelConfig config) : config_(config) {
  config_.validate();
  const std::size_t dm = config_.model_dim();
  std::mt19937_64 rng = stream(config_.seed, 0x70796d6f64656cULL);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(dm)));
  // Same beacon direction for queries and keys inside each head.
  const double per_elem =
      config_.beacon_weight / std::sqrt(static_cast<double>(config_.head_dim));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Layer layer{Tensor({dm, dm}), Tensor({dm, dm}), Tensor({dm, dm}),
                Tensor({dm, dm})};
    for (Tensor* w : {&layer.wq, &layer.wk, &layer.wv, &layer.wo}) {
      for (double& x : w->data()) x = normal(rng);
    }
    for (std::size_t o = 0; o < dm; ++o) {
      layer.wq(kBeaconChannel, o) = per_elem;
      layer.wk(kBeaconChannel, o) = per_elem;
      layer.wo(o, kBeaconChannel) = 0.0;
    }
    layers_.push_back(std::move(layer));
  }
}

ToyModel::Output ToyModel::forward(const Tensor& x,
                                   std::span<const Selection> context) const {
  const std::size_t dm = config_.model_dim();
  if (x.rank() != 2 || x.dim(1) != dm) {
    throw ShapeError("toy model input must be [T," + std::to_string(dm) +
                     "], got " + x.shape_string());
  }
  if (!context.empty() && context.size() != layers_.size()) {
    throw ShapeError("context must hold one selection per layer");
  }
  const std::size_t heads = config_.heads, d = config_.head_dim;
  Output out;
  Tensor state = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    LayerQkv qkv{project_heads(state, layer.wq, heads, d),
                 project_heads(state, layer.wk, heads, d),
                 project_heads(state, layer.wv, heads, d)};
    const Selection* sel = context.empty() ? nullptr : &context[l];
    const Tensor keys = with_context(sel, qkv.k, true);
    const Tensor values = with_context(sel, qkv.v, false);
    const Tensor readout = attention_output(attention_weights(qkv.q, keys), values);
    for (std::size_t t = 0; t < state.dim(0); ++t) {
      for (std::size_t n = 0; n < heads; ++n) {
        for (std::size_t e = 0; e < d; ++e) {
          const double r = readout(0, n, t, e);
          const std::size_t i = n * d + e;
          for (std::size_t o = 0; o < dm; ++o) state(t, o) += r * layer.wo(i, o);
        }
      }
    }
    out.layers.push_back(std::move(qkv));
  }
  out.x0 = std::move(state);
  for (std::size_t t = 0; t < out.x0.dim(0); ++t) {
    for (std::size_t o = 0; o < dm; ++o) {
      if (o != kBeaconChannel) out.x0(t, o) = std::tanh(out.x0(t, o));
    }
  }
  return out;
}

void DenoiseSchedule::validate() const {
  if (timesteps.empty()) throw ConfigError("schedule needs at least one timestep");
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    if (!(timesteps[i] >= 0.0 && timesteps[i] <= 1.0)) {
      throw ConfigError("timesteps must lie in [0, 1]");
    }
    if (i > 0 && !(timesteps[i] < timesteps[i - 1])) {
      throw ConfigError("timesteps must be strictly decreasing");
    }
  }
}

double DenoiseSchedule::sigma(double t) {
  const double a = alpha(t);
  return std::sqrt(std::max(0.0, 1.0 - a * a));
}

double PlantSpec::beacon(TokenId id) const {
  return std::find(anchors.begin(), anchors.end(), id) != anchors.end()
             ? 1.0 + gain
             : 1.0;
}

std::size_t RolloutTrace::eviction_events() const {
  return static_cast<std::size_t>(
      std::count_if(chunks.begin(), chunks.end(),
                    [](const ChunkRecord& r) { return r.report.any_evicted(); }));
}

std::optional<double> RolloutTrace::mean_retained_mass() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const ChunkRecord& r : chunks) {
    if (r.retained_mass) {
      sum += *r.retained_mass;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

RolloutTrace rollout_infer(const ToyModel& model, const DenoiseSchedule& sched,
                           const RolloutConfig& cfg) {
  sched.validate();
  const ToyModelConfig& mc = model.config();
  if (cfg.num_frames < 1) throw ArgumentError("num_frames must be >= 1");
  if (cfg.source == ScoreSource::kSeh && !cfg.seh) {
    throw ArgumentError("SEH scoring requested without SEH parameters");
  }
  CacheConfig cache_cfg = cfg.cache;
  cache_cfg.heads = mc.heads;
  cache_cfg.head_dim = mc.head_dim;
  if (cache_cfg.capacity < mc.chunk_tokens()) {
    throw ConfigError("cache capacity " + std::to_string(cache_cfg.capacity) +
                      " is below the chunk size of " +
                      std::to_string(mc.chunk_tokens()) + " tokens");
  }
  std::vector<KvCache> caches;
  for (std::size_t l = 0; l < mc.layers; ++l) caches.emplace_back(cache_cfg);
  KvCache& leader = caches.back();

  const std::size_t dm = mc.model_dim();
  const std::size_t chunk_tokens = mc.chunk_tokens();
  const std::size_t total_tokens = cfg.num_frames * mc.frame_tokens;
  const std::size_t n_chunks = (total_tokens + chunk_tokens - 1) / chunk_tokens;
  const std::size_t block_len = resolve_block_len(cfg.block_len, chunk_tokens);
  const auto& ts = sched.timesteps;

  struct Pending {
    Tensor keys;  // [1, N, M, D]
    std::vector<TokenId> candidates;
    std::vector<TokenId> retained;
  };
  std::optional<Pending> pending;

  RolloutTrace trace;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    const auto t_start = std::chrono::steady_clock::now();
    const TokenId first = c * chunk_tokens;
    const std::size_t t_len = std::min(chunk_tokens, total_tokens - first);
    std::mt19937_64 rng = stream(cfg.seed, c + 1);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<Selection> ctx;
    for (const KvCache& kc : caches) ctx.push_back(kc.select());

    ChunkRecord rec;
    rec.chunk = c + 1;
    rec.first_token = first;
    rec.tokens = t_len;
    rec.cache_before = leader.size();
    rec.context_tokens = ctx.back().token_ids.size();

    Tensor x({t_len, dm});
    for (double& v : x.data()) v = normal(rng);
    set_beacons(x, first, cfg.plant);
    Tensor x0;
    for (std::size_t j = 0; j < ts.size(); ++j) {
      x0 = model.forward(x, ctx).x0;
      set_beacons(x0, first, cfg.plant);
      if (j + 1 == ts.size()) break;
      const double t_next = ts[j + 1];
      const double a = DenoiseSchedule::alpha(t_next);
      const double s = DenoiseSchedule::sigma(t_next);
      for (std::size_t i = 0; i < x.size(); ++i) {
        x.values()[i] = a * x0.values()[i] + s * normal(rng);
      }
      set_beacons(x, first, cfg.plant);
    }
    // Cache pass at t = 0 on the clean estimate.
    ToyModel::Output final_pass = model.forward(x0, ctx);
    const LayerQkv& last = final_pass.layers.back();

    std::vector<double> scores;
    {
      const EvictionPolicy policy = cache_cfg.policy;
      Tensor s;
      if (policy == EvictionPolicy::kMax || policy == EvictionPolicy::kAvg) {
        s = policy_scores(policy, attention_weights(last.q, last.k));
      } else if (cfg.source == ScoreSource::kSeh) {
        s = seh_forward(AttentionBatch{last.q, last.k, last.v}, *cfg.seh);
      } else {
        s = salience_scores(last.q, last.k, BlockGeometry{t_len, block_len},
                            cfg.head_aggregation);
      }
      scores = s.values();
    }

    if (pending) {
      const Tensor p = attention_weights(last.q, pending->keys);
      rec.retained_mass =
          retained_attention_mass(p, pending->candidates, pending->retained);
      pending.reset();
    }

    const Tensor chunk_keys = token_major(last.k);
    const Tensor chunk_values = token_major(last.v);
    Tensor candidate_keys = with_context(&ctx.back(), last.k, true);
    rec.report = leader.append_chunk(chunk_keys, chunk_values, scores);
    for (std::size_t l = 0; l + 1 < caches.size(); ++l) {
      const LayerQkv& lq = final_pass.layers[l];
      caches[l].append_following(token_major(lq.k), token_major(lq.v),
                                 rec.report);
    }
    if (rec.report.any_evicted()) {
      pending = Pending{std::move(candidate_keys), rec.report.candidates,
                        rec.report.retained};
    }

    rec.cache_after = leader.size();
    rec.scores = std::move(scores);
    rec.state_digest = digest(x0);
    if (cfg.keep_tensors) {
      rec.x0 = x0;
      rec.final_qkv = last;
    }
    if (cfg.record_timing) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t_start)
                        .count();
    }
    trace.chunks.push_back(std::move(rec));
  }
  trace.resident = leader.token_ids();
  return trace;
}

Tensor teacher_salience(const ToyModel& model, const Tensor& states,
                        std::size_t block_len) {
  const ToyModel::Output out = model.forward(states, {});
  const LayerQkv& last = out.layers.back();
  return salience_scores(last.q, last.k,
                         BlockGeometry{states.dim(0), block_len});
}

TrainCurves train_seh_loop(const ToyModel& model, const DenoiseSchedule& sched,
                           const CacheConfig& cache, const TrainConfig& cfg,
                           SehParams& params, OptimizerState& opt) {
  const ToyModelConfig& mc = model.config();
  const std::size_t block_len = resolve_block_len(cfg.block_len, mc.chunk_tokens());
  TrainCurves curves;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    RolloutConfig rc;
    rc.cache = cache;
    rc.cache.policy = EvictionPolicy::kSalience;
    rc.num_frames = cfg.train_frames;
    rc.seed = stream(cfg.seed, 0x747261696eULL, step)();
    rc.source = ScoreSource::kSeh;
    rc.seh = &params;
    rc.block_len = block_len;
    rc.keep_tensors = true;
    const RolloutTrace trace = rollout_infer(model, sched, rc);

    std::vector<const Tensor*> qs, ks, vs;
    std::size_t len = 0;
    for (const ChunkRecord& r : trace.chunks) {
      qs.push_back(&r.final_qkv.q);
      ks.push_back(&r.final_qkv.k);
      vs.push_back(&r.final_qkv.v);
      len += r.tokens;
    }
    Tensor states({len, mc.model_dim()});
    {
      std::size_t off = 0;
      for (const ChunkRecord& r : trace.chunks) {
        std::copy(r.x0.values().begin(), r.x0.values().end(),
                  states.values().begin() + off);
        off += r.x0.size();
      }
    }
    const Tensor teacher = teacher_salience(model, states, block_len);
    const AttentionBatch student{concat_tokens(qs), concat_tokens(ks),
                                 concat_tokens(vs)};
    const Tensor features = seh_features(student);
    const Tensor pred = seh_forward_features(features, params);

    const std::size_t k = std::max<std::size_t>(1, len / 2);
    curves.overlap.push_back(topk_overlap(pred.data(), teacher.data(), k));
    std::mt19937_64 base_rng = stream(cfg.seed, 0x62617365ULL, step);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> random_scores(len);
    for (double& r : random_scores) r = unif(base_rng);
    curves.baseline_overlap.push_back(
        topk_overlap(random_scores, teacher.data(), k));
    curves.loss.push_back(seh_train_step_features(params, opt, features, teacher,
                                                  cfg.smooth_l1_beta));
  }
  return curves;
}

std::vector<PolicyRecall> planted_salience_benchmark(
    const PlantedBenchmarkConfig& cfg, std::uint64_t seed) {
  ToyModelConfig mc = cfg.model;
  mc.seed = seed;
  const ToyModel model(mc);
  const std::size_t chunk_tokens = mc.chunk_tokens();

  PlantSpec plant;
  plant.gain = cfg.anchor_gain;
  if (cfg.anchors) {
    plant.anchors = *cfg.anchors;
  } else {
    std::mt19937_64 rng = stream(seed, 0x616e63686f72ULL);
    for (std::size_t c = 0; c < cfg.anchor_chunks; ++c) {
      std::vector<TokenId> pool;
      for (TokenId t = c * chunk_tokens; t < (c + 1) * chunk_tokens; ++t) {
        if (t >= cfg.cache.sink_count) pool.push_back(t);
      }
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(std::min(pool.size(), cfg.anchors_per_chunk));
      plant.anchors.insert(plant.anchors.end(), pool.begin(), pool.end());
    }
  }
  std::sort(plant.anchors.begin(), plant.anchors.end());

  std::vector<PolicyRecall> out;
  for (EvictionPolicy policy : cfg.policies) {
    RolloutConfig rc;
    rc.cache = cfg.cache;
    rc.cache.policy = policy;
    rc.cache.seed = seed;
    rc.num_frames = cfg.num_frames;
    rc.seed = seed;
    rc.source = ScoreSource::kOracle;
    rc.plant = plant;
    const RolloutTrace trace = rollout_infer(model, cfg.sched, rc);

    std::size_t kept = 0;
    for (TokenId a : plant.anchors) {
      if (std::binary_search(trace.resident.begin(), trace.resident.end(), a)) {
        ++kept;
      }
    }
    PolicyRecall r;
    r.policy = policy;
    r.anchor_recall = plant.anchors.empty()
                          ? 1.0
                          : static_cast<double>(kept) /
                                static_cast<double>(plant.anchors.size());
    r.mean_retained_mass = trace.mean_retained_mass().value_or(1.0);
    r.eviction_events = trace.eviction_events();
    out.push_back(r);
  }
  return out;
}

void write_trace_jsonl(const RolloutTrace& trace, std::ostream& out,
                       bool include_timing) {
  for (const ChunkRecord& r : trace.chunks) {
    nlohmann::ordered_json j;
    j["chunk"] = r.chunk;
    j["first_token"] = r.first_token;
    j["tokens"] = r.tokens;
    j["cache_before"] = r.cache_before;
    j["cache_after"] = r.cache_after;
    j["context_tokens"] = r.context_tokens;
    j["evicted"] = r.report.evicted;
    j["retained"] = r.report.retained;
    j["scores"] = r.scores;
    if (!r.teacher.empty()) j["teacher"] = r.teacher;
    if (r.retained_mass) j["retained_mass"] = *r.retained_mass;
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(r.state_digest));
    j["state_digest"] = hex;
    if (include_timing) j["wall_ms"] = r.wall_ms;
    out << j.dump() << '\n';
  }
}

}  // namespace salkv
