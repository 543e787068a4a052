// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#include <charconv>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "salkv/attention.hpp"
#include "salkv/config.hpp"
#include "salkv/errors.hpp"
#include "salkv/harness.hpp"
#include "salkv/metrics.hpp"
#include "salkv/salience.hpp"
#include "salkv/tensor_io.hpp"

namespace {

using namespace salkv;
using json = nlohmann::ordered_json;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

std::string shortest(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

// [N,L,D] is read as a single batch.
Tensor as_batched(const Tensor& t, const char* name) {
  if (t.rank() == 4) return t;
  if (t.rank() == 3) {
    return Tensor({1, t.dim(0), t.dim(1), t.dim(2)}, t.values());
  }
  throw ShapeError(std::string(name) + " must be [B,N,L,D] or [N,L,D], got " +
                   t.shape_string());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  return out;
}

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
};

RunConfig load_run_config(const std::string& path, const Globals& g) {
  RunConfig cfg = load_config(path);
  if (g.seed_given) cfg.seed = g.seed;
  return cfg;
}

struct SalienceArgs {
  std::string q, k, out;
  std::size_t block_len = 0;
  std::optional<std::size_t> chunk_len;
  std::string head_aggregation = "max-then-mean";
};

int run_salience(const SalienceArgs& a) {
  const Tensor q_in = read_tensor(a.q);
  const Tensor q = as_batched(q_in, "q");
  const Tensor k = as_batched(read_tensor(a.k), "k");
  const BlockGeometry geom{q.dim(2), a.block_len};
  const HeadAggregation agg = parse_head_aggregation(a.head_aggregation);
  Tensor s;
  if (a.chunk_len) {
    StreamingOptions opts;
    opts.chunk_len = *a.chunk_len;
    opts.agg = agg;
    s = blockwise_salience(q, k, geom, opts);
  } else {
    s = salience_scores(q, k, geom, agg);
  }
  if (q_in.rank() == 3) s = Tensor({s.dim(1)}, s.values());
  write_tensor(a.out, s);
  return 0;
}

struct SimulateArgs {
  std::string config, policy, out_trace, seh_ckpt;
  std::size_t frames = 0;
  bool timing = false;
};

int run_simulate(const SimulateArgs& a, const Globals& g) {
  RunConfig cfg = load_run_config(a.config, g);
  cfg.policy = parse_policy(a.policy);
  cfg.validate();
  const ToyModel model(cfg.model_config());
  RolloutConfig rc;
  rc.cache = cfg.cache_config();
  rc.num_frames = a.frames;
  rc.seed = cfg.seed;
  rc.block_len = cfg.resolved_block_len();
  rc.source = cfg.score_source;
  rc.head_aggregation = cfg.head_aggregation;
  rc.record_timing = a.timing;
  SehParams seh;
  if (!a.seh_ckpt.empty()) {
    seh = load_seh_checkpoint(a.seh_ckpt);
    rc.source = ScoreSource::kSeh;
  }
  if (rc.source == ScoreSource::kSeh) {
    if (a.seh_ckpt.empty()) {
      throw ConfigError("score_source = seh needs --seh-ckpt");
    }
    rc.seh = &seh;
  }
  const RolloutTrace trace = rollout_infer(model, cfg.schedule(), rc);
  {
    std::ofstream out = open_out(a.out_trace);
    write_trace_jsonl(trace, out, a.timing);
  }
  json summary;
  summary["policy"] = std::string(to_string(cfg.policy));
  summary["score_source"] = std::string(to_string(rc.source));
  summary["seed"] = cfg.seed;
  summary["frames"] = a.frames;
  summary["chunks"] = trace.chunks.size();
  summary["tokens"] = a.frames * cfg.frame_tokens;
  summary["capacity"] = cfg.capacity;
  summary["eviction_events"] = trace.eviction_events();
  summary["resident_tokens"] = trace.resident.size();
  const auto mass = trace.mean_retained_mass();
  summary["mean_retained_mass"] = mass ? json(*mass) : json(nullptr);
  std::cout << summary.dump() << '\n';
  return 0;
}

struct TrainArgs {
  std::string config, out_ckpt, out_curve;
  std::size_t steps = 0;
};

int run_train(const TrainArgs& a, const Globals& g) {
  const RunConfig cfg = load_run_config(a.config, g);
  cfg.validate();
  const ToyModel model(cfg.model_config());
  SehParams params = SehParams::init(cfg.seh_dims(), cfg.seed);
  OptimizerState opt = OptimizerState::for_params(params, cfg.optimizer);
  TrainConfig tc;
  tc.steps = a.steps;
  tc.train_frames = cfg.train_frames;
  tc.seed = cfg.seed;
  tc.smooth_l1_beta = cfg.smooth_l1_beta;
  tc.block_len = cfg.resolved_block_len();
  const TrainCurves curves =
      train_seh_loop(model, cfg.schedule(), cfg.cache_config(), tc, params, opt);
  save_seh_checkpoint(a.out_ckpt, params, cfg.seed);
  {
    std::ofstream out = open_out(a.out_curve);
    out << "step,loss,overlap,baseline_overlap\n";
    for (std::size_t i = 0; i < curves.loss.size(); ++i) {
      out << i << ',' << shortest(curves.loss[i]) << ','
          << shortest(curves.overlap[i]) << ','
          << shortest(curves.baseline_overlap[i]) << '\n';
    }
  }
  json summary;
  summary["steps"] = a.steps;
  summary["seed"] = cfg.seed;
  if (!curves.loss.empty()) {
    summary["final_loss"] = curves.loss.back();
    summary["final_overlap"] = curves.overlap.back();
    summary["final_baseline_overlap"] = curves.baseline_overlap.back();
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

int run_histogram(const std::string& p_path, const std::string& out_path) {
  const Tensor p = read_tensor(p_path);
  const CountMatrix7x7 h = argmax_histogram(p);
  {
    std::ofstream out = open_out(out_path);
    out << "query_bin,key_0,key_1,key_2,key_3,key_4,key_5,key_6\n";
    for (std::size_t a = 0; a < kHistogramBins; ++a) {
      out << a;
      for (std::size_t b = 0; b < kHistogramBins; ++b) out << ',' << h[a][b];
      out << '\n';
    }
  }
  json summary;
  summary["total"] = histogram_total(h);
  summary["diagonal_share"] = diagonal_share(h);
  std::cout << summary.dump() << '\n';
  return 0;
}

int run_overlap(const std::string& a, const std::string& b, std::size_t k) {
  const Tensor ta = read_tensor(a);
  const Tensor tb = read_tensor(b);
  std::cout << shortest(topk_overlap(ta.data(), tb.data(), k)) << '\n';
  return 0;
}

struct BenchArgs {
  std::size_t len = 0, block_len = 0, chunk_len = 0;
  std::size_t heads = 1, head_dim = 16;
};

int run_bench(const BenchArgs& a, const Globals& g) {
  std::mt19937_64 rng(g.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor q({1, a.heads, a.len, a.head_dim});
  Tensor k({1, a.heads, a.len, a.head_dim});
  for (double& x : q.data()) x = normal(rng);
  for (double& x : k.data()) x = normal(rng);
  const BlockGeometry geom{a.len, a.block_len};

  using clock = std::chrono::steady_clock;
  WorkingSetProbe dense_probe, stream_probe;
  auto t0 = clock::now();
  const Tensor dense = salience_scores(q, k, geom, HeadAggregation::kMaxThenMean,
                                       &dense_probe);
  auto t1 = clock::now();
  StreamingOptions opts;
  opts.chunk_len = a.chunk_len;
  const Tensor streamed = blockwise_salience(q, k, geom, opts, &stream_probe);
  auto t2 = clock::now();

  double diff = 0.0;
  for (std::size_t i = 0; i < dense.size(); ++i) {
    diff = std::max(diff, std::abs(dense.values()[i] - streamed.values()[i]));
  }
  json summary;
  summary["len"] = a.len;
  summary["block_len"] = a.block_len;
  summary["chunk_len"] = a.chunk_len;
  summary["heads"] = a.heads;
  summary["dense_peak_row_elements"] = dense_probe.peak_row_elements;
  summary["streaming_peak_row_elements"] = stream_probe.peak_row_elements;
  summary["max_abs_diff"] = diff;
  std::cout << summary.dump() << '\n';
  json timing;
  timing["dense_ms"] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  timing["streaming_ms"] = std::chrono::duration<double, std::milli>(t2 - t1).count();
  std::cerr << timing.dump() << '\n';
  return 0;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::string line = msg;
  for (char& c : line) {
    if (c == '\n') c = ' ';
  }
  std::cerr << "error: " << kind << ": " << line << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block salience scoring and salience-guided KV cache tools"};
  app.fallthrough();
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for all randomness (default 0)");

  SalienceArgs sal;
  auto* cmd_sal = app.add_subcommand("salience", "Per-key block salience of q/k tensors");
  cmd_sal->add_option("--q", sal.q, "Query tensor file")->required();
  cmd_sal->add_option("--k", sal.k, "Key tensor file")->required();
  cmd_sal->add_option("--block-len", sal.block_len, "Block length")->required();
  cmd_sal->add_option("--chunk-len", sal.chunk_len, "Stream queries in chunks");
  cmd_sal->add_option("--head-aggregation", sal.head_aggregation)
      ->check(CLI::IsMember({"max-then-mean", "mean-then-max"}));
  cmd_sal->add_option("--out", sal.out, "Output tensor file")->required();

  SimulateArgs sim;
  auto* cmd_sim = app.add_subcommand("simulate", "Chunked rollout with a bounded cache");
  cmd_sim->add_option("--config", sim.config)->required();
  cmd_sim->add_option("--policy", sim.policy)
      ->required()
      ->check(CLI::IsMember({"salience", "fifo", "max", "avg", "random"}));
  cmd_sim->add_option("--frames", sim.frames)->required()->check(CLI::PositiveNumber);
  cmd_sim->add_option("--out-trace", sim.out_trace)->required();
  cmd_sim->add_option("--seh-ckpt", sim.seh_ckpt, "Score with a trained SEH");
  cmd_sim->add_flag("--timing", sim.timing, "Record wall_ms in the trace");

  TrainArgs tr;
  auto* cmd_tr = app.add_subcommand("train-seh", "Distill teacher salience into the SEH");
  cmd_tr->add_option("--config", tr.config)->required();
  cmd_tr->add_option("--steps", tr.steps)->required();
  cmd_tr->add_option("--out-ckpt", tr.out_ckpt, "Checkpoint directory")->required();
  cmd_tr->add_option("--out-curve", tr.out_curve, "CSV of per-step curves")->required();

  auto* cmd_an = app.add_subcommand("analyze", "Attention diagnostics");
  cmd_an->require_subcommand(1);
  std::string hist_p, hist_out;
  auto* cmd_hist = cmd_an->add_subcommand("histogram", "7x7 argmax histogram");
  cmd_hist->add_option("--p", hist_p)->required();
  cmd_hist->add_option("--out", hist_out)->required();
  std::string ov_a, ov_b;
  std::size_t ov_k = 0;
  auto* cmd_ov = cmd_an->add_subcommand("overlap", "Top-k overlap of two score vectors");
  cmd_ov->add_option("--a", ov_a)->required();
  cmd_ov->add_option("--b", ov_b)->required();
  cmd_ov->add_option("--k", ov_k)->required();

  BenchArgs bench;
  auto* cmd_bench = app.add_subcommand("bench", "Dense vs streaming salience");
  cmd_bench->add_option("--len", bench.len)->required()->check(CLI::PositiveNumber);
  cmd_bench->add_option("--block-len", bench.block_len)->required();
  cmd_bench->add_option("--chunk-len", bench.chunk_len)->required();
  cmd_bench->add_option("--heads", bench.heads)->check(CLI::PositiveNumber);
  cmd_bench->add_option("--head-dim", bench.head_dim)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kExitUsage);
  }
  g.seed_given = app.count("--seed") > 0;

  try {
    if (*cmd_sal) return run_salience(sal);
    if (*cmd_sim) return run_simulate(sim, g);
    if (*cmd_tr) return run_train(tr, g);
    if (*cmd_hist) return run_histogram(hist_p, hist_out);
    if (*cmd_ov) return run_overlap(ov_a, ov_b, ov_k);
    if (*cmd_bench) return run_bench(bench, g);
  } catch (const ConfigError& e) {
    return fail(e.kind(), e.what(), kExitUsage);
  } catch (const ArgumentError& e) {
    return fail(e.kind(), e.what(), kExitUsage);
  } catch (const NumericError& e) {
    return fail(e.kind(), e.what(), kExitNumeric);
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), kExitFailure);
  } catch (const std::exception& e) {
    return fail("error", e.what(), kExitFailure);
  }
  return kExitUsage;
}
