// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

#include "salkv/attention.hpp"
#include "salkv/harness.hpp"
#include "salkv/kv_cache.hpp"
#include "salkv/metrics.hpp"
#include "salkv/salience.hpp"
#include "salkv/seh.hpp"
#include "salkv/tensor_io.hpp"
#include "test_util.hpp"

namespace {

using namespace salkv;
using testing::random_tensor;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

// Mean of the non-empty exhaustive components.
double oracle_score(const std::vector<std::vector<std::vector<double>>>& comps,
                    std::size_t b, std::size_t j) {
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < 3; ++c) {
    if (!std::isnan(comps[c][b][j])) {
      sum += comps[c][b][j];
      ++n;
    }
  }
  return sum / n;
}

Outcome streaming_equivalence() {
  const auto t0 = clock_type::now();
  std::mt19937_64 rng(101);
  const std::size_t head_choices[] = {1, 2, 4};
  double worst = 0.0, worst_oracle = 0.0;
  std::size_t runs = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t L = 8 + rng() % 57;
    const std::size_t N = head_choices[rng() % 3];
    const std::size_t D = 2 + rng() % 7;
    const std::size_t LB = 1 + rng() % L;
    const Tensor q = random_tensor({1, N, L, D}, rng, -2.0, 2.0);
    const Tensor k = random_tensor({1, N, L, D}, rng, -2.0, 2.0);
    const BlockGeometry geom{L, LB};
    const Tensor dense = salience_scores(q, k, geom);
    const auto comps = testing::exhaustive_components(testing::naive_attention(q, k), LB);
    for (std::size_t j = 0; j < L; ++j) {
      worst_oracle = std::max(worst_oracle, std::abs(dense(0, j) - oracle_score(comps, 0, j)));
    }
    for (std::size_t c = 1; c <= L; ++c) {
      StreamingOptions opts;
      opts.chunk_len = c;
      worst = std::max(worst, testing::max_abs_diff(blockwise_salience(q, k, geom, opts), dense));
      ++runs;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && worst_oracle <= 1e-6 && secs < 30.0,
          std::to_string(runs) + " chunked runs, max diff " + fmt(worst) +
              ", dense vs oracle " + fmt(worst_oracle) + ", " + fmt(secs) + " s"};
}

Outcome fusion_boundary_cases() {
  std::mt19937_64 rng(202);
  double worst = 0.0, worst_single = 0.0;
  for (std::size_t blocks : {2u, 3u}) {
    for (std::size_t LB : {1u, 3u, 5u, 8u}) {
      const std::size_t L = blocks * LB;
      const Tensor q = random_tensor({2, 3, L, 4}, rng, -2.0, 2.0);
      const Tensor k = random_tensor({2, 3, L, 4}, rng, -2.0, 2.0);
      const Tensor s = salience_scores(q, k, BlockGeometry{L, LB});
      const auto comps = testing::exhaustive_components(testing::naive_attention(q, k), LB);
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t j = 0; j < L; ++j) {
          const double expect = testing::three_case_fusion(j, L, LB, comps[0][b][j],
                                                           comps[1][b][j], comps[2][b][j]);
          worst = std::max(worst, std::abs(s(b, j) - expect));
        }
    }
  }
  for (std::size_t L : {1u, 6u, 17u}) {
    const Tensor p = testing::random_attention(2, 2, L, L, rng);
    const Tensor s = fuse_salience(component_maxima(p, BlockGeometry{L, L}), BlockGeometry{L, L});
    const auto comps = testing::exhaustive_components(p, L);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t j = 0; j < L; ++j) {
        const bool others_empty = std::isnan(comps[0][b][j]) && std::isnan(comps[2][b][j]);
        worst_single = std::max(worst_single,
                                others_empty ? std::abs(s(b, j) - comps[1][b][j]) : 1.0);
      }
  }
  return {worst <= 1e-12 && worst_single <= 1e-12,
          "two/three-block max diff " + fmt(worst) + ", single-block vs diag " +
              fmt(worst_single)};
}

Outcome seh_gradient_check() {
  const auto t0 = clock_type::now();
  std::mt19937_64 rng(303);
  double worst = 0.0;
  std::size_t checked = 0;
  for (int net = 0; net < 20; ++net) {
    const std::size_t N = 1 + rng() % 2, D = 1 + rng() % 3, L = 2 + rng() % 4;
    const SehDims dims{3 * N * D, 2 + rng() % 5, 1 + rng() % 4};
    const AttentionBatch batch{random_tensor({1, N, L, D}, rng),
                               random_tensor({1, N, L, D}, rng),
                               random_tensor({1, N, L, D}, rng)};
    SehParams p = SehParams::init(dims, 1000 + net);
    const Tensor target = random_tensor({1, L}, rng, -1.5, 1.5);
    const double beta = net % 2 ? 1.0 : 0.3;
    const SehParams g = seh_backward(batch, p, target, beta);
    for (Tensor SehParams::*field : {&SehParams::w1, &SehParams::b1, &SehParams::w2, &SehParams::b2}) {
      for (std::size_t i = 0; i < (p.*field).size(); ++i) {
        double& w = (p.*field).values()[i];
        const double orig = w;
        w = orig + 1e-5;
        const double up = smooth_l1(seh_forward(batch, p), target, beta);
        w = orig - 1e-5;
        const double down = smooth_l1(seh_forward(batch, p), target, beta);
        w = orig;
        const double fd = (up - down) / 2e-5;
        const double an = (g.*field).values()[i];
        const double scale = std::max({std::abs(an), std::abs(fd), 1e-6});
        worst = std::max(worst, std::abs(an - fd) / scale);
        ++checked;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 10.0,
          std::to_string(checked) + " parameters, max rel err " + fmt(worst) + ", " +
              fmt(secs) + " s"};
}

// Margin recorded from pilot runs (last-window overlap minus baseline was
// >= 0.26 on every pilot seed at this configuration).
constexpr double kOverlapMargin = 0.10;

Outcome seh_learnability() {
  const auto t0 = clock_type::now();
  bool ok = true;
  std::ostringstream detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ToyModelConfig mc;
    mc.heads = 4;
    mc.head_dim = 8;
    mc.frame_tokens = 12;
    mc.chunk_frames = 3;
    mc.seed = seed;
    const ToyModel model(mc);
    CacheConfig cache;
    cache.capacity = 108;
    cache.sink_count = 12;
    TrainConfig tc;
    tc.steps = 2000;
    tc.train_frames = 9;
    tc.seed = seed;
    SehParams params = SehParams::init({3 * 4 * 8, 64, 12}, seed);
    AdamWConfig ac;
    ac.lr = 1e-3;
    OptimizerState opt = OptimizerState::for_params(params, ac);
    const TrainCurves c = train_seh_loop(model, DenoiseSchedule{}, cache, tc, params, opt);
    double prev = INFINITY;
    bool monotone = true;
    double overlap = 0.0, base = 0.0;
    for (std::size_t w = 0; w < 4; ++w) {
      double loss = 0.0;
      for (std::size_t i = w * 500; i < (w + 1) * 500; ++i) loss += c.loss[i] / 500.0;
      monotone = monotone && loss <= prev;
      prev = loss;
    }
    for (std::size_t i = 1500; i < 2000; ++i) {
      overlap += c.overlap[i] / 500.0;
      base += c.baseline_overlap[i] / 500.0;
    }
    const bool seed_ok = monotone && overlap - base >= kOverlapMargin;
    ok = ok && seed_ok;
    detail << (seed ? "; " : "") << "seed " << seed << (monotone ? " monotone" : " NOT monotone")
           << " overlap " << fmt(overlap) << " vs " << fmt(base);
  }
  const double secs = seconds_since(t0);
  detail << ", " << fmt(secs) << " s";
  return {ok && secs < 300.0, detail.str()};
}

Outcome cache_correctness() {
  std::mt19937_64 rng(505);
  std::size_t violations = 0;
  for (int seq = 0; seq < 1000; ++seq) {
    CacheConfig cfg;
    cfg.capacity = 2 + rng() % 30;
    cfg.sink_count = rng() % std::min<std::size_t>(4, cfg.capacity);
    cfg.heads = 1 + rng() % 2;
    cfg.head_dim = 1 + rng() % 3;
    KvCache leader(cfg), follower(cfg);
    std::vector<TokenId> cand_ids;
    std::vector<double> cand_scores;
    std::vector<bool> cand_pins;
    TokenId next = 0;
    const int steps = 1 + static_cast<int>(rng() % 10);
    for (int s = 0; s < steps; ++s) {
      const std::size_t c = 1 + rng() % (cfg.capacity - cfg.sink_count);
      const Tensor kv = random_tensor({c, cfg.heads, cfg.head_dim}, rng);
      std::vector<double> scores(c);
      for (double& x : scores) x = double(rng() % 5) / 5.0;
      for (std::size_t i = 0; i < c; ++i, ++next) {
        cand_ids.push_back(next);
        cand_scores.push_back(scores[i]);
        cand_pins.push_back(next < cfg.sink_count);
      }
      const EvictionReport r = leader.append_chunk(kv, kv, scores);
      follower.append_following(kv, kv, r);
      const std::set<TokenId> expect =
          testing::full_sort_retain(cand_ids, cand_scores, cand_pins, cfg.capacity);
      const std::vector<TokenId> got = leader.token_ids();
      if (std::set<TokenId>(got.begin(), got.end()) != expect) ++violations;
      if (leader.size() > cfg.capacity || follower.token_ids() != got ||
          leader.select().keys.dim(0) != got.size()) {
        ++violations;
      }
      for (TokenId p = 0; p < std::min<TokenId>(cfg.sink_count, next); ++p) {
        if (!expect.count(p)) ++violations;
      }
      std::vector<TokenId> ids2;
      std::vector<double> sc2;
      std::vector<bool> pin2;
      for (std::size_t i = 0; i < cand_ids.size(); ++i) {
        if (expect.count(cand_ids[i])) {
          ids2.push_back(cand_ids[i]);
          sc2.push_back(cand_scores[i]);
          pin2.push_back(cand_pins[i]);
        }
      }
      cand_ids = ids2;
      cand_scores = sc2;
      cand_pins = pin2;
    }
  }
  // Two full chunks concatenated, the top chunk-worth retained.
  const std::size_t chunk = 192;
  CacheConfig cfg;
  cfg.capacity = chunk;
  KvCache cache(cfg);
  std::vector<TokenId> ids;
  std::vector<double> all;
  for (int c = 0; c < 2; ++c) {
    const Tensor kv = random_tensor({chunk, 1, 1}, rng);
    const Tensor s = random_tensor({chunk}, rng, 0.0, 1.0);
    cache.append_chunk(kv, kv, s.data());
    for (double x : s.data()) {
      ids.push_back(ids.size());
      all.push_back(x);
    }
  }
  const std::vector<TokenId> got = cache.token_ids();
  const bool halved = cache.size() == chunk &&
                      std::set<TokenId>(got.begin(), got.end()) ==
                          testing::full_sort_retain(ids, all, std::vector<bool>(ids.size(), false), chunk);
  return {violations == 0 && halved,
          "1000 sequences, " + std::to_string(violations) + " violations; " +
              std::to_string(2 * chunk) + " -> " + std::to_string(cache.size()) +
              (halved ? " matches full sort" : " MISMATCH")};
}

Outcome policy_separation() {
  PlantedBenchmarkConfig cfg;
  cfg.model.heads = 4;
  cfg.model.head_dim = 8;
  cfg.model.frame_tokens = 8;
  cfg.model.chunk_frames = 3;
  cfg.cache.capacity = 72;
  cfg.cache.sink_count = 8;
  cfg.num_frames = 30;
  cfg.anchors_per_chunk = 4;
  cfg.anchor_gain = 4.0;
  cfg.policies = {EvictionPolicy::kSalience, EvictionPolicy::kFifo, EvictionPolicy::kRandom};
  std::size_t wins = 0;
  double sal_mass = 0.0, rnd_mass = 0.0, sal_recall = 0.0, fifo_recall = 0.0;
  const std::size_t seeds = 20;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    const auto r = planted_salience_benchmark(cfg, seed);
    if (r[0].anchor_recall > r[1].anchor_recall) ++wins;
    sal_recall += r[0].anchor_recall / seeds;
    fifo_recall += r[1].anchor_recall / seeds;
    sal_mass += r[0].mean_retained_mass / seeds;
    rnd_mass += r[2].mean_retained_mass / seeds;
  }
  return {wins == seeds && sal_mass >= rnd_mass,
          "salience beats fifo on " + std::to_string(wins) + "/" + std::to_string(seeds) +
              " seeds (recall " + fmt(sal_recall) + " vs " + fmt(fifo_recall) +
              "), retained mass " + fmt(sal_mass) + " vs random " + fmt(rnd_mass)};
}

Outcome block_local_histogram() {
  std::mt19937_64 rng(707);
  double worst_share = 1.0;
  bool totals = true;
  for (std::size_t L : {70u, 140u, 280u}) {
    for (std::size_t LB : {L / 14, L / 7}) {
      const std::size_t B = 2, N = 3;
      Tensor p({B, N, L, L});
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t i = 0; i < L; ++i) {
            const std::size_t lo = (i / LB) * LB;
            double z = 0.0;
            for (std::size_t j = 0; j < L; ++j) {
              // Small off-block leakage, heavy in-block mass.
              p(b, n, i, j) = (j >= lo && j < lo + LB) ? 1.0 + u(rng) : 0.2 * u(rng);
              z += p(b, n, i, j);
            }
            for (std::size_t j = 0; j < L; ++j) p(b, n, i, j) /= z;
          }
      const CountMatrix7x7 h = argmax_histogram(p);
      worst_share = std::min(worst_share, diagonal_share(h));
      totals = totals && histogram_total(h) == B * N * L;
    }
  }
  for (int t = 0; t < 20; ++t) {
    const std::size_t B = 1 + rng() % 3, N = 1 + rng() % 3, L = 7 + rng() % 40;
    totals = totals && histogram_total(argmax_histogram(
                           testing::random_attention(B, N, L, L, rng))) == B * N * L;
  }
  return {worst_share > 0.9 && totals,
          "min diagonal share " + fmt(worst_share) + (totals ? ", totals == B*N*L" : ", TOTAL MISMATCH")};
}

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun cli(const std::string& args) {
  const std::string cmd = std::string(SALKV_CLI_PATH) + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

Outcome streaming_memory_bound(const fs::path&) {
  bool ok = true;
  std::ostringstream detail;
  for (std::size_t L : {256u, 512u, 1024u}) {
    std::vector<std::size_t> stream_peaks;
    std::size_t dense_peak = 0;
    for (std::size_t chunk : {8u, 16u, 32u}) {
      const CliRun r = cli("bench --len " + std::to_string(L) + " --block-len " +
                           std::to_string(L / 4) + " --chunk-len " + std::to_string(chunk));
      if (r.code != 0) return {false, "bench exited with " + std::to_string(r.code)};
      const auto j = nlohmann::json::parse(r.out);
      const std::size_t sp = j["streaming_peak_row_elements"];
      dense_peak = j["dense_peak_row_elements"];
      ok = ok && sp == chunk * L && dense_peak == L * L && j["max_abs_diff"].get<double>() <= 1e-6;
      stream_peaks.push_back(sp);
    }
    ok = ok && stream_peaks[1] == 2 * stream_peaks[0] && stream_peaks[2] == 4 * stream_peaks[0];
    detail << (L == 256 ? "" : "; ") << "L=" << L << " dense " << dense_peak << " streaming "
           << stream_peaks[0] << "/" << stream_peaks[1] << "/" << stream_peaks[2];
  }
  return {ok, detail.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string slurp_dir(const fs::path& dir) {
  std::string all;
  std::set<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.insert(e.path());
  for (const auto& f : files) all += f.filename().string() + "\n" + slurp(f);
  return all;
}

Outcome cli_determinism(const fs::path& work) {
  std::mt19937_64 rng(909);
  write_tensor(work / "q.pfkv", random_tensor({1, 2, 24, 4}, rng));
  write_tensor(work / "k.pfkv", random_tensor({1, 2, 24, 4}, rng));
  write_tensor(work / "p.pfkv", testing::random_attention(1, 2, 21, 21, rng));
  write_tensor(work / "a.pfkv", random_tensor({30}, rng));
  write_tensor(work / "b.pfkv", random_tensor({30}, rng));
  std::ofstream(work / "desk.cfg") << "heads = 2\nhead_dim = 4\nframe_tokens = 4\nchunk_frames = 2\n"
                                      "capacity = 24\nsink_count = 4\nseh_hidden = 8\nseh_out = 4\n"
                                      "lr = 0.001\n";
  const std::string w = work.string() + "/";
  struct Case {
    std::string name;
    std::function<std::string(const std::string&)> args;
    std::function<std::string(const std::string&)> output;
  };
  auto file = [&](const std::string& suffix) {
    return [=](const std::string& tag) { return slurp(w + tag + suffix); };
  };
  const std::vector<Case> cases = {
      {"salience",
       [&](const std::string& t) { return "salience --q " + w + "q.pfkv --k " + w + "k.pfkv --block-len 8 --out " + w + t + "s.pfkv"; },
       file("s.pfkv")},
      {"salience-streaming",
       [&](const std::string& t) { return "salience --q " + w + "q.pfkv --k " + w + "k.pfkv --block-len 8 --chunk-len 5 --out " + w + t + "ss.pfkv"; },
       file("ss.pfkv")},
      {"simulate",
       [&](const std::string& t) { return "simulate --config " + w + "desk.cfg --policy random --frames 24 --seed 3 --out-trace " + w + t + "trace.jsonl"; },
       file("trace.jsonl")},
      {"train-seh",
       [&](const std::string& t) { return "train-seh --config " + w + "desk.cfg --steps 20 --out-ckpt " + w + t + "ckpt --out-curve " + w + t + "curve.csv"; },
       [&](const std::string& t) { return slurp(w + t + "curve.csv") + slurp_dir(w + t + "ckpt"); }},
      {"simulate-seh",
       [&](const std::string& t) { return "simulate --config " + w + "desk.cfg --policy salience --frames 16 --seh-ckpt " + w + "1ckpt --out-trace " + w + t + "seh.jsonl"; },
       file("seh.jsonl")},
      {"analyze-histogram",
       [&](const std::string& t) { return "analyze histogram --p " + w + "p.pfkv --out " + w + t + "h.csv"; },
       file("h.csv")},
      {"analyze-overlap",
       [&](const std::string&) { return "analyze overlap --a " + w + "a.pfkv --b " + w + "b.pfkv --k 10"; },
       [](const std::string&) { return std::string(); }},
      {"bench",
       [&](const std::string&) { return "bench --len 128 --block-len 32 --chunk-len 8 --seed 5"; },
       [](const std::string&) { return std::string(); }},
  };
  std::vector<std::string> bad;
  for (const Case& c : cases) {
    const CliRun r1 = cli(c.args("1"));
    const std::string o1 = c.output("1");
    const CliRun r2 = cli(c.args("2"));
    const std::string o2 = c.output("2");
    if (r1.code != 0 || r2.code != 0 || r1.out != r2.out || o1 != o2) bad.push_back(c.name);
  }
  std::string detail = std::to_string(cases.size() - bad.size()) + "/" +
                       std::to_string(cases.size()) + " commands byte-identical";
  for (const auto& b : bad) detail += ", differs: " + b;
  return {bad.empty(), detail};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "salkv_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"streaming salience equals dense", streaming_equivalence},
      {"fusion boundary cases", fusion_boundary_cases},
      {"SEH gradient check", seh_gradient_check},
      {"SEH learnability", seh_learnability},
      {"cache correctness", cache_correctness},
      {"planted-anchor policy separation", policy_separation},
      {"block-local argmax histogram", block_local_histogram},
      {"streaming memory bound", [&] { return streaming_memory_bound(work); }},
      {"CLI determinism", [&] { return cli_determinism(work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].name
              << ": " << o.detail << std::endl;
  }
  fs::remove_all(work);
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
