// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#include "salkv/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <sstream>

#include "salkv/errors.hpp"

namespace salkv {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view s) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError("invalid number '" + std::string(s) + "'");
  }
  return v;
}

std::vector<double> parse_list(std::string_view s) {
  std::vector<double> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    out.push_back(parse_number<double>(trim(s.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

std::string_view to_string(ScoreSource source) {
  return source == ScoreSource::kOracle ? "oracle" : "seh";
}

std::string_view to_string(HeadAggregation agg) {
  return agg == HeadAggregation::kMaxThenMean ? "max-then-mean" : "mean-then-max";
}

HeadAggregation parse_head_aggregation(std::string_view name) {
  if (name == "max-then-mean") return HeadAggregation::kMaxThenMean;
  if (name == "mean-then-max") return HeadAggregation::kMeanThenMax;
  throw ArgumentError("unknown head aggregation '" + std::string(name) + "'");
}

ToyModelConfig RunConfig::model_config() const {
  ToyModelConfig m;
  m.heads = heads;
  m.head_dim = head_dim;
  m.layers = layers;
  m.frame_tokens = frame_tokens;
  m.chunk_frames = chunk_frames;
  m.beacon_weight = beacon_weight;
  m.seed = seed;
  return m;
}

CacheConfig RunConfig::cache_config() const {
  CacheConfig c;
  c.capacity = capacity;
  c.sink_count = sink_count;
  c.heads = heads;
  c.head_dim = head_dim;
  c.policy = policy;
  c.order = eviction_order;
  c.seed = seed;
  return c;
}

DenoiseSchedule RunConfig::schedule() const { return DenoiseSchedule{timesteps}; }

SehDims RunConfig::seh_dims() const {
  return {3 * heads * head_dim, seh_hidden, seh_out};
}

void RunConfig::validate() const {
  model_config().validate();
  schedule().validate();
  if (block_len && *block_len < 1) throw ConfigError("block_len must be >= 1");
  if (capacity < chunk_tokens()) {
    throw ConfigError("capacity " + std::to_string(capacity) +
                      " is below the chunk size of " +
                      std::to_string(chunk_tokens()) + " tokens");
  }
  if (chunk_tokens() > capacity - std::min(capacity, sink_count)) {
    throw ConfigError("capacity " + std::to_string(capacity) + " minus sink_count " +
                      std::to_string(sink_count) + " cannot hold a chunk of " +
                      std::to_string(chunk_tokens()) + " tokens");
  }
  cache_config().validate();
  if (seh_hidden == 0 || seh_out == 0) throw ConfigError("SEH dims must be >= 1");
  if (!(smooth_l1_beta > 0.0)) throw ConfigError("smooth_l1_beta must be > 0");
  if (train_frames == 0) throw ConfigError("train_frames must be >= 1");
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  using Setter = std::function<void(std::string_view)>;
  auto size = [](std::size_t& f) { return Setter([&f](auto v) { f = parse_number<std::size_t>(v); }); };
  auto real = [](double& f) { return Setter([&f](auto v) { f = parse_number<double>(v); }); };
  const std::map<std::string, Setter, std::less<>> setters{
      {"seed", [&](auto v) { cfg.seed = parse_number<std::uint64_t>(v); }},
      {"heads", size(cfg.heads)},
      {"head_dim", size(cfg.head_dim)},
      {"layers", size(cfg.layers)},
      {"frame_tokens", size(cfg.frame_tokens)},
      {"chunk_frames", size(cfg.chunk_frames)},
      {"capacity", size(cfg.capacity)},
      {"block_len", [&](auto v) { cfg.block_len = parse_number<std::size_t>(v); }},
      {"policy", [&](auto v) { cfg.policy = parse_policy(v); }},
      {"eviction_order", [&](auto v) { cfg.eviction_order = parse_eviction_order(v); }},
      {"sink_count", size(cfg.sink_count)},
      {"timesteps", [&](auto v) { cfg.timesteps = parse_list(v); }},
      {"score_source",
       [&](auto v) {
         if (v == "oracle") cfg.score_source = ScoreSource::kOracle;
         else if (v == "seh") cfg.score_source = ScoreSource::kSeh;
         else throw ConfigError("unknown score_source '" + std::string(v) + "'");
       }},
      {"head_aggregation", [&](auto v) { cfg.head_aggregation = parse_head_aggregation(v); }},
      {"beacon_weight", real(cfg.beacon_weight)},
      {"seh_hidden", size(cfg.seh_hidden)},
      {"seh_out", size(cfg.seh_out)},
      {"lr", real(cfg.optimizer.lr)},
      {"beta1", real(cfg.optimizer.beta1)},
      {"beta2", real(cfg.optimizer.beta2)},
      {"weight_decay", real(cfg.optimizer.weight_decay)},
      {"eps", real(cfg.optimizer.eps)},
      {"smooth_l1_beta", real(cfg.smooth_l1_beta)},
      {"train_frames", size(cfg.train_frames)},
  };

  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" +
                        std::string(key) + "'");
    }
    try {
      it->second(value);
    } catch (const Error& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  const std::string text{std::istreambuf_iterator<char>(in),
                         std::istreambuf_iterator<char>()};
  try {
    return parse_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace salkv
