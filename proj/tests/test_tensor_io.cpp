// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#include "salkv/tensor_io.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "salkv/config.hpp"
#include "salkv/errors.hpp"
#include "test_util.hpp"

namespace salkv {
namespace {

std::uint32_t u32_at(const std::string& s, std::size_t off) {
  return std::uint32_t(std::uint8_t(s[off])) | std::uint32_t(std::uint8_t(s[off + 1])) << 8 |
         std::uint32_t(std::uint8_t(s[off + 2])) << 16 |
         std::uint32_t(std::uint8_t(s[off + 3])) << 24;
}

float f32_at(const std::string& s, std::size_t off) {
  const std::uint32_t bits = u32_at(s, off);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

TEST(TensorFormat, ScalarLayout) {
  const std::string bytes = encode_tensor(Tensor({}, std::vector<double>{3.5}));
  ASSERT_EQ(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 4), "PFKV");
  EXPECT_EQ(u32_at(bytes, 4), 1u);
  EXPECT_EQ(u32_at(bytes, 8), 0u);
  EXPECT_EQ(u32_at(bytes, 12), 0x40600000u);
  EXPECT_EQ(decode_tensor(bytes).values(), std::vector<double>{3.5});
}

TEST(TensorFormat, MatrixLayout) {
  const Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const std::string bytes = encode_tensor(t);
  ASSERT_EQ(bytes.size(), 12u + 8u + 24u);
  EXPECT_EQ(u32_at(bytes, 8), 2u);
  EXPECT_EQ(u32_at(bytes, 12), 2u);
  EXPECT_EQ(u32_at(bytes, 16), 3u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(f32_at(bytes, 20 + 4 * i), float(i + 1));
}

TEST(TensorFormat, RandomRoundTripIsBitwise) {
  std::mt19937_64 rng(1);
  Tensor t = testing::random_tensor({4, 4, 8, 8}, rng, -100.0, 100.0);
  for (double& x : t.data()) x = double(float(x));
  const auto path = std::filesystem::temp_directory_path() / "salkv_roundtrip.pfkv";
  write_tensor(path, t);
  EXPECT_EQ(read_tensor(path), t);
  EXPECT_EQ(encode_tensor(read_tensor(path)), encode_tensor(t));
  std::filesystem::remove(path);
}

TEST(TensorFormat, RejectsMalformedInput) {
  const std::string good = encode_tensor(Tensor({2}, std::vector<double>{1, 2}));
  auto expect_offset = [](const std::string& bytes, const std::string& needle) {
    try {
      decode_tensor(bytes);
      ADD_FAILURE() << "no error";
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  std::string bad = good;
  bad[0] = 'X';
  expect_offset(bad, "byte 0");
  bad = good;
  bad[4] = 2;
  expect_offset(bad, "byte 4");
  expect_offset(good.substr(0, good.size() - 1), "byte");
  expect_offset(good + "x", "byte");
  expect_offset("PF", "byte");
  EXPECT_THROW(read_tensor("/nonexistent/x.pfkv"), Error);
}

TEST(SehCheckpoint, RoundTrip) {
  SehParams p = SehParams::init({12, 5, 3}, 4);
  for (Tensor* t : {&p.w1, &p.b1, &p.w2, &p.b2})
    for (double& x : t->data()) x = double(float(x));
  const auto dir = std::filesystem::temp_directory_path() / "salkv_ckpt_test";
  std::filesystem::remove_all(dir);
  save_seh_checkpoint(dir, p, 4);
  EXPECT_EQ(load_seh_checkpoint(dir), p);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_seh_checkpoint(dir), Error);
}

TEST(RunConfigParse, DefaultsAndOverrides) {
  const RunConfig def = parse_config("");
  EXPECT_EQ(def.chunk_tokens(), 192u);
  EXPECT_EQ(def.capacity, 576u);
  EXPECT_EQ(def.resolved_block_len(), 192u);
  EXPECT_NO_THROW(def.validate());

  const RunConfig c = parse_config(
      "# desk run\n"
      "frame_tokens = 8\n"
      "capacity = 48  \n"
      "sink_count=8\n"
      "policy = fifo\n"
      "timesteps = 1, 0.5, 0.25\n"
      "lr = 0.001\n"
      "eviction_order = evict-then-append\n");
  EXPECT_EQ(c.frame_tokens, 8u);
  EXPECT_EQ(c.capacity, 48u);
  EXPECT_EQ(c.policy, EvictionPolicy::kFifo);
  EXPECT_EQ(c.timesteps, (std::vector<double>{1.0, 0.5, 0.25}));
  EXPECT_EQ(c.optimizer.lr, 0.001);
  EXPECT_EQ(c.eviction_order, EvictionOrder::kEvictThenAppend);
  EXPECT_EQ(c.cache_config().capacity, 48u);
}

TEST(RunConfigParse, Errors) {
  try {
    parse_config("heads = 2\nbogus = 1\n");
    ADD_FAILURE();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_config("heads = two"), ConfigError);
  EXPECT_THROW(parse_config("heads"), ConfigError);
  EXPECT_THROW(parse_config("policy = lru"), ConfigError);
  EXPECT_THROW(parse_config("capacity = 100"), ConfigError);
}

}  // namespace
}  // namespace salkv
