// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "salkv/tensor_io.hpp"
#include "test_util.hpp"

namespace salkv {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("salkv_cli_" + std::string(::testing::UnitTest::GetInstance()
                                           ->current_test_info()
                                           ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "desk.cfg") << "heads = 2\nhead_dim = 4\nframe_tokens = 4\n"
                                        "chunk_frames = 2\ncapacity = 24\nsink_count = 4\n"
                                        "seh_hidden = 8\nseh_out = 4\nlr = 0.001\n";
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) {
    const std::string cmd = std::string(SALKV_CLI_PATH) + " " + args + " > " +
                            (dir_ / "stdout").string() + " 2> " +
                            (dir_ / "stderr").string();
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(dir_ / "stdout");
    r.err = slurp(dir_ / "stderr");
    return r;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(CliTest, SalienceOfZeroKeysIsUniform) {
  std::mt19937_64 rng(1);
  write_tensor(path("q.pfkv"), testing::random_tensor({1, 2, 12, 4}, rng));
  write_tensor(path("k.pfkv"), Tensor({1, 2, 12, 4}));
  for (const std::string extra : {"", " --chunk-len 5"}) {
    const Result r = run("salience --q " + path("q.pfkv") + " --k " + path("k.pfkv") +
                         " --block-len 4 --out " + path("s.pfkv") + extra);
    ASSERT_EQ(r.code, 0) << r.err;
    const Tensor s = read_tensor(path("s.pfkv"));
    ASSERT_EQ(s.shape(), (std::vector<std::size_t>{1, 12}));
    for (double x : s.data()) EXPECT_NEAR(x, 1.0 / 12, 1e-7);
  }
}

TEST_F(CliTest, OverlapOfIdenticalVectorsPrintsOne) {
  write_tensor(path("x.pfkv"), Tensor({6}, std::vector<double>{3, 1, 4, 1, 5, 9}));
  const Result r = run("analyze overlap --a " + path("x.pfkv") + " --b " +
                       path("x.pfkv") + " --k 5");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "1.0\n");
}

TEST_F(CliTest, HistogramWritesCsv) {
  Tensor eye({1, 1, 14, 14});
  for (std::size_t i = 0; i < 14; ++i) eye(0, 0, i, i) = 1.0;
  write_tensor(path("p.pfkv"), eye);
  const Result r = run("analyze histogram --p " + path("p.pfkv") + " --out " + path("h.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "{\"total\":14,\"diagonal_share\":1.0}\n");
  const std::string csv = slurp(path("h.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "query_bin,key_0,key_1,key_2,key_3,key_4,key_5,key_6");
  EXPECT_NE(csv.find("\n3,0,0,0,2,0,0,0\n"), std::string::npos);
}

TEST_F(CliTest, SimulateIsByteIdenticalAcrossRuns) {
  const std::string base = "simulate --config " + path("desk.cfg") + " --policy random --frames 20 --seed 7 --out-trace ";
  const Result a = run(base + path("a.jsonl"));
  const Result b = run(base + path("b.jsonl"));
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(slurp(path("a.jsonl")), slurp(path("b.jsonl")));
  const Result c = run("simulate --config " + path("desk.cfg") +
                       " --policy random --frames 20 --seed 8 --out-trace " + path("c.jsonl"));
  EXPECT_NE(slurp(path("a.jsonl")), slurp(path("c.jsonl")));
}

TEST_F(CliTest, TrainThenSimulateWithCheckpoint) {
  const Result t = run("train-seh --config " + path("desk.cfg") + " --steps 3 --out-ckpt " +
                       path("ckpt") + " --out-curve " + path("curve.csv"));
  ASSERT_EQ(t.code, 0) << t.err;
  const std::string csv = slurp(path("curve.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,loss,overlap,baseline_overlap");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const Result s = run("simulate --config " + path("desk.cfg") + " --policy salience --frames 8 --seh-ckpt " +
                       path("ckpt") + " --out-trace " + path("t.jsonl"));
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_NE(s.out.find("\"score_source\":\"seh\""), std::string::npos);
}

TEST_F(CliTest, BenchReportsWorkingSets) {
  const Result r = run("bench --len 64 --block-len 16 --chunk-len 4");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\"dense_peak_row_elements\":4096"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("\"streaming_peak_row_elements\":256"), std::string::npos) << r.out;
}

TEST_F(CliTest, ExitCodes) {
  Result r = run("simulate --config " + path("desk.cfg") +
                 " --policy lru --frames 4 --out-trace " + path("t.jsonl"));
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: usage: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

  EXPECT_EQ(run("bench --len 8 --block-len 4 --chunk-len 2 --no-such-flag").code, 2);
  EXPECT_EQ(run("").code, 2);

  std::ofstream(path("bad.cfg")) << "capacity = 8\n";
  r = run("simulate --config " + path("bad.cfg") + " --policy fifo --frames 4 --out-trace " +
          path("t.jsonl"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("capacity 8 is below the chunk size"), std::string::npos) << r.err;

  Tensor q({1, 1, 4, 2});
  q(0, 0, 1, 0) = std::nan("");
  write_tensor(path("q.pfkv"), q);
  r = run("salience --q " + path("q.pfkv") + " --k " + path("q.pfkv") +
          " --block-len 2 --out " + path("s.pfkv"));
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(r.err.rfind("error: numeric: ", 0), 0u) << r.err;

  std::ofstream(path("junk.pfkv")) << "nope";
  r = run("analyze overlap --a " + path("junk.pfkv") + " --b " + path("junk.pfkv") + " --k 1");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: format: ", 0), 0u) << r.err;
}

}  // namespace
}  // namespace salkv
