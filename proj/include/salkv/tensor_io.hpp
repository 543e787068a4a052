// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "salkv/kv_cache.hpp"
#include "salkv/seh.hpp"
#include "salkv/tensor.hpp"

namespace salkv {

// Tensor file layout, all integers little-endian uint32:
//   "PFKV" | version (=1) | ndim | dims[ndim] | float32 payload, row-major.
inline constexpr char kTensorMagic[4] = {'P', 'F', 'K', 'V'};
inline constexpr std::uint32_t kTensorVersion = 1;

/// Serializes to the file layout. Values are rounded to float32 (nearest-even).
std::string encode_tensor(const Tensor& t);
/// Throws FormatError naming the byte offset of the first problem.
Tensor decode_tensor(std::string_view bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

/// Checkpoint directory: w1/b1/w2/b2 tensor files plus meta.json with
/// d_in, d_hidden, d_out and seed.
void save_seh_checkpoint(const std::filesystem::path& dir,
                         const SehParams& params, std::uint64_t seed);
SehParams load_seh_checkpoint(const std::filesystem::path& dir);

/// Snapshot directory: keys/values [M,N,D] tensor files plus cache.json with
/// token ids, scores, pins, policy and the cache configuration.
void save_cache_snapshot(const std::filesystem::path& dir, const KvCache& cache);
KvCache load_cache_snapshot(const std::filesystem::path& dir);

}  // namespace salkv
