// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "salkv/kv_cache.hpp"
#include "salkv/tensor.hpp"

namespace salkv {

inline constexpr std::size_t kHistogramBins = 7;

/// counts[query_bin][key_bin].
using CountMatrix7x7 =
    std::array<std::array<std::uint64_t, kHistogramBins>, kHistogramBins>;

/// Bins (i, argmax_j p[b,n,i,j]) for every batch, head and query into a 7x7
/// grid with bin = floor(7 * idx / L). Ties go to the lowest key index.
CountMatrix7x7 argmax_histogram(const Tensor& p);

std::uint64_t histogram_total(const CountMatrix7x7& counts);
/// trace(counts) / total.
double diagonal_share(const CountMatrix7x7& counts);

/// Indices of the k largest scores, ties resolved toward the higher index
/// (the same recency rule the cache uses). Returned in ranking order.
std::vector<std::size_t> topk_indices(std::span<const double> scores,
                                      std::size_t k);

/// |topk(a) & topk(b)| / k.
double topk_overlap(std::span<const double> a, std::span<const double> b,
                    std::size_t k);

/// Fraction of the attention mass in p [B,N,Lq,Lk] that lands on keys whose
/// ids are in `retained`. `candidates[j]` is the id of key column j.
double retained_attention_mass(const Tensor& p,
                               std::span<const TokenId> candidates,
                               std::span<const TokenId> retained);

}  // namespace salkv
