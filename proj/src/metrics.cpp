// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#include "salkv/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <unordered_set>

#include "salkv/errors.hpp"

namespace salkv {

CountMatrix7x7 argmax_histogram(const Tensor& p) {
  if (p.rank() != 4 || p.dim(2) != p.dim(3)) {
    throw ShapeError("argmax_histogram needs square attention [B,N,L,L], got " +
                     p.shape_string());
  }
  const std::size_t len = p.dim(3);
  if (len < kHistogramBins) {
    throw ArgumentError("argmax_histogram needs L >= 7, got " +
                        std::to_string(len));
  }
  CountMatrix7x7 counts{};
  const std::size_t rows = p.dim(0) * p.dim(1) * len;
  const double* pd = p.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = pd + r * len;
    const std::size_t j = static_cast<std::size_t>(
        std::max_element(row, row + len) - row);  // first maximum
    const std::size_t i = r % len;
    counts[kHistogramBins * i / len][kHistogramBins * j / len] += 1;
  }
  return counts;
}

std::uint64_t histogram_total(const CountMatrix7x7& counts) {
  std::uint64_t total = 0;
  for (const auto& row : counts) {
    for (std::uint64_t c : row) total += c;
  }
  return total;
}

double diagonal_share(const CountMatrix7x7& counts) {
  const std::uint64_t total = histogram_total(counts);
  if (total == 0) return 0.0;
  std::uint64_t diag = 0;
  for (std::size_t i = 0; i < kHistogramBins; ++i) diag += counts[i][i];
  return static_cast<double>(diag) / static_cast<double>(total);
}

std::vector<std::size_t> topk_indices(std::span<const double> scores,
                                      std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw ArgumentError("k=" + std::to_string(k) + " out of range [1, " +
                        std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                    idx.end(), [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a > b;
                    });
  idx.resize(k);
  return idx;
}

double topk_overlap(std::span<const double> a, std::span<const double> b,
                    std::size_t k) {
  if (a.size() != b.size()) {
    throw ShapeError("topk_overlap needs equal lengths, got " +
                     std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  std::vector<std::size_t> ta = topk_indices(a, k);
  std::vector<std::size_t> tb = topk_indices(b, k);
  std::sort(ta.begin(), ta.end());
  std::sort(tb.begin(), tb.end());
  std::vector<std::size_t> common;
  std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(),
                        std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(k);
}

double retained_attention_mass(const Tensor& p,
                               std::span<const TokenId> candidates,
                               std::span<const TokenId> retained) {
  if (p.rank() != 4) {
    throw ShapeError("attention must be [B,N,Lq,Lk], got " + p.shape_string());
  }
  const std::size_t lk = p.dim(3);
  if (candidates.size() != lk) {
    throw ArgumentError(std::to_string(candidates.size()) +
                        " candidate ids for " + std::to_string(lk) +
                        " key columns");
  }
  const std::unordered_set<TokenId> cand_set(candidates.begin(),
                                             candidates.end());
  if (cand_set.size() != candidates.size()) {
    throw ArgumentError("duplicate candidate ids");
  }
  std::unordered_set<TokenId> keep;
  for (TokenId id : retained) {
    if (!cand_set.count(id)) {
      throw ArgumentError("retained id " + std::to_string(id) +
                          " is not a candidate");
    }
    keep.insert(id);
  }
  std::vector<bool> mask(lk);
  for (std::size_t j = 0; j < lk; ++j) mask[j] = keep.count(candidates[j]) > 0;

  double kept = 0.0, total = 0.0;
  const std::size_t rows = p.size() / std::max<std::size_t>(lk, 1);
  const double* pd = p.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < lk; ++j) {
      const double x = pd[r * lk + j];
      total += x;
      if (mask[j]) kept += x;
    }
  }
  return total > 0.0 ? kept / total : 0.0;
}

}  // namespace salkv
