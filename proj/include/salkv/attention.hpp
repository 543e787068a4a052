// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

#include "salkv/tensor.hpp"

namespace salkv {

/// Q [B,N,Lq,D], K and V [B,N,Lk,D]. Q may be shorter or longer than K/V.
struct AttentionBatch {
  Tensor q;
  Tensor k;
  Tensor v;

  std::size_t batch() const { return q.dim(0); }
  std::size_t heads() const { return q.dim(1); }
  std::size_t q_len() const { return q.dim(2); }
  std::size_t k_len() const { return k.dim(2); }
  std::size_t head_dim() const { return q.dim(3); }

  /// Throws ShapeError on inconsistent dims, NumericError on NaN/Inf.
  void validate() const;
};

/// softmax(Q K^T / sqrt(D)) per batch and head, shape [B,N,Lq,Lk].
Tensor attention_weights(const Tensor& q, const Tensor& k);
Tensor attention_weights(const AttentionBatch& batch);

/// out[b,n,i,:] = sum_j p[b,n,i,j] * v[b,n,j,:], shape [B,N,Lq,D].
Tensor attention_output(const Tensor& p, const Tensor& v);

namespace detail {

/// One attention row: logits of `query` against `keys` rows (row-major
/// [k_len, d]), scaled by 1/sqrt(d), max-subtracted softmax written to `out`.
/// Shared by the dense and streaming salience paths so both produce the same
/// bits for the same row.
void softmax_attention_row(std::span<const double> query, const double* keys,
                           std::size_t k_len, std::size_t d,
                           std::span<double> out);

void softmax_attention_row(std::span<const float> query, const float* keys,
                           std::size_t k_len, std::size_t d,
                           std::span<float> out);

void check_finite(const Tensor& t, const char* what);

}  // namespace detail
}  // namespace salkv
