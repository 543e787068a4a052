// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#include "salkv/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "salkv/errors.hpp"

namespace salkv {
namespace detail {

namespace {

template <typename Real>
void softmax_row_impl(std::span<const Real> query, const Real* keys,
                      std::size_t k_len, std::size_t d, std::span<Real> out) {
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
  Real row_max = -INFINITY;
  for (std::size_t j = 0; j < k_len; ++j) {
    const Real* key = keys + j * d;
    Real dot = 0;
    for (std::size_t e = 0; e < d; ++e) dot += query[e] * key[e];
    out[j] = dot * scale;
    row_max = std::max(row_max, out[j]);
  }
  Real sum = 0;
  for (std::size_t j = 0; j < k_len; ++j) {
    out[j] = std::exp(out[j] - row_max);
    sum += out[j];
  }
  for (std::size_t j = 0; j < k_len; ++j) out[j] /= sum;
}

}  // namespace

void softmax_attention_row(std::span<const double> query, const double* keys,
                           std::size_t k_len, std::size_t d,
                           std::span<double> out) {
  softmax_row_impl<double>(query, keys, k_len, d, out);
}

void softmax_attention_row(std::span<const float> query, const float* keys,
                           std::size_t k_len, std::size_t d,
                           std::span<float> out) {
  softmax_row_impl<float>(query, keys, k_len, d, out);
}

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw NumericError(std::string(what) + " contains non-finite values");
  }
}

}  // namespace detail

void AttentionBatch::validate() const {
  if (q.rank() != 4 || k.rank() != 4 || v.rank() != 4) {
    throw ShapeError("attention tensors must be rank 4 [B,N,L,D], got q" +
                     q.shape_string() + " k" + k.shape_string() + " v" +
                     v.shape_string());
  }
  if (q.dim(0) != k.dim(0) || q.dim(1) != k.dim(1) || q.dim(3) != k.dim(3)) {
    throw ShapeError("q" + q.shape_string() + " and k" + k.shape_string() +
                     " disagree on B, N or D");
  }
  if (v.shape() != k.shape()) {
    throw ShapeError("v" + v.shape_string() + " must match k" +
                     k.shape_string());
  }
  if (q.dim(3) == 0) throw ShapeError("head dimension must be >= 1");
  detail::check_finite(q, "q");
  detail::check_finite(k, "k");
  detail::check_finite(v, "v");
}

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  if (q.rank() != 4 || k.rank() != 4) {
    throw ShapeError("q and k must be rank 4 [B,N,L,D]");
  }
  if (q.dim(0) != k.dim(0) || q.dim(1) != k.dim(1) || q.dim(3) != k.dim(3)) {
    throw ShapeError("q" + q.shape_string() + " and k" + k.shape_string() +
                     " disagree on B, N or D");
  }
  if (q.dim(3) == 0) throw ShapeError("head dimension must be >= 1");
  detail::check_finite(q, "q");
  detail::check_finite(k, "k");

  const std::size_t bn = q.dim(0) * q.dim(1);
  const std::size_t lq = q.dim(2), lk = k.dim(2), d = q.dim(3);
  Tensor p({q.dim(0), q.dim(1), lq, lk});
  const double* qd = q.data().data();
  const double* kd = k.data().data();
  double* pd = p.data().data();
  for (std::size_t h = 0; h < bn; ++h) {
    for (std::size_t i = 0; i < lq; ++i) {
      detail::softmax_attention_row(
          std::span<const double>(qd + (h * lq + i) * d, d), kd + h * lk * d,
          lk, d, std::span<double>(pd + (h * lq + i) * lk, lk));
    }
  }
  return p;
}

Tensor attention_weights(const AttentionBatch& batch) {
  batch.validate();
  return attention_weights(batch.q, batch.k);
}

Tensor attention_output(const Tensor& p, const Tensor& v) {
  if (p.rank() != 4 || v.rank() != 4) {
    throw ShapeError("p and v must be rank 4");
  }
  if (p.dim(0) != v.dim(0) || p.dim(1) != v.dim(1) || p.dim(3) != v.dim(2)) {
    throw ShapeError("p" + p.shape_string() + " does not match v" +
                     v.shape_string());
  }
  const std::size_t bn = p.dim(0) * p.dim(1);
  const std::size_t lq = p.dim(2), lk = p.dim(3), d = v.dim(3);
  Tensor out({p.dim(0), p.dim(1), lq, d});
  const double* pd = p.data().data();
  const double* vd = v.data().data();
  double* od = out.data().data();
  for (std::size_t h = 0; h < bn; ++h) {
    for (std::size_t i = 0; i < lq; ++i) {
      double* row = od + (h * lq + i) * d;
      const double* prow = pd + (h * lq + i) * lk;
      for (std::size_t j = 0; j < lk; ++j) {
        const double w = prow[j];
        const double* vrow = vd + (h * lk + j) * d;
        for (std::size_t e = 0; e < d; ++e) row[e] += w * vrow[e];
      }
    }
  }
  return out;
}

}  // namespace salkv
