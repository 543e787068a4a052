// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>

#include "salkv/attention.hpp"
#include "salkv/tensor.hpp"

namespace salkv {

struct SehDims {
  std::size_t d_in = 0;  // 3 * N * D
  std::size_t d_hidden = 0;
  std::size_t d_out = 12;

  friend bool operator==(const SehDims&, const SehDims&) = default;
};

/// Two-layer MLP with SiLU between the layers. Row-vector convention:
/// hidden = SiLU(x w1 + b1), out = hidden w2 + b2. The score of a token is the
/// mean of its d_out outputs.
struct SehParams {
  Tensor w1;  // [d_in, d_hidden]
  Tensor b1;  // [d_hidden]
  Tensor w2;  // [d_hidden, d_out]
  Tensor b2;  // [d_out]

  static SehParams zeros(const SehDims& dims);
  /// Uniform in +-1/sqrt(fan_in) per layer; biases likewise.
  static SehParams init(const SehDims& dims, std::uint64_t seed);

  SehDims dims() const { return {w1.dim(0), w1.dim(1), w2.dim(1)}; }
  void validate() const;

  friend bool operator==(const SehParams&, const SehParams&) = default;
};

/// Per-token features [B, L, 3*N*D]: heads merged into the feature axis
/// (offset n*D + d) for each of q, k, v, concatenated in that order.
Tensor seh_features(const AttentionBatch& batch);

/// Scores [B, L] from precomputed features [B, L, d_in].
Tensor seh_forward_features(const Tensor& features, const SehParams& params);
Tensor seh_forward(const AttentionBatch& batch, const SehParams& params);

/// Mean over all elements of SmoothL1(pred - target) with threshold beta.
double smooth_l1(const Tensor& pred, const Tensor& target, double beta = 1.0);

/// Analytic gradient of smooth_l1(seh_forward(batch, params), target, beta)
/// with respect to every parameter, returned in a SehParams-shaped struct.
SehParams seh_backward_features(const Tensor& features,
                                const SehParams& params, const Tensor& target,
                                double beta = 1.0);
SehParams seh_backward(const AttentionBatch& batch, const SehParams& params,
                       const Tensor& target, double beta = 1.0);

/// Decoupled weight decay adaptive optimizer settings.
struct AdamWConfig {
  double lr = 1e-5;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamWConfig config;
  std::uint64_t step = 0;
  SehParams m;  // first moments
  SehParams v;  // second moments

  static OptimizerState for_params(const SehParams& params,
                                   const AdamWConfig& config);
};

/// One update; returns the loss measured before the update.
double seh_train_step_features(SehParams& params, OptimizerState& opt,
                               const Tensor& features, const Tensor& target,
                               double beta = 1.0);
double seh_train_step(SehParams& params, OptimizerState& opt,
                      const AttentionBatch& batch, const Tensor& target,
                      double beta = 1.0);

}  // namespace salkv
