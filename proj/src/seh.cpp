// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#include "salkv/seh.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "salkv/errors.hpp"

namespace salkv {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu(double x) { return x * sigmoid(x); }
double silu_grad(double x) {
  const double s = sigmoid(x);
  return s + x * s * (1.0 - s);
}

void check_features(const Tensor& features, const SehParams& params) {
  params.validate();
  if (features.rank() != 3) {
    throw ShapeError("features must be [B,L,d_in], got " +
                     features.shape_string());
  }
  if (features.dim(2) != params.w1.dim(0)) {
    throw ShapeError("feature width " + std::to_string(features.dim(2)) +
                     " does not match d_in " +
                     std::to_string(params.w1.dim(0)));
  }
}

// Hidden pre-activations [tokens, d_hidden] and channel-mean outputs.
struct ForwardCache {
  std::vector<double> pre;
  std::vector<double> hidden;
  std::vector<double> scores;
};

ForwardCache forward_pass(const Tensor& features, const SehParams& p) {
  const std::size_t tokens = features.dim(0) * features.dim(1);
  const SehDims dims = p.dims();
  ForwardCache fc;
  fc.pre.assign(tokens * dims.d_hidden, 0.0);
  fc.hidden.assign(tokens * dims.d_hidden, 0.0);
  fc.scores.assign(tokens, 0.0);
  const double* x = features.data().data();
  const double* w1 = p.w1.data().data();
  const double* w2 = p.w2.data().data();
  std::vector<double> out(dims.d_out);
  for (std::size_t t = 0; t < tokens; ++t) {
    double* a = fc.pre.data() + t * dims.d_hidden;
    for (std::size_t h = 0; h < dims.d_hidden; ++h) a[h] = p.b1(h);
    const double* xt = x + t * dims.d_in;
    for (std::size_t i = 0; i < dims.d_in; ++i) {
      const double xi = xt[i];
      const double* w1row = w1 + i * dims.d_hidden;
      for (std::size_t h = 0; h < dims.d_hidden; ++h) a[h] += xi * w1row[h];
    }
    double* hid = fc.hidden.data() + t * dims.d_hidden;
    for (std::size_t h = 0; h < dims.d_hidden; ++h) hid[h] = silu(a[h]);
    for (std::size_t c = 0; c < dims.d_out; ++c) out[c] = p.b2(c);
    for (std::size_t h = 0; h < dims.d_hidden; ++h) {
      const double* w2row = w2 + h * dims.d_out;
      for (std::size_t c = 0; c < dims.d_out; ++c) out[c] += hid[h] * w2row[c];
    }
    double sum = 0.0;
    for (double o : out) sum += o;
    fc.scores[t] = sum / static_cast<double>(dims.d_out);
  }
  return fc;
}

void check_target(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("prediction " + pred.shape_string() +
                     " and target " + target.shape_string() + " differ");
  }
}

}  // namespace

SehParams SehParams::zeros(const SehDims& dims) {
  return {Tensor({dims.d_in, dims.d_hidden}), Tensor({dims.d_hidden}),
          Tensor({dims.d_hidden, dims.d_out}), Tensor({dims.d_out})};
}

SehParams SehParams::init(const SehDims& dims, std::uint64_t seed) {
  SehParams p = zeros(dims);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Tensor& t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : t.data()) x = dist(rng);
  };
  fill(p.w1, dims.d_in);
  fill(p.b1, dims.d_in);
  fill(p.w2, dims.d_hidden);
  fill(p.b2, dims.d_hidden);
  return p;
}

void SehParams::validate() const {
  if (w1.rank() != 2 || b1.rank() != 1 || w2.rank() != 2 || b2.rank() != 1 ||
      b1.dim(0) != w1.dim(1) || w2.dim(0) != w1.dim(1) ||
      b2.dim(0) != w2.dim(1)) {
    throw ShapeError("inconsistent SEH parameter shapes: w1" +
                     w1.shape_string() + " b1" + b1.shape_string() + " w2" +
                     w2.shape_string() + " b2" + b2.shape_string());
  }
  if (w1.dim(0) == 0 || w1.dim(1) == 0 || w2.dim(1) == 0) {
    throw ShapeError("SEH dimensions must be non-zero");
  }
  for (const Tensor* t : {&w1, &b1, &w2, &b2}) {
    detail::check_finite(*t, "SEH parameter");
  }
}

Tensor seh_features(const AttentionBatch& batch) {
  batch.validate();
  if (batch.q_len() != batch.k_len()) {
    throw ShapeError("seh_features needs q, k, v of equal length");
  }
  const std::size_t bsz = batch.batch(), heads = batch.heads(),
                    len = batch.q_len(), d = batch.head_dim();
  const std::size_t merged = heads * d;
  Tensor f({bsz, len, 3 * merged});
  const Tensor* parts[3] = {&batch.q, &batch.k, &batch.v};
  for (std::size_t part = 0; part < 3; ++part) {
    const Tensor& src = *parts[part];
    for (std::size_t b = 0; b < bsz; ++b) {
      for (std::size_t n = 0; n < heads; ++n) {
        for (std::size_t t = 0; t < len; ++t) {
          for (std::size_t e = 0; e < d; ++e) {
            f(b, t, part * merged + n * d + e) = src(b, n, t, e);
          }
        }
      }
    }
  }
  return f;
}

Tensor seh_forward_features(const Tensor& features, const SehParams& params) {
  check_features(features, params);
  ForwardCache fc = forward_pass(features, params);
  return Tensor({features.dim(0), features.dim(1)}, std::move(fc.scores));
}

Tensor seh_forward(const AttentionBatch& batch, const SehParams& params) {
  return seh_forward_features(seh_features(batch), params);
}

double smooth_l1(const Tensor& pred, const Tensor& target, double beta) {
  check_target(pred, target);
  if (!(beta > 0.0)) throw ArgumentError("SmoothL1 beta must be > 0");
  if (pred.size() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = std::abs(pred.values()[i] - target.values()[i]);
    sum += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  return sum / static_cast<double>(pred.size());
}

SehParams seh_backward_features(const Tensor& features,
                                const SehParams& params, const Tensor& target,
                                double beta) {
  check_features(features, params);
  if (!(beta > 0.0)) throw ArgumentError("SmoothL1 beta must be > 0");
  const SehDims dims = params.dims();
  const std::size_t tokens = features.dim(0) * features.dim(1);
  if (target.rank() != 2 || target.dim(0) != features.dim(0) ||
      target.dim(1) != features.dim(1)) {
    throw ShapeError("target " + target.shape_string() +
                     " does not match features " + features.shape_string());
  }
  const ForwardCache fc = forward_pass(features, params);
  SehParams g = SehParams::zeros(dims);
  const double* x = features.data().data();
  const double* w2 = params.w2.data().data();
  double* gw1 = g.w1.data().data();
  double* gw2 = g.w2.data().data();
  std::vector<double> da(dims.d_hidden);
  const double per_token = 1.0 / static_cast<double>(tokens);
  const double per_channel = 1.0 / static_cast<double>(dims.d_out);

  for (std::size_t t = 0; t < tokens; ++t) {
    const double diff = fc.scores[t] - target.values()[t];
    const double dloss = std::abs(diff) < beta ? diff / beta
                         : diff > 0           ? 1.0
                                              : -1.0;
    // Gradient reaching each output channel.
    const double dout = dloss * per_token * per_channel;
    if (dout == 0.0) continue;
    const double* hid = fc.hidden.data() + t * dims.d_hidden;
    const double* pre = fc.pre.data() + t * dims.d_hidden;
    for (std::size_t c = 0; c < dims.d_out; ++c) g.b2(c) += dout;
    for (std::size_t h = 0; h < dims.d_hidden; ++h) {
      double* gw2row = gw2 + h * dims.d_out;
      const double* w2row = w2 + h * dims.d_out;
      double dh = 0.0;
      for (std::size_t c = 0; c < dims.d_out; ++c) {
        gw2row[c] += hid[h] * dout;
        dh += w2row[c] * dout;
      }
      da[h] = dh * silu_grad(pre[h]);
      g.b1(h) += da[h];
    }
    const double* xt = x + t * dims.d_in;
    for (std::size_t i = 0; i < dims.d_in; ++i) {
      double* gw1row = gw1 + i * dims.d_hidden;
      for (std::size_t h = 0; h < dims.d_hidden; ++h) gw1row[h] += xt[i] * da[h];
    }
  }
  return g;
}

SehParams seh_backward(const AttentionBatch& batch, const SehParams& params,
                       const Tensor& target, double beta) {
  return seh_backward_features(seh_features(batch), params, target, beta);
}

OptimizerState OptimizerState::for_params(const SehParams& params,
                                          const AdamWConfig& config) {
  params.validate();
  return {config, 0, SehParams::zeros(params.dims()),
          SehParams::zeros(params.dims())};
}

double seh_train_step_features(SehParams& params, OptimizerState& opt,
                               const Tensor& features, const Tensor& target,
                               double beta) {
  if (opt.m.dims() != params.dims() || opt.v.dims() != params.dims()) {
    throw ShapeError("optimizer moments do not match parameter shapes");
  }
  const double loss =
      smooth_l1(seh_forward_features(features, params), target, beta);
  const SehParams grad = seh_backward_features(features, params, target, beta);

  const AdamWConfig& c = opt.config;
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  auto update = [&](Tensor& p, const Tensor& g, Tensor& m, Tensor& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      double& w = p.values()[i];
      const double gi = g.values()[i];
      double& mi = m.values()[i];
      double& vi = v.values()[i];
      w -= c.lr * c.weight_decay * w;
      mi = c.beta1 * mi + (1.0 - c.beta1) * gi;
      vi = c.beta2 * vi + (1.0 - c.beta2) * gi * gi;
      w -= c.lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
    }
  };
  update(params.w1, grad.w1, opt.m.w1, opt.v.w1);
  update(params.b1, grad.b1, opt.m.b1, opt.v.b1);
  update(params.w2, grad.w2, opt.m.w2, opt.v.w2);
  update(params.b2, grad.b2, opt.m.b2, opt.v.b2);
  return loss;
}

double seh_train_step(SehParams& params, OptimizerState& opt,
                      const AttentionBatch& batch, const Tensor& target,
                      double beta) {
  return seh_train_step_features(params, opt, seh_features(batch), target,
                                 beta);
}

}  // namespace salkv
