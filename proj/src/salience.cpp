// Copyright 2026 The salkv Authors.
// SPDX-License-Identifier: Apache-2.0

#include "salkv/salience.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "salkv/errors.hpp"

namespace salkv {

namespace {

constexpr double kNoValue = -std::numeric_limits<double>::infinity();

void check_qk(const Tensor& q, const Tensor& k, const BlockGeometry& geom) {
  geom.validate();
  if (q.rank() != 4 || k.rank() != 4 || q.shape() != k.shape()) {
    throw ShapeError("salience needs q and k of equal shape [B,N,L,D], got q" +
                     q.shape_string() + " k" + k.shape_string());
  }
  if (q.dim(2) != geom.seq_len) {
    throw ShapeError("sequence length " + std::to_string(q.dim(2)) +
                     " does not match geometry seq_len " +
                     std::to_string(geom.seq_len));
  }
  if (q.dim(3) == 0) throw ShapeError("head dimension must be >= 1");
  detail::check_finite(q, "q");
  detail::check_finite(k, "k");
}

// Running maxima for one batch item. Each component is [rows, L] where rows
// is N for max-then-mean and 1 for mean-then-max.
struct RunningMaxima {
  std::size_t rows;
  std::size_t len;
  std::vector<double> low, diag, up;

  RunningMaxima(std::size_t rows_, std::size_t len_)
      : rows(rows_),
        len(len_),
        low(rows_ * len_, kNoValue),
        diag(rows_ * len_, kNoValue),
        up(rows_ * len_, kNoValue) {}

  // Folds one attention row of a query in block [lower, upper).
  template <typename Real>
  void update(std::size_t row, const Real* p, std::size_t lower,
              std::size_t upper) {
    double* lo = low.data() + row * len;
    double* dg = diag.data() + row * len;
    double* u = up.data() + row * len;
    for (std::size_t j = 0; j < lower; ++j) {
      lo[j] = std::max(lo[j], static_cast<double>(p[j]));
    }
    for (std::size_t j = lower; j < upper; ++j) {
      dg[j] = std::max(dg[j], static_cast<double>(p[j]));
    }
    for (std::size_t j = upper; j < len; ++j) {
      u[j] = std::max(u[j], static_cast<double>(p[j]));
    }
  }

  // Head-averages (when rows == N) and writes into cm at batch index b.
  void finalize(ComponentMaxima& cm, std::size_t b) const {
    auto reduce = [&](const std::vector<double>& src, Tensor& dst) {
      for (std::size_t j = 0; j < len; ++j) {
        if (src[j] == kNoValue) {
          dst(b, j) = kEmptyComponent;
          continue;
        }
        double sum = 0.0;
        for (std::size_t r = 0; r < rows; ++r) sum += src[r * len + j];
        dst(b, j) = sum / static_cast<double>(rows);
      }
    };
    reduce(low, cm.low);
    reduce(diag, cm.diag);
    reduce(up, cm.up);
  }
};

ComponentMaxima empty_maxima(std::size_t batch, std::size_t len) {
  return {Tensor({batch, len}), Tensor({batch, len}), Tensor({batch, len})};
}

void note_peak(WorkingSetProbe* probe, std::size_t elements) {
  if (probe) probe->peak_row_elements = std::max(probe->peak_row_elements, elements);
}

}  // namespace

void BlockGeometry::validate() const {
  if (seq_len < 1) throw ArgumentError("seq_len must be >= 1");
  if (block_len < 1) throw ArgumentError("block_len must be >= 1");
}

BlockBounds block_bounds(std::size_t i, const BlockGeometry& geom) {
  geom.validate();
  if (i >= geom.seq_len) {
    throw IndexError("token index " + std::to_string(i) +
                     " out of range for seq_len " +
                     std::to_string(geom.seq_len));
  }
  BlockBounds out;
  out.block = i / geom.block_len;
  out.lower = out.block * geom.block_len;
  out.upper = std::min(out.lower + geom.block_len, geom.seq_len);
  return out;
}

ComponentMaxima component_maxima(const Tensor& p, const BlockGeometry& geom,
                                 HeadAggregation agg) {
  geom.validate();
  if (p.rank() != 4 || p.dim(2) != p.dim(3)) {
    throw ShapeError("component_maxima needs square attention [B,N,L,L], got " +
                     p.shape_string());
  }
  if (p.dim(3) != geom.seq_len) {
    throw ShapeError("attention length " + std::to_string(p.dim(3)) +
                     " does not match geometry seq_len " +
                     std::to_string(geom.seq_len));
  }
  const std::size_t batch = p.dim(0), heads = p.dim(1), len = p.dim(3);
  ComponentMaxima cm = empty_maxima(batch, len);
  const double* pd = p.data().data();

  for (std::size_t b = 0; b < batch; ++b) {
    if (agg == HeadAggregation::kMaxThenMean) {
      RunningMaxima acc(heads, len);
      for (std::size_t n = 0; n < heads; ++n) {
        for (std::size_t i = 0; i < len; ++i) {
          const BlockBounds bb = block_bounds(i, geom);
          acc.update(n, pd + ((b * heads + n) * len + i) * len, bb.lower,
                     bb.upper);
        }
      }
      acc.finalize(cm, b);
    } else {
      RunningMaxima acc(1, len);
      std::vector<double> mean_row(len);
      for (std::size_t i = 0; i < len; ++i) {
        std::fill(mean_row.begin(), mean_row.end(), 0.0);
        for (std::size_t n = 0; n < heads; ++n) {
          const double* row = pd + ((b * heads + n) * len + i) * len;
          for (std::size_t j = 0; j < len; ++j) mean_row[j] += row[j];
        }
        for (double& x : mean_row) x /= static_cast<double>(heads);
        const BlockBounds bb = block_bounds(i, geom);
        acc.update(0, mean_row.data(), bb.lower, bb.upper);
      }
      acc.finalize(cm, b);
    }
  }
  return cm;
}

Tensor fuse_salience(const ComponentMaxima& cm, const BlockGeometry& geom) {
  geom.validate();
  const Tensor& d = cm.diag;
  if (d.rank() != 2 || cm.low.shape() != d.shape() ||
      cm.up.shape() != d.shape()) {
    throw ShapeError("component tensors must share one [B,L] shape");
  }
  if (d.dim(1) != geom.seq_len) {
    throw ShapeError("component length does not match geometry seq_len");
  }
  Tensor s({d.dim(0), d.dim(1)});
  for (std::size_t b = 0; b < d.dim(0); ++b) {
    for (std::size_t j = 0; j < d.dim(1); ++j) {
      double sum = 0.0;
      int count = 0;
      for (const Tensor* c : {&cm.up, &cm.diag, &cm.low}) {
        const double x = (*c)(b, j);
        if (is_empty_component(x)) continue;
        sum += x;
        ++count;
      }
      s(b, j) = count ? sum / count : 0.0;
    }
  }
  return s;
}

Tensor salience_scores(const Tensor& q, const Tensor& k,
                       const BlockGeometry& geom, HeadAggregation agg,
                       WorkingSetProbe* probe) {
  check_qk(q, k, geom);
  const Tensor p = attention_weights(q, k);
  note_peak(probe, p.size());
  return fuse_salience(component_maxima(p, geom, agg), geom);
}

Tensor salience_scores(const AttentionBatch& batch, const BlockGeometry& geom,
                       HeadAggregation agg) {
  batch.validate();
  return salience_scores(batch.q, batch.k, geom, agg);
}

namespace {

template <typename Real>
Tensor blockwise_impl(const Tensor& q, const Tensor& k,
                      const BlockGeometry& geom, const StreamingOptions& opts,
                      WorkingSetProbe* probe) {
  const std::size_t batch = q.dim(0), heads = q.dim(1), len = q.dim(2),
                    d = q.dim(3);
  const bool max_first = opts.agg == HeadAggregation::kMaxThenMean;
  const std::size_t chunk = opts.chunk_len;

  // q and k in the working precision; aliases the input in 64-bit mode.
  std::vector<Real> q_cast, k_cast;
  const Real* qd;
  const Real* kd;
  if constexpr (std::is_same_v<Real, double>) {
    qd = q.data().data();
    kd = k.data().data();
  } else {
    q_cast.assign(q.values().begin(), q.values().end());
    k_cast.assign(k.values().begin(), k.values().end());
    qd = q_cast.data();
    kd = k_cast.data();
  }
  std::vector<Real> rows(chunk * len);
  std::vector<Real> mean_rows(max_first ? 0 : chunk * len);
  note_peak(probe, rows.size() + mean_rows.size());

  ComponentMaxima cm = empty_maxima(batch, len);
  for (std::size_t b = 0; b < batch; ++b) {
    RunningMaxima acc(max_first ? heads : 1, len);
    for (std::size_t start = 0; start < len; start += chunk) {
      const std::size_t end = std::min(start + chunk, len);
      // Split [start, end) at block boundaries.
      for (std::size_t s = start; s < end;) {
        const BlockBounds bb = block_bounds(s, geom);
        const std::size_t e = std::min(end, bb.upper);
        const std::size_t n_rows = e - s;
        if (!max_first) std::fill(mean_rows.begin(), mean_rows.end(), Real(0));
        for (std::size_t n = 0; n < heads; ++n) {
          const Real* qh = qd + (b * heads + n) * len * d;
          const Real* kh = kd + (b * heads + n) * len * d;
          for (std::size_t r = 0; r < n_rows; ++r) {
            detail::softmax_attention_row(
                std::span<const Real>(qh + (s + r) * d, d), kh,
                len, d, std::span<Real>(rows.data() + r * len, len));
          }
          for (std::size_t r = 0; r < n_rows; ++r) {
            const Real* row = rows.data() + r * len;
            if (max_first) {
              acc.update(n, row, bb.lower, bb.upper);
            } else {
              Real* m = mean_rows.data() + r * len;
              for (std::size_t j = 0; j < len; ++j) m[j] += row[j];
            }
          }
        }
        if (!max_first) {
          for (std::size_t r = 0; r < n_rows; ++r) {
            Real* m = mean_rows.data() + r * len;
            for (std::size_t j = 0; j < len; ++j) m[j] /= static_cast<Real>(heads);
            acc.update(0, m, bb.lower, bb.upper);
          }
        }
        s = e;
      }
    }
    acc.finalize(cm, b);
  }
  return fuse_salience(cm, geom);
}

}  // namespace

Tensor blockwise_salience(const Tensor& q, const Tensor& k,
                          const BlockGeometry& geom,
                          const StreamingOptions& opts,
                          WorkingSetProbe* probe) {
  check_qk(q, k, geom);
  if (opts.chunk_len < 1) throw ArgumentError("chunk_len must be >= 1");
  if (opts.chunk_len > geom.seq_len) {
    throw ArgumentError("chunk_len " + std::to_string(opts.chunk_len) +
                        " exceeds seq_len " + std::to_string(geom.seq_len));
  }
  if (opts.precision == Precision::kFloat32) {
    return blockwise_impl<float>(q, k, geom, opts, probe);
  }
  return blockwise_impl<double>(q, k, geom, opts, probe);
}

Tensor blockwise_salience(const AttentionBatch& batch,
                          const BlockGeometry& geom, std::size_t chunk_len) {
  batch.validate();
  return blockwise_salience(batch.q, batch.k, geom,
                            StreamingOptions{chunk_len});
}

}  // namespace salkv
