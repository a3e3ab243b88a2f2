#pragma once

#include <cmath>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

constexpr double kBnEpsilon = 1e-5;
constexpr double kBnMomentum = 0.9;  // new = 0.9 * old + 0.1 * batch

template <typename T>
struct RunningStatsT {
  TensorT<T> mean;  // [C]
  TensorT<T> var;   // [C], biased
  bool initialised = false;

  explicit RunningStatsT(int64_t C = 1) : mean({C}), var({C}) {}
};

using RunningStats = RunningStatsT<float>;

/// Saved forward context for the backward pass: normalised activations and
/// the per-channel inverse standard deviation.
template <typename T>
struct BnCache {
  TensorT<T> xhat;
  std::vector<T> inv_std;
};

enum class BnMode { train, infer };

/// Batch normalisation over (N,H,W) per channel. In train mode the batch
/// statistics are applied and the running stats are updated in place; infer
/// mode applies the running stats and mutates nothing.
template <typename T>
void batch_norm_forward(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                        RunningStatsT<T>& stats, BnMode mode, TensorT<T>& y,
                        BnCache<T>* cache = nullptr) {
  require_rank(x, 4, "batch_norm");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require_shape(gamma, {C}, "batch_norm gamma");
  require_shape(beta, {C}, "batch_norm beta");
  require_shape(stats.mean, {C}, "batch_norm running mean");
  const int64_t HW = H * W, M = N * HW;
  ensure_shape(y, x.shape);

  if (mode == BnMode::infer) {
    if (!stats.initialised)
      throw ValidationError("batch_norm: uninitialised running statistics in infer mode");
    for (int64_t c = 0; c < C; ++c) {
      const T mu = stats.mean.data[static_cast<size_t>(c)];
      const T is = T(1) / std::sqrt(stats.var.data[static_cast<size_t>(c)] + T(kBnEpsilon));
      const T g = gamma.data[static_cast<size_t>(c)], bb = beta.data[static_cast<size_t>(c)];
      for (int64_t n = 0; n < N; ++n) {
        const T* in = x.ptr() + (n * C + c) * HW;
        T* out = y.ptr() + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) out[i] = g * (in[i] - mu) * is + bb;
      }
    }
    return;
  }

  if (M < 2) throw ShapeError("batch_norm: train mode needs at least 2 values per channel");
  if (cache) {
    ensure_shape(cache->xhat, x.shape);
    cache->inv_std.assign(static_cast<size_t>(C), T(0));
  }
  for (int64_t c = 0; c < C; ++c) {
    double sum = 0.0, sum2 = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const T* in = x.ptr() + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) {
        sum += in[i];
        sum2 += static_cast<double>(in[i]) * in[i];
      }
    }
    const double mu = sum / static_cast<double>(M);
    double var = sum2 / static_cast<double>(M) - mu * mu;  // biased
    if (var < 0.0) var = 0.0;
    const T is = static_cast<T>(1.0 / std::sqrt(var + kBnEpsilon));
    const T g = gamma.data[static_cast<size_t>(c)], bb = beta.data[static_cast<size_t>(c)];
    const T muT = static_cast<T>(mu);
    if (cache) cache->inv_std[static_cast<size_t>(c)] = is;
    for (int64_t n = 0; n < N; ++n) {
      const T* in = x.ptr() + (n * C + c) * HW;
      T* out = y.ptr() + (n * C + c) * HW;
      T* xh = cache ? cache->xhat.ptr() + (n * C + c) * HW : nullptr;
      for (int64_t i = 0; i < HW; ++i) {
        const T v = (in[i] - muT) * is;
        if (xh) xh[i] = v;
        out[i] = g * v + bb;
      }
    }
    auto& rm = stats.mean.data[static_cast<size_t>(c)];
    auto& rv = stats.var.data[static_cast<size_t>(c)];
    rm = static_cast<T>(kBnMomentum * rm + (1.0 - kBnMomentum) * mu);
    rv = static_cast<T>(kBnMomentum * rv + (1.0 - kBnMomentum) * var);
  }
  stats.initialised = true;
}

/// Backward through train-mode batch norm. Accumulates into dx, dgamma, dbeta.
/// Uses only the cached xhat and inv_std:
///   dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
template <typename T>
void batch_norm_backward(const BnCache<T>& cache, const TensorT<T>& gamma, const TensorT<T>& dy,
                         TensorT<T>& dx, TensorT<T>& dgamma, TensorT<T>& dbeta) {
  const TensorT<T>& xhat = cache.xhat;
  const int64_t N = xhat.dim(0), C = xhat.dim(1), HW = xhat.dim(2) * xhat.dim(3);
  require_shape(dy, xhat.shape, "batch_norm backward");
  require_shape(dx, xhat.shape, "batch_norm backward");
  const int64_t M = N * HW;
  for (int64_t c = 0; c < C; ++c) {
    double s1 = 0.0, s2 = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const T* g = dy.ptr() + (n * C + c) * HW;
      const T* xh = xhat.ptr() + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) {
        s1 += g[i];
        s2 += static_cast<double>(g[i]) * xh[i];
      }
    }
    dbeta.data[static_cast<size_t>(c)] += static_cast<T>(s1);
    dgamma.data[static_cast<size_t>(c)] += static_cast<T>(s2);
    const T k = gamma.data[static_cast<size_t>(c)] * cache.inv_std[static_cast<size_t>(c)];
    const T m1 = static_cast<T>(s1 / static_cast<double>(M));
    const T m2 = static_cast<T>(s2 / static_cast<double>(M));
    for (int64_t n = 0; n < N; ++n) {
      const T* g = dy.ptr() + (n * C + c) * HW;
      const T* xh = xhat.ptr() + (n * C + c) * HW;
      T* out = dx.ptr() + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) out[i] += k * (g[i] - m1 - xh[i] * m2);
    }
  }
}

/// In-place variant: dyx holds dy on entry and dx on exit. Valid because dx
/// at a position depends on dy only through that position and the channel
/// sums, which are taken first.
template <typename T>
void batch_norm_backward_inplace(const BnCache<T>& cache, const TensorT<T>& gamma,
                                 TensorT<T>& dyx, TensorT<T>& dgamma, TensorT<T>& dbeta) {
  const TensorT<T>& xhat = cache.xhat;
  const int64_t N = xhat.dim(0), C = xhat.dim(1), HW = xhat.dim(2) * xhat.dim(3);
  require_shape(dyx, xhat.shape, "batch_norm backward");
  const int64_t M = N * HW;
  for (int64_t c = 0; c < C; ++c) {
    double s1 = 0.0, s2 = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const T* g = dyx.ptr() + (n * C + c) * HW;
      const T* xh = xhat.ptr() + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) {
        s1 += g[i];
        s2 += static_cast<double>(g[i]) * xh[i];
      }
    }
    dbeta.data[static_cast<size_t>(c)] += static_cast<T>(s1);
    dgamma.data[static_cast<size_t>(c)] += static_cast<T>(s2);
    const T k = gamma.data[static_cast<size_t>(c)] * cache.inv_std[static_cast<size_t>(c)];
    const T m1 = static_cast<T>(s1 / static_cast<double>(M));
    const T m2 = static_cast<T>(s2 / static_cast<double>(M));
    for (int64_t n = 0; n < N; ++n) {
      const T* xh = xhat.ptr() + (n * C + c) * HW;
      T* g = dyx.ptr() + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) g[i] = k * (g[i] - m1 - xh[i] * m2);
    }
  }
}

/// Value-returning wrapper matching the op signature.
template <typename T>
TensorT<T> batch_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      RunningStatsT<T>& stats, BnMode mode) {
  TensorT<T> y;
  batch_norm_forward(x, gamma, beta, stats, mode, y);
  return y;
}

}  // namespace cseg
