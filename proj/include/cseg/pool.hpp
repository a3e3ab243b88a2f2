#pragma once

#include "cseg/tensor.hpp"

namespace cseg {

/// 2x2 max pooling, stride 2. H and W must be even.
template <typename T>
void max_pool2_forward(const TensorT<T>& x, TensorT<T>& y) {
  require_rank(x, 4, "max_pool2");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2)
    throw ShapeError("max_pool2: spatial extents must be even, got " + x.shape_str());
  const int64_t Ho = H / 2, Wo = W / 2;
  ensure_shape(y, {N, C, Ho, Wo});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* in = x.ptr() + nc * H * W;
    T* out = y.ptr() + nc * Ho * Wo;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      const T* r0 = in + 2 * oy * W;
      const T* r1 = r0 + W;
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const int64_t x0 = 2 * ox;
        T m = r0[x0];
        if (r0[x0 + 1] > m) m = r0[x0 + 1];
        if (r1[x0] > m) m = r1[x0];
        if (r1[x0 + 1] > m) m = r1[x0 + 1];
        out[oy * Wo + ox] = m;
      }
    }
  }
}

template <typename T>
TensorT<T> max_pool2(const TensorT<T>& x) {
  TensorT<T> y;
  max_pool2_forward(x, y);
  return y;
}

/// Routes dy to the first maximum in scan order of each 2x2 window,
/// recomputed from x (accumulates into dx).
template <typename T>
void max_pool2_backward(const TensorT<T>& x, const TensorT<T>& dy, TensorT<T>& dx) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = H / 2, Wo = W / 2;
  require_shape(dy, {N, C, Ho, Wo}, "max_pool2 backward");
  require_shape(dx, x.shape, "max_pool2 backward");
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* in = x.ptr() + nc * H * W;
    const T* g = dy.ptr() + nc * Ho * Wo;
    T* out = dx.ptr() + nc * H * W;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const int64_t base = 2 * oy * W + 2 * ox;
        const int64_t cand[4] = {base, base + 1, base + W, base + W + 1};
        int64_t best = cand[0];
        for (int i = 1; i < 4; ++i)
          if (in[cand[i]] > in[best]) best = cand[i];
        out[best] += g[oy * Wo + ox];
      }
    }
  }
}

}  // namespace cseg
