#pragma once

#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

/// Channel-axis concatenation of [N,Ci,H,W] tensors, argument order preserved.
template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const TensorT<T>& x0 = *xs[0];
  require_rank(x0, 4, "concat_channels");
  const int64_t N = x0.dim(0), H = x0.dim(2), W = x0.dim(3);
  int64_t Ctot = 0;
  for (const TensorT<T>* x : xs) {
    require_rank(*x, 4, "concat_channels");
    if (x->dim(0) != N || x->dim(2) != H || x->dim(3) != W)
      throw ShapeError("concat_channels: mismatched batch or spatial extents: " + x0.shape_str() +
                       " vs " + x->shape_str());
    Ctot += x->dim(1);
  }
  TensorT<T> y({N, Ctot, H, W});
  const int64_t HW = H * W;
  for (int64_t n = 0; n < N; ++n) {
    T* dst = y.ptr() + n * Ctot * HW;
    for (const TensorT<T>* x : xs) {
      const int64_t len = x->dim(1) * HW;
      std::copy(x->ptr() + n * len, x->ptr() + (n + 1) * len, dst);
      dst += len;
    }
  }
  return y;
}

/// Splits dy back onto per-input gradients (accumulating), the adjoint of
/// concat_channels.
template <typename T>
void concat_channels_backward(const TensorT<T>& dy, const std::vector<TensorT<T>*>& dxs) {
  const int64_t N = dy.dim(0), Ctot = dy.dim(1), HW = dy.dim(2) * dy.dim(3);
  int64_t sum = 0;
  for (TensorT<T>* dx : dxs) sum += dx->dim(1);
  if (sum != Ctot) throw ShapeError("concat_channels backward: channel split mismatch");
  for (int64_t n = 0; n < N; ++n) {
    const T* src = dy.ptr() + n * Ctot * HW;
    for (TensorT<T>* dx : dxs) {
      const int64_t len = dx->dim(1) * HW;
      T* dst = dx->ptr() + n * len;
      for (int64_t i = 0; i < len; ++i) dst[i] += src[i];
      src += len;
    }
  }
}

}  // namespace cseg
