#pragma once

#include "cseg/tensor.hpp"

namespace cseg {

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> y = x;
  for (T& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
void relu_inplace(TensorT<T>& x) {
  for (T& v : x.data) v = v > T(0) ? v : T(0);
}

/// Masks the gradient in place: dy[i] becomes 0 wherever the relu output y
/// was clamped. Used by the training tape to avoid a second buffer.
template <typename T>
void relu_mask_inplace(const TensorT<T>& y, TensorT<T>& dy) {
  require_shape(dy, y.shape, "relu mask");
  const size_t n = y.data.size();
  for (size_t i = 0; i < n; ++i)
    if (!(y.data[i] > T(0))) dy.data[i] = T(0);
}

/// Accumulates dy through the relu whose output was y. Using the output sign
/// gives the subgradient 0 at the kink, matching the forward clamp.
template <typename T>
void relu_backward(const TensorT<T>& y, const TensorT<T>& dy, TensorT<T>& dx) {
  require_shape(dy, y.shape, "relu backward");
  require_shape(dx, y.shape, "relu backward");
  const size_t n = y.data.size();
  for (size_t i = 0; i < n; ++i)
    if (y.data[i] > T(0)) dx.data[i] += dy.data[i];
}

}  // namespace cseg
