#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

/// Integer label image, [N,H,W] (or [H,W] / [D,H,W] in the data layer).
using LabelMap = TensorT<int32_t>;

/// Softmax over the class axis plus mean cross entropy over all N*H*W
/// pixels. probs receives the per-pixel simplex. When dlogits is non-null it
/// is ASSIGNED (p - onehot)/(N*H*W). An optional keep-mask (1 = contributes)
/// zeroes the loss and gradient of masked pixels; the denominator stays
/// N*H*W so masking never rescales the remaining pixels.
template <typename T>
double softmax_cross_entropy(const TensorT<T>& logits, const LabelMap& labels, TensorT<T>& probs,
                             TensorT<T>* dlogits = nullptr,
                             const std::vector<uint8_t>* keep = nullptr) {
  require_rank(logits, 4, "softmax_cross_entropy");
  const int64_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  require_shape(labels, {N, H, W}, "softmax_cross_entropy labels");
  if (keep && static_cast<int64_t>(keep->size()) != N * H * W)
    throw ShapeError("softmax_cross_entropy: mask size mismatch");
  ensure_shape(probs, logits.shape);
  if (dlogits) ensure_shape(*dlogits, logits.shape);

  const int64_t HW = H * W;
  const double inv_count = 1.0 / static_cast<double>(N * HW);
  double loss = 0.0;
  std::vector<double> z(static_cast<size_t>(K));
  for (int64_t n = 0; n < N; ++n) {
    const T* lbase = logits.ptr() + n * K * HW;
    T* pbase = probs.ptr() + n * K * HW;
    T* gbase = dlogits ? dlogits->ptr() + n * K * HW : nullptr;
    for (int64_t i = 0; i < HW; ++i) {
      const int32_t lab = labels.data[static_cast<size_t>(n * HW + i)];
      if (lab < 0 || lab >= K)
        throw ValidationError("softmax_cross_entropy: label " + std::to_string(lab) +
                              " out of range [0," + std::to_string(K) + ") at batch " +
                              std::to_string(n) + " pixel " + std::to_string(i));
      double m = static_cast<double>(lbase[i]);
      for (int64_t k = 1; k < K; ++k)
        m = std::max(m, static_cast<double>(lbase[k * HW + i]));
      double sum = 0.0;
      for (int64_t k = 0; k < K; ++k) {
        z[static_cast<size_t>(k)] = std::exp(static_cast<double>(lbase[k * HW + i]) - m);
        sum += z[static_cast<size_t>(k)];
      }
      const bool counted = !keep || (*keep)[static_cast<size_t>(n * HW + i)];
      for (int64_t k = 0; k < K; ++k) {
        const double p = z[static_cast<size_t>(k)] / sum;
        pbase[k * HW + i] = static_cast<T>(p);
        if (gbase)
          gbase[k * HW + i] =
              counted ? static_cast<T>((p - (k == lab ? 1.0 : 0.0)) * inv_count) : T(0);
      }
      if (counted) {
        // -log p[lab] computed from the stabilised terms directly
        loss += std::log(sum) - (static_cast<double>(lbase[lab * HW + i]) - m);
      }
    }
  }
  return loss * inv_count;
}

}  // namespace cseg
