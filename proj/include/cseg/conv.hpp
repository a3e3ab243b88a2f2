#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

/// Reusable im2col buffers so training does not reallocate per image.
template <typename T>
struct ConvScratch {
  std::vector<T> col;
  std::vector<T> dcol;
};

namespace detail {

// Column-major patch matrix of one image: col(p, c*9 + dy*3 + dx) for output
// pixel p = y*W + x holds img[c, y+dy-1, x+dx-1], zero outside bounds.
// Columns are contiguous (length H*W), so the body is row copies.
template <typename T>
void im2col_3x3(const T* img, int64_t C, int64_t H, int64_t W, T* col) {
  const int64_t HW = H * W;
  for (int64_t c = 0; c < C; ++c) {
    const T* plane = img + c * HW;
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        T* dst = col + (c * 9 + dy * 3 + dx) * HW;
        const int64_t oy = dy - 1, ox = dx - 1;
        const int64_t y0 = std::max<int64_t>(0, -oy), y1 = std::min<int64_t>(H, H - oy);
        const int64_t x0 = std::max<int64_t>(0, -ox), x1 = std::min<int64_t>(W, W - ox);
        if (y0 > 0) std::fill(dst, dst + y0 * W, T(0));
        for (int64_t y = y0; y < y1; ++y) {
          T* drow = dst + y * W;
          const T* srow = plane + (y + oy) * W + ox;
          if (x0 > 0) drow[0] = T(0);
          std::copy(srow + x0, srow + x1, drow + x0);
          if (x1 < W) drow[W - 1] = T(0);
        }
        if (y1 < H) std::fill(dst + y1 * W, dst + HW, T(0));
      }
    }
  }
}

// Adjoint of im2col_3x3: scatter-add columns back onto the image.
template <typename T>
void col2im_3x3_add(const T* col, int64_t C, int64_t H, int64_t W, T* img) {
  const int64_t HW = H * W;
  for (int64_t c = 0; c < C; ++c) {
    T* plane = img + c * HW;
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        const T* src = col + (c * 9 + dy * 3 + dx) * HW;
        const int64_t oy = dy - 1, ox = dx - 1;
        const int64_t y0 = std::max<int64_t>(0, -oy), y1 = std::min<int64_t>(H, H - oy);
        const int64_t x0 = std::max<int64_t>(0, -ox), x1 = std::min<int64_t>(W, W - ox);
        for (int64_t y = y0; y < y1; ++y) {
          T* drow = plane + (y + oy) * W + ox;
          const T* srow = src + y * W;
          for (int64_t x = x0; x < x1; ++x) drow[x] += srow[x];
        }
      }
    }
  }
}

template <typename T>
void check_conv_shapes(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int k,
                       const char* what) {
  require_rank(x, 4, what);
  require_rank(w, 4, what);
  if (w.dim(2) != k || w.dim(3) != k)
    throw ShapeError(std::string(what) + ": kernel must be " + std::to_string(k) + "x" +
                     std::to_string(k) + ", got " + w.shape_str());
  if (w.dim(1) != x.dim(1))
    throw ShapeError(std::string(what) + ": input has " + std::to_string(x.dim(1)) +
                     " channels but weight expects " + std::to_string(w.dim(1)));
  require_shape(b, {w.dim(0)}, what);
}

// Reductions with a fixed, address-independent summation order: eight
// independent lanes combined in a fixed tree. An Eigen-style vectorized redux
// peels until the pointer is SIMD-aligned, so its order (and the cancellation
// noise of a true-zero gradient) would vary with the heap address from run to
// run; the lane pattern here depends only on the element count, and the
// compiler can still turn it into SIMD.
template <typename T>
T fixed_sum(const T* __restrict p, int64_t n) {
  T l[8] = {};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int64_t q = 0; q < 8; ++q) l[q] += p[i + q];
  T tail = T(0);
  for (; i < n; ++i) tail += p[i];
  return (((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]))) + tail;
}

template <typename T>
T fixed_dot(const T* __restrict a, const T* __restrict b, int64_t n) {
  T l[8] = {};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int64_t q = 0; q < 8; ++q) l[q] += a[i + q] * b[i + q];
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]))) + tail;
}

template <typename T>
void add_col_sums(const T* dy, int64_t C, int64_t HW, T* db) {
  for (int64_t c = 0; c < C; ++c) db[c] += fixed_sum(dy + c * HW, HW);
}

}  // namespace detail

/// 3x3 convolution, padding 1, stride 1. y is resized to [N,Cout,H,W].
template <typename T>
void conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, TensorT<T>& y,
                    ConvScratch<T>& scratch) {
  detail::check_conv_shapes(x, w, b, 3, "conv2d");
  const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), HW = H * W, K = Cin * 9;
  ensure_shape(y, {N, Cout, H, W});
  scratch.col.resize(static_cast<size_t>(HW * K));

  Eigen::Map<const MatX<T>> wm(w.ptr(), K, Cout);  // [Cout][Cin*9] row-major view
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(b.ptr(), Cout);
  for (int64_t n = 0; n < N; ++n) {
    detail::im2col_3x3(x.ptr() + n * Cin * HW, Cin, H, W, scratch.col.data());
    Eigen::Map<const MatX<T>> col(scratch.col.data(), HW, K);
    Eigen::Map<MatX<T>> out(y.ptr() + n * Cout * HW, HW, Cout);
    out.noalias() = col * wm;
    out.rowwise() += bm;
  }
}

/// Backward of conv2d. Accumulates into dw/db and, when dx != nullptr, dx.
/// dx/dw/db must already have the right shapes (caller zeroes them).
template <typename T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                     TensorT<T>* dx, TensorT<T>& dw, TensorT<T>& db, ConvScratch<T>& scratch) {
  const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), HW = H * W, K = Cin * 9;
  require_shape(dy, {N, Cout, H, W}, "conv2d backward");
  require_shape(dw, w.shape, "conv2d backward");
  scratch.col.resize(static_cast<size_t>(HW * K));
  scratch.dcol.resize(static_cast<size_t>(HW * K));

  Eigen::Map<const MatX<T>> wm(w.ptr(), K, Cout);
  Eigen::Map<MatX<T>> dwm(dw.ptr(), K, Cout);
  for (int64_t n = 0; n < N; ++n) {
    Eigen::Map<const MatX<T>> dout(dy.ptr() + n * Cout * HW, HW, Cout);
    detail::im2col_3x3(x.ptr() + n * Cin * HW, Cin, H, W, scratch.col.data());
    Eigen::Map<const MatX<T>> col(scratch.col.data(), HW, K);
    dwm.noalias() += col.transpose() * dout;
    detail::add_col_sums(dy.ptr() + n * Cout * HW, Cout, HW, db.ptr());
    if (dx) {
      Eigen::Map<MatX<T>> dcol(scratch.dcol.data(), HW, K);
      dcol.noalias() = dout * wm.transpose();
      detail::col2im_3x3_add(scratch.dcol.data(), Cin, H, W, dx->ptr() + n * Cin * HW);
    }
  }
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  TensorT<T> y;
  ConvScratch<T> s;
  conv2d_forward(x, w, b, y, s);
  return y;
}

/// 1x1 convolution: a per-pixel affine map across channels.
template <typename T>
void conv1x1_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                     TensorT<T>& y) {
  detail::check_conv_shapes(x, w, b, 1, "conv1x1");
  const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), HW = H * W;
  ensure_shape(y, {N, Cout, H, W});
  Eigen::Map<const MatX<T>> wm(w.ptr(), Cin, Cout);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(b.ptr(), Cout);
  for (int64_t n = 0; n < N; ++n) {
    Eigen::Map<const MatX<T>> in(x.ptr() + n * Cin * HW, HW, Cin);
    Eigen::Map<MatX<T>> out(y.ptr() + n * Cout * HW, HW, Cout);
    out.noalias() = in * wm;
    out.rowwise() += bm;
  }
}

template <typename T>
void conv1x1_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                      TensorT<T>* dx, TensorT<T>& dw, TensorT<T>& db) {
  const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), HW = H * W;
  require_shape(dy, {N, Cout, H, W}, "conv1x1 backward");
  Eigen::Map<const MatX<T>> wm(w.ptr(), Cin, Cout);
  Eigen::Map<MatX<T>> dwm(dw.ptr(), Cin, Cout);
  for (int64_t n = 0; n < N; ++n) {
    Eigen::Map<const MatX<T>> in(x.ptr() + n * Cin * HW, HW, Cin);
    Eigen::Map<const MatX<T>> dout(dy.ptr() + n * Cout * HW, HW, Cout);
    dwm.noalias() += in.transpose() * dout;
    detail::add_col_sums(dy.ptr() + n * Cout * HW, Cout, HW, db.ptr());
    if (dx) {
      Eigen::Map<MatX<T>> din(dx->ptr() + n * Cin * HW, HW, Cin);
      din.noalias() += dout * wm.transpose();
    }
  }
}

template <typename T>
TensorT<T> conv1x1(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  TensorT<T> y;
  conv1x1_forward(x, w, b, y);
  return y;
}

inline void check_upsample_factor(int64_t f) {
  if (f != 2 && f != 4 && f != 8 && f != 16)
    throw ConfigError("transposed_conv: unsupported factor " + std::to_string(f) +
                      " (expected 2, 4, 8 or 16)");
}

/// Per-channel transposed convolution: kernel 2f, stride f, padding f/2.
/// weight is [C, 2f, 2f], bias [C]; output [N, C, f*h, f*w].
template <typename T>
void transposed_conv_forward(const TensorT<T>& x, int64_t f, const TensorT<T>& w,
                             const TensorT<T>& b, TensorT<T>& y) {
  check_upsample_factor(f);
  require_rank(x, 4, "transposed_conv");
  const int64_t N = x.dim(0), C = x.dim(1), h = x.dim(2), wd = x.dim(3);
  require_shape(w, {C, 2 * f, 2 * f}, "transposed_conv weight");
  require_shape(b, {C}, "transposed_conv bias");
  const int64_t H = f * h, W = f * wd, pad = f / 2, ks = 2 * f;
  ensure_shape(y, {N, C, H, W});
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      T* out = y.ptr() + (n * C + c) * H * W;
      std::fill(out, out + H * W, b.data[static_cast<size_t>(c)]);
      const T* in = x.ptr() + (n * C + c) * h * wd;
      const T* k = w.ptr() + c * ks * ks;
      for (int64_t i = 0; i < h; ++i) {
        const int64_t oy = i * f - pad;
        const int64_t a0 = std::max<int64_t>(0, -oy), a1 = std::min<int64_t>(ks, H - oy);
        for (int64_t j = 0; j < wd; ++j) {
          const T v = in[i * wd + j];
          if (v == T(0)) continue;
          const int64_t ox = j * f - pad;
          const int64_t b0 = std::max<int64_t>(0, -ox), b1 = std::min<int64_t>(ks, W - ox);
          for (int64_t a = a0; a < a1; ++a) {
            T* __restrict orow = out + (oy + a) * W + ox + b0;
            const T* __restrict krow = k + a * ks + b0;
            for (int64_t bb = 0; bb < b1 - b0; ++bb) orow[bb] += v * krow[bb];
          }
        }
      }
    }
  }
}

template <typename T>
void transposed_conv_backward(const TensorT<T>& x, int64_t f, const TensorT<T>& w,
                              const TensorT<T>& dy, TensorT<T>* dx, TensorT<T>& dw,
                              TensorT<T>& db) {
  const int64_t N = x.dim(0), C = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t H = f * h, W = f * wd, pad = f / 2, ks = 2 * f;
  require_shape(dy, {N, C, H, W}, "transposed_conv backward");
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T* dout = dy.ptr() + (n * C + c) * H * W;
      const T* in = x.ptr() + (n * C + c) * h * wd;
      const T* k = w.ptr() + c * ks * ks;
      T* dk = dw.ptr() + c * ks * ks;
      db.data[static_cast<size_t>(c)] += detail::fixed_sum(dout, H * W);
      for (int64_t i = 0; i < h; ++i) {
        const int64_t oy = i * f - pad;
        const int64_t a0 = std::max<int64_t>(0, -oy), a1 = std::min<int64_t>(ks, H - oy);
        for (int64_t j = 0; j < wd; ++j) {
          const int64_t ox = j * f - pad;
          const int64_t b0 = std::max<int64_t>(0, -ox), b1 = std::min<int64_t>(ks, W - ox);
          const T v = in[i * wd + j];
          if (v != T(0)) {
            for (int64_t a = a0; a < a1; ++a) {
              const T* __restrict drow = dout + (oy + a) * W + ox + b0;
              T* __restrict dkrow = dk + a * ks + b0;
              for (int64_t bb = 0; bb < b1 - b0; ++bb) dkrow[bb] += v * drow[bb];
            }
          }
          if (dx) {
            T acc = T(0);
            for (int64_t a = a0; a < a1; ++a)
              acc += detail::fixed_dot(dout + (oy + a) * W + ox + b0, k + a * ks + b0, b1 - b0);
            dx->ptr()[(n * C + c) * h * wd + i * wd + j] += acc;
          }
        }
      }
    }
  }
}

template <typename T>
TensorT<T> transposed_conv(const TensorT<T>& x, int64_t f, const TensorT<T>& w,
                           const TensorT<T>& b) {
  TensorT<T> y;
  transposed_conv_forward(x, f, w, b, y);
  return y;
}

/// Bilinear interpolation kernel for a factor-f up-projection, size 2f x 2f.
/// Contributions to any output pixel sum to 1, so upsampling a constant
/// image reproduces the constant.
template <typename T>
TensorT<T> bilinear_kernel(int64_t f) {
  check_upsample_factor(f);
  const int64_t ks = 2 * f;
  TensorT<T> k({ks, ks});
  const double centre = static_cast<double>(f) - 0.5;
  for (int64_t a = 0; a < ks; ++a) {
    const double wa = 1.0 - std::abs(static_cast<double>(a) - centre) / static_cast<double>(f);
    for (int64_t bb = 0; bb < ks; ++bb) {
      const double wb = 1.0 - std::abs(static_cast<double>(bb) - centre) / static_cast<double>(f);
      k.data[static_cast<size_t>(a * ks + bb)] = static_cast<T>(wa * wb);
    }
  }
  return k;
}

}  // namespace cseg
