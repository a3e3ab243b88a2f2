#pragma once

#include <algorithm>
#include <cstring>

#include "cseg/container.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

/// Where the network-sized window sits in the original image: (y0, x0) is the
/// window's top-left corner in original coordinates (negative when the
/// original was padded). Enough to place predictions back.
struct CropInfo {
  int64_t orig_h = 0, orig_w = 0;
  int64_t y0 = 0, x0 = 0;
};

namespace detail {

// Centred crop/pad of the two trailing axes; every leading (frame, slice)
// plane is transformed identically. fill is the out-of-support value.
template <typename T>
TensorT<T> crop_or_pad_planes(const TensorT<T>& in, int64_t target, T fill, CropInfo* info) {
  const int64_t r = in.rank();
  const int64_t H = in.dim(r - 2), W = in.dim(r - 1);
  int64_t planes = 1;
  for (int64_t i = 0; i < r - 2; ++i) planes *= in.dim(i);

  const int64_t y0 = (H - target) / 2;
  const int64_t x0 = (W - target) / 2;
  if (info) *info = CropInfo{H, W, y0, x0};

  std::vector<int64_t> out_shape(in.shape.begin(), in.shape.end() - 2);
  out_shape.push_back(target);
  out_shape.push_back(target);
  TensorT<T> out(std::move(out_shape), fill);

  const int64_t ys = std::max<int64_t>(0, -y0), ye = std::min(target, H - y0);
  const int64_t xs = std::max<int64_t>(0, -x0), xe = std::min(target, W - x0);
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = in.ptr() + p * H * W;
    T* dst = out.ptr() + p * target * target;
    for (int64_t y = ys; y < ye; ++y)
      std::memcpy(dst + y * target + xs, src + (y + y0) * W + (x0 + xs),
                  static_cast<size_t>(xe - xs) * sizeof(T));
  }
  return out;
}

// Inverse of crop_or_pad_planes: place the window back at (y0, x0) in a
// fill-valued canvas of the original extents.
template <typename T>
TensorT<T> restore_planes(const TensorT<T>& in, const CropInfo& info, T fill) {
  const int64_t r = in.rank();
  const int64_t t = in.dim(r - 1);
  int64_t planes = 1;
  for (int64_t i = 0; i < r - 2; ++i) planes *= in.dim(i);

  std::vector<int64_t> out_shape(in.shape.begin(), in.shape.end() - 2);
  out_shape.push_back(info.orig_h);
  out_shape.push_back(info.orig_w);
  TensorT<T> out(std::move(out_shape), fill);

  const int64_t ys = std::max<int64_t>(0, -info.y0), ye = std::min(t, info.orig_h - info.y0);
  const int64_t xs = std::max<int64_t>(0, -info.x0), xe = std::min(t, info.orig_w - info.x0);
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = in.ptr() + p * t * t;
    T* dst = out.ptr() + p * info.orig_h * info.orig_w;
    for (int64_t y = ys; y < ye; ++y)
      std::memcpy(dst + (y + info.y0) * info.orig_w + (info.x0 + xs), src + y * t + xs,
                  static_cast<size_t>(xe - xs) * sizeof(T));
  }
  return out;
}

}  // namespace detail

/// Centred crop (when larger) or zero-pad (when smaller) of the in-plane axes
/// to target x target. The returned CropInfo lets predictions be mapped back
/// into the original geometry.
inline Volume crop_or_pad(const Volume& v, int64_t target = 192, CropInfo* info = nullptr) {
  Volume out;
  out.geom = v.geom;
  out.data = detail::crop_or_pad_planes(v.data, target, 0.0f, info);
  return out;
}

inline LabelVolume crop_or_pad(const LabelVolume& v, int64_t target = 192,
                               CropInfo* info = nullptr) {
  LabelVolume out;
  out.geom = v.geom;
  out.data = detail::crop_or_pad_planes(v.data, target, int32_t{0}, info);
  return out;
}

/// Places a label map produced at network size back into the original
/// extents, background-filled.
inline LabelVolume restore_geometry(const LabelVolume& v, const CropInfo& info) {
  LabelVolume out;
  out.geom = v.geom;
  out.data = detail::restore_planes(v.data, info, int32_t{0});
  return out;
}

inline Volume restore_geometry(const Volume& v, const CropInfo& info) {
  Volume out;
  out.geom = v.geom;
  out.data = detail::restore_planes(v.data, info, 0.0f);
  return out;
}

/// Min-max normalisation of one contiguous 2D slice to [0,1]; a constant
/// slice becomes all zeros.
inline void normalize_slice(float* p, int64_t n) {
  float lo = p[0], hi = p[0];
  for (int64_t i = 1; i < n; ++i) {
    lo = std::min(lo, p[i]);
    hi = std::max(hi, p[i]);
  }
  if (hi <= lo) {
    std::fill(p, p + n, 0.0f);
    return;
  }
  // true division so the extrema land exactly on 0 and 1
  const float range = hi - lo;
  for (int64_t i = 0; i < n; ++i) p[i] = (p[i] - lo) / range;
}

/// Per-slice [0,1] normalisation over every (frame, slice) plane.
inline Volume normalize_intensity(Volume v) {
  const int64_t HW = v.height() * v.width();
  for (int64_t t = 0; t < v.frames(); ++t)
    for (int64_t z = 0; z < v.slices(); ++z) normalize_slice(v.slice_ptr(t, z), HW);
  return v;
}

}  // namespace cseg
