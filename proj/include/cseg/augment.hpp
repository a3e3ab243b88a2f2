#pragma once

#include <cmath>

#include "cseg/loss.hpp"
#include "cseg/rng.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

/// On-the-fly augmentation ranges. All ranges contain the identity so the
/// expected transform is (close to) a no-op.
struct AugmentParams {
  double max_translation_px = 10.0;
  double max_rotation_deg = 15.0;
  double scale_lo = 0.9, scale_hi = 1.1;
  double intensity_lo = 0.8, intensity_hi = 1.2;

  void validate() const {
    if (max_translation_px < 0 || max_rotation_deg < 0)
      throw ConfigError("augment: translation/rotation ranges must be non-negative");
    if (!(scale_lo <= 1.0 && 1.0 <= scale_hi))
      throw ConfigError("augment: scale range must contain 1");
    if (!(intensity_lo <= 1.0 && 1.0 <= intensity_hi))
      throw ConfigError("augment: intensity range must contain 1");
  }
};

/// One concrete draw. The draw order (tx, ty, rotation, scale, intensity) is
/// part of the reproducibility contract.
struct AugmentDraw {
  double tx = 0, ty = 0, theta_deg = 0, scale = 1, intensity = 1;

  static AugmentDraw sample(const AugmentParams& p, Rng& rng) {
    AugmentDraw d;
    d.tx = rng.uniform(-p.max_translation_px, p.max_translation_px);
    d.ty = rng.uniform(-p.max_translation_px, p.max_translation_px);
    d.theta_deg = rng.uniform(-p.max_rotation_deg, p.max_rotation_deg);
    d.scale = rng.uniform(p.scale_lo, p.scale_hi);
    d.intensity = rng.uniform(p.intensity_lo, p.intensity_hi);
    return d;
  }
};

namespace detail {

/// Applies the rigid+scale transform of `d` to a paired slice: the image is
/// sampled bilinearly, labels nearest-neighbour, both zero-filled outside the
/// source; image intensities are scaled and re-clamped to [0,1]. Source and
/// destination must not alias.
inline void augment_slice(const float* img, const int32_t* lab, int64_t H, int64_t W,
                          const AugmentDraw& d, float* img_out, int32_t* lab_out) {
  const double theta = d.theta_deg * (3.14159265358979323846 / 180.0);
  const double c = std::cos(theta), s = std::sin(theta);
  const double inv = 1.0 / d.scale;
  const double cy = 0.5 * static_cast<double>(H - 1);
  const double cx = 0.5 * static_cast<double>(W - 1);

  for (int64_t y = 0; y < H; ++y) {
    const double ry = static_cast<double>(y) - cy - d.ty;
    for (int64_t x = 0; x < W; ++x) {
      const double rx = static_cast<double>(x) - cx - d.tx;
      // inverse map: undo translation, then rotation, then scale
      const double sx = (c * rx + s * ry) * inv + cx;
      const double sy = (-s * rx + c * ry) * inv + cy;

      float v = 0.0f;
      const int64_t x0 = static_cast<int64_t>(std::floor(sx));
      const int64_t y0 = static_cast<int64_t>(std::floor(sy));
      if (x0 >= -1 && x0 < W && y0 >= -1 && y0 < H) {
        const double fx = sx - static_cast<double>(x0);
        const double fy = sy - static_cast<double>(y0);
        auto at = [&](int64_t yy, int64_t xx) -> double {
          return (yy >= 0 && yy < H && xx >= 0 && xx < W)
                     ? static_cast<double>(img[yy * W + xx])
                     : 0.0;
        };
        const double top = at(y0, x0) * (1 - fx) + at(y0, x0 + 1) * fx;
        const double bot = at(y0 + 1, x0) * (1 - fx) + at(y0 + 1, x0 + 1) * fx;
        v = static_cast<float>(top * (1 - fy) + bot * fy);
      }
      v *= static_cast<float>(d.intensity);
      img_out[y * W + x] = std::min(1.0f, std::max(0.0f, v));

      const int64_t nx = static_cast<int64_t>(std::lround(sx));
      const int64_t ny = static_cast<int64_t>(std::lround(sy));
      lab_out[y * W + x] =
          (nx >= 0 && nx < W && ny >= 0 && ny < H) ? lab[ny * W + nx] : 0;
    }
  }
}

}  // namespace detail

/// Applies one concrete draw to an (image, label) slice pair.
inline std::pair<Tensor, LabelMap> apply_augmentation(const Tensor& image, const LabelMap& labels,
                                                      const AugmentDraw& d) {
  require_rank(image, 2, "augment image");
  require_shape(labels, image.shape, "augment labels");
  const int64_t H = image.dim(0), W = image.dim(1);
  Tensor img_out(image.shape);
  LabelMap lab_out(labels.shape);
  detail::augment_slice(image.ptr(), labels.ptr(), H, W, d, img_out.ptr(), lab_out.ptr());
  return {std::move(img_out), std::move(lab_out)};
}

/// Random augmentation of one (image, label) slice pair; five uniform draws
/// are consumed from `rng` in the pinned order.
inline std::pair<Tensor, LabelMap> augment(const Tensor& image, const LabelMap& labels,
                                           const AugmentParams& params, Rng& rng) {
  params.validate();
  return apply_augmentation(image, labels, AugmentDraw::sample(params, rng));
}

}  // namespace cseg
