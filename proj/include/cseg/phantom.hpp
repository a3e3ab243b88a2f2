#pragma once

#include <cmath>
#include <string>

#include "cseg/container.hpp"
#include "cseg/rng.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

/// Synthetic short-axis cine stack: a bright LV cavity disk inside a darker
/// myocardial annulus, with a bright RV crescent attached on the left, over a
/// textured background. The cavity radius follows a cosine contraction from
/// ED (frame 0, maximal) to ES (mid-cycle, minimal); radii taper towards the
/// apical slice. Ground-truth labels come from the same geometry.
struct PhantomSpec {
  int64_t size = 192;
  int64_t frames = 8;
  int64_t slices = 10;

  double r_ed = 30.0;          // ED cavity radius, px
  double r_es = 16.0;          // ES cavity radius, px
  double myo_thickness = 9.0;  // annulus thickness, px
  double rv_radius = 26.0;     // RV disk radius, px
  double rv_offset = 30.0;     // RV disk centre, px left of the LV centre
  double cx_off = 0.0, cy_off = 0.0;  // LV centre offset from the image centre
  double apex_taper = 0.35;    // radius shrink factor at the last slice

  double noise_sigma = 0.03;
  double bias_amplitude = 0.08;
  uint64_t seed = 0;

  void validate() const {
    if (size < 32) throw ValidationError("phantom: size must be at least 32");
    if (frames < 2 || slices < 1) throw ValidationError("phantom: need >= 2 frames, >= 1 slice");
    if (!(r_es > 0.0) || !(r_ed > r_es))
      throw ValidationError("phantom: need r_ed > r_es > 0 so the cavity contracts");
    if (!(myo_thickness > 0.0)) throw ValidationError("phantom: myocardial thickness must be > 0");
    if (!(rv_radius > 0.0)) throw ValidationError("phantom: RV radius must be > 0");
    if (apex_taper < 0.0 || apex_taper >= 1.0)
      throw ValidationError("phantom: apex taper must be in [0, 1)");
    if (noise_sigma < 0.0 || bias_amplitude < 0.0)
      throw ValidationError("phantom: noise and bias amplitudes must be non-negative");

    const double cx = 0.5 * static_cast<double>(size - 1) + cx_off;
    const double cy = 0.5 * static_cast<double>(size - 1) + cy_off;
    const double outer = r_ed + myo_thickness;
    const double reach_left = rv_offset + rv_radius;
    const double margin = 2.0;
    if (cx - std::max(outer, reach_left) < margin || cx + outer > size - 1 - margin ||
        cy - std::max(outer, rv_radius) < margin || cy + std::max(outer, rv_radius) > size - 1 - margin)
      throw ValidationError("phantom: geometry exceeds the image bounds");
  }
};

// Tissue grey levels before bias/noise; chosen distinct so the noiseless
// image's level sets are exactly the label regions.
constexpr float kPhantomBackground = 0.15f;
constexpr float kPhantomCavity = 0.85f;
constexpr float kPhantomMyocardium = 0.35f;
constexpr float kPhantomRv = 0.80f;

constexpr int32_t kClassBackground = 0;
constexpr int32_t kClassLvCavity = 1;
constexpr int32_t kClassMyocardium = 2;
constexpr int32_t kClassRvCavity = 3;

/// Cavity radius at frame t: cosine contraction, maximal at t=0 (ED),
/// minimal mid-cycle (ES).
inline double phantom_cavity_radius(const PhantomSpec& spec, int64_t t) {
  const double phase = 2.0 * 3.14159265358979323846 * static_cast<double>(t) /
                       static_cast<double>(spec.frames);
  return spec.r_es + (spec.r_ed - spec.r_es) * 0.5 * (1.0 + std::cos(phase));
}

inline std::pair<Volume, LabelVolume> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const int64_t S = spec.size, T = spec.frames, Z = spec.slices;
  const int64_t HW = S * S;

  Volume vol;
  vol.data = Tensor({T, Z, S, S});
  vol.geom = Geometry{1.8f, 1.8f, 10.0f, static_cast<float>(1.0 / static_cast<double>(T))};
  LabelVolume lab;
  lab.data = TensorT<int32_t>({T, Z, S, S});
  lab.geom = vol.geom;

  const double cx = 0.5 * static_cast<double>(S - 1) + spec.cx_off;
  const double cy = 0.5 * static_cast<double>(S - 1) + spec.cy_off;

  // one smooth static bias field shared by all frames and slices
  Rng field_rng(Rng::derive(spec.seed, 1));
  const double ph_x = field_rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double ph_y = field_rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  std::vector<float> bias(static_cast<size_t>(HW), 0.0f);
  if (spec.bias_amplitude > 0.0) {
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x)
        bias[static_cast<size_t>(y * S + x)] = static_cast<float>(
            spec.bias_amplitude *
            std::sin(2.0 * 3.14159265358979323846 * x / static_cast<double>(S) + ph_x) *
            std::sin(2.0 * 3.14159265358979323846 * y / static_cast<double>(S) + ph_y));
  }

  Rng noise_rng(Rng::derive(spec.seed, 2));
  for (int64_t t = 0; t < T; ++t) {
    const double r_cav_base = phantom_cavity_radius(spec, t);
    for (int64_t z = 0; z < Z; ++z) {
      const double taper =
          Z > 1 ? 1.0 - spec.apex_taper * static_cast<double>(z) / static_cast<double>(Z - 1)
                : 1.0;
      const double r_cav = r_cav_base * taper;
      const double r_out = (r_cav_base + spec.myo_thickness) * taper;
      const double r_rv = spec.rv_radius * taper;
      const double rv_cx = cx - spec.rv_offset * taper;

      float* img = vol.slice_ptr(t, z);
      int32_t* seg = lab.slice_ptr(t, z);
      for (int64_t y = 0; y < S; ++y) {
        const double dy = static_cast<double>(y) - cy;
        for (int64_t x = 0; x < S; ++x) {
          const double dx = static_cast<double>(x) - cx;
          const double d_lv = std::sqrt(dx * dx + dy * dy);
          const double drx = static_cast<double>(x) - rv_cx;
          const double d_rv = std::sqrt(drx * drx + dy * dy);

          int32_t cls = kClassBackground;
          float base = kPhantomBackground;
          if (d_lv <= r_cav) {
            cls = kClassLvCavity;
            base = kPhantomCavity;
          } else if (d_lv <= r_out) {
            cls = kClassMyocardium;
            base = kPhantomMyocardium;
          } else if (d_rv <= r_rv) {
            cls = kClassRvCavity;
            base = kPhantomRv;
          }
          seg[y * S + x] = cls;

          float v = base + bias[static_cast<size_t>(y * S + x)];
          if (spec.noise_sigma > 0.0)
            v += static_cast<float>(noise_rng.gaussian(0.0, spec.noise_sigma));
          img[y * S + x] = std::min(1.0f, std::max(0.0f, v));
        }
      }
    }
  }
  return {std::move(vol), std::move(lab)};
}

}  // namespace cseg
