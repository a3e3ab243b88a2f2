#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cseg/container.hpp"
#include "cseg/csv.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

/// Voxels of one structure on a [Z,H,W] grid, with physical spacing.
struct BinaryMask {
  TensorT<uint8_t> vox;  // [Z,H,W], 0 or 1
  Geometry geom;

  int64_t count() const {
    int64_t n = 0;
    for (uint8_t v : vox.data) n += v != 0;
    return n;
  }
};

/// A contour point at a voxel centre, in mm: (x, y, z) = (col*dx, row*dy, slice*dz).
struct ContourPoint {
  double x = 0.0, y = 0.0, z = 0.0;
};

/// Boundary voxels of a mask, embedded in physical space. Points are emitted
/// in (slice, row, col) scan order.
struct Contour {
  std::vector<ContourPoint> points;
  Geometry geom;
};

/// Select one class of a single-frame label volume as a binary mask.
inline BinaryMask class_mask(const LabelVolume& labels, int32_t class_id) {
  if (labels.frames() != 1)
    throw ShapeError("class_mask: expected a single frame, got " +
                     std::to_string(labels.frames()));
  const int64_t Z = labels.slices(), H = labels.height(), W = labels.width();
  BinaryMask m;
  m.vox = TensorT<uint8_t>({Z, H, W});
  m.geom = labels.geom;
  for (size_t i = 0; i < labels.data.data.size(); ++i)
    m.vox.data[i] = labels.data.data[i] == class_id ? 1 : 0;
  return m;
}

namespace detail {

inline void check_same_grid(const BinaryMask& a, const BinaryMask& b, const char* op) {
  if (a.vox.shape != b.vox.shape) throw ShapeError(std::string(op) + ": grid mismatch");
  if (a.geom.dx != b.geom.dx || a.geom.dy != b.geom.dy || a.geom.dz != b.geom.dz)
    throw ValidationError(std::string(op) + ": spacing mismatch");
}

// Directed nearest-point statistics: for every point of `from`, the minimal
// Euclidean distance to `to`, reduced to the sum and the maximum.
struct DirectedStats {
  double sum = 0.0;
  double max = 0.0;
};

inline DirectedStats directed_stats(const std::vector<ContourPoint>& from,
                                    const std::vector<ContourPoint>& to) {
  DirectedStats s;
  for (const ContourPoint& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const ContourPoint& q : to) {
      const double dx = p.x - q.x, dy = p.y - q.y, dz = p.z - q.z;
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    const double d = std::sqrt(best);
    s.sum += d;
    s.max = std::max(s.max, d);
  }
  return s;
}

}  // namespace detail

/// Dice overlap 2|A∩B| / (|A|+|B|). Both masks empty is perfect agreement (1).
inline double dice(const BinaryMask& a, const BinaryMask& b) {
  detail::check_same_grid(a, b, "dice");
  int64_t inter = 0, ca = 0, cb = 0;
  for (size_t i = 0; i < a.vox.data.size(); ++i) {
    const bool va = a.vox.data[i] != 0, vb = b.vox.data[i] != 0;
    inter += va && vb;
    ca += va;
    cb += vb;
  }
  if (ca + cb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
}

/// Extract the boundary of a mask: foreground voxels with at least one
/// background 4-neighbour in-plane, the grid edge counting as background.
/// Empty mask gives an empty contour.
inline Contour extract_contour(const BinaryMask& m) {
  const int64_t Z = m.vox.dim(0), H = m.vox.dim(1), W = m.vox.dim(2);
  Contour c;
  c.geom = m.geom;
  for (int64_t z = 0; z < Z; ++z) {
    const uint8_t* sl = m.vox.ptr() + z * H * W;
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        if (!sl[y * W + x]) continue;
        const bool boundary = y == 0 || !sl[(y - 1) * W + x] || y == H - 1 ||
                              !sl[(y + 1) * W + x] || x == 0 || !sl[y * W + x - 1] ||
                              x == W - 1 || !sl[y * W + x + 1];
        if (boundary)
          c.points.push_back({static_cast<double>(x) * m.geom.dx,
                              static_cast<double>(y) * m.geom.dy,
                              static_cast<double>(z) * m.geom.dz});
      }
    }
  }
  return c;
}

/// Symmetrised mean distance between two contours:
///   (1/2|∂A|) Σ d(p,∂B) + (1/2|∂B|) Σ d(q,∂A).
/// Undefined (nullopt) when either contour is empty.
inline std::optional<double> mean_contour_distance(const Contour& a, const Contour& b) {
  if (a.points.empty() || b.points.empty()) return std::nullopt;
  const detail::DirectedStats ab = detail::directed_stats(a.points, b.points);
  const detail::DirectedStats ba = detail::directed_stats(b.points, a.points);
  return ab.sum / (2.0 * static_cast<double>(a.points.size())) +
         ba.sum / (2.0 * static_cast<double>(b.points.size()));
}

/// Hausdorff distance max( max_p d(p,∂B), max_q d(q,∂A) ). With per_slice set,
/// the directed search is restricted to points of the same slice and the
/// worst slice wins; a slice where exactly one contour has points makes the
/// result undefined. Either contour empty is undefined in both modes.
inline std::optional<double> hausdorff(const Contour& a, const Contour& b,
                                       bool per_slice = false) {
  if (a.points.empty() || b.points.empty()) return std::nullopt;
  if (!per_slice) {
    const detail::DirectedStats ab = detail::directed_stats(a.points, b.points);
    const detail::DirectedStats ba = detail::directed_stats(b.points, a.points);
    return std::max(ab.max, ba.max);
  }
  // Points arrive in slice order, so each contour splits into runs of equal z.
  auto slice_of = [](const std::vector<ContourPoint>& pts, size_t& i) {
    const double z = pts[i].z;
    std::vector<ContourPoint> s;
    for (; i < pts.size() && pts[i].z == z; ++i) s.push_back(pts[i]);
    return s;
  };
  double worst = 0.0;
  size_t ia = 0, ib = 0;
  while (ia < a.points.size() || ib < b.points.size()) {
    const bool only_a = ib == b.points.size();
    const bool only_b = ia == a.points.size();
    if (!only_a && !only_b && a.points[ia].z != b.points[ib].z) return std::nullopt;
    if (only_a || only_b) return std::nullopt;
    const std::vector<ContourPoint> sa = slice_of(a.points, ia);
    const std::vector<ContourPoint> sb = slice_of(b.points, ib);
    worst = std::max(worst, std::max(detail::directed_stats(sa, sb).max,
                                     detail::directed_stats(sb, sa).max));
  }
  return worst;
}

/// Mask-level conveniences: contours are extracted with extract_contour.
inline std::optional<double> mean_contour_distance(const BinaryMask& a, const BinaryMask& b) {
  detail::check_same_grid(a, b, "mean_contour_distance");
  return mean_contour_distance(extract_contour(a), extract_contour(b));
}

inline std::optional<double> hausdorff(const BinaryMask& a, const BinaryMask& b,
                                       bool per_slice = false) {
  detail::check_same_grid(a, b, "hausdorff");
  return hausdorff(extract_contour(a), extract_contour(b), per_slice);
}

/// Metrics for one class of a segmentation pair. Distances are missing when
/// either side has no voxels of the class; Dice is always defined (1 when the
/// class is absent from both sides, 0 when absent from exactly one).
struct ClassMetrics {
  int32_t class_id = 0;
  double dice = 0.0;
  std::optional<double> mcd_mm;
  std::optional<double> hd_mm;
};

struct MetricReport {
  std::vector<ClassMetrics> classes;
};

/// Evaluate an automated segmentation against a manual one on the same grid,
/// one entry per requested class.
inline MetricReport evaluate_pair(const LabelVolume& auto_labels,
                                  const LabelVolume& manual_labels,
                                  const std::vector<int32_t>& classes) {
  if (auto_labels.data.shape != manual_labels.data.shape)
    throw ShapeError("evaluate_pair: grid mismatch");
  MetricReport report;
  for (int32_t cls : classes) {
    const BinaryMask a = class_mask(auto_labels, cls);
    const BinaryMask b = class_mask(manual_labels, cls);
    ClassMetrics cm;
    cm.class_id = cls;
    cm.dice = dice(a, b);
    const Contour ca = extract_contour(a), cb = extract_contour(b);
    if (!ca.points.empty() && !cb.points.empty()) {
      const detail::DirectedStats ab = detail::directed_stats(ca.points, cb.points);
      const detail::DirectedStats ba = detail::directed_stats(cb.points, ca.points);
      cm.mcd_mm = ab.sum / (2.0 * static_cast<double>(ca.points.size())) +
                  ba.sum / (2.0 * static_cast<double>(cb.points.size()));
      cm.hd_mm = std::max(ab.max, ba.max);
    }
    report.classes.push_back(cm);
  }
  return report;
}

/// One subject's report, for the CSV writer.
struct SubjectMetrics {
  std::string subject_id;
  MetricReport report;
};

/// Metric report CSV: subject_id,class,dice,mcd_mm,hd_mm with empty cells for
/// undefined distances.
inline void write_metrics_csv(const std::string& path,
                              const std::vector<SubjectMetrics>& subjects) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open metrics csv for writing: " + path);
  out << "subject_id,class,dice,mcd_mm,hd_mm\n";
  for (const SubjectMetrics& s : subjects) {
    for (const ClassMetrics& c : s.report.classes) {
      out << s.subject_id << ',' << c.class_id << ',' << csv_number(c.dice) << ',';
      if (c.mcd_mm) out << csv_number(*c.mcd_mm);
      out << ',';
      if (c.hd_mm) out << csv_number(*c.hd_mm);
      out << '\n';
    }
  }
  if (!out) throw IoError("error writing metrics csv: " + path);
}

}  // namespace cseg
