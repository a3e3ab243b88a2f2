#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

#include "cseg/metrics.hpp"
#include "cseg/phantom.hpp"
#include "cseg/rng.hpp"

using cseg::BinaryMask;
using cseg::ClassMetrics;
using cseg::Contour;
using cseg::Geometry;
using cseg::LabelVolume;
using cseg::MetricReport;
using cseg::PhantomSpec;
using cseg::Rng;
using cseg::ShapeError;
using cseg::SubjectMetrics;
using cseg::ValidationError;

namespace {

namespace fs = std::filesystem;

BinaryMask make_mask(int64_t Z, int64_t H, int64_t W, Geometry g = {}) {
  BinaryMask m;
  m.vox = cseg::TensorT<uint8_t>({Z, H, W});
  m.geom = g;
  return m;
}

void set_voxel(BinaryMask& m, int64_t z, int64_t y, int64_t x) {
  m.vox.data[static_cast<size_t>((z * m.vox.dim(1) + y) * m.vox.dim(2) + x)] = 1;
}

BinaryMask random_mask(Rng& rng, int64_t Z, int64_t H, int64_t W, double p, Geometry g) {
  BinaryMask m = make_mask(Z, H, W, g);
  for (auto& v : m.vox.data) v = rng.uniform() < p ? 1 : 0;
  return m;
}

// Independent boundary scan: foreground voxel with a background 4-neighbour
// in-plane, treating everything outside the grid as background.
std::vector<std::array<double, 3>> contour_bf(const BinaryMask& m) {
  const int64_t Z = m.vox.dim(0), H = m.vox.dim(1), W = m.vox.dim(2);
  auto at = [&](int64_t z, int64_t y, int64_t x) -> bool {
    if (y < 0 || y >= H || x < 0 || x >= W) return false;
    return m.vox.data[static_cast<size_t>((z * H + y) * W + x)] != 0;
  };
  std::vector<std::array<double, 3>> pts;
  for (int64_t z = 0; z < Z; ++z)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        if (!at(z, y, x)) continue;
        if (!at(z, y - 1, x) || !at(z, y + 1, x) || !at(z, y, x - 1) || !at(z, y, x + 1))
          pts.push_back({double(x) * m.geom.dx, double(y) * m.geom.dy, double(z) * m.geom.dz});
      }
  return pts;
}

double min_dist_bf(const std::array<double, 3>& p, const std::vector<std::array<double, 3>>& s) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : s) {
    const double d = std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                               (p[2] - q[2]) * (p[2] - q[2]));
    best = std::min(best, d);
  }
  return best;
}

std::optional<double> mcd_bf(const BinaryMask& a, const BinaryMask& b) {
  const auto ca = contour_bf(a), cb = contour_bf(b);
  if (ca.empty() || cb.empty()) return std::nullopt;
  double sa = 0.0, sb = 0.0;
  for (const auto& p : ca) sa += min_dist_bf(p, cb);
  for (const auto& q : cb) sb += min_dist_bf(q, ca);
  return sa / (2.0 * double(ca.size())) + sb / (2.0 * double(cb.size()));
}

std::optional<double> hd_bf(const BinaryMask& a, const BinaryMask& b) {
  const auto ca = contour_bf(a), cb = contour_bf(b);
  if (ca.empty() || cb.empty()) return std::nullopt;
  double worst = 0.0;
  for (const auto& p : ca) worst = std::max(worst, min_dist_bf(p, cb));
  for (const auto& q : cb) worst = std::max(worst, min_dist_bf(q, ca));
  return worst;
}

BinaryMask dilate_inplane(const BinaryMask& m) {
  const int64_t Z = m.vox.dim(0), H = m.vox.dim(1), W = m.vox.dim(2);
  BinaryMask out = m;
  for (int64_t z = 0; z < Z; ++z)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const size_t i = static_cast<size_t>((z * H + y) * W + x);
        if (m.vox.data[i]) continue;
        const bool touch =
            (y > 0 && m.vox.data[i - static_cast<size_t>(W)]) ||
            (y < H - 1 && m.vox.data[i + static_cast<size_t>(W)]) ||
            (x > 0 && m.vox.data[i - 1]) || (x < W - 1 && m.vox.data[i + 1]);
        if (touch) out.vox.data[i] = 1;
      }
  return out;
}

LabelVolume frame_of(const LabelVolume& lv, int64_t t) {
  LabelVolume out;
  const int64_t Z = lv.slices(), H = lv.height(), W = lv.width();
  out.data = cseg::TensorT<int32_t>({Z, H, W});
  out.geom = lv.geom;
  for (int64_t z = 0; z < Z; ++z) {
    const int32_t* src = lv.slice_ptr(t, z);
    std::copy(src, src + H * W, out.data.ptr() + z * H * W);
  }
  return out;
}

PhantomSpec small_spec(uint64_t seed) {
  PhantomSpec s;
  s.size = 64;
  s.frames = 2;
  s.slices = 2;
  s.r_ed = 12;
  s.r_es = 6;
  s.myo_thickness = 4;
  s.rv_radius = 8;
  s.rv_offset = 11;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("dice follows the overlap formula", "[metrics]") {
  BinaryMask a = make_mask(1, 4, 4), b = make_mask(1, 4, 4);

  SECTION("identical nonempty masks score 1") {
    set_voxel(a, 0, 1, 1);
    set_voxel(a, 0, 1, 2);
    b = a;
    REQUIRE(cseg::dice(a, b) == 1.0);
  }
  SECTION("disjoint nonempty masks score 0") {
    set_voxel(a, 0, 0, 0);
    set_voxel(b, 0, 3, 3);
    REQUIRE(cseg::dice(a, b) == 0.0);
  }
  SECTION("half-contained subset") {
    set_voxel(a, 0, 1, 1);
    set_voxel(a, 0, 1, 2);
    set_voxel(a, 0, 2, 1);
    set_voxel(a, 0, 2, 2);
    set_voxel(b, 0, 1, 1);
    set_voxel(b, 0, 1, 2);
    REQUIRE(cseg::dice(a, b) == 2.0 * 2.0 / 6.0);
    REQUIRE(cseg::dice(a, b) == cseg::dice(b, a));
  }
  SECTION("both empty is perfect agreement") { REQUIRE(cseg::dice(a, b) == 1.0); }
  SECTION("one empty scores 0") {
    set_voxel(a, 0, 2, 2);
    REQUIRE(cseg::dice(a, b) == 0.0);
  }
  SECTION("grid mismatch is a shape error") {
    BinaryMask c = make_mask(1, 4, 5);
    REQUIRE_THROWS_AS(cseg::dice(a, c), ShapeError);
  }
  SECTION("spacing mismatch is rejected") {
    BinaryMask c = make_mask(1, 4, 4, Geometry{1.0f, 1.0f, 2.0f, 0.0f});
    REQUIRE_THROWS_AS(cseg::dice(a, c), ValidationError);
  }
}

TEST_CASE("contour extraction on simple shapes", "[metrics]") {
  const Geometry g{1.8f, 1.8f, 10.0f, 0.0f};

  SECTION("single voxel is its own contour") {
    BinaryMask m = make_mask(2, 5, 5, g);
    set_voxel(m, 1, 2, 3);
    const Contour c = cseg::extract_contour(m);
    REQUIRE(c.points.size() == 1);
    REQUIRE(c.points[0].x == 3.0 * g.dx);
    REQUIRE(c.points[0].y == 2.0 * g.dy);
    REQUIRE(c.points[0].z == 1.0 * g.dz);
  }
  SECTION("filled 4x4 square keeps its 12 perimeter voxels") {
    BinaryMask m = make_mask(1, 6, 6, g);
    for (int64_t y = 1; y <= 4; ++y)
      for (int64_t x = 1; x <= 4; ++x) set_voxel(m, 0, y, x);
    REQUIRE(cseg::extract_contour(m).points.size() == 12);
  }
  SECTION("grid edge counts as background") {
    BinaryMask m = make_mask(1, 8, 8, g);
    for (auto& v : m.vox.data) v = 1;
    REQUIRE(cseg::extract_contour(m).points.size() == 28);
  }
  SECTION("empty mask gives an empty contour") {
    REQUIRE(cseg::extract_contour(make_mask(2, 4, 4, g)).points.empty());
  }
}

TEST_CASE("distances on constant-distance geometry", "[metrics]") {
  const Geometry g{1.8f, 1.8f, 10.0f, 0.0f};

  SECTION("identical masks have zero distance") {
    BinaryMask m = make_mask(1, 8, 8, g);
    set_voxel(m, 0, 2, 2);
    set_voxel(m, 0, 2, 3);
    set_voxel(m, 0, 3, 2);
    REQUIRE(cseg::mean_contour_distance(m, m) == 0.0);
    REQUIRE(cseg::hausdorff(m, m) == 0.0);
  }
  SECTION("parallel single-voxel lines 3 px apart at dx = 1.8 mm") {
    BinaryMask a = make_mask(1, 6, 10, g), b = make_mask(1, 6, 10, g);
    for (int64_t y = 0; y < 6; ++y) {
      set_voxel(a, 0, y, 2);
      set_voxel(b, 0, y, 5);
    }
    const auto mcd = cseg::mean_contour_distance(a, b);
    const auto hd = cseg::hausdorff(a, b);
    REQUIRE(mcd.has_value());
    REQUIRE(*mcd == Catch::Approx(5.4).margin(1e-3));
    REQUIRE(*hd == *mcd);
  }
  SECTION("empty side makes the distances undefined, never zero") {
    BinaryMask a = make_mask(1, 4, 4, g), b = make_mask(1, 4, 4, g);
    set_voxel(a, 0, 1, 1);
    REQUIRE_FALSE(cseg::mean_contour_distance(a, b).has_value());
    REQUIRE_FALSE(cseg::hausdorff(a, b).has_value());
    REQUIRE_FALSE(cseg::mean_contour_distance(b, a).has_value());
  }
}

TEST_CASE("random masks agree with the brute-force oracle", "[metrics]") {
  Rng rng(41);
  const std::array<Geometry, 3> geoms = {Geometry{1.0f, 1.0f, 1.0f, 0.0f},
                                         Geometry{1.8f, 1.8f, 10.0f, 0.0f},
                                         Geometry{1.25f, 2.0f, 2.0f, 0.0f}};
  int defined = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const int64_t Z = 1 + static_cast<int64_t>(rng.below(3));
    const int64_t H = 4 + static_cast<int64_t>(rng.below(13));
    const int64_t W = 4 + static_cast<int64_t>(rng.below(13));
    const Geometry g = geoms[rep % geoms.size()];
    const double p = 0.05 + 0.4 * rng.uniform();
    const BinaryMask a = random_mask(rng, Z, H, W, p, g);
    const BinaryMask b = random_mask(rng, Z, H, W, p, g);

    const Contour ca = cseg::extract_contour(a);
    const auto ref = contour_bf(a);
    REQUIRE(ca.points.size() == ref.size());
    for (size_t i = 0; i < ref.size(); ++i) {
      REQUIRE(ca.points[i].x == ref[i][0]);
      REQUIRE(ca.points[i].y == ref[i][1]);
      REQUIRE(ca.points[i].z == ref[i][2]);
    }

    const auto mcd = cseg::mean_contour_distance(a, b);
    const auto hd = cseg::hausdorff(a, b);
    const auto mcd_ref = mcd_bf(a, b);
    const auto hd_ref = hd_bf(a, b);
    REQUIRE(mcd.has_value() == mcd_ref.has_value());
    REQUIRE(hd.has_value() == hd_ref.has_value());
    if (mcd) {
      ++defined;
      REQUIRE(*mcd == Catch::Approx(*mcd_ref).margin(1e-9));
      REQUIRE(*hd == Catch::Approx(*hd_ref).margin(1e-9));
      REQUIRE(*mcd <= *hd);
      REQUIRE(*mcd == *cseg::mean_contour_distance(b, a));
      REQUIRE(*hd == *cseg::hausdorff(b, a));
    }
    REQUIRE(cseg::dice(a, b) == cseg::dice(b, a));
  }
  REQUIRE(defined > 150);
}

TEST_CASE("metrics are invariant under a common translation", "[metrics]") {
  Rng rng(17);
  const Geometry g{1.8f, 1.8f, 10.0f, 0.0f};
  const BinaryMask a0 = random_mask(rng, 2, 10, 10, 0.3, g);
  const BinaryMask b0 = random_mask(rng, 2, 10, 10, 0.3, g);
  auto shift = [&](const BinaryMask& m) {
    BinaryMask out = make_mask(3, 16, 16, g);
    for (int64_t z = 0; z < 2; ++z)
      for (int64_t y = 0; y < 10; ++y)
        for (int64_t x = 0; x < 10; ++x)
          if (m.vox.data[static_cast<size_t>((z * 10 + y) * 10 + x)])
            set_voxel(out, z + 1, y + 3, x + 2);
    return out;
  };
  const BinaryMask a1 = shift(a0), b1 = shift(b0);
  REQUIRE(cseg::dice(a0, b0) == cseg::dice(a1, b1));
  REQUIRE(*cseg::mean_contour_distance(a0, b0) == *cseg::mean_contour_distance(a1, b1));
  REQUIRE(*cseg::hausdorff(a0, b0) == *cseg::hausdorff(a1, b1));
}

TEST_CASE("per-slice hausdorff mode", "[metrics]") {
  const Geometry g{1.0f, 1.0f, 10.0f, 0.0f};

  SECTION("worst slice wins and never beats the 3D value") {
    Rng rng(29);
    for (int rep = 0; rep < 40; ++rep) {
      BinaryMask a = make_mask(2, 8, 8, g), b = make_mask(2, 8, 8, g);
      for (int64_t z = 0; z < 2; ++z) {
        // One guaranteed voxel per slice per mask keeps every slice two-sided.
        set_voxel(a, z, static_cast<int64_t>(rng.below(8)), static_cast<int64_t>(rng.below(8)));
        set_voxel(b, z, static_cast<int64_t>(rng.below(8)), static_cast<int64_t>(rng.below(8)));
        for (int k = 0; k < 6; ++k) {
          set_voxel(a, z, static_cast<int64_t>(rng.below(8)), static_cast<int64_t>(rng.below(8)));
          set_voxel(b, z, static_cast<int64_t>(rng.below(8)), static_cast<int64_t>(rng.below(8)));
        }
      }
      const auto full = cseg::hausdorff(a, b);
      const auto sliced = cseg::hausdorff(a, b, true);
      REQUIRE(sliced.has_value());
      REQUIRE(*sliced >= *full);

      // Slice-restricted brute force.
      double worst = 0.0;
      for (int64_t z = 0; z < 2; ++z) {
        BinaryMask az = make_mask(1, 8, 8, g), bz = make_mask(1, 8, 8, g);
        std::copy_n(a.vox.ptr() + z * 64, 64, az.vox.ptr());
        std::copy_n(b.vox.ptr() + z * 64, 64, bz.vox.ptr());
        worst = std::max(worst, *hd_bf(az, bz));
      }
      REQUIRE(*sliced == Catch::Approx(worst).margin(1e-9));
    }
  }
  SECTION("a one-sided slice makes the per-slice result undefined") {
    BinaryMask a = make_mask(2, 4, 4, g), b = make_mask(2, 4, 4, g);
    set_voxel(a, 0, 1, 1);
    set_voxel(b, 0, 2, 2);
    set_voxel(a, 1, 1, 1);  // slice 1 has no b points
    REQUIRE(cseg::hausdorff(a, b).has_value());
    REQUIRE_FALSE(cseg::hausdorff(a, b, true).has_value());
  }
  SECTION("identical masks still score zero per slice") {
    BinaryMask a = make_mask(2, 4, 4, g);
    set_voxel(a, 0, 1, 1);
    set_voxel(a, 1, 2, 2);
    REQUIRE(*cseg::hausdorff(a, a, true) == 0.0);
  }
}

TEST_CASE("evaluate_pair reports per-class metrics", "[metrics]") {
  const auto [vol, labels] = cseg::generate_phantom(small_spec(5));
  const LabelVolume manual = frame_of(labels, 0);
  const std::vector<int32_t> classes = {cseg::kClassLvCavity, cseg::kClassMyocardium,
                                        cseg::kClassRvCavity};

  SECTION("a segmentation agrees with itself") {
    const MetricReport r = cseg::evaluate_pair(manual, manual, classes);
    REQUIRE(r.classes.size() == 3);
    for (const ClassMetrics& c : r.classes) {
      REQUIRE(c.dice == 1.0);
      REQUIRE(*c.mcd_mm == 0.0);
      REQUIRE(*c.hd_mm == 0.0);
    }
  }
  SECTION("a class missing on one side: Dice 0, distances undefined") {
    LabelVolume auto_seg = manual;
    for (auto& v : auto_seg.data.data)
      if (v == cseg::kClassRvCavity) v = cseg::kClassBackground;
    const MetricReport r = cseg::evaluate_pair(auto_seg, manual, classes);
    REQUIRE(r.classes[2].class_id == cseg::kClassRvCavity);
    REQUIRE(r.classes[2].dice == 0.0);
    REQUIRE_FALSE(r.classes[2].mcd_mm.has_value());
    REQUIRE_FALSE(r.classes[2].hd_mm.has_value());
    REQUIRE(r.classes[0].dice == 1.0);
  }
  SECTION("a class absent from both sides: Dice 1, distances undefined") {
    const MetricReport r = cseg::evaluate_pair(manual, manual, {7});
    REQUIRE(r.classes[0].dice == 1.0);
    REQUIRE_FALSE(r.classes[0].mcd_mm.has_value());
    REQUIRE_FALSE(r.classes[0].hd_mm.has_value());
  }
  SECTION("grid mismatch is rejected") {
    LabelVolume other;
    other.data = cseg::TensorT<int32_t>({1, 4, 4});
    other.geom = manual.geom;
    REQUIRE_THROWS_AS(cseg::evaluate_pair(manual, other, classes), ShapeError);
  }
  SECTION("one-pixel dilation moves contours by about one in-plane spacing") {
    const BinaryMask lv = cseg::class_mask(manual, cseg::kClassLvCavity);
    const BinaryMask fat = dilate_inplane(lv);
    const auto mcd = cseg::mean_contour_distance(lv, fat);
    REQUIRE(mcd.has_value());
    REQUIRE(*mcd == Catch::Approx(1.8).margin(0.3 * 1.8));
  }
}

TEST_CASE("metrics csv layout", "[metrics]") {
  const fs::path path = fs::temp_directory_path() / "cseg_metrics_report.csv";
  SubjectMetrics s1;
  s1.subject_id = "s1";
  s1.report.classes.push_back({1, 1.0, 0.0, 0.0});
  s1.report.classes.push_back({3, 0.0, std::nullopt, std::nullopt});
  SubjectMetrics s2;
  s2.subject_id = "s2";
  s2.report.classes.push_back({1, 0.5, 2.25, 4.5});

  cseg::write_metrics_csv(path.string(), {s1, s2});
  std::ifstream in(path);
  std::stringstream got;
  got << in.rdbuf();
  REQUIRE(got.str() ==
          "subject_id,class,dice,mcd_mm,hd_mm\n"
          "s1,1,1,0,0\n"
          "s1,3,0,,\n"
          "s2,1,0.5,2.25,4.5\n");
  fs::remove(path);

  REQUIRE_THROWS_AS(cseg::write_metrics_csv("/nonexistent/dir/m.csv", {s1}), cseg::IoError);
}
