#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "cseg/container.hpp"
#include "cseg/csv.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

/// Myocardial tissue density, g/mL. Every mass computation takes it as a
/// defaulted argument, so overriding is possible but always explicit.
constexpr double kMyocardialDensityGPerMl = 1.05;

/// Which label ids mean which cardiac structure. Entries are optional because
/// long-axis tasks segment fewer structures.
struct ClassDict {
  std::optional<int32_t> lv_cavity;
  std::optional<int32_t> myocardium;
  std::optional<int32_t> rv_cavity;
};

/// The short-axis convention used throughout: 1 = LV cavity, 2 = myocardium,
/// 3 = RV cavity (0 is background).
inline ClassDict short_axis_classes() { return ClassDict{1, 2, 3}; }

/// Volume of one label class in one frame: voxel count times voxel volume,
/// reported in mL.
inline double chamber_volume(const LabelVolume& labels, int32_t class_id, int64_t frame) {
  if (!(labels.geom.dx > 0.0f) || !(labels.geom.dy > 0.0f) || !(labels.geom.dz > 0.0f))
    throw ValidationError("chamber_volume: nonpositive voxel spacing");
  if (class_id < 0)
    throw ValidationError("chamber_volume: unknown class id " + std::to_string(class_id));
  if (frame < 0 || frame >= labels.frames())
    throw ValidationError("chamber_volume: frame " + std::to_string(frame) + " out of range");
  const int64_t Z = labels.slices(), HW = labels.height() * labels.width();
  int64_t count = 0;
  for (int64_t z = 0; z < Z; ++z) {
    const int32_t* sl = labels.slice_ptr(frame, z);
    for (int64_t i = 0; i < HW; ++i) count += sl[i] == class_id;
  }
  const double voxel_mm3 = static_cast<double>(labels.geom.dx) *
                           static_cast<double>(labels.geom.dy) *
                           static_cast<double>(labels.geom.dz);
  return static_cast<double>(count) * voxel_mm3 / 1000.0;
}

/// Per-frame volume trace of one class, in mL.
inline std::vector<double> volume_trace(const LabelVolume& labels, int32_t class_id) {
  std::vector<double> trace;
  trace.reserve(static_cast<size_t>(labels.frames()));
  for (int64_t t = 0; t < labels.frames(); ++t)
    trace.push_back(chamber_volume(labels, class_id, t));
  return trace;
}

/// LV myocardial mass in gram: myocardial volume times tissue density.
inline double lv_mass(const LabelVolume& labels, int64_t frame, const ClassDict& dict,
                      double density_g_per_ml = kMyocardialDensityGPerMl) {
  if (!dict.myocardium)
    throw ValidationError("lv_mass: class dictionary lacks a myocardium class");
  return chamber_volume(labels, *dict.myocardium, frame) * density_g_per_ml;
}

/// Pick the ED and ES frames from an LV cavity volume trace: ED is frame 0
/// (cine acquisitions start at end-diastole), ES is the volume argmin, first
/// index on ties.
inline std::pair<int64_t, int64_t> select_ed_es(const std::vector<double>& lv_trace) {
  if (lv_trace.size() < 2)
    throw InsufficientDataError("select_ed_es: need at least 2 frames, got " +
                                std::to_string(lv_trace.size()));
  if (std::all_of(lv_trace.begin(), lv_trace.end(), [](double v) { return v == 0.0; }))
    throw ValidationError("select_ed_es: no cavity detected");
  const auto min_it = std::min_element(lv_trace.begin(), lv_trace.end());
  return {0, min_it - lv_trace.begin()};
}

/// Stroke volume family for one chamber. CO is missing when no heart rate is
/// known.
struct DerivedMeasures {
  double sv_ml = 0.0;
  double ef_pct = 0.0;
  std::optional<double> co_lpm;
};

inline DerivedMeasures derived_measures(double edv_ml, double esv_ml,
                                        std::optional<double> heart_rate_bpm) {
  if (edv_ml == 0.0)
    throw UndefinedMeasureError("derived_measures: ejection fraction undefined for zero EDV");
  DerivedMeasures m;
  m.sv_ml = edv_ml - esv_ml;
  m.ef_pct = 100.0 * m.sv_ml / edv_ml;
  if (heart_rate_bpm) {
    if (!(*heart_rate_bpm > 0.0))
      throw ValidationError("derived_measures: heart rate must be > 0");
    m.co_lpm = m.sv_ml * *heart_rate_bpm / 1000.0;
  }
  return m;
}

/// Full measure set for one subject's segmented sequence.
struct SubjectMeasures {
  std::string subject_id;
  double lvedv_ml = 0.0, lvesv_ml = 0.0, lvm_g = 0.0;
  double rvedv_ml = 0.0, rvesv_ml = 0.0;
  double lvsv_ml = 0.0, lvef_pct = 0.0;
  std::optional<double> lvco_lpm;
  double rvsv_ml = 0.0, rvef_pct = 0.0;
  std::optional<double> rvco_lpm;
  int64_t ed_frame = 0, es_frame = 0;
  std::optional<double> heart_rate_bpm;
};

/// Derive every clinical measure from one labeled sequence. The ES frame
/// comes from the LV cavity trace and is shared with the RV (es_override
/// replaces it); LV mass is measured at ED. When no heart rate is given it is
/// derived from the container's frame interval where present, otherwise CO is
/// left missing.
inline SubjectMeasures subject_measures(const std::string& subject_id, const LabelVolume& labels,
                                        const ClassDict& dict,
                                        std::optional<double> heart_rate_bpm = std::nullopt,
                                        std::optional<int64_t> es_override = std::nullopt,
                                        double density_g_per_ml = kMyocardialDensityGPerMl) {
  if (!dict.lv_cavity || !dict.myocardium || !dict.rv_cavity)
    throw ValidationError("subject_measures: class dictionary must name LV cavity, myocardium "
                          "and RV cavity");
  SubjectMeasures out;
  out.subject_id = subject_id;

  const std::vector<double> lv_trace = volume_trace(labels, *dict.lv_cavity);
  const auto [ed, es] = select_ed_es(lv_trace);
  out.ed_frame = ed;
  out.es_frame = es;
  if (es_override) {
    if (*es_override < 0 || *es_override >= labels.frames())
      throw ValidationError("subject_measures: ES override frame out of range");
    out.es_frame = *es_override;
  }

  if (!heart_rate_bpm && labels.geom.frame_interval > 0.0f)
    heart_rate_bpm = 60.0 / (static_cast<double>(labels.frames()) *
                             static_cast<double>(labels.geom.frame_interval));
  out.heart_rate_bpm = heart_rate_bpm;

  out.lvedv_ml = lv_trace[static_cast<size_t>(out.ed_frame)];
  out.lvesv_ml = lv_trace[static_cast<size_t>(out.es_frame)];
  out.lvm_g = lv_mass(labels, out.ed_frame, dict, density_g_per_ml);
  out.rvedv_ml = chamber_volume(labels, *dict.rv_cavity, out.ed_frame);
  out.rvesv_ml = chamber_volume(labels, *dict.rv_cavity, out.es_frame);

  const DerivedMeasures lv = derived_measures(out.lvedv_ml, out.lvesv_ml, heart_rate_bpm);
  out.lvsv_ml = lv.sv_ml;
  out.lvef_pct = lv.ef_pct;
  out.lvco_lpm = lv.co_lpm;
  const DerivedMeasures rv = derived_measures(out.rvedv_ml, out.rvesv_ml, heart_rate_bpm);
  out.rvsv_ml = rv.sv_ml;
  out.rvef_pct = rv.ef_pct;
  out.rvco_lpm = rv.co_lpm;
  return out;
}

/// Measures report CSV, one row per subject; CO cells are empty when no heart
/// rate was available.
inline void write_measures_csv(const std::string& path,
                               const std::vector<SubjectMeasures>& subjects) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open measures csv for writing: " + path);
  out << "subject_id,LVEDV_ml,LVESV_ml,LVM_g,RVEDV_ml,RVESV_ml,LVSV_ml,LVEF_pct,LVCO_lpm,"
         "RVSV_ml,RVEF_pct,RVCO_lpm,ed_frame,es_frame\n";
  for (const SubjectMeasures& s : subjects) {
    out << s.subject_id << ',' << csv_number(s.lvedv_ml) << ',' << csv_number(s.lvesv_ml) << ','
        << csv_number(s.lvm_g) << ',' << csv_number(s.rvedv_ml) << ','
        << csv_number(s.rvesv_ml) << ',' << csv_number(s.lvsv_ml) << ','
        << csv_number(s.lvef_pct) << ',';
    if (s.lvco_lpm) out << csv_number(*s.lvco_lpm);
    out << ',' << csv_number(s.rvsv_ml) << ',' << csv_number(s.rvef_pct) << ',';
    if (s.rvco_lpm) out << csv_number(*s.rvco_lpm);
    out << ',' << s.ed_frame << ',' << s.es_frame << '\n';
  }
  if (!out) throw IoError("error writing measures csv: " + path);
}

}  // namespace cseg
