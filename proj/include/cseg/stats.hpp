#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cseg/clinical.hpp"
#include "cseg/csv.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

/// One clinical measure observed on the same subjects by two methods.
/// x holds the reference (manual) reading, y the automated one.
struct PairedSample {
  std::string measure;
  std::string units;
  std::vector<double> x;
  std::vector<double> y;

  int64_t size() const { return static_cast<int64_t>(x.size()); }
};

namespace detail {

inline void check_paired(const PairedSample& s, const char* who) {
  if (s.x.size() != s.y.size())
    throw ValidationError(std::string(who) + ": x and y differ in length");
  if (s.x.size() < 2)
    throw InsufficientDataError(std::string(who) + ": need at least 2 pairs, got " +
                                std::to_string(s.x.size()));
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double u : v) s += u;
  return s / static_cast<double>(v.size());
}

/// Sample variance with the n-1 denominator (two-pass).
inline double sample_var(const std::vector<double>& v, double mean) {
  double ss = 0.0;
  for (double u : v) ss += (u - mean) * (u - mean);
  return ss / static_cast<double>(v.size() - 1);
}

inline double sample_sd(const std::vector<double>& v, double mean) {
  return std::sqrt(sample_var(v, mean));
}

/// Continued-fraction kernel for the regularised incomplete beta function
/// (modified Lentz iteration).
inline double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericError("beta_cf: continued fraction did not converge");
}

/// Regularised incomplete beta I_x(a, b). The x >= 1 fast path returns
/// exactly 1, so a zero t statistic maps to p == 1 with no rounding.
inline double reg_inc_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("reg_inc_beta: a and b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

}  // namespace detail

/// Summary of per-subject differences between two raters of one measure.
/// Relative differences are percentages of the reference value.
struct PairedDiffStats {
  double mean_abs = 0.0;
  double sd_abs = 0.0;
  double mean_rel_pct = 0.0;
  double sd_rel_pct = 0.0;
  int64_t n = 0;
};

/// Mean and SD of |y-x| and of 100*|y-x| / max(|x|, rel_floor). The floor
/// keeps near-zero reference values from blowing up the relative column.
inline PairedDiffStats paired_diff_stats(const PairedSample& s, double rel_floor = 1e-9) {
  detail::check_paired(s, "paired_diff_stats");
  if (!(rel_floor > 0.0)) throw ValidationError("paired_diff_stats: rel_floor must be positive");
  const int64_t n = s.size();
  std::vector<double> abs_d(n), rel_d(n);
  for (int64_t i = 0; i < n; ++i) {
    abs_d[i] = std::fabs(s.y[i] - s.x[i]);
    rel_d[i] = 100.0 * abs_d[i] / std::max(std::fabs(s.x[i]), rel_floor);
  }
  PairedDiffStats out;
  out.n = n;
  out.mean_abs = detail::mean_of(abs_d);
  out.sd_abs = detail::sample_sd(abs_d, out.mean_abs);
  out.mean_rel_pct = detail::mean_of(rel_d);
  out.sd_rel_pct = detail::sample_sd(rel_d, out.mean_rel_pct);
  return out;
}

/// Bland-Altman agreement summary: bias is the mean of y-x and the limits
/// sit 1.96 sample SDs either side of it.
struct BlandAltmanResult {
  double bias = 0.0;
  double sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  int64_t n = 0;
};

inline BlandAltmanResult bland_altman(const PairedSample& s) {
  detail::check_paired(s, "bland_altman");
  const int64_t n = s.size();
  std::vector<double> d(n);
  for (int64_t i = 0; i < n; ++i) d[i] = s.y[i] - s.x[i];
  BlandAltmanResult r;
  r.n = n;
  r.bias = detail::mean_of(d);
  r.sd = detail::sample_sd(d, r.bias);
  r.lower = r.bias - 1.96 * r.sd;
  r.upper = r.bias + 1.96 * r.sd;
  return r;
}

/// Welch unequal-variance t statistic with Welch-Satterthwaite degrees of
/// freedom and a two-sided p-value.
struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

inline WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  const int64_t na = static_cast<int64_t>(a.size());
  const int64_t nb = static_cast<int64_t>(b.size());
  if (na < 2 || nb < 2)
    throw InsufficientDataError("welch_t_test: each group needs at least 2 values");
  const double ma = detail::mean_of(a), mb = detail::mean_of(b);
  const double va = detail::sample_var(a, ma), vb = detail::sample_var(b, mb);
  if (va == 0.0 && vb == 0.0)
    throw InsufficientDataError("welch_t_test: both groups have zero variance");
  const double sa = va / static_cast<double>(na);
  const double sb = vb / static_cast<double>(nb);
  const double se2 = sa + sb;
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 /
         (sa * sa / static_cast<double>(na - 1) + sb * sb / static_cast<double>(nb - 1));
  // Two-sided p from the t survival function: P(|T| > t) = I_x(df/2, 1/2)
  // at x = df / (df + t^2).
  r.p = detail::reg_inc_beta(0.5 * r.df, 0.5, r.df / (r.df + r.t * r.t));
  return r;
}

/// One measure's row in a two-group comparison table. Cells are optional so
/// undersized groups stay visible instead of crashing the table.
struct CohortRow {
  std::string measure;
  int64_t n_a = 0;
  int64_t n_b = 0;
  std::optional<double> mean_a, sd_a;
  std::optional<double> mean_b, sd_b;
  std::optional<double> p;
};

struct CohortTable {
  std::string group_a;
  std::string group_b;
  std::vector<CohortRow> rows;
};

/// Group comparison over the standard ventricular measures. The two group
/// names are taken from the labels and ordered lexicographically so the
/// table does not depend on subject order. Rows where either group has
/// fewer than 2 usable values (or both groups are constant) omit the p.
inline CohortTable cohort_table(const std::vector<SubjectMeasures>& subjects,
                                const std::vector<std::string>& group_of) {
  if (group_of.size() != subjects.size())
    throw ValidationError("cohort_table: need one group label per subject");
  std::set<std::string> names(group_of.begin(), group_of.end());
  if (names.size() != 2)
    throw ConfigError("cohort_table: expected exactly 2 distinct groups, got " +
                      std::to_string(names.size()));
  CohortTable table;
  table.group_a = *names.begin();
  table.group_b = *std::next(names.begin());

  struct Field {
    const char* name;
    std::optional<double> (*get)(const SubjectMeasures&);
  };
  const Field fields[] = {
      {"LVEDV_ml", [](const SubjectMeasures& m) { return std::optional<double>(m.lvedv_ml); }},
      {"LVESV_ml", [](const SubjectMeasures& m) { return std::optional<double>(m.lvesv_ml); }},
      {"LVM_g", [](const SubjectMeasures& m) { return std::optional<double>(m.lvm_g); }},
      {"RVEDV_ml", [](const SubjectMeasures& m) { return std::optional<double>(m.rvedv_ml); }},
      {"RVESV_ml", [](const SubjectMeasures& m) { return std::optional<double>(m.rvesv_ml); }},
      {"LVSV_ml", [](const SubjectMeasures& m) { return std::optional<double>(m.lvsv_ml); }},
      {"LVEF_pct", [](const SubjectMeasures& m) { return std::optional<double>(m.lvef_pct); }},
      {"LVCO_lpm", [](const SubjectMeasures& m) { return m.lvco_lpm; }},
      {"RVSV_ml", [](const SubjectMeasures& m) { return std::optional<double>(m.rvsv_ml); }},
      {"RVEF_pct", [](const SubjectMeasures& m) { return std::optional<double>(m.rvef_pct); }},
      {"RVCO_lpm", [](const SubjectMeasures& m) { return m.rvco_lpm; }},
  };

  for (const Field& f : fields) {
    CohortRow row;
    row.measure = f.name;
    std::vector<double> va, vb;
    for (size_t i = 0; i < subjects.size(); ++i) {
      const std::optional<double> v = f.get(subjects[i]);
      if (!v) continue;
      if (group_of[i] == table.group_a)
        va.push_back(*v);
      else
        vb.push_back(*v);
    }
    row.n_a = static_cast<int64_t>(va.size());
    row.n_b = static_cast<int64_t>(vb.size());
    if (!va.empty()) {
      row.mean_a = detail::mean_of(va);
      if (va.size() >= 2) row.sd_a = detail::sample_sd(va, *row.mean_a);
    }
    if (!vb.empty()) {
      row.mean_b = detail::mean_of(vb);
      if (vb.size() >= 2) row.sd_b = detail::sample_sd(vb, *row.mean_b);
    }
    if (va.size() >= 2 && vb.size() >= 2) {
      try {
        row.p = welch_t_test(va, vb).p;
      } catch (const InsufficientDataError&) {
        // Both groups constant: leave the p cell empty.
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// Per-measure paired-difference table (absolute and relative columns).
inline void write_paired_diff_csv(const std::string& path,
                                  const std::vector<PairedSample>& samples,
                                  double rel_floor = 1e-9) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open paired diff csv for writing: " + path);
  out << "measure,mean_abs_diff,sd_abs_diff,mean_rel_diff_pct,sd_rel_diff_pct\n";
  for (const PairedSample& s : samples) {
    const PairedDiffStats d = paired_diff_stats(s, rel_floor);
    out << s.measure << ',' << csv_number(d.mean_abs) << ',' << csv_number(d.sd_abs) << ','
        << csv_number(d.mean_rel_pct) << ',' << csv_number(d.sd_rel_pct) << '\n';
  }
  out.flush();
  if (!out) throw IoError("error writing paired diff csv: " + path);
}

/// Two-group comparison table. Empty cells mark undersized groups.
inline void write_cohort_csv(const std::string& path, const CohortTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open cohort csv for writing: " + path);
  const auto cell = [](const std::optional<double>& v) {
    return v ? csv_number(*v) : std::string();
  };
  out << "measure,group_a_mean,group_a_sd,group_b_mean,group_b_sd,p_value\n";
  for (const CohortRow& r : table.rows) {
    out << r.measure << ',' << cell(r.mean_a) << ',' << cell(r.sd_a) << ',' << cell(r.mean_b)
        << ',' << cell(r.sd_b) << ',' << cell(r.p) << '\n';
  }
  out.flush();
  if (!out) throw IoError("error writing cohort csv: " + path);
}

namespace detail {

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace detail

/// Self-contained Bland-Altman plot: one point per pair at (mean, difference)
/// plus solid bias and dashed 1.96-SD limit lines.
inline void write_bland_altman_svg(const std::string& path, const PairedSample& s) {
  const BlandAltmanResult r = bland_altman(s);
  const int64_t n = s.size();
  std::vector<double> mean(n), diff(n);
  for (int64_t i = 0; i < n; ++i) {
    mean[i] = 0.5 * (s.x[i] + s.y[i]);
    diff[i] = s.y[i] - s.x[i];
  }
  double x_lo = *std::min_element(mean.begin(), mean.end());
  double x_hi = *std::max_element(mean.begin(), mean.end());
  double y_lo = std::min(*std::min_element(diff.begin(), diff.end()), r.lower);
  double y_hi = std::max(*std::max_element(diff.begin(), diff.end()), r.upper);
  const auto pad = [](double& lo, double& hi) {
    const double span = hi - lo;
    const double margin = span > 0.0 ? 0.08 * span : 1.0;
    lo -= margin;
    hi += margin;
  };
  pad(x_lo, x_hi);
  pad(y_lo, y_hi);

  const double kw = 640.0, kh = 480.0;
  const double ml = 72.0, mr = 24.0, mt = 46.0, mb = 56.0;
  const auto px = [&](double v) { return ml + (v - x_lo) / (x_hi - x_lo) * (kw - ml - mr); };
  const auto py = [&](double v) { return kh - mb - (v - y_lo) / (y_hi - y_lo) * (kh - mt - mb); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
         "viewBox=\"0 0 640 480\">\n";
  svg << "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
  std::string title = s.measure;
  if (!s.units.empty()) title += " (" + s.units + ")";
  svg << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">Bland-Altman: "
      << title << ", n=" << n << "</text>\n";

  // Axes with five ticks per side.
  svg << "<line x1=\"" << ml << "\" y1=\"" << kh - mb << "\" x2=\"" << kw - mr << "\" y2=\""
      << kh - mb << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << kh - mb
      << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x_lo + (x_hi - x_lo) * k / 4.0;
    const double fy = y_lo + (y_hi - y_lo) * k / 4.0;
    svg << "<line x1=\"" << px(fx) << "\" y1=\"" << kh - mb << "\" x2=\"" << px(fx) << "\" y2=\""
        << kh - mb + 5 << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << px(fx) << "\" y=\"" << kh - mb + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << detail::svg_num(fx) << "</text>\n";
    svg << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(fy) << "\" x2=\"" << ml << "\" y2=\""
        << py(fy) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << detail::svg_num(fy) << "</text>\n";
  }
  svg << "<text x=\"" << (ml + kw - mr) / 2.0 << "\" y=\"" << kh - 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">mean of the two "
         "methods</text>\n";
  svg << "<text x=\"18\" y=\"" << (mt + kh - mb) / 2.0
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
         "transform=\"rotate(-90 18 "
      << (mt + kh - mb) / 2.0 << ")\">difference (auto - manual)</text>\n";

  // Bias and limit lines with value labels at the right edge.
  const auto hline = [&](double v, const char* dash, const char* colour, const std::string& tag) {
    svg << "<line x1=\"" << ml << "\" y1=\"" << py(v) << "\" x2=\"" << kw - mr << "\" y2=\""
        << py(v) << "\" stroke=\"" << colour << "\"" << dash << "/>\n";
    svg << "<text x=\"" << kw - mr - 4 << "\" y=\"" << py(v) - 5
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << colour
        << "\">" << tag << "</text>\n";
  };
  hline(r.bias, "", "#1f6fb2", "bias " + detail::svg_num(r.bias));
  hline(r.upper, " stroke-dasharray=\"6 4\"", "#b23b3b",
        "+1.96 SD " + detail::svg_num(r.upper));
  hline(r.lower, " stroke-dasharray=\"6 4\"", "#b23b3b",
        "-1.96 SD " + detail::svg_num(r.lower));

  for (int64_t i = 0; i < n; ++i)
    svg << "<circle cx=\"" << px(mean[i]) << "\" cy=\"" << py(diff[i])
        << "\" r=\"3\" fill=\"#333333\" fill-opacity=\"0.75\"/>\n";
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open svg for writing: " + path);
  out << svg.str();
  out.flush();
  if (!out) throw IoError("error writing svg: " + path);
}

}  // namespace cseg
