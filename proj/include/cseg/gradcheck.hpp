#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cseg {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int64_t checked = 0;
  double tolerance = 0.0;
  bool pass = false;

  std::string summary() const {
    return (pass ? "PASS" : "FAIL") + std::string(": max relative error ") +
           std::to_string(max_rel_err) + " over " + std::to_string(checked) +
           " coordinates (tolerance " + std::to_string(tolerance) + ")";
  }
};

/// Central-difference gradient check, double precision throughout.
/// f evaluates the scalar objective at a point; analytic is the gradient
/// under test at x0. indices selects coordinates to probe (empty = all).
inline GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                                  const std::vector<double>& x0,
                                  const std::vector<double>& analytic, double h, double tolerance,
                                  const std::vector<int64_t>& indices = {}) {
  GradCheckReport rep;
  rep.tolerance = tolerance;
  std::vector<double> x = x0;
  std::vector<int64_t> idx = indices;
  if (idx.empty()) {
    idx.resize(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) idx[i] = static_cast<int64_t>(i);
  }
  for (int64_t i : idx) {
    const double save = x[static_cast<size_t>(i)];
    x[static_cast<size_t>(i)] = save + h;
    const double fp = f(x);
    x[static_cast<size_t>(i)] = save - h;
    const double fm = f(x);
    x[static_cast<size_t>(i)] = save;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[static_cast<size_t>(i)];
    const double scale = std::max(std::abs(a), std::abs(numeric));
    // Both effectively zero: no meaningful relative comparison.
    const double rel = scale < 1e-10 ? 0.0 : std::abs(a - numeric) / scale;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
      rep.worst_analytic = a;
      rep.worst_numeric = numeric;
    }
    rep.checked += 1;
  }
  rep.pass = rep.max_rel_err < tolerance;
  return rep;
}

}  // namespace cseg
