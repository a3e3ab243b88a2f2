#pragma once

#include <cstdio>
#include <string>

namespace cseg {

/// Compact numeric cell for CSV reports: shortest %.9g form, so integers stay
/// integer-looking and doubles keep enough digits to round-trip visibly.
inline std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace cseg
