#pragma once
#include <cstdio>
#include <string>

namespace magfiber {

//! Shortest round-trip-safe decimal form; used for every numeric output so
//! reruns produce byte-identical files.
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

} // namespace magfiber
