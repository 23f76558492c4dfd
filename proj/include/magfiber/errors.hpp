#pragma once
#include <stdexcept>
#include <string>

namespace magfiber {

enum class ErrorKind {
  domain,                // argument outside the mathematical domain (r <= 0, bad delta, ...)
  range,                 // argument outside a tabulated range
  insufficient_data,     // not enough samples to differentiate / fit
  below_potential_range, // a(r) = k has no solution
  precondition,          // caller broke a documented precondition
  convergence,           // iterative solver did not meet its target
  formula_unavailable,   // closed-form route not defined for this input
  phase_resolution,      // momentum grid too coarse for the requested time
  io,
  config
};

inline const char *to_string(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::domain: return "domain";
  case ErrorKind::range: return "range";
  case ErrorKind::insufficient_data: return "insufficient_data";
  case ErrorKind::below_potential_range: return "below_potential_range";
  case ErrorKind::precondition: return "precondition";
  case ErrorKind::convergence: return "convergence";
  case ErrorKind::formula_unavailable: return "formula_unavailable";
  case ErrorKind::phase_resolution: return "phase_resolution";
  case ErrorKind::io: return "io";
  case ErrorKind::config: return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

} // namespace magfiber
