#pragma once
#include "magfiber/dispersion.hpp"
#include "magfiber/errors.hpp"
#include "magfiber/field.hpp"
#include "magfiber/format.hpp"
#include "magfiber/radial_operator.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace magfiber {

inline double psi_norm_squared(const RadialGrid &grid, std::span<const double> psi) {
  return weighted_dot(grid, psi, psi);
}

inline void check_psi(const RadialGrid &grid, std::span<const double> psi, const char *what) {
  if (psi.size() != grid.size())
    throw Error(ErrorKind::precondition, std::string(what) + ": psi does not match the grid");
  const double nrm = psi_norm_squared(grid, psi);
  if (std::fabs(nrm - 1.0) > 1e-6)
    throw Error(ErrorKind::precondition, std::string(what) + ": psi is not normalized (norm^2 = " +
                                             format_double(nrm) + ")");
}

//! Centered differences with second-order one-sided ends.
inline std::vector<double> grid_derivative(std::span<const double> f, double h) {
  const std::size_t n = f.size();
  std::vector<double> d(n, 0.0);
  if (n < 3)
    throw Error(ErrorKind::precondition, "grid_derivative: need at least 3 samples");
  d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
  for (std::size_t i = 1; i + 1 < n; ++i)
    d[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
  d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
  return d;
}

//! Feynman-Hellmann: lambda'(p) = 2 int (a + p) psi^2 r dr, by the midpoint
//! rule on the grid nodes. On the discrete operator this is the exact
//! derivative of the discrete eigenvalue.
inline double velocity_fh(const FieldProfile &field, const RadialGrid &grid,
                          std::span<const double> psi, double p) {
  check_psi(grid, psi, "velocity_fh");
  const double h = grid.spacing();
  double s = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    const double r = grid.node(i);
    s += (field.a(r) + p) * psi[i] * psi[i] * r;
  }
  return 2.0 * s * h;
}

//! Same, with the potential already sampled at the nodes.
inline double velocity_fh(const FiberAssembler &assembler, std::span<const double> psi,
                          double p) {
  const auto &grid = assembler.grid();
  check_psi(grid, psi, "velocity_fh");
  const auto &a = assembler.potential();
  const double h = grid.spacing();
  double s = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i)
    s += (a[i] + p) * psi[i] * psi[i] * grid.node(i);
  return 2.0 * s * h;
}

//! Velocity from the integration-by-parts identities, free of p:
//!   m != 0: -2 int r b^-2 b' psi'^2 - 1/2 int v' psi^2 + 2 m^2 int r^-2 b^-1 psi^2,
//!   m == 0 (power law only): the same first term and the v' term regularized
//!   by subtracting psi(0)^2, with psi(0) extrapolated quadratically from the
//!   first three nodes. psi vanishes beyond R, so the subtracted constant is
//!   integrated analytically over (R, infinity).
inline double velocity_ibp(const FieldProfile &field, const RadialGrid &grid, int m,
                           std::span<const double> psi) {
  check_psi(grid, psi, "velocity_ibp");
  const double h = grid.spacing();
  const auto dpsi = grid_derivative(psi, h);
  const std::size_t n = psi.size();
  if (m == 0) {
    if (field.kind() != FieldKind::power_law)
      throw Error(ErrorKind::formula_unavailable,
                  "velocity_ibp: no m = 0 identity for tabulated fields");
    const double d = field.delta();
    const double b0 = field.b0();
    const double c = (1.0 - d) * (1.0 - d) * (1.0 + d) / (2.0 * b0);
    const double psi0 = (15.0 * psi[0] - 10.0 * psi[1] + 3.0 * psi[2]) / 8.0;
    const double psi02 = psi0 * psi0;
    double kinetic = 0.0, reg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = grid.node(i);
      const double rd = std::pow(r, d);
      kinetic += rd * dpsi[i] * dpsi[i];
      if (c != 0.0)
        reg += rd / (r * r) * (psi[i] * psi[i] - psi02);
    }
    double out = 2.0 * d / b0 * kinetic * h;
    if (c != 0.0) {
      const double tail = psi02 * std::pow(grid.R(), d - 1.0) / (1.0 - d);
      out -= c * (reg * h - tail);
    }
    return out;
  }
  const DerivedFieldData data(field);
  const double m2 = static_cast<double>(m) * static_cast<double>(m);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = grid.node(i);
    const double b = field.b(r);
    s += -2.0 * r * data.b_prime(r) / (b * b) * dpsi[i] * dpsi[i] -
         0.5 * data.v_prime(r) * psi[i] * psi[i] + 2.0 * m2 * psi[i] * psi[i] / (r * r * b);
  }
  return s * h;
}

struct FdVelocity {
  double value = 0.0;
  bool one_sided = false; // boundary sample: widened tolerance applies
};

//! Derivative of a sampled curve at sample j: centered, Richardson-extrapolated
//! (five points) when the neighbourhood is uniform, one-sided at the ends.
inline FdVelocity velocity_fd(const DispersionCurve &curve, std::size_t j) {
  const auto &p = curve.p;
  const auto &l = curve.lambda;
  const std::size_t n = curve.size();
  if (n < 3)
    throw Error(ErrorKind::precondition, "velocity_fd: need at least 3 samples");
  if (j >= n)
    throw Error(ErrorKind::precondition, "velocity_fd: index out of range");
  auto uniform = [&](std::size_t a, std::size_t b) {
    const double step = p[a + 1] - p[a];
    for (std::size_t k = a; k < b; ++k)
      if (std::fabs(p[k + 1] - p[k] - step) > 1e-9 * std::fabs(step))
        return false;
    return true;
  };
  if (j == 0 || j + 1 == n) {
    const bool lo = j == 0;
    const std::size_t a = lo ? 0 : n - 3;
    const double dp = p[a + 1] - p[a];
    double v;
    if (uniform(a, a + 2))
      v = lo ? (-3.0 * l[0] + 4.0 * l[1] - l[2]) / (2.0 * dp)
             : (3.0 * l[n - 1] - 4.0 * l[n - 2] + l[n - 3]) / (2.0 * dp);
    else
      v = lo ? (l[1] - l[0]) / (p[1] - p[0]) : (l[n - 1] - l[n - 2]) / (p[n - 1] - p[n - 2]);
    return {v, true};
  }
  if (j >= 2 && j + 2 < n && uniform(j - 2, j + 2)) {
    const double dp = p[j + 1] - p[j];
    return {(8.0 * (l[j + 1] - l[j - 1]) - (l[j + 2] - l[j - 2])) / (12.0 * dp), false};
  }
  return {(l[j + 1] - l[j - 1]) / (p[j + 1] - p[j - 1]), false};
}

//! Five-point central difference of lambda_n at p with step dp, solving the
//! fibers directly.
inline double velocity_fd_local(const FiberSolver &solver, double p, int n, double dp) {
  if (!(dp > 0.0))
    throw Error(ErrorKind::precondition, "velocity_fd: dp must be > 0");
  const double lm2 = solver.eigenvalue(p - 2.0 * dp, n);
  const double lm1 = solver.eigenvalue(p - dp, n);
  const double lp1 = solver.eigenvalue(p + dp, n);
  const double lp2 = solver.eigenvalue(p + 2.0 * dp, n);
  return (8.0 * (lp1 - lm1) - (lp2 - lm2)) / (12.0 * dp);
}

inline double relative_discrepancy(double x, double y) {
  return std::fabs(x - y) / std::max({std::fabs(x), std::fabs(y), 1e-12});
}

struct VelocityEstimate {
  double p = 0.0;
  int n = 1;
  int m = 0;
  double v_fh = 0.0;
  std::optional<double> v_ibp;
  double v_fd = 0.0;
  double agreement = 0.0; // max pairwise relative discrepancy
};

//! All three estimators at one momentum.
inline VelocityEstimate estimate_velocity(const FiberSolver &solver, double p, int n,
                                          double dp = 0.01) {
  VelocityEstimate e;
  e.p = p;
  e.n = n;
  e.m = solver.m();
  const auto pair = solver.eigenpair(p, n);
  e.v_fh = velocity_fh(solver.assembler(), pair.psi, p);
  try {
    e.v_ibp = velocity_ibp(solver.field(), solver.grid(), solver.m(), pair.psi);
  } catch (const Error &err) {
    if (err.kind() != ErrorKind::formula_unavailable)
      throw;
  }
  e.v_fd = velocity_fd_local(solver, p, n, dp);
  e.agreement = relative_discrepancy(e.v_fh, e.v_fd);
  if (e.v_ibp) {
    e.agreement = std::max(e.agreement, relative_discrepancy(e.v_fh, *e.v_ibp));
    e.agreement = std::max(e.agreement, relative_discrepancy(e.v_fd, *e.v_ibp));
  }
  return e;
}

enum class SignClass { all_positive, sign_change, all_negative, inconclusive };

inline const char *to_string(SignClass s) {
  switch (s) {
  case SignClass::all_positive: return "all_positive";
  case SignClass::sign_change: return "sign_change";
  case SignClass::all_negative: return "all_negative";
  case SignClass::inconclusive: return "inconclusive";
  }
  return "unknown";
}

struct SignOptions {
  double dp = 0.01;             // local finite-difference step
  double dead_band = 1e-6;      // |v| below this is not a sign decision
  double tolerance = 1e-3;      // relative estimator agreement
  double crossing_tol = 1e-10;  // bisection width for p*
  unsigned threads = 1;
};

struct SignCertificate {
  SignClass sign = SignClass::inconclusive;
  std::vector<double> p_star; // refined sign changes, increasing
  std::vector<double> p, v_fh, v_fd;
  double max_disagreement = 0.0;
  std::vector<std::string> diagnostics;
};

//! Sign of lambda_{n,m}' over p_grid. v_fh decides; the local finite
//! difference must agree within the tolerance (absolute dead band near 0).
//! Samples inside the dead band are re-decided with a refined dp.
inline SignCertificate sign_certificate(const FiberSolver &solver, int n,
                                        std::span<const double> p_grid,
                                        const SignOptions &opts = {}) {
  check_increasing(p_grid, "sign_certificate");
  SignCertificate cert;
  const std::size_t count = p_grid.size();
  cert.p.assign(p_grid.begin(), p_grid.end());
  cert.v_fh.assign(count, 0.0);
  cert.v_fd.assign(count, 0.0);
  parallel_for(count, opts.threads, [&](std::size_t j) {
    const auto pair = solver.eigenpair(p_grid[j], n);
    cert.v_fh[j] = velocity_fh(solver.assembler(), pair.psi, p_grid[j]);
    cert.v_fd[j] = velocity_fd_local(solver, p_grid[j], n, opts.dp);
  });

  std::vector<int> sgn(count, 0);
  bool disagree = false;
  for (std::size_t j = 0; j < count; ++j) {
    double fh = cert.v_fh[j], fd = cert.v_fd[j];
    const double diff = std::fabs(fh - fd);
    cert.max_disagreement =
        std::max(cert.max_disagreement, diff / std::max({std::fabs(fh), std::fabs(fd), 1e-12}));
    if (diff > opts.tolerance * std::max(std::fabs(fh), std::fabs(fd)) + opts.dead_band) {
      disagree = true;
      cert.diagnostics.push_back("estimators disagree at p = " + format_double(p_grid[j]) +
                                 ": v_fh = " + format_double(fh) + ", v_fd = " + format_double(fd));
      continue;
    }
    if (std::fabs(fh) < opts.dead_band) {
      fd = velocity_fd_local(solver, p_grid[j], n, 0.25 * opts.dp);
      if (std::fabs(fd) < opts.dead_band || (fd > 0) != (fh > 0)) {
        cert.diagnostics.push_back("velocity within dead band at p = " + format_double(p_grid[j]));
        continue;
      }
    }
    sgn[j] = fh > 0.0 ? 1 : -1;
  }
  if (disagree) {
    cert.sign = SignClass::inconclusive;
    return cert;
  }
  int first = 0;
  bool pos = false, neg = false;
  for (int s : sgn) {
    pos = pos || s > 0;
    neg = neg || s < 0;
    if (!first)
      first = s;
  }
  if (!pos && !neg) {
    cert.sign = SignClass::inconclusive;
    return cert;
  }
  if (!neg) {
    cert.sign = SignClass::all_positive;
    return cert;
  }
  if (!pos) {
    cert.sign = SignClass::all_negative;
    return cert;
  }
  cert.sign = SignClass::sign_change;
  auto v_at = [&](double p) {
    const auto pair = solver.eigenpair(p, n);
    return velocity_fh(solver.assembler(), pair.psi, p);
  };
  std::size_t last = count;
  for (std::size_t j = 0; j < count; ++j) {
    if (sgn[j] == 0)
      continue;
    if (last < count && sgn[j] != sgn[last]) {
      double lo = p_grid[last], hi = p_grid[j];
      const int s_lo = sgn[last];
      while (hi - lo > opts.crossing_tol * std::max(1.0, std::fabs(lo))) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi)
          break;
        ((v_at(mid) > 0.0 ? 1 : -1) == s_lo ? lo : hi) = mid;
      }
      cert.p_star.push_back(0.5 * (lo + hi));
    }
    last = j;
  }
  return cert;
}

//! Pointwise sufficient condition for lambda' >= 0: b' <= 0 and
//! r^2 b v' <= 4 m^2 at every grid node.
inline bool monotonicity_sufficient_condition(const FieldProfile &field,
                                              const RadialGrid &grid, int m) {
  const DerivedFieldData data(field);
  const double bound = 4.0 * static_cast<double>(m) * static_cast<double>(m);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double r = grid.node(i);
    if (data.b_prime(r) > 0.0)
      return false;
    if (r * r * field.b(r) * data.v_prime(r) > bound * (1.0 + 1e-12) + 1e-12)
      return false;
  }
  return true;
}

} // namespace magfiber
