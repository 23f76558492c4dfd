#pragma once
#include "magfiber/dispersion.hpp"
#include "magfiber/errors.hpp"
#include "magfiber/format.hpp"
#include "magfiber/group_velocity.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cfloat>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace magfiber {

using cplx = std::complex<double>;

//! A maximal p-range on which lambda'' keeps one sign. Endpoints are either
//! zeros of lambda'' (`*_is_zero`) or the ends of the sweep.
struct MonotonicityInterval {
  double p_lo = 0.0;
  double p_hi = 0.0;
  bool lo_is_zero = false;
  bool hi_is_zero = false;
  int curvature_sign = 0; // sign of lambda'' inside
};

namespace detail {

inline double curve_noise_floor(const DispersionCurve &c) {
  const double h = c.grid.spacing();
  double lmax = 1.0;
  for (double l : c.lambda)
    lmax = std::max(lmax, std::fabs(l));
  return 100.0 * DBL_EPSILON * (4.0 / (h * h) + lmax);
}

} // namespace detail

//! Splits the sweep at sign changes of the second difference of lambda.
//! Differences below the eigenvalue noise floor carry no sign. With
//! `refine`, each zero is bisected on the second difference evaluated by
//! direct fiber solves at the sweep step.
inline std::vector<MonotonicityInterval>
detect_intervals(const DispersionCurve &curve, const FiberSolver *refine = nullptr) {
  const std::size_t n = curve.size();
  if (n < 3)
    throw Error(ErrorKind::precondition, "detect_intervals: need at least 3 samples");
  const auto &p = curve.p;
  const auto &l = curve.lambda;
  const double floor = detail::curve_noise_floor(curve);
  // second difference normalized to lambda'' at interior samples
  std::vector<double> d2(n, 0.0);
  std::vector<int> s(n, 0);
  for (std::size_t j = 1; j + 1 < n; ++j) {
    const double hl = p[j] - p[j - 1], hr = p[j + 1] - p[j];
    const double raw = (l[j + 1] - l[j]) / hr - (l[j] - l[j - 1]) / hl;
    d2[j] = 2.0 * raw / (hl + hr);
    const double noise = floor * (1.0 / hl + 1.0 / hr);
    s[j] = std::fabs(raw) <= noise ? 0 : (raw > 0 ? 1 : -1);
  }
  std::vector<MonotonicityInterval> out;
  MonotonicityInterval cur;
  cur.p_lo = p.front();
  std::size_t last = 0; // last interior index with a sign
  for (std::size_t j = 1; j + 1 < n; ++j) {
    if (s[j] == 0)
      continue;
    if (!cur.curvature_sign) {
      cur.curvature_sign = s[j];
    } else if (s[j] != cur.curvature_sign) {
      double z;
      if (refine) {
        const int lev = curve.n;
        const double dp = p[j] - p[j - 1];
        auto second = [&](double x) {
          return refine->eigenvalue(x + dp, lev) - 2.0 * refine->eigenvalue(x, lev) +
                 refine->eigenvalue(x - dp, lev);
        };
        double lo = p[last], hi = p[j];
        const double s_lo = second(lo);
        for (int it = 0; it < 60 && hi - lo > 1e-10 * std::max(1.0, std::fabs(lo)); ++it) {
          const double mid = 0.5 * (lo + hi);
          ((second(mid) > 0) == (s_lo > 0) ? lo : hi) = mid;
        }
        z = 0.5 * (lo + hi);
      } else {
        z = p[last] + (p[j] - p[last]) * d2[last] / (d2[last] - d2[j]);
      }
      cur.p_hi = z;
      cur.hi_is_zero = true;
      out.push_back(cur);
      cur = MonotonicityInterval{};
      cur.p_lo = z;
      cur.lo_is_zero = true;
      cur.curvature_sign = s[j];
    }
    last = j;
  }
  cur.p_hi = p.back();
  out.push_back(cur);
  return out;
}

//! One dispersion branch prepared for propagation: the curve with its
//! eigenfunction bank on a uniform p grid, Feynman-Hellmann velocities, and
//! lambda'' from differencing those velocities.
struct BranchData {
  DispersionCurve curve;
  std::vector<double> velocity;
  std::vector<double> curvature;

  double step() const noexcept { return curve.p[1] - curve.p[0]; }
};

inline BranchData branch_data(const FieldProfile &field, DispersionCurve curve) {
  const std::size_t n = curve.size();
  if (!curve.has_psi())
    throw Error(ErrorKind::precondition, "branch_data: curve lacks its eigenfunction bank");
  if (n < 5)
    throw Error(ErrorKind::precondition, "branch_data: need at least 5 samples");
  const double dp = curve.p[1] - curve.p[0];
  for (std::size_t j = 1; j < n; ++j)
    if (std::fabs(curve.p[j] - curve.p[j - 1] - dp) > 1e-9 * dp)
      throw Error(ErrorKind::precondition, "branch_data: momentum grid must be uniform");
  BranchData b;
  const FiberAssembler assembler(field, curve.grid, curve.m);
  b.velocity.resize(n);
  for (std::size_t j = 0; j < n; ++j)
    b.velocity[j] = velocity_fh(assembler, curve.psi[j], curve.p[j]);
  b.curvature = grid_derivative(b.velocity, dp);
  b.curve = std::move(curve);
  return b;
}

struct GaussianParams {
  double p0 = 0.0;
  double sigma = 0.0;
};

//! Momentum profile f sampled on the branch's p grid, supported strictly
//! inside one monotonicity interval.
struct WavePacketSpec {
  int n = 1;
  int m = 0;
  std::vector<cplx> f;
  std::size_t interval_id = 0;
  MonotonicityInterval interval;
  double support_lo = 0.0;
  double support_hi = 0.0;
  std::optional<GaussianParams> gaussian;

  double norm_squared(double dp) const {
    double s = 0.0;
    for (const auto &v : f)
      s += std::norm(v);
    return s * dp;
  }
};

namespace detail {

inline std::size_t containing_interval(std::span<const MonotonicityInterval> iv, double lo,
                                       double hi, double margin) {
  for (std::size_t k = 0; k < iv.size(); ++k)
    if (lo >= iv[k].p_lo + margin - 1e-12 && hi <= iv[k].p_hi - margin + 1e-12)
      return k;
  throw Error(ErrorKind::precondition,
              "packet support [" + format_double(lo) + ", " + format_double(hi) +
                  "] is not inside one monotonicity interval with a 2-step margin");
}

} // namespace detail

//! exp(-(p - p0)^2 / (2 sigma^2)) cut off at |p - p0| = 4 sigma.
inline WavePacketSpec gaussian_packet(const BranchData &branch,
                                      std::span<const MonotonicityInterval> intervals,
                                      double p0, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(p0))
    throw Error(ErrorKind::precondition, "gaussian packet: need finite p0 and sigma > 0");
  WavePacketSpec spec;
  spec.n = branch.curve.n;
  spec.m = branch.curve.m;
  spec.support_lo = p0 - 4.0 * sigma;
  spec.support_hi = p0 + 4.0 * sigma;
  spec.interval_id = detail::containing_interval(intervals, spec.support_lo, spec.support_hi,
                                                 2.0 * branch.step());
  spec.interval = intervals[spec.interval_id];
  spec.gaussian = GaussianParams{p0, sigma};
  spec.f.resize(branch.curve.size());
  for (std::size_t j = 0; j < spec.f.size(); ++j) {
    const double x = branch.curve.p[j] - p0;
    spec.f[j] = std::fabs(x) <= 4.0 * sigma ? std::exp(-x * x / (2.0 * sigma * sigma)) : 0.0;
  }
  return spec;
}

inline WavePacketSpec zero_packet(const BranchData &branch,
                                  std::span<const MonotonicityInterval> intervals,
                                  std::size_t interval_id) {
  if (interval_id >= intervals.size())
    throw Error(ErrorKind::precondition, "zero packet: interval index out of range");
  WavePacketSpec spec;
  spec.n = branch.curve.n;
  spec.m = branch.curve.m;
  spec.interval_id = interval_id;
  spec.interval = intervals[interval_id];
  spec.support_lo = spec.interval.p_lo;
  spec.support_hi = spec.interval.p_hi;
  spec.f.assign(branch.curve.size(), 0.0);
  return spec;
}

//! Velocity range over supp f.
inline std::pair<double, double> support_velocities(const BranchData &b,
                                                    const WavePacketSpec &spec) {
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t j = 0; j < spec.f.size(); ++j)
    if (spec.f[j] != 0.0) {
      lo = std::min(lo, b.velocity[j]);
      hi = std::max(hi, b.velocity[j]);
    }
  if (lo > hi) {
    lo = hi = b.velocity[b.velocity.size() / 2];
  }
  return {lo, hi};
}

//! Window in x3 holding the packet at time t: the cone of support velocities
//! widened by 20% on each side plus the initial spread ~ 50 / (support width).
struct X3Window {
  double center = 0.0;
  double half_width = 0.0;
};

inline X3Window packet_window(double v_lo, double v_hi, double support_width, double t) {
  X3Window w;
  w.center = 0.5 * (v_lo + v_hi) * t;
  w.half_width = 0.6 * (v_hi - v_lo) * std::fabs(t) + 50.0 / support_width;
  return w;
}

//! Largest p step for which max |d(p x3 - lambda t)/dp| * dp <= pi/4 over the
//! window, the phase-resolution criterion of the quadrature.
inline double required_p_step(double v_lo, double v_hi, double support_width, double t) {
  const auto w = packet_window(v_lo, v_hi, support_width, t);
  double worst = 0.0;
  for (double x : {w.center - w.half_width, w.center + w.half_width})
    for (double v : {v_lo, v_hi})
      worst = std::max(worst, std::fabs(x - v * t));
  return std::numbers::pi / (4.0 * worst);
}

//! Uniform momentum grid for a packet supported on [lo, hi] that resolves
//! the phase up to |t| <= t_max: velocities are estimated by a coarse pass
//! and the grid extends 3 steps beyond the support.
inline std::vector<double> plan_packet_sweep(const FiberSolver &solver, int n, double lo,
                                             double hi, double t_max, double safety = 0.9) {
  if (!(hi > lo))
    throw Error(ErrorKind::precondition, "packet sweep: empty support");
  double v_lo = INFINITY, v_hi = -INFINITY;
  constexpr int coarse = 33;
  for (int k = 0; k < coarse; ++k) {
    const double p = lo + (hi - lo) * k / (coarse - 1);
    const auto pair = solver.eigenpair(p, n);
    const double v = velocity_fh(solver.assembler(), pair.psi, p);
    v_lo = std::min(v_lo, v);
    v_hi = std::max(v_hi, v);
  }
  const double width = hi - lo;
  // pad the coarse velocity range so the fine grid still passes its check
  const double pad = 0.05 * (v_hi - v_lo);
  double dp = safety * required_p_step(v_lo - pad, v_hi + pad, width, t_max);
  dp = std::min(dp, width / 32.0);
  const auto steps = static_cast<std::size_t>(std::ceil(width / dp));
  dp = width / static_cast<double>(steps);
  std::vector<double> grid;
  for (std::ptrdiff_t k = -3; k <= static_cast<std::ptrdiff_t>(steps) + 3; ++k)
    grid.push_back(lo + dp * static_cast<double>(k));
  return grid;
}

enum class EvolutionMethod { quadrature = 0, stationary_phase = 1 };

inline const char *to_string(EvolutionMethod m) {
  return m == EvolutionMethod::quadrature ? "quadrature" : "stationary_phase";
}

//! u(r_i, x3_k, t) on the product of the radial grid nodes and a uniform x3
//! grid, stored row-major (r outer).
struct EvolutionField {
  double t = 0.0;
  int n = 1;
  int m = 0;
  EvolutionMethod method = EvolutionMethod::quadrature;
  RadialGrid grid{12.0, RadialGrid::min_nodes};
  std::vector<double> x3;
  double dx = 0.0;
  std::vector<cplx> values;
  std::vector<std::uint8_t> mask; // per x3: 1 = excluded endpoint band

  std::size_t n_r() const noexcept { return grid.size(); }
  std::size_t n_x3() const noexcept { return x3.size(); }
  cplx &at(std::size_t i, std::size_t k) { return values[i * x3.size() + k]; }
  const cplx &at(std::size_t i, std::size_t k) const { return values[i * x3.size() + k]; }

  std::vector<double> gamma() const {
    std::vector<double> g;
    if (t != 0.0)
      for (double x : x3)
        g.push_back(x / t);
    return g;
  }
  bool masked(std::size_t k) const { return !mask.empty() && mask[k]; }
};

//! Radially integrated density rho(x3_k) = sum_i |u|^2 r_i h.
inline std::vector<double> x3_density(const EvolutionField &u) {
  std::vector<double> rho(u.n_x3(), 0.0);
  const double h = u.grid.spacing();
  for (std::size_t i = 0; i < u.n_r(); ++i) {
    const double w = u.grid.node(i) * h;
    for (std::size_t k = 0; k < u.n_x3(); ++k)
      rho[k] += std::norm(u.at(i, k)) * w;
  }
  return rho;
}

inline double norm_squared(const EvolutionField &u) {
  double s = 0.0;
  for (double d : x3_density(u))
    s += d;
  return s * u.dx;
}

//! sum over x3 cells of |u|^2 weighted by the cell average of q(x3).
inline double weighted_mass(const EvolutionField &u, const std::function<double(double)> &q,
                            int subsamples = 16) {
  const auto rho = x3_density(u);
  double s = 0.0;
  for (std::size_t k = 0; k < rho.size(); ++k) {
    if (rho[k] == 0.0)
      continue;
    double avg = 0.0;
    for (int j = 0; j < subsamples; ++j)
      avg += q(u.x3[k] + u.dx * ((j + 0.5) / subsamples - 0.5));
    s += rho[k] * avg / subsamples;
  }
  return s * u.dx;
}

inline double mass_fraction_positive(const EvolutionField &u) {
  const double total = norm_squared(u);
  if (total == 0.0)
    return 0.0;
  return weighted_mass(u, [](double x) { return x > 0.0 ? 1.0 : 0.0; }) / total;
}

inline double mass_fraction_negative(const EvolutionField &u) {
  const double total = norm_squared(u);
  if (total == 0.0)
    return 0.0;
  return weighted_mass(u, [](double x) { return x < 0.0 ? 1.0 : 0.0; }) / total;
}

//! Mass at r > radius.
inline double mass_beyond_radius(const EvolutionField &u, double radius) {
  const double h = u.grid.spacing();
  double s = 0.0;
  for (std::size_t i = 0; i < u.n_r(); ++i) {
    const double r = u.grid.node(i);
    if (r <= radius)
      continue;
    for (std::size_t k = 0; k < u.n_x3(); ++k)
      s += std::norm(u.at(i, k)) * r * h;
  }
  return s * u.dx;
}

//! Mass with x3 / t outside [lo, hi].
inline double mass_outside_cone(const EvolutionField &u, double lo, double hi) {
  if (u.t == 0.0)
    throw Error(ErrorKind::precondition, "mass outside cone: t must be nonzero");
  const double t = u.t;
  return weighted_mass(u, [&](double x) {
    const double g = x / t;
    return g < lo || g > hi ? 1.0 : 0.0;
  });
}

//! Smallest radius holding 99.9% of |psi|^2 r dr for every bank sample in
//! supp f.
inline double localization_radius(const BranchData &b, const WavePacketSpec &spec,
                                  double quantile = 0.999) {
  const auto &grid = b.curve.grid;
  const double h = grid.spacing();
  double out = 0.0;
  for (std::size_t j = 0; j < spec.f.size(); ++j) {
    if (spec.f[j] == 0.0)
      continue;
    const auto &psi = b.curve.psi[j];
    double cum = 0.0;
    std::size_t i = 0;
    for (; i < psi.size(); ++i) {
      cum += psi[i] * psi[i] * grid.node(i) * h;
      if (cum >= quantile)
        break;
    }
    out = std::max(out, grid.node(std::min(i, psi.size() - 1)) + 0.5 * h);
  }
  return out;
}

namespace detail {

inline void check_packet(const BranchData &b, const WavePacketSpec &spec) {
  if (spec.f.size() != b.curve.size())
    throw Error(ErrorKind::precondition, "packet profile does not match the branch grid");
  if (spec.n != b.curve.n || spec.m != b.curve.m)
    throw Error(ErrorKind::precondition, "packet labels (n, m) differ from the branch");
}

inline void check_phase_resolution(const BranchData &b, const WavePacketSpec &spec, double t) {
  const auto [v_lo, v_hi] = support_velocities(b, spec);
  const double width = std::max(spec.support_hi - spec.support_lo, b.step());
  const double need = required_p_step(v_lo, v_hi, width, t);
  if (b.step() > need * (1.0 + 1e-9))
    throw Error(ErrorKind::phase_resolution,
                "refine p grid: step " + format_double(b.step()) + " exceeds " +
                    format_double(need) + " required at t = " + format_double(t));
}

} // namespace detail

struct QuadratureOptions {
  std::size_t oversample = 4; // x3 cells per momentum sample, at least
  bool check_phase = true;
};

//! (2 pi)^{-1/2} int e^{i p x3 - i lambda(p) t} psi(r, p) f(p) dp by the
//! trapezoid rule on the uniform branch grid (f vanishes at the ends), for
//! all x3 in the periodic cell of length 2 pi / dp centred on the packet.
//! M = 2^k >= oversample * N_p points are evaluated per radius by one FFT.
inline EvolutionField evolve_quadrature(const BranchData &b, const WavePacketSpec &spec,
                                        double t, const QuadratureOptions &opts = {}) {
  detail::check_packet(b, spec);
  if (!std::isfinite(t))
    throw Error(ErrorKind::precondition, "evolve: t must be finite");
  if (opts.check_phase)
    detail::check_phase_resolution(b, spec, t);
  const auto &p = b.curve.p;
  const std::size_t np = p.size();
  const double dp = b.step();
  std::size_t M = 1;
  while (M < opts.oversample * np)
    M <<= 1;
  const auto [v_lo, v_hi] = support_velocities(b, spec);
  const double xc = 0.5 * (v_lo + v_hi) * t;

  EvolutionField u;
  u.t = t;
  u.n = spec.n;
  u.m = spec.m;
  u.method = EvolutionMethod::quadrature;
  u.grid = b.curve.grid;
  u.dx = 2.0 * std::numbers::pi / (static_cast<double>(M) * dp);
  u.x3.resize(M);
  const double half = static_cast<double>(M / 2);
  for (std::size_t k = 0; k < M; ++k)
    u.x3[k] = xc + (static_cast<double>(k) - half) * u.dx;
  const std::size_t nr = u.grid.size();
  u.values.assign(nr * M, cplx(0.0, 0.0));

  // temporal phase, x3 shift to the cell centre, and the (-1)^j re-centring
  std::vector<cplx> w(np);
  bool any = false;
  for (std::size_t j = 0; j < np; ++j) {
    if (spec.f[j] == 0.0)
      continue;
    any = true;
    const double sign = (j % 2) ? -1.0 : 1.0;
    w[j] = sign * spec.f[j] * std::polar(1.0, p[j] * xc - b.curve.lambda[j] * t);
  }
  if (!any)
    return u;
  std::vector<cplx> post(M);
  const double scale = dp / std::sqrt(2.0 * std::numbers::pi);
  for (std::size_t k = 0; k < M; ++k)
    post[k] = scale * std::polar(1.0, p[0] * (static_cast<double>(k) - half) * u.dx);

  auto *buf = static_cast<fftw_complex *>(fftw_malloc(sizeof(fftw_complex) * M));
  if (!buf)
    throw Error(ErrorKind::precondition, "evolve: FFT buffer allocation failed");
  fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(M), buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
  for (std::size_t i = 0; i < nr; ++i) {
    bool row = false;
    for (std::size_t k = 0; k < M; ++k)
      buf[k][0] = buf[k][1] = 0.0;
    for (std::size_t j = 0; j < np; ++j) {
      if (w[j] == 0.0)
        continue;
      const cplx c = w[j] * b.curve.psi[j][i];
      buf[j][0] = c.real();
      buf[j][1] = c.imag();
      row = row || c != 0.0;
    }
    if (!row)
      continue;
    fftw_execute(plan);
    cplx *out = u.values.data() + i * M;
    for (std::size_t k = 0; k < M; ++k)
      out[k] = post[k] * cplx(buf[k][0], buf[k][1]);
  }
  fftw_destroy_plan(plan);
  fftw_free(buf);
  return u;
}

//! The same quadrature summed directly at the given x3 points and radial
//! indices, O(N_p) per value; values are row-major (radius outer).
inline std::vector<cplx> evolve_quadrature_direct(const BranchData &b,
                                                  const WavePacketSpec &spec, double t,
                                                  std::span<const std::size_t> radii,
                                                  std::span<const double> x3) {
  detail::check_packet(b, spec);
  const auto &p = b.curve.p;
  const double scale = b.step() / std::sqrt(2.0 * std::numbers::pi);
  std::vector<cplx> out;
  out.reserve(radii.size() * x3.size());
  for (std::size_t i : radii)
    for (double x : x3) {
      cplx s = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j)
        if (spec.f[j] != 0.0)
          s += spec.f[j] * b.curve.psi[j][i] * std::polar(1.0, p[j] * x - b.curve.lambda[j] * t);
      out.push_back(scale * s);
    }
  return out;
}

//! Value, first and second p-derivatives of the quintic Hermite interpolant
//! of (lambda, lambda', lambda'') on [p_j, p_j+1], at offset s in [0, 1].
inline std::array<double, 3> hermite_eval(const BranchData &b, std::size_t j, double s) {
  const double H = b.step();
  const auto &l = b.curve.lambda;
  const auto &d = b.velocity;
  const auto &c = b.curvature;
  const double y0 = l[j], y1 = l[j + 1];
  const double d0 = H * d[j], d1 = H * d[j + 1];
  const double c0 = H * H * c[j], c1 = H * H * c[j + 1];
  const double dy = y1 - y0;
  const double a2 = 0.5 * c0;
  const double a3 = 10.0 * dy - (6.0 * d0 + 4.0 * d1) - 0.5 * (3.0 * c0 - c1);
  const double a4 = -15.0 * dy + (8.0 * d0 + 7.0 * d1) + 0.5 * (3.0 * c0 - 2.0 * c1);
  const double a5 = 6.0 * dy - 3.0 * (d0 + d1) - 0.5 * (c0 - c1);
  const double val = y0 + s * (d0 + s * (a2 + s * (a3 + s * (a4 + s * a5))));
  const double der = d0 + s * (2.0 * a2 + s * (3.0 * a3 + s * (4.0 * a4 + s * 5.0 * a5)));
  const double sec = 2.0 * a2 + s * (6.0 * a3 + s * (12.0 * a4 + s * 20.0 * a5));
  return {val, der / H, sec / (H * H)};
}

//! Inverse of the group-velocity map and the phase on one monotonicity
//! interval. lambda is represented by the quintic Hermite interpolant of
//! (lambda, lambda', lambda'') at the sweep nodes, so that nu solves
//! lambda'(nu) = gamma for that interpolant and Phi' = nu holds identically.
class StationaryPhaseData {
public:
  StationaryPhaseData(const BranchData &b, const MonotonicityInterval &iv)
      : branch_(&b), interval_(iv) {
    const auto &p = b.curve.p;
    j_lo_ = static_cast<std::size_t>(
        std::lower_bound(p.begin(), p.end(), iv.p_lo - 1e-12) - p.begin());
    j_hi_ = static_cast<std::size_t>(
        std::upper_bound(p.begin(), p.end(), iv.p_hi + 1e-12) - p.begin());
    if (j_hi_ < j_lo_ + 2)
      throw Error(ErrorKind::precondition, "stationary phase: interval holds < 2 samples");
    --j_hi_;
    const double va = b.velocity[j_lo_], vb = b.velocity[j_hi_];
    alpha_ = std::min(va, vb);
    beta_ = std::max(va, vb);
    increasing_ = vb > va;
    sign_ = iv.curvature_sign ? iv.curvature_sign : (increasing_ ? 1 : -1);
    for (std::size_t j = j_lo_ + 1; j <= j_hi_; ++j)
      if ((b.velocity[j] > b.velocity[j - 1]) != increasing_)
        throw Error(ErrorKind::precondition,
                    "stationary phase: velocity is not monotone on the interval");
  }

  double alpha() const noexcept { return alpha_; }
  double beta() const noexcept { return beta_; }
  int curvature_sign() const noexcept { return sign_; }
  const MonotonicityInterval &interval() const noexcept { return interval_; }

  bool chi(double gamma) const noexcept { return gamma > alpha_ && gamma < beta_; }

  //! e^{-+ i pi sgn(lambda'') / 4} for t >< 0.
  cplx tau(double t) const {
    const double s = t >= 0.0 ? -1.0 : 1.0;
    return std::polar(1.0, s * sign_ * std::numbers::pi / 4.0);
  }

  //! nu(gamma) for gamma in [alpha, beta].
  double nu(double gamma) const {
    const auto [j, s] = solve(gamma);
    return branch_->curve.p[j] + s * step();
  }
  double phi(double gamma) const {
    const auto [j, s] = solve(gamma);
    const auto e = eval(j, s);
    return (branch_->curve.p[j] + s * step()) * gamma - e[0];
  }
  //! lambda'(p), lambda''(p) of the interpolant.
  double lambda_prime(double p) const { return eval_at(p)[1]; }
  double lambda_second(double p) const { return eval_at(p)[2]; }
  double lambda_interp(double p) const { return eval_at(p)[0]; }
  double amp(double gamma) const {
    const auto [j, s] = solve(gamma);
    return 1.0 / std::sqrt(std::fabs(eval(j, s)[2]));
  }

  //! (index, offset in [0,1]) of nu(gamma) within the bank.
  std::pair<std::size_t, double> solve(double gamma) const {
    const auto &v = branch_->velocity;
    if (gamma < alpha_ || gamma > beta_)
      throw Error(ErrorKind::precondition, "stationary phase: gamma outside (alpha, beta)");
    // the cell [j, j+1] with gamma between its node velocities
    std::size_t lo = j_lo_, hi = j_hi_;
    auto below = [&](double x) { return increasing_ ? x <= gamma : x >= gamma; };
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      (below(v[mid]) ? lo : hi) = mid;
    }
    // safeguarded Newton on lambda_I'(s) - gamma over s in [0, 1]
    double a = 0.0, c = 1.0;
    double s = v[hi] != v[lo] ? (gamma - v[lo]) / (v[hi] - v[lo]) : 0.5;
    s = std::clamp(s, 0.0, 1.0);
    const double fa = eval(lo, 0.0)[1] - gamma;
    for (int it = 0; it < 100; ++it) {
      const auto e = eval(lo, s);
      const double g = e[1] - gamma;
      if (g == 0.0)
        break;
      ((g > 0) == (fa > 0) ? a : c) = s;
      const double ds = g / (e[2] * step());
      double next = s - ds;
      if (!(next > a && next < c))
        next = 0.5 * (a + c);
      if (std::fabs(next - s) < 1e-15 || c - a < 1e-15) {
        s = next;
        break;
      }
      s = next;
    }
    return {lo, s};
  }

private:
  double step() const { return branch_->step(); }

  std::array<double, 3> eval_at(double p) const {
    const auto &pp = branch_->curve.p;
    double x = (p - pp.front()) / step();
    auto j = static_cast<std::size_t>(std::clamp(std::floor(x), 0.0,
                                                 static_cast<double>(pp.size() - 2)));
    return eval(j, x - static_cast<double>(j));
  }

  std::array<double, 3> eval(std::size_t j, double s) const {
    return hermite_eval(*branch_, j, s);
  }

  const BranchData *branch_;
  MonotonicityInterval interval_;
  std::size_t j_lo_ = 0, j_hi_ = 0;
  double alpha_ = 0.0, beta_ = 0.0;
  bool increasing_ = true;
  int sign_ = 1;
};

struct StationaryPhaseOptions {
  double t_min = 50.0;
  double band_fraction = 0.02; // eps_gamma = band_fraction * (beta - alpha)
};

//! Leading large-|t| term
//!   tau e^{i Phi(gamma) t} psi(r, nu) |lambda''(nu)|^{-1/2} f(nu) chi(gamma) |t|^{-1/2}
//! at gamma = x3 / t. psi and f are interpolated linearly in p. Points within
//! eps_gamma of alpha or beta are masked (value 0, mask 1).
inline EvolutionField evolve_stationary_phase(const BranchData &b, const WavePacketSpec &spec,
                                              const StationaryPhaseData &sp,
                                              std::span<const double> x3, double t,
                                              const StationaryPhaseOptions &opts = {}) {
  detail::check_packet(b, spec);
  if (!(std::fabs(t) >= opts.t_min))
    throw Error(ErrorKind::precondition, "stationary phase: |t| = " + format_double(t) +
                                             " is below t_min = " + format_double(opts.t_min));
  if (x3.size() < 2)
    throw Error(ErrorKind::precondition, "stationary phase: need at least 2 x3 points");
  EvolutionField u;
  u.t = t;
  u.n = spec.n;
  u.m = spec.m;
  u.method = EvolutionMethod::stationary_phase;
  u.grid = b.curve.grid;
  u.x3.assign(x3.begin(), x3.end());
  u.dx = x3[1] - x3[0];
  const std::size_t nr = u.grid.size(), nx = x3.size();
  u.values.assign(nr * nx, cplx(0.0, 0.0));
  u.mask.assign(nx, 0);
  const double eps = opts.band_fraction * (sp.beta() - sp.alpha());
  const cplx tau = sp.tau(t);
  const double inv_sqrt_t = 1.0 / std::sqrt(std::fabs(t));
  for (std::size_t k = 0; k < nx; ++k) {
    const double g = x3[k] / t;
    if (!sp.chi(g))
      continue;
    if (g - sp.alpha() < eps || sp.beta() - g < eps) {
      u.mask[k] = 1;
      continue;
    }
    const auto [j, s] = sp.solve(g);
    const cplx fv = (1.0 - s) * spec.f[j] + s * spec.f[j + 1];
    if (fv == 0.0)
      continue;
    const double nu = b.curve.p[j] + s * b.step();
    const double lam = sp.lambda_interp(nu);
    const double amp = 1.0 / std::sqrt(std::fabs(sp.lambda_second(nu)));
    const cplx c = tau * std::polar(1.0, (nu * g - lam) * t) * amp * fv * inv_sqrt_t;
    const auto &pa = b.curve.psi[j];
    const auto &pb = b.curve.psi[j + 1];
    for (std::size_t i = 0; i < nr; ++i)
      u.at(i, k) = c * ((1.0 - s) * pa[i] + s * pb[i]);
  }
  return u;
}

//! ||u - v|| / ||u|| over x3 cells unmasked in both fields; the fields must
//! share grid and x3 samples.
inline double relative_l2_deviation(const EvolutionField &u, const EvolutionField &v) {
  if (!(u.grid == v.grid) || u.n_x3() != v.n_x3())
    throw Error(ErrorKind::precondition, "deviation: fields live on different grids");
  const double h = u.grid.spacing();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < u.n_r(); ++i) {
    const double w = u.grid.node(i) * h;
    for (std::size_t k = 0; k < u.n_x3(); ++k) {
      if (u.masked(k) || v.masked(k))
        continue;
      num += std::norm(u.at(i, k) - v.at(i, k)) * w;
      den += std::norm(u.at(i, k)) * w;
    }
  }
  return den > 0.0 ? std::sqrt(num / den) : (num > 0.0 ? INFINITY : 0.0);
}

//! int Q(lambda'(p)) |f(p)|^2 dp with |f|^2 interpolated linearly and
//! lambda' from the Hermite interpolant; Q == 1 reproduces sum |f_j|^2 dp.
inline double spectral_velocity_mass(const BranchData &b, const WavePacketSpec &spec,
                                     const std::function<double(double)> &q,
                                     int subsamples = 16) {
  const double dp = b.step();
  const auto &p = b.curve.p;
  double s = 0.0;
  for (std::size_t j = 0; j + 1 < p.size(); ++j) {
    const double f0 = std::norm(spec.f[j]), f1 = std::norm(spec.f[j + 1]);
    if (f0 == 0.0 && f1 == 0.0)
      continue;
    for (int k = 0; k < subsamples; ++k) {
      const double w = (k + 0.5) / subsamples;
      s += q(hermite_eval(b, j, w)[1]) * ((1.0 - w) * f0 + w * f1);
    }
  }
  return s * dp / subsamples;
}

struct VelocityCheckRow {
  double t = 0.0;
  double lhs = 0.0; // <Q(x3/t) u, u>
  double rhs = 0.0; // int Q(lambda') |f|^2
  double diff = 0.0;
};

struct VelocityCheckTable {
  std::vector<VelocityCheckRow> rows;
  bool tail_non_increasing = true;
};

inline VelocityCheckTable asymptotic_velocity_check(const BranchData &b,
                                                    const WavePacketSpec &spec,
                                                    const std::function<double(double)> &q,
                                                    std::span<const double> t_list,
                                                    const QuadratureOptions &opts = {}) {
  VelocityCheckTable out;
  const double rhs = spectral_velocity_mass(b, spec, q);
  for (double t : t_list) {
    if (t == 0.0)
      throw Error(ErrorKind::precondition, "velocity check: t must be nonzero");
    const auto u = evolve_quadrature(b, spec, t, opts);
    VelocityCheckRow row;
    row.t = t;
    row.lhs = weighted_mass(u, [&](double x) { return q(x / t); });
    row.rhs = rhs;
    row.diff = std::fabs(row.lhs - row.rhs);
    out.rows.push_back(row);
  }
  for (std::size_t k = 1; k < out.rows.size(); ++k)
    if (out.rows[k].diff > out.rows[k - 1].diff + 1e-12)
      out.tail_non_increasing = false;
  return out;
}

} // namespace magfiber
