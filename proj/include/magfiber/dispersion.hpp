#pragma once
#include "magfiber/eigensolver.hpp"
#include "magfiber/errors.hpp"
#include "magfiber/field.hpp"
#include "magfiber/format.hpp"
#include "magfiber/parallel.hpp"
#include "magfiber/radial_operator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace magfiber {

//! Eigen-solves of one fiber family L_m(p) on a fixed grid, for any p.
class FiberSolver {
public:
  FiberSolver(const FieldProfile &field, const RadialGrid &grid, int m)
      : field_(field), assembler_(field, grid, m) {}

  std::vector<double> eigenvalues(double p, std::size_t n_max) const {
    return lowest_eigenvalues(assembler_.at(p), n_max);
  }
  double eigenvalue(double p, int n) const {
    return eigenvalues(p, static_cast<std::size_t>(n)).back();
  }
  std::vector<EigenPair> eigenpairs(double p, std::size_t n_max) const {
    return magfiber::eigenpairs(assembler_.at(p), n_max);
  }
  EigenPair eigenpair(double p, int n) const {
    return std::move(eigenpairs(p, static_cast<std::size_t>(n)).back());
  }

  const FieldProfile &field() const noexcept { return field_; }
  const RadialGrid &grid() const noexcept { return assembler_.grid(); }
  const FiberAssembler &assembler() const noexcept { return assembler_; }
  int m() const noexcept { return assembler_.m(); }

private:
  FieldProfile field_;
  FiberAssembler assembler_;
};

struct GridPolicy {
  enum class Kind { fixed, automatic };
  Kind kind = Kind::automatic;
  std::optional<RadialGrid> grid;
  GridOptions options;

  static GridPolicy fixed(const RadialGrid &g) { return {Kind::fixed, g, {}}; }
  static GridPolicy automatic(const GridOptions &opts = {}) {
    return {Kind::automatic, std::nullopt, opts};
  }
};

struct SweepOptions {
  bool keep_psi = true;
  unsigned threads = 1;
};

//! Sampled lambda_{n,m}(p) with the sign-continuous eigenfunction bank
//! psi[j] (radial samples at grid nodes, sum psi^2 r h = 1).
struct DispersionCurve {
  int m = 0;
  int n = 1;
  std::vector<double> p;
  std::vector<double> lambda;
  std::vector<std::vector<double>> psi;
  RadialGrid grid{12.0, RadialGrid::min_nodes};

  std::size_t size() const noexcept { return p.size(); }
  bool has_psi() const noexcept { return psi.size() == p.size() && !p.empty(); }
};

struct SweepResult {
  std::vector<DispersionCurve> curves;
  RadialGrid grid{12.0, RadialGrid::min_nodes};
  bool capped = false;
  std::vector<std::string> warnings;
};

inline double weighted_dot(const RadialGrid &grid, std::span<const double> x,
                           std::span<const double> y) {
  const double h = grid.spacing();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    s += x[i] * y[i] * grid.node(i) * h;
  return s;
}

inline void check_increasing(std::span<const double> p, const char *what) {
  if (p.empty())
    throw Error(ErrorKind::precondition, std::string(what) + ": empty momentum grid");
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (!std::isfinite(p[j]))
      throw Error(ErrorKind::precondition, std::string(what) + ": non-finite momentum");
    if (j > 0 && !(p[j] > p[j - 1]))
      throw Error(ErrorKind::precondition,
                  std::string(what) + ": momentum grid must be strictly increasing");
  }
}

//! One curve per level n <= n_max over `p_grid`. Under the automatic policy a
//! single grid is recommended for the whole momentum range so all samples
//! share it; eigenfunction signs are then made continuous along p.
inline SweepResult sweep(const FieldProfile &field, int m, int n_max,
                         std::span<const double> p_grid, const GridPolicy &policy,
                         const SweepOptions &opts = {}) {
  check_increasing(p_grid, "sweep");
  if (n_max < 0)
    throw Error(ErrorKind::precondition, "sweep: negative n_max");
  SweepResult out;
  if (policy.kind == GridPolicy::Kind::fixed) {
    if (!policy.grid)
      throw Error(ErrorKind::precondition, "sweep: fixed policy without a grid");
    out.grid = *policy.grid;
  } else {
    auto rec = recommend_grid(field, m, p_grid.front(), p_grid.back(), std::max(n_max, 1),
                              policy.options);
    out.grid = rec.grid;
    out.capped = rec.capped;
    if (!rec.warning.empty())
      out.warnings.push_back(rec.warning);
  }
  const std::size_t levels = static_cast<std::size_t>(n_max);
  const std::size_t samples = p_grid.size();
  out.curves.resize(levels);
  for (std::size_t k = 0; k < levels; ++k) {
    auto &c = out.curves[k];
    c.m = m;
    c.n = static_cast<int>(k + 1);
    c.p.assign(p_grid.begin(), p_grid.end());
    c.lambda.assign(samples, 0.0);
    if (opts.keep_psi)
      c.psi.assign(samples, {});
    c.grid = out.grid;
  }
  if (levels == 0)
    return out;

  const FiberSolver solver(field, out.grid, m);
  parallel_for(samples, opts.threads, [&](std::size_t j) {
    if (opts.keep_psi) {
      auto pairs = solver.eigenpairs(p_grid[j], levels);
      for (std::size_t k = 0; k < levels; ++k) {
        out.curves[k].lambda[j] = pairs[k].lambda;
        out.curves[k].psi[j] = std::move(pairs[k].psi);
      }
    } else {
      const auto lam = solver.eigenvalues(p_grid[j], levels);
      for (std::size_t k = 0; k < levels; ++k)
        out.curves[k].lambda[j] = lam[k];
    }
  });

  if (opts.keep_psi) {
    for (auto &c : out.curves) {
      for (std::size_t j = 1; j < samples; ++j) {
        if (weighted_dot(c.grid, c.psi[j], c.psi[j - 1]) < 0.0)
          for (double &v : c.psi[j])
            v = -v;
      }
    }
  }
  return out;
}

namespace detail {

struct Parabola {
  double x = 0.0;      // vertex abscissa
  double y = 0.0;      // vertex value
  double second = 0.0; // second derivative of the fit
};

inline Parabola fit_parabola(double x0, double x1, double x2, double y0, double y1,
                             double y2) {
  const double d01 = (y1 - y0) / (x1 - x0);
  const double d12 = (y2 - y1) / (x2 - x1);
  const double c2 = (d12 - d01) / (x2 - x0);
  Parabola out;
  out.second = 2.0 * c2;
  if (c2 == 0.0) {
    out.x = x1;
    out.y = y1;
    return out;
  }
  // y = y0 + d01 (x - x0) + c2 (x - x0)(x - x1)
  out.x = 0.5 * (x0 + x1) - d01 / (2.0 * c2);
  out.y = y0 + d01 * (out.x - x0) + c2 * (out.x - x0) * (out.x - x1);
  return out;
}

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
};

inline LineFit least_squares_line(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double den = n * sxx - sx * sx;
  LineFit f;
  f.slope = den != 0.0 ? (n * sxy - sx * sy) / den : 0.0;
  f.intercept = (sy - f.slope * sx) / n;
  return f;
}

} // namespace detail

struct ThresholdEntry {
  int n = 1;
  double E = 0.0;
  bool attained = false;
  double argmin_p = 0.0;
  std::string advisory;
};

//! Curve-wise infima E_{n,m}; E_m is the n = 1 entry.
struct ThresholdReport {
  int m = 0;
  double E_m = 0.0;
  std::vector<ThresholdEntry> per_n;
};

inline ThresholdReport thresholds(std::span<const DispersionCurve> curves) {
  if (curves.empty())
    throw Error(ErrorKind::precondition, "thresholds: no curves");
  ThresholdReport rep;
  rep.m = curves.front().m;
  for (const auto &c : curves) {
    if (c.m != rep.m)
      throw Error(ErrorKind::precondition, "thresholds: curves must share m");
    if (c.size() == 0)
      throw Error(ErrorKind::precondition, "thresholds: empty curve");
    const auto it = std::min_element(c.lambda.begin(), c.lambda.end());
    const std::size_t j = static_cast<std::size_t>(it - c.lambda.begin());
    ThresholdEntry e;
    e.n = c.n;
    e.E = c.lambda[j];
    e.argmin_p = c.p[j];
    if (j > 0 && j + 1 < c.size()) {
      const auto par = detail::fit_parabola(c.p[j - 1], c.p[j], c.p[j + 1], c.lambda[j - 1],
                                            c.lambda[j], c.lambda[j + 1]);
      if (par.second > 0.0) {
        e.attained = true;
        e.E = std::min(par.y, c.lambda[j]);
        e.argmin_p = par.x;
      }
    } else {
      e.advisory = j == 0 ? "minimum at the lower sweep boundary; extend sweep toward lower p"
                          : "minimum at the upper sweep boundary; extend sweep toward higher p";
    }
    rep.per_n.push_back(std::move(e));
  }
  std::sort(rep.per_n.begin(), rep.per_n.end(),
            [](const ThresholdEntry &a, const ThresholdEntry &b) { return a.n < b.n; });
  rep.E_m = rep.per_n.front().E;
  return rep;
}

struct LocalMinimum {
  double p = 0.0;
  double lambda = 0.0;
};

//! Interior sign changes (- to +) of the first difference, refined by a
//! three-point parabola.
inline std::vector<LocalMinimum> find_local_minima(const DispersionCurve &curve) {
  std::vector<LocalMinimum> out;
  const auto &p = curve.p;
  const auto &l = curve.lambda;
  for (std::size_t j = 1; j + 1 < curve.size(); ++j) {
    if (l[j] < l[j - 1] && l[j] <= l[j + 1]) {
      const auto par = detail::fit_parabola(p[j - 1], p[j], p[j + 1], l[j - 1], l[j], l[j + 1]);
      LocalMinimum mn{p[j], l[j]};
      if (par.second > 0.0 && par.x > p[j - 1] && par.x < p[j + 1]) {
        mn.p = par.x;
        mn.lambda = std::min(par.y, l[j]);
      }
      out.push_back(mn);
    }
  }
  return out;
}

enum class LeftLaw { to_zero, landau, to_infinity };

inline const char *to_string(LeftLaw law) {
  switch (law) {
  case LeftLaw::to_zero: return "to_zero";
  case LeftLaw::landau: return "landau";
  case LeftLaw::to_infinity: return "to_infinity";
  }
  return "unknown";
}

struct LawFit {
  LeftLaw law = LeftLaw::landau;
  bool admissible = false;
  double limit = 0.0;     // 0, L or +inf
  double parameter = 0.0; // power-law exponent, or the k^{-2} coefficient
  double rel_residual = INFINITY;
};

//! Behaviour of lambda_{n,m}(p) in both momentum tails.
struct AsymptoticsReport {
  int m = 0;
  int n = 1;
  // left tail, p = -k
  std::vector<double> k;
  std::vector<double> lambda;
  std::vector<double> landau_scale; // (2n-1) b(rho_k)
  bool truncated = false;
  double achieved_k_max = 0.0;
  LeftLaw left_law = LeftLaw::landau;
  double left_limit_fit = 0.0;
  std::array<LawFit, 3> fits{};
  bool hypotheses_verified = false;
  std::optional<bool> below_landau; // constant-field fields only
  std::vector<std::string> notes;
  // right tail
  std::vector<double> right_p;
  std::vector<double> right_ratio; // lambda(p) / p^2
};

//! Minimum |log-log slope| for a tail to count as decaying or growing.
inline constexpr double kMinPowerSlope = 0.05;

//! Fits lambda(-k) on the last four samples against the three tail laws
//! (power decay to 0, L + B k^{-2} Landau approach, power growth) and picks
//! the admissible law with the smallest relative residual.
inline void fit_left_laws(AsymptoticsReport &rep) {
  const std::size_t total = rep.k.size();
  if (total < 4)
    throw Error(ErrorKind::insufficient_data,
                "left asymptotics: need at least 4 achieved k samples");
  const std::span<const double> ks(rep.k.data() + total - 4, 4);
  const std::span<const double> ls(rep.lambda.data() + total - 4, 4);
  std::array<double, 4> lx{}, ly{}, inv2{};
  for (std::size_t i = 0; i < 4; ++i) {
    lx[i] = std::log(ks[i]);
    ly[i] = std::log(std::max(ls[i], std::numeric_limits<double>::min()));
    inv2[i] = 1.0 / (ks[i] * ks[i]);
  }
  auto rel_rms = [&](auto model) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const double r = (model(i) - ls[i]) / ls[i];
      s += r * r;
    }
    return std::sqrt(s / 4.0);
  };
  const auto pw = detail::least_squares_line(lx, ly);
  const double pw_res = rel_rms([&](std::size_t i) { return std::exp(pw.intercept + pw.slope * lx[i]); });
  const auto ld = detail::least_squares_line(inv2, ls);
  const double ld_res = rel_rms([&](std::size_t i) { return ld.intercept + ld.slope * inv2[i]; });

  rep.fits[0] = {LeftLaw::to_zero, pw.slope < -kMinPowerSlope, 0.0, pw.slope, pw_res};
  rep.fits[1] = {LeftLaw::landau, ld.intercept > 0.0, ld.intercept, ld.slope, ld_res};
  rep.fits[2] = {LeftLaw::to_infinity, pw.slope > kMinPowerSlope, INFINITY, pw.slope, pw_res};

  const LawFit *best = nullptr;
  for (const auto &f : rep.fits)
    if (f.admissible && (!best || f.rel_residual < best->rel_residual))
      best = &f;
  if (!best)
    best = &rep.fits[1];
  rep.left_law = best->law;
  rep.left_limit_fit = best->limit;
}

inline AsymptoticsReport classify_left_asymptotics(const FieldProfile &field, int m, int n,
                                                   std::span<const double> k_list,
                                                   const GridOptions &opts = {}) {
  if (n < 1)
    throw Error(ErrorKind::precondition, "left asymptotics: n must be >= 1");
  if (k_list.size() < 4)
    throw Error(ErrorKind::precondition, "left asymptotics: need at least 4 k values");
  check_increasing(k_list, "left asymptotics");
  AsymptoticsReport rep;
  rep.m = m;
  rep.n = n;
  rep.hypotheses_verified = field.kind() == FieldKind::power_law;
  if (!rep.hypotheses_verified)
    rep.notes.push_back("hypotheses unverified (tabulated field)");
  for (double k : k_list) {
    const auto rec = recommend_grid(field, m, -k, -k, n, opts);
    if (rec.capped) {
      rep.truncated = true;
      rep.notes.push_back("grid cap reached at k = " + format_double(k) + "; report truncated");
      break;
    }
    const FiberSolver solver(field, rec.grid, m);
    rep.k.push_back(k);
    rep.lambda.push_back(solver.eigenvalue(-k, n));
    double scale = NAN;
    try {
      scale = (2.0 * n - 1.0) * field.b(rho_k(field, k));
    } catch (const Error &) {
    }
    rep.landau_scale.push_back(scale);
    rep.achieved_k_max = k;
  }
  if (field.kind() == FieldKind::power_law && field.delta() == 0.0) {
    bool below = true;
    for (double l : rep.lambda)
      below = below && l < (2.0 * n - 1.0) * field.b0();
    rep.below_landau = below;
  }
  if (rep.k.size() >= 4)
    fit_left_laws(rep);
  else
    rep.notes.push_back("fewer than 4 samples achieved; no law fitted");
  return rep;
}

//! lambda_{n,m}(p) / p^2 for positive momenta.
inline std::vector<double> right_tail_ratios(const FieldProfile &field, int m, int n,
                                             std::span<const double> p_list,
                                             const GridOptions &opts = {}) {
  std::vector<double> out;
  for (double p : p_list) {
    if (!(p > 0.0))
      throw Error(ErrorKind::precondition, "right tail: momenta must be positive");
    const auto rec = recommend_grid(field, m, p, p, n, opts);
    out.push_back(FiberSolver(field, rec.grid, m).eigenvalue(p, n) / (p * p));
  }
  return out;
}

} // namespace magfiber
