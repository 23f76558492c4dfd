#pragma once
#include "magfiber/errors.hpp"
#include "magfiber/field.hpp"
#include "magfiber/format.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace magfiber {

//! Uniform half-offset grid r_i = (i + 1/2) h, i = 0..N-1, on (0, R] with a
//! Dirichlet wall at R.
class RadialGrid {
public:
  static constexpr std::size_t min_nodes = 16;

  RadialGrid(double R, std::size_t N) : R_(R), N_(N) {
    if (!(R > 0.0) || !std::isfinite(R))
      throw Error(ErrorKind::domain, "radial grid needs a finite R > 0");
    if (N < min_nodes)
      throw Error(ErrorKind::domain, "radial grid needs at least 16 nodes");
    h_ = R / static_cast<double>(N);
  }

  double R() const noexcept { return R_; }
  std::size_t size() const noexcept { return N_; }
  double spacing() const noexcept { return h_; }
  double node(std::size_t i) const noexcept { return (static_cast<double>(i) + 0.5) * h_; }

  std::vector<double> nodes() const {
    std::vector<double> r(N_);
    for (std::size_t i = 0; i < N_; ++i)
      r[i] = node(i);
    return r;
  }

  std::string tag() const {
    return "half_offset(R=" + format_double(R_) + ",N=" + std::to_string(N_) + ")";
  }

  bool operator==(const RadialGrid &o) const noexcept { return R_ == o.R_ && N_ == o.N_; }

private:
  double R_;
  std::size_t N_;
  double h_;
};

struct OperatorMeta {
  int m = 0;
  double p = 0.0;
  std::string field_tag;
  std::string grid_tag;
};

//! Symmetric tridiagonal matrix stored as one diagonal and one off-diagonal
//! array, so symmetry is structural. `spacing` is the quadrature weight used
//! for L^2(dr) normalization of eigenvectors (1 for abstract matrices);
//! `nodes` are the radii when the matrix comes from a radial grid.
struct TridiagonalOperator {
  std::vector<double> diag;
  std::vector<double> off;
  double spacing = 1.0;
  std::vector<double> nodes;
  OperatorMeta meta;

  std::size_t size() const noexcept { return diag.size(); }

  double norm_inf() const noexcept {
    double best = 0.0;
    const std::size_t n = diag.size();
    for (std::size_t i = 0; i < n; ++i) {
      double row = std::fabs(diag[i]);
      if (i > 0)
        row += std::fabs(off[i - 1]);
      if (i + 1 < n)
        row += std::fabs(off[i]);
      best = std::max(best, row);
    }
    return best;
  }

  void apply(std::span<const double> x, std::span<double> y) const {
    const std::size_t n = diag.size();
    for (std::size_t i = 0; i < n; ++i) {
      double s = diag[i] * x[i];
      if (i > 0)
        s += off[i - 1] * x[i - 1];
      if (i + 1 < n)
        s += off[i] * x[i + 1];
      y[i] = s;
    }
  }

  //! Dense row-major copy; used by reconstruction tests and small oracles.
  std::vector<double> dense() const {
    const std::size_t n = diag.size();
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      a[i * n + i] = diag[i];
      if (i + 1 < n) {
        a[i * n + i + 1] = off[i];
        a[(i + 1) * n + i] = off[i];
      }
    }
    return a;
  }
};

//! Off-diagonal metric factor of the flux-form Laplacian in the g = r^{1/2} psi
//! variable: faces sit at (i+1)h, so the coupling between nodes i and i+1 is
//! r_{i+1/2} / sqrt(r_i r_{i+1}).
inline double face_metric(std::size_t i) {
  const double x = static_cast<double>(i);
  return (x + 1.0) / std::sqrt((x + 0.5) * (x + 1.5));
}

//! Caches the p-independent part of L_m(p) on a grid so sweeps only add
//! (a(r_i) + p)^2 per sample.
class FiberAssembler {
public:
  FiberAssembler(const FieldProfile &field, const RadialGrid &grid, int m)
      : grid_(grid), m_(m), field_tag_(field.tag()) {
    const std::size_t n = grid.size();
    const double h = grid.spacing();
    const double inv_h2 = 1.0 / (h * h);
    r_ = grid.nodes();
    a_.resize(n);
    base_.resize(n);
    off_.resize(n - 1);
    const double m2 = static_cast<double>(m) * static_cast<double>(m);
    for (std::size_t i = 0; i < n; ++i) {
      a_[i] = field.a(r_[i]);
      base_[i] = 2.0 * inv_h2 + m2 / (r_[i] * r_[i]);
    }
    for (std::size_t i = 0; i + 1 < n; ++i)
      off_[i] = -face_metric(i) * inv_h2;
  }

  TridiagonalOperator at(double p) const {
    TridiagonalOperator t;
    t.diag.resize(base_.size());
    for (std::size_t i = 0; i < base_.size(); ++i) {
      const double w = a_[i] + p;
      t.diag[i] = base_[i] + w * w;
    }
    t.off = off_;
    t.spacing = grid_.spacing();
    t.nodes = r_;
    t.meta = OperatorMeta{m_, p, field_tag_, grid_.tag()};
    return t;
  }

  const RadialGrid &grid() const noexcept { return grid_; }
  int m() const noexcept { return m_; }
  const std::vector<double> &nodes() const noexcept { return r_; }
  const std::vector<double> &potential() const noexcept { return a_; }

private:
  RadialGrid grid_;
  int m_;
  std::string field_tag_;
  std::vector<double> r_, a_, base_, off_;
};

//! Discretization of L_m(p) = -d^2/dr^2 + (m^2 - 1/4)/r^2 + (a(r) + p)^2 on
//! the half-offset grid, written as the symmetrized flux form of
//! -(1/r)(r psi')' + m^2/r^2 so that the regular branch at r = 0 is selected
//! for every m, including the attractive m = 0 case:
//!   diag_i = 2/h^2 + m^2/r_i^2 + (a(r_i) + p)^2,
//!   off_i  = -face_metric(i)/h^2.
inline TridiagonalOperator discretize(const FieldProfile &field, const RadialGrid &grid,
                                      int m, double p) {
  if (!std::isfinite(p))
    throw Error(ErrorKind::domain, "discretize: momentum must be finite");
  return FiberAssembler(field, grid, m).at(p);
}

struct GridOptions {
  double min_radius = 12.0;
  double well_widths = 8.0;  // in units of b(rho_k)^{-1/2}
  double max_spacing = 0.02; // extra accuracy cap on h
  std::size_t max_nodes = 200000;
};

struct GridRecommendation {
  RadialGrid grid;
  bool capped = false;
  std::string warning;
};

//! Chooses (R, N) for a momentum window [p_min, p_max]:
//!  - R >= rho_k + well_widths * b(rho_k)^{-1/2} * sqrt(max(1, n_max/2)) with
//!    k = -p_min for p_min < 0 (the magnetic well around a(r) = -p),
//!    and R >= min_radius always;
//!  - h <= min(0.01 R, max_spacing, max|a(r)+p|^{-1/2}/4).
//! N is capped at max_nodes; the cap yields a warning, not a failure.
inline GridRecommendation recommend_grid(const FieldProfile &field, int m, double p_min,
                                         double p_max, int n_max,
                                         const GridOptions &opts = {}) {
  (void)m;
  if (!std::isfinite(p_min) || !std::isfinite(p_max) || p_min > p_max)
    throw Error(ErrorKind::domain, "recommend_grid: invalid momentum range");
  GridRecommendation out{RadialGrid(opts.min_radius, RadialGrid::min_nodes), false, {}};
  double R = opts.min_radius;
  if (p_min < 0.0) {
    try {
      const double rho = rho_k(field, -p_min);
      const double width = 1.0 / std::sqrt(field.b(rho));
      const double levels = std::sqrt(std::max(1.0, 0.5 * n_max));
      R = std::max(R, rho + opts.well_widths * width * levels);
    } catch (const Error &e) {
      if (e.kind() != ErrorKind::below_potential_range)
        throw;
    }
  }
  if (R > field.r_max()) {
    out.warning = "field table ends at r = " + format_double(field.r_max()) +
                  " before the recommended radius " + format_double(R);
    R = field.r_max();
  }
  auto max_local_momentum = [&](double h) {
    double best = 0.0;
    for (double r : {0.5 * h, R})
      for (double p : {p_min, p_max})
        best = std::max(best, std::fabs(field.a(r) + p));
    return best;
  };
  double h = std::min(0.01 * R, opts.max_spacing);
  std::size_t N = 0;
  for (int it = 0; it < 100; ++it) {
    if (0.5 * h < field.r_min())
      throw Error(ErrorKind::range, "field table does not reach the first grid node");
    N = std::max<std::size_t>(RadialGrid::min_nodes,
                              static_cast<std::size_t>(std::ceil(R / h - 1e-9)));
    if (N > opts.max_nodes)
      break;
    const double h_used = R / static_cast<double>(N);
    const double k = max_local_momentum(h_used);
    const double bound = k > 0.0 ? 0.25 / std::sqrt(k) : INFINITY;
    if (h_used <= bound * (1.0 + 1e-12)) {
      h = h_used;
      break;
    }
    h = std::min(h, bound);
  }
  if (N > opts.max_nodes) {
    N = opts.max_nodes;
    out.capped = true;
    if (!out.warning.empty())
      out.warning += "; ";
    out.warning += "grid too large: N capped at " + std::to_string(opts.max_nodes);
  }
  out.grid = RadialGrid(R, N);
  return out;
}

} // namespace magfiber
