#pragma once
#include "magfiber/errors.hpp"
#include "magfiber/format.hpp"
#include "magfiber/radial_operator.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace magfiber {

struct EigenPair {
  int n = 0;           // 1-based level index
  double lambda = 0.0;
  std::vector<double> g;   // L^2(dr) normalized: sum g_i^2 h = 1
  std::vector<double> psi; // psi_i = g_i / sqrt(r_i): sum psi_i^2 r_i h = 1
  double residual = 0.0;   // ||(T - lambda) u||_2 for the unit vector u
};

namespace detail {

inline double pivot_floor(const TridiagonalOperator &t) {
  double e2 = 1.0;
  for (double e : t.off)
    e2 = std::max(e2, e * e);
  return DBL_MIN * e2;
}

inline std::size_t sturm_count_sq(const std::vector<double> &d, const std::vector<double> &e2,
                                  double x, double pivmin) {
  std::size_t count = 0;
  double q = d[0] - x;
  if (std::fabs(q) < pivmin)
    q = -pivmin;
  if (q < 0.0)
    ++count;
  for (std::size_t i = 1; i < d.size(); ++i) {
    q = d[i] - x - e2[i - 1] / q;
    if (std::fabs(q) < pivmin)
      q = -pivmin;
    if (q < 0.0)
      ++count;
  }
  return count;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double norm2(std::span<const double> x) {
  double s = 0.0;
  for (double v : x)
    s += v * v;
  return std::sqrt(s);
}

// LU factorization with partial pivoting of T - shift I, reused across
// inverse-iteration sweeps.
class ShiftedTridiagonalLU {
public:
  ShiftedTridiagonalLU(const TridiagonalOperator &t, double shift) {
    const std::size_t n = t.size();
    a_.resize(n);
    b_.assign(n, 0.0);
    u2_.assign(n, 0.0);
    l_.assign(n, 0.0);
    swap_.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i)
      a_[i] = t.diag[i] - shift;
    for (std::size_t i = 0; i + 1 < n; ++i)
      b_[i] = t.off[i];
    const double tiny = DBL_EPSILON * std::max(1.0, t.norm_inf());
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const double c = t.off[k]; // subdiagonal entry of row k+1
      if (std::fabs(a_[k]) >= std::fabs(c)) {
        if (a_[k] == 0.0)
          a_[k] = tiny;
        l_[k] = c / a_[k];
        a_[k + 1] -= l_[k] * b_[k];
      } else {
        swap_[k] = 1;
        l_[k] = a_[k] / c;
        const double next_a = a_[k + 1];
        const double next_b = k + 2 < n ? b_[k + 1] : 0.0;
        a_[k] = c;
        a_[k + 1] = b_[k] - l_[k] * next_a;
        b_[k] = next_a;
        u2_[k] = next_b;
        if (k + 2 < n)
          b_[k + 1] = -l_[k] * next_b;
      }
    }
    if (a_[n - 1] == 0.0)
      a_[n - 1] = tiny;
  }

  void solve(std::vector<double> &y) const {
    const std::size_t n = a_.size();
    for (std::size_t k = 0; k + 1 < n; ++k) {
      if (swap_[k])
        std::swap(y[k], y[k + 1]);
      y[k + 1] -= l_[k] * y[k];
    }
    y[n - 1] /= a_[n - 1];
    if (n >= 2)
      y[n - 2] = (y[n - 2] - b_[n - 2] * y[n - 1]) / a_[n - 2];
    for (std::ptrdiff_t k = static_cast<std::ptrdiff_t>(n) - 3; k >= 0; --k) {
      const auto i = static_cast<std::size_t>(k);
      y[i] = (y[i] - b_[i] * y[i + 1] - u2_[i] * y[i + 2]) / a_[i];
    }
  }

private:
  std::vector<double> a_, b_, u2_, l_;
  std::vector<char> swap_;
};

inline double residual_norm(const TridiagonalOperator &t, double lambda,
                            std::span<const double> u) {
  std::vector<double> tu(u.size());
  t.apply(u, tu);
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double r = tu[i] - lambda * u[i];
    s += r * r;
  }
  return std::sqrt(s);
}

// First component above 1e-3 of the max-norm is made positive.
inline void fix_sign(std::vector<double> &u) {
  double mx = 0.0;
  for (double v : u)
    mx = std::max(mx, std::fabs(v));
  for (double v : u) {
    if (std::fabs(v) > 1e-3 * mx) {
      if (v < 0.0)
        for (double &w : u)
          w = -w;
      return;
    }
  }
}

} // namespace detail

//! Number of eigenvalues strictly below x.
inline std::size_t sturm_count(const TridiagonalOperator &t, double x) {
  std::vector<double> e2(t.off.size());
  for (std::size_t i = 0; i < e2.size(); ++i)
    e2[i] = t.off[i] * t.off[i];
  return detail::sturm_count_sq(t.diag, e2, x, detail::pivot_floor(t));
}

inline std::pair<double, double> gershgorin_bounds(const TridiagonalOperator &t) {
  const std::size_t n = t.size();
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    double rad = 0.0;
    if (i > 0)
      rad += std::fabs(t.off[i - 1]);
    if (i + 1 < n)
      rad += std::fabs(t.off[i]);
    lo = std::min(lo, t.diag[i] - rad);
    hi = std::max(hi, t.diag[i] + rad);
  }
  return {lo, hi};
}

//! The n_max smallest eigenvalues by Sturm-count bisection. Brackets are
//! shared between levels and each one is bisected down to machine precision,
//! well inside 1e-10 max(1, ||T||_inf).
inline std::vector<double> lowest_eigenvalues(const TridiagonalOperator &t,
                                              std::size_t n_max) {
  const std::size_t n = t.size();
  if (n_max > n)
    throw Error(ErrorKind::precondition, "lowest_eigenvalues: n_max exceeds matrix size");
  if (t.off.size() + 1 != n && n > 0)
    throw Error(ErrorKind::precondition, "tridiagonal operator: off-diagonal length mismatch");
  std::vector<double> out;
  if (n_max == 0)
    return out;
  out.reserve(n_max);
  std::vector<double> e2(t.off.size());
  for (std::size_t i = 0; i < e2.size(); ++i)
    e2[i] = t.off[i] * t.off[i];
  const double pivmin = detail::pivot_floor(t);
  auto [gl, gu] = gershgorin_bounds(t);
  const double pad = 2.0 * DBL_EPSILON * std::max(std::fabs(gl), std::fabs(gu)) + pivmin;
  gl -= pad;
  gu += pad;
  std::vector<double> lo(n_max, gl), hi(n_max, gu);
  for (std::size_t k = 0; k < n_max; ++k) {
    lo[k] = std::max(lo[k], k > 0 ? lo[k - 1] : gl);
    int it = 0;
    for (;; ++it) {
      if (it >= 200)
        throw Error(ErrorKind::convergence,
                    "bisection did not converge for level " + std::to_string(k + 1));
      const double mid = 0.5 * (lo[k] + hi[k]);
      if (mid <= lo[k] || mid >= hi[k] ||
          hi[k] - lo[k] <= 2.0 * DBL_EPSILON * std::max(std::fabs(lo[k]), std::fabs(hi[k])))
        break;
      const std::size_t c = detail::sturm_count_sq(t.diag, e2, mid, pivmin);
      for (std::size_t j = k; j < n_max; ++j) {
        if (c >= j + 1)
          hi[j] = std::min(hi[j], mid);
        else
          lo[j] = std::max(lo[j], mid);
      }
    }
    out.push_back(0.5 * (lo[k] + hi[k]));
  }
  return out;
}

//! Inverse iteration for the eigenvector at `lambda`, returned with
//! sum g_i^2 h = 1 (h = t.spacing) and the sign convention "first component
//! above 1e-3 of the max-norm is positive". `previous` are unit-norm
//! (Euclidean) eigenvectors of lower levels used for re-orthogonalization on
//! the retry pass.
inline std::vector<double> eigenvector(const TridiagonalOperator &t, double lambda,
                                       std::span<const std::vector<double>> previous = {},
                                       double *residual_out = nullptr) {
  const std::size_t n = t.size();
  if (n == 0)
    throw Error(ErrorKind::precondition, "eigenvector: empty operator");
  const double tnorm = t.norm_inf();
  const double target = 1e-8 * (std::fabs(lambda) + tnorm);
  const detail::ShiftedTridiagonalLU lu(t, lambda + 1e-12 * tnorm);

  std::vector<double> u(n);
  for (std::size_t i = 0; i < n; ++i)
    u[i] = static_cast<double>(detail::splitmix64(i) >> 11) * 0x1.0p-53 * 2.0 - 1.0 + 0.25;

  auto normalize = [](std::vector<double> &x) {
    const double s = detail::norm2(x);
    if (!(s > 0.0) || !std::isfinite(s))
      return false;
    for (double &v : x)
      v /= s;
    return true;
  };
  auto orthogonalize = [&](std::vector<double> &x) {
    for (const auto &q : previous) {
      if (q.size() != n)
        continue;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        dot += q[i] * x[i];
      for (std::size_t i = 0; i < n; ++i)
        x[i] -= dot * q[i];
    }
  };

  double res = INFINITY;
  for (int pass = 0; pass < 2 && !(res <= target); ++pass) {
    if (pass == 1)
      orthogonalize(u);
    normalize(u);
    // one solve leaves other levels at ~shift/gap, so at least two are taken
    double prev = INFINITY;
    for (int it = 0; it < 5; ++it) {
      lu.solve(u);
      if (pass == 1)
        orthogonalize(u);
      if (!normalize(u))
        break;
      res = detail::residual_norm(t, lambda, u);
      if (it >= 1 && res <= target && !(res < 0.5 * prev))
        break;
      prev = res;
    }
  }
  if (!(res <= target))
    throw Error(ErrorKind::convergence,
                "inverse iteration: residual " + format_double(res) + " exceeds " +
                    format_double(target) + " at lambda = " + format_double(lambda) +
                    " (m = " + std::to_string(t.meta.m) + ", p = " + format_double(t.meta.p) +
                    ")");
  detail::fix_sign(u);
  if (residual_out)
    *residual_out = res;
  const double scale = 1.0 / std::sqrt(t.spacing);
  for (double &v : u)
    v *= scale;
  return u;
}

//! Lowest n_max eigenpairs with psi recovered as g / sqrt(r); when the
//! operator carries no radial nodes, psi equals g.
inline std::vector<EigenPair> eigenpairs(const TridiagonalOperator &t, std::size_t n_max) {
  std::vector<EigenPair> out;
  if (n_max == 0)
    return out;
  const auto lambdas = lowest_eigenvalues(t, n_max);
  for (std::size_t k = 1; k < lambdas.size(); ++k) {
    if (lambdas[k] - lambdas[k - 1] <= 1e-9 * std::max(1.0, std::fabs(lambdas[k])))
      throw Error(ErrorKind::convergence,
                  "near-degenerate eigenvalues at level " + std::to_string(k + 1) +
                      "; refine the radial grid");
  }
  std::vector<std::vector<double>> units;
  const double root_h = std::sqrt(t.spacing);
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    EigenPair pair;
    pair.n = static_cast<int>(k + 1);
    pair.lambda = lambdas[k];
    pair.g = eigenvector(t, lambdas[k], units, &pair.residual);
    std::vector<double> unit(pair.g);
    for (double &v : unit)
      v *= root_h;
    units.push_back(std::move(unit));
    pair.psi = pair.g;
    if (t.nodes.size() == pair.g.size())
      for (std::size_t i = 0; i < pair.psi.size(); ++i)
        pair.psi[i] /= std::sqrt(t.nodes[i]);
    out.push_back(std::move(pair));
  }
  return out;
}

} // namespace magfiber
