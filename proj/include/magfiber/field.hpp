#pragma once
#include "magfiber/errors.hpp"
#include "magfiber/format.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace magfiber {

enum class FieldKind { power_law, tabulated };

//! Sorted samples (r_k, b_k) of the field strength. b is interpolated
//! piecewise-linearly; `a_cum` holds the exact integral of that interpolant
//! from r.front() to each node.
struct FieldTable {
  std::vector<double> r;
  std::vector<double> b;
  std::vector<double> a_cum;
  bool monotone_potential = true;
};

//! Magnetic field b(r) > 0 tangent to circles around the x3 axis, together
//! with its potential a(r) = gauge_c + int b.
class FieldProfile {
public:
  //! b(r) = b0 r^{-delta}. delta must lie in [0, 1] unless `experimental`
  //! is set, which admits delta < 0 (growing fields) without guarantees.
  static FieldProfile power_law(double b0, double delta, double gauge_c = 0.0,
                                bool experimental = false) {
    if (!(b0 > 0.0) || !std::isfinite(b0))
      throw Error(ErrorKind::domain, "power-law field needs b0 > 0");
    if (!std::isfinite(delta) || delta > 1.0)
      throw Error(ErrorKind::domain,
                  "power-law exponent delta must be <= 1 so that a(r) -> infinity");
    if (delta < 0.0 && !experimental)
      throw Error(ErrorKind::domain,
                  "delta < 0 is only accepted with the experimental flag");
    if (!std::isfinite(gauge_c))
      throw Error(ErrorKind::domain, "gauge constant must be finite");
    FieldProfile f;
    f.kind_ = FieldKind::power_law;
    f.b0_ = b0;
    f.delta_ = delta;
    f.gauge_c_ = gauge_c;
    f.experimental_ = experimental;
    return f;
  }

  static FieldProfile tabulated(std::vector<double> r, std::vector<double> b,
                                double gauge_c = 0.0) {
    if (r.size() != b.size())
      throw Error(ErrorKind::config, "field table: r and b differ in length");
    if (r.size() < 2)
      throw Error(ErrorKind::insufficient_data, "field table needs at least 2 samples");
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (!std::isfinite(r[k]) || !std::isfinite(b[k]))
        throw Error(ErrorKind::config, "field table: non-finite sample");
      if (r[k] < 0.0)
        throw Error(ErrorKind::domain, "field table: negative radius");
      if (!(b[k] > 0.0))
        throw Error(ErrorKind::domain, "field table: b must be > 0");
      if (k > 0 && !(r[k] > r[k - 1]))
        throw Error(ErrorKind::config, "field table: radii must be strictly increasing");
    }
    FieldProfile f;
    f.kind_ = FieldKind::tabulated;
    f.gauge_c_ = gauge_c;
    f.table_.r = std::move(r);
    f.table_.b = std::move(b);
    auto &t = f.table_;
    t.a_cum.assign(t.r.size(), 0.0);
    for (std::size_t k = 1; k < t.r.size(); ++k)
      t.a_cum[k] = t.a_cum[k - 1] + 0.5 * (t.r[k] - t.r[k - 1]) * (t.b[k] + t.b[k - 1]);
    t.monotone_potential = true; // b > 0 on every sample
    return f;
  }

  FieldKind kind() const noexcept { return kind_; }
  double b0() const noexcept { return b0_; }
  double delta() const noexcept { return delta_; }
  double gauge_c() const noexcept { return gauge_c_; }
  bool experimental() const noexcept { return experimental_; }
  const FieldTable &table() const noexcept { return table_; }

  FieldProfile with_gauge(double c) const {
    FieldProfile f = *this;
    f.gauge_c_ = c;
    return f;
  }

  //! Smallest / largest radius where a(r) can be evaluated.
  double r_min() const noexcept {
    return kind_ == FieldKind::power_law ? 0.0 : table_.r.front();
  }
  double r_max() const noexcept {
    return kind_ == FieldKind::power_law ? INFINITY : table_.r.back();
  }

  double b(double r) const {
    check_radius(r);
    if (kind_ == FieldKind::power_law)
      return delta_ == 0.0 ? b0_ : b0_ * std::pow(r, -delta_);
    auto [k, s] = locate(r);
    return table_.b[k] + s * (r - table_.r[k]);
  }

  //! Field slope. For tables this is the slope of the linear interpolant
  //! (right-sided at interior nodes).
  double b_prime(double r) const {
    check_radius(r);
    if (kind_ == FieldKind::power_law)
      return delta_ == 0.0 ? 0.0 : -delta_ * b0_ * std::pow(r, -delta_ - 1.0);
    return locate(r).second;
  }

  double a(double r) const {
    check_radius(r);
    if (kind_ == FieldKind::power_law) {
      if (delta_ == 1.0)
        return gauge_c_ + b0_ * std::log(r);
      if (delta_ == 0.0)
        return gauge_c_ + b0_ * r;
      const double e = 1.0 - delta_;
      return gauge_c_ + b0_ * std::pow(r, e) / e;
    }
    auto [k, s] = locate(r);
    const double dr = r - table_.r[k];
    return gauge_c_ + table_.a_cum[k] + dr * table_.b[k] + 0.5 * s * dr * dr;
  }

  std::string tag() const {
    if (kind_ == FieldKind::power_law)
      return "power_law(b0=" + format_double(b0_) + ",delta=" + format_double(delta_) +
             ",c=" + format_double(gauge_c_) + ")";
    return "tabulated(n=" + std::to_string(table_.r.size()) + ",r=[" +
           format_double(table_.r.front()) + "," + format_double(table_.r.back()) +
           "],c=" + format_double(gauge_c_) + ")";
  }

private:
  FieldProfile() = default;

  void check_radius(double r) const {
    if (!(r > 0.0))
      throw Error(ErrorKind::domain, "radius must be > 0, got " + format_double(r));
    if (kind_ == FieldKind::tabulated && (r < table_.r.front() || r > table_.r.back()))
      throw Error(ErrorKind::range, "radius " + format_double(r) +
                                        " outside field table [" +
                                        format_double(table_.r.front()) + ", " +
                                        format_double(table_.r.back()) + "]");
  }

  // Segment index k with r in [r_k, r_{k+1}] and its slope.
  std::pair<std::size_t, double> locate(double r) const {
    const auto &rr = table_.r;
    auto it = std::upper_bound(rr.begin(), rr.end(), r);
    std::size_t k = it == rr.begin() ? 0 : static_cast<std::size_t>(it - rr.begin()) - 1;
    if (k + 1 >= rr.size())
      k = rr.size() - 2;
    const double s = (table_.b[k + 1] - table_.b[k]) / (rr[k + 1] - rr[k]);
    return {k, s};
  }

  FieldKind kind_ = FieldKind::power_law;
  double b0_ = 1.0;
  double delta_ = 0.0;
  double gauge_c_ = 0.0;
  bool experimental_ = false;
  FieldTable table_;
};

inline double potential_a(const FieldProfile &field, double r) { return field.a(r); }

//! Greatest radius with a(r) = k.
inline double rho_k(const FieldProfile &field, double k) {
  if (!std::isfinite(k))
    throw Error(ErrorKind::domain, "rho_k: non-finite momentum");
  if (field.kind() == FieldKind::power_law) {
    const double excess = k - field.gauge_c();
    const double delta = field.delta();
    if (delta == 1.0)
      return std::exp(excess / field.b0());
    if (!(excess > 0.0))
      throw Error(ErrorKind::below_potential_range,
                  "a(r) = " + format_double(k) + " has no solution (a > gauge_c)");
    const double e = 1.0 - delta;
    return std::pow(excess * e / field.b0(), 1.0 / e);
  }
  const auto &t = field.table();
  double lo = t.r.front(), hi = t.r.back();
  if (lo <= 0.0)
    lo = std::min(hi, 1e-300);
  if (k < field.a(lo))
    throw Error(ErrorKind::below_potential_range,
                "a(r) = " + format_double(k) + " has no solution in the table");
  if (k > field.a(hi))
    throw Error(ErrorKind::range,
                "a(r) = " + format_double(k) + " lies beyond the table's last radius");
  // a is increasing (b > 0), so the whole table is one monotone segment.
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi)
      break;
    (field.a(mid) < k ? lo : hi) = mid;
  }
  return std::fabs(field.a(lo) - k) < std::fabs(field.a(hi) - k) ? lo : hi;
}

//! tau(r) = r / b(r), v(r) = r (r^{-1} tau'(r))', and the local slope bound
//! b1(r) = sup |b'| over [r/2, 3r/2] that enter the group-velocity identities.
class DerivedFieldData {
public:
  explicit DerivedFieldData(const FieldProfile &field) : field_(field) {
    if (field.kind() == FieldKind::tabulated)
      build_table();
  }

  double tau(double r) const {
    if (field_.kind() == FieldKind::power_law)
      return std::pow(r, 1.0 + field_.delta()) / field_.b0();
    return interp(tau_, r);
  }
  double v(double r) const {
    if (field_.kind() == FieldKind::power_law) {
      const double d = field_.delta();
      return (d * d - 1.0) * std::pow(r, d - 1.0) / field_.b0();
    }
    return interp(d2_, r) - interp(d1_, r) / r;
  }
  double v_prime(double r) const {
    if (field_.kind() == FieldKind::power_law) {
      const double d = field_.delta();
      return (d * d - 1.0) * (d - 1.0) * std::pow(r, d - 2.0) / field_.b0();
    }
    return interp(d3_, r) - interp(d2_, r) / r + interp(d1_, r) / (r * r);
  }
  //! Smooth estimate of b'(r); exact for power laws.
  double b_prime(double r) const {
    if (field_.kind() == FieldKind::power_law)
      return field_.b_prime(r);
    return interp(bp_, r);
  }
  double b1(double r) const {
    if (!(r > 0.0))
      throw Error(ErrorKind::domain, "b1: radius must be > 0");
    if (field_.kind() == FieldKind::power_law) {
      const double d = field_.delta();
      if (d == 0.0)
        return 0.0;
      // |b'| = |d| b0 x^{-d-1} is monotone in x, so the sup sits at an end.
      const double e = -d - 1.0;
      return std::fabs(d) * field_.b0() *
             std::max(std::pow(0.5 * r, e), std::pow(1.5 * r, e));
    }
    const auto &t = field_.table();
    const double lo = 0.5 * r, hi = 1.5 * r;
    double best = 0.0;
    for (std::size_t k = 0; k + 1 < t.r.size(); ++k) {
      if (t.r[k + 1] < lo || t.r[k] > hi)
        continue;
      best = std::max(best, std::fabs((t.b[k + 1] - t.b[k]) / (t.r[k + 1] - t.r[k])));
    }
    return best;
  }

  const FieldProfile &field() const noexcept { return field_; }

private:
  // Three-point derivative on a nonuniform grid, one-sided at the ends.
  static std::vector<double> derivative(const std::vector<double> &x,
                                        const std::vector<double> &f) {
    const std::size_t n = x.size();
    std::vector<double> d(n);
    auto three = [&](std::size_t i0, double at) {
      const double x0 = x[i0], x1 = x[i0 + 1], x2 = x[i0 + 2];
      return f[i0] * (2 * at - x1 - x2) / ((x0 - x1) * (x0 - x2)) +
             f[i0 + 1] * (2 * at - x0 - x2) / ((x1 - x0) * (x1 - x2)) +
             f[i0 + 2] * (2 * at - x0 - x1) / ((x2 - x0) * (x2 - x1));
    };
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t i0 = i == 0 ? 0 : (i + 1 >= n ? n - 3 : i - 1);
      d[i] = three(i0, x[i]);
    }
    return d;
  }

  void build_table() {
    const auto &t = field_.table();
    if (t.r.size() < 4)
      throw Error(ErrorKind::insufficient_data,
                  "derived field data needs at least 4 table samples");
    r_ = t.r;
    std::vector<double> tau(r_.size());
    for (std::size_t k = 0; k < r_.size(); ++k)
      tau[k] = r_[k] / t.b[k];
    bp_ = derivative(r_, t.b);
    // v = tau'' - tau'/r, v' = tau''' - tau''/r + tau'/r^2
    d1_ = derivative(r_, tau);
    d2_ = derivative(r_, d1_);
    d3_ = derivative(r_, d2_);
    tau_ = std::move(tau);
  }

  double interp(const std::vector<double> &y, double r) const {
    if (r < r_.front() || r > r_.back())
      throw Error(ErrorKind::range, "derived data: radius outside table");
    auto it = std::upper_bound(r_.begin(), r_.end(), r);
    std::size_t k = it == r_.begin() ? 0 : static_cast<std::size_t>(it - r_.begin()) - 1;
    if (k + 1 >= r_.size())
      k = r_.size() - 2;
    const double s = (r - r_[k]) / (r_[k + 1] - r_[k]);
    return y[k] + s * (y[k + 1] - y[k]);
  }

  FieldProfile field_;
  std::vector<double> r_, tau_, d1_, d2_, d3_, bp_;
};

inline DerivedFieldData derived_data(const FieldProfile &field) {
  return DerivedFieldData(field);
}

//! Reads a two-column "r,b" table; '#' starts a comment, an optional
//! literal "r,b" header line is skipped.
inline FieldProfile parse_field_table(std::istream &in, double gauge_c = 0.0) {
  std::vector<double> r, b;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line.erase(std::remove_if(line.begin(), line.end(),
                              [](unsigned char c) { return std::isspace(c); }),
               line.end());
    if (line.empty())
      continue;
    if (r.empty() && line == "r,b")
      continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw Error(ErrorKind::config,
                  "field table line " + std::to_string(lineno) + ": expected 'r,b'");
    auto parse = [&](const std::string &s) {
      char *end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (s.empty() || end != s.c_str() + s.size())
        throw Error(ErrorKind::config, "field table line " + std::to_string(lineno) +
                                           ": cannot parse '" + s + "'");
      return v;
    };
    r.push_back(parse(line.substr(0, comma)));
    b.push_back(parse(line.substr(comma + 1)));
  }
  return FieldProfile::tabulated(std::move(r), std::move(b), gauge_c);
}

inline FieldProfile load_field_table(const std::filesystem::path &path,
                                     double gauge_c = 0.0) {
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorKind::io, "cannot open field table " + path.string());
  return parse_field_table(in, gauge_c);
}

} // namespace magfiber
