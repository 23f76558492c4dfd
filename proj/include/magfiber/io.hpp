#pragma once
#include "magfiber/dispersion.hpp"
#include "magfiber/errors.hpp"
#include "magfiber/format.hpp"
#include "magfiber/group_velocity.hpp"
#include "magfiber/wavepacket.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace magfiber {

using json = nlohmann::ordered_json;

inline void write_curve_csv(std::ostream &os, std::span<const DispersionCurve> curves) {
  os << "p,n,m,lambda\n";
  for (const auto &c : curves)
    for (std::size_t j = 0; j < c.size(); ++j)
      os << format_double(c.p[j]) << ',' << c.n << ',' << c.m << ',' << format_double(c.lambda[j])
         << '\n';
}

inline void write_velocity_csv(std::ostream &os, std::span<const VelocityEstimate> rows) {
  os << "p,n,m,v_fh,v_ibp,v_fd,agreement\n";
  for (const auto &e : rows)
    os << format_double(e.p) << ',' << e.n << ',' << e.m << ',' << format_double(e.v_fh) << ','
       << (e.v_ibp ? format_double(*e.v_ibp) : std::string()) << ',' << format_double(e.v_fd)
       << ',' << format_double(e.agreement) << '\n';
}

//! Non-finite numbers become null.
inline json json_number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json threshold_json(const ThresholdReport &rep) {
  json j;
  j["m"] = rep.m;
  j["E_m"] = json_number(rep.E_m);
  j["per_n"] = json::array();
  for (const auto &e : rep.per_n) {
    json row;
    row["n"] = e.n;
    row["E"] = json_number(e.E);
    row["attained"] = e.attained;
    row["argmin_p"] = e.attained ? json_number(e.argmin_p) : json(nullptr);
    if (!e.advisory.empty())
      row["advisory"] = e.advisory;
    j["per_n"].push_back(std::move(row));
  }
  return j;
}

struct CsvSelection {
  std::size_t r_stride = 1;
  std::size_t x3_stride = 1;
};

inline void write_evolution_csv(std::ostream &os, const EvolutionField &u,
                                const CsvSelection &sel = {}, bool header = true) {
  if (header)
    os << "t,x3,r,re_u,im_u\n";
  const std::size_t rs = std::max<std::size_t>(1, sel.r_stride);
  const std::size_t xs = std::max<std::size_t>(1, sel.x3_stride);
  for (std::size_t k = 0; k < u.n_x3(); k += xs)
    for (std::size_t i = 0; i < u.n_r(); i += rs) {
      const cplx v = u.at(i, k);
      os << format_double(u.t) << ',' << format_double(u.x3[k]) << ','
         << format_double(u.grid.node(i)) << ',' << format_double(v.real()) << ','
         << format_double(v.imag()) << '\n';
    }
}

namespace detail {

inline void put_u64(std::ostream &os, std::uint64_t v) {
  unsigned char b[8];
  for (int k = 0; k < 8; ++k)
    b[k] = static_cast<unsigned char>(v >> (8 * k));
  os.write(reinterpret_cast<const char *>(b), 8);
}

inline void put_f64(std::ostream &os, double x) { put_u64(os, std::bit_cast<std::uint64_t>(x)); }

inline std::uint64_t get_u64(std::istream &is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char *>(b), 8))
    throw Error(ErrorKind::io, "snapshot: truncated block");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k)
    v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return v;
}

} // namespace detail

inline constexpr char kSnapshotMagic[9] = "MSWP0001";

//! Binary snapshot: eight 8-byte header fields (magic, N_r, N_x3, t, n, m,
//! method, reserved) followed by N_r * N_x3 (re, im) float64 pairs,
//! little-endian, radius-major.
inline void write_snapshot(std::ostream &os, const EvolutionField &u) {
  os.write(kSnapshotMagic, 8);
  detail::put_u64(os, u.n_r());
  detail::put_u64(os, u.n_x3());
  detail::put_f64(os, u.t);
  detail::put_u64(os, static_cast<std::uint64_t>(static_cast<std::int64_t>(u.n)));
  detail::put_u64(os, static_cast<std::uint64_t>(static_cast<std::int64_t>(u.m)));
  detail::put_u64(os, static_cast<std::uint64_t>(u.method));
  detail::put_u64(os, 0);
  for (const auto &v : u.values) {
    detail::put_f64(os, v.real());
    detail::put_f64(os, v.imag());
  }
}

struct SnapshotBlock {
  std::uint64_t n_r = 0, n_x3 = 0;
  double t = 0.0;
  std::int64_t n = 0, m = 0, method = 0;
  std::vector<cplx> values;
};

inline SnapshotBlock read_snapshot(std::istream &is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kSnapshotMagic, 8) != 0)
    throw Error(ErrorKind::io, "snapshot: bad magic");
  SnapshotBlock s;
  s.n_r = detail::get_u64(is);
  s.n_x3 = detail::get_u64(is);
  s.t = std::bit_cast<double>(detail::get_u64(is));
  s.n = static_cast<std::int64_t>(detail::get_u64(is));
  s.m = static_cast<std::int64_t>(detail::get_u64(is));
  s.method = static_cast<std::int64_t>(detail::get_u64(is));
  detail::get_u64(is);
  s.values.resize(s.n_r * s.n_x3);
  for (auto &v : s.values) {
    const double re = std::bit_cast<double>(detail::get_u64(is));
    const double im = std::bit_cast<double>(detail::get_u64(is));
    v = {re, im};
  }
  return s;
}

} // namespace magfiber
