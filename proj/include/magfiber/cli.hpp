#pragma once
#include "magfiber/dispersion.hpp"
#include "magfiber/errors.hpp"
#include "magfiber/field.hpp"
#include "magfiber/format.hpp"
#include "magfiber/group_velocity.hpp"
#include "magfiber/io.hpp"
#include "magfiber/wavepacket.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef MAGFIBER_VERSION
#define MAGFIBER_VERSION "0.1.0"
#endif

namespace magfiber {

inline constexpr const char *kToolVersion = MAGFIBER_VERSION;

enum class Command { dispersion, thresholds, velocity, minima, evolve };

inline const char *to_string(Command c) {
  switch (c) {
  case Command::dispersion: return "dispersion";
  case Command::thresholds: return "thresholds";
  case Command::velocity: return "velocity";
  case Command::minima: return "minima";
  case Command::evolve: return "evolve";
  }
  return "unknown";
}

inline Command parse_command(const std::string &s) {
  for (auto c : {Command::dispersion, Command::thresholds, Command::velocity, Command::minima,
                 Command::evolve})
    if (s == to_string(c))
      return c;
  throw Error(ErrorKind::config, "unknown command '" + s + "'");
}

struct FieldSpec {
  std::string kind = "power_law";
  double b0 = 1.0;
  double delta = 0.0;
  double gauge_c = 0.0;
  bool experimental = false;
  std::string path; // tabulated
};

struct PRange {
  double min = -5.0;
  double max = 5.0;
  std::size_t count = 21;

  std::vector<double> samples() const {
    std::vector<double> p(count);
    for (std::size_t j = 0; j < count; ++j)
      p[j] = count == 1 ? min : min + (max - min) * static_cast<double>(j) / (count - 1);
    return p;
  }
};

struct GridSpec {
  std::string policy = "auto";
  GridOptions options;
  double R = 12.0;      // fixed
  std::size_t N = 2400; // fixed
};

struct VelocitySpec {
  SignOptions sign;
};

struct PacketSpec {
  std::string kind = "gaussian";
  double p0 = 0.0;
  double sigma = 0.1;
  double p_lo = 0.0; // zero packet support
  double p_hi = 1.0;
};

struct QSpec {
  bool present = false;
  double lo = 0.0; // velocity indicator (lo, hi)
  double hi = 0.0;
};

struct EvolveSpec {
  int n = 1;
  int m = 0;
  PacketSpec packet;
  std::vector<double> t_list{0.0};
  std::vector<std::string> methods{"quadrature"};
  StationaryPhaseOptions sp;
  std::size_t r_stride = 1;
  std::size_t x3_stride = 1;
  std::optional<std::pair<double, double>> x3_extent;
  QSpec q;
};

//! One JSON document describes one run; see README for the schema.
struct RunConfig {
  std::optional<Command> command;
  FieldSpec field;
  std::vector<int> m_list{0};
  int n_max = 1;
  PRange p_range;
  GridSpec grid;
  VelocitySpec velocity;
  EvolveSpec evolve;
  std::string output_dir = "out";
  json source; // the document as given
};

namespace detail {

inline void allow_keys(const json &obj, const std::string &where,
                       std::initializer_list<const char *> keys) {
  if (!obj.is_object())
    throw Error(ErrorKind::config, where + ": expected an object");
  std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto &[k, v] : obj.items())
    if (!ok.count(k))
      throw Error(ErrorKind::config, where + ": unknown key '" + k + "'");
}

template <class T> T get(const json &obj, const char *key, const std::string &where, T fallback) {
  if (!obj.contains(key))
    return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception &) {
    throw Error(ErrorKind::config, where + "." + key + ": wrong type");
  }
}

inline double get_number(const json &obj, const char *key, const std::string &where,
                         double fallback) {
  if (!obj.contains(key))
    return fallback;
  const auto &v = obj.at(key);
  if (!v.is_number())
    throw Error(ErrorKind::config, where + "." + key + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x))
    throw Error(ErrorKind::config, where + "." + key + ": must be finite");
  return x;
}

inline std::size_t get_count(const json &obj, const char *key, const std::string &where,
                             std::size_t fallback) {
  if (!obj.contains(key))
    return fallback;
  const auto &v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw Error(ErrorKind::config, where + "." + key + ": expected a non-negative integer");
  return static_cast<std::size_t>(v.get<long long>());
}

} // namespace detail

inline RunConfig parse_config(const json &doc) {
  using namespace detail;
  RunConfig c;
  c.source = doc;
  allow_keys(doc, "config",
             {"command", "field", "m_list", "n_max", "p_range", "grid", "velocity", "evolve",
              "output_dir"});
  if (doc.contains("command"))
    c.command = parse_command(get<std::string>(doc, "command", "config", ""));
  if (!doc.contains("field"))
    throw Error(ErrorKind::config, "config: missing 'field'");
  {
    const auto &f = doc.at("field");
    allow_keys(f, "field", {"kind", "b0", "delta", "gauge_c", "experimental", "path"});
    c.field.kind = get<std::string>(f, "kind", "field", "power_law");
    c.field.gauge_c = get_number(f, "gauge_c", "field", 0.0);
    if (c.field.kind == "power_law") {
      if (f.contains("path"))
        throw Error(ErrorKind::config, "field: 'path' applies to tabulated fields only");
      c.field.b0 = get_number(f, "b0", "field", 1.0);
      c.field.delta = get_number(f, "delta", "field", 0.0);
      c.field.experimental = get<bool>(f, "experimental", "field", false);
    } else if (c.field.kind == "tabulated") {
      for (const char *k : {"b0", "delta", "experimental"})
        if (f.contains(k))
          throw Error(ErrorKind::config, std::string("field: '") + k +
                                             "' applies to power_law fields only");
      c.field.path = get<std::string>(f, "path", "field", "");
      if (c.field.path.empty())
        throw Error(ErrorKind::config, "field: tabulated field needs 'path'");
    } else {
      throw Error(ErrorKind::config, "field.kind must be 'power_law' or 'tabulated'");
    }
  }
  if (doc.contains("m_list")) {
    const auto &ml = doc.at("m_list");
    if (!ml.is_array() || ml.empty())
      throw Error(ErrorKind::config, "m_list: expected a non-empty array of integers");
    c.m_list.clear();
    for (const auto &v : ml) {
      if (!v.is_number_integer())
        throw Error(ErrorKind::config, "m_list: expected integers");
      c.m_list.push_back(v.get<int>());
    }
  }
  c.n_max = static_cast<int>(get_count(doc, "n_max", "config", 1));
  if (c.n_max < 1)
    throw Error(ErrorKind::config, "n_max must be >= 1");
  if (doc.contains("p_range")) {
    const auto &p = doc.at("p_range");
    allow_keys(p, "p_range", {"min", "max", "count"});
    c.p_range.min = get_number(p, "min", "p_range", c.p_range.min);
    c.p_range.max = get_number(p, "max", "p_range", c.p_range.max);
    c.p_range.count = get_count(p, "count", "p_range", c.p_range.count);
    if (c.p_range.count < 1 || (c.p_range.count > 1 && !(c.p_range.max > c.p_range.min)))
      throw Error(ErrorKind::config, "p_range: need count >= 1 and max > min");
  }
  if (doc.contains("grid")) {
    const auto &g = doc.at("grid");
    allow_keys(g, "grid",
               {"policy", "min_radius", "well_widths", "max_spacing", "max_nodes", "R", "N"});
    c.grid.policy = get<std::string>(g, "policy", "grid", "auto");
    auto &o = c.grid.options;
    o.min_radius = get_number(g, "min_radius", "grid", o.min_radius);
    o.well_widths = get_number(g, "well_widths", "grid", o.well_widths);
    o.max_spacing = get_number(g, "max_spacing", "grid", o.max_spacing);
    o.max_nodes = get_count(g, "max_nodes", "grid", o.max_nodes);
    c.grid.R = get_number(g, "R", "grid", c.grid.R);
    c.grid.N = get_count(g, "N", "grid", c.grid.N);
    if (c.grid.policy != "auto" && c.grid.policy != "fixed")
      throw Error(ErrorKind::config, "grid.policy must be 'auto' or 'fixed'");
    if (!(o.min_radius > 0) || !(o.well_widths >= 0) || !(o.max_spacing > 0) ||
        o.max_nodes < RadialGrid::min_nodes)
      throw Error(ErrorKind::config, "grid: invalid automatic-policy options");
    if (c.grid.policy == "fixed" && (!(c.grid.R > 0) || c.grid.N < RadialGrid::min_nodes))
      throw Error(ErrorKind::config, "grid: fixed policy needs R > 0 and N >= 16");
  }
  if (doc.contains("velocity")) {
    const auto &v = doc.at("velocity");
    allow_keys(v, "velocity", {"dp", "dead_band", "tolerance"});
    auto &s = c.velocity.sign;
    s.dp = get_number(v, "dp", "velocity", s.dp);
    s.dead_band = get_number(v, "dead_band", "velocity", s.dead_band);
    s.tolerance = get_number(v, "tolerance", "velocity", s.tolerance);
    if (!(s.dp > 0) || !(s.dead_band >= 0) || !(s.tolerance > 0))
      throw Error(ErrorKind::config, "velocity: dp, tolerance must be > 0, dead_band >= 0");
  }
  if (doc.contains("evolve")) {
    const auto &e = doc.at("evolve");
    allow_keys(e, "evolve",
               {"n", "m", "packet", "t_list", "methods", "t_min", "band_fraction", "r_stride",
                "x3_stride", "x3_extent", "Q"});
    auto &ev = c.evolve;
    ev.n = static_cast<int>(get_count(e, "n", "evolve", 1));
    if (ev.n < 1)
      throw Error(ErrorKind::config, "evolve.n must be >= 1");
    ev.m = get<int>(e, "m", "evolve", 0);
    if (e.contains("packet")) {
      const auto &p = e.at("packet");
      allow_keys(p, "evolve.packet", {"kind", "p0", "sigma", "p_lo", "p_hi"});
      ev.packet.kind = get<std::string>(p, "kind", "evolve.packet", "gaussian");
      if (ev.packet.kind == "gaussian") {
        ev.packet.p0 = get_number(p, "p0", "evolve.packet", 0.0);
        ev.packet.sigma = get_number(p, "sigma", "evolve.packet", 0.1);
        if (!(ev.packet.sigma > 0))
          throw Error(ErrorKind::config, "evolve.packet.sigma must be > 0");
      } else if (ev.packet.kind == "zero") {
        ev.packet.p_lo = get_number(p, "p_lo", "evolve.packet", 0.0);
        ev.packet.p_hi = get_number(p, "p_hi", "evolve.packet", 1.0);
        if (!(ev.packet.p_hi > ev.packet.p_lo))
          throw Error(ErrorKind::config, "evolve.packet: need p_hi > p_lo");
      } else {
        throw Error(ErrorKind::config, "evolve.packet.kind must be 'gaussian' or 'zero'");
      }
    }
    if (e.contains("t_list")) {
      const auto &t = e.at("t_list");
      if (!t.is_array() || t.empty())
        throw Error(ErrorKind::config, "evolve.t_list: expected a non-empty array");
      ev.t_list.clear();
      for (const auto &x : t) {
        if (!x.is_number() || !std::isfinite(x.get<double>()))
          throw Error(ErrorKind::config, "evolve.t_list: expected finite numbers");
        ev.t_list.push_back(x.get<double>());
      }
    }
    if (e.contains("methods")) {
      const auto &ms = e.at("methods");
      if (!ms.is_array() || ms.empty())
        throw Error(ErrorKind::config, "evolve.methods: expected a non-empty array");
      ev.methods.clear();
      for (const auto &x : ms) {
        if (!x.is_string() || (x != "quadrature" && x != "stationary_phase"))
          throw Error(ErrorKind::config,
                      "evolve.methods: entries must be 'quadrature' or 'stationary_phase'");
        ev.methods.push_back(x.get<std::string>());
      }
    }
    ev.sp.t_min = get_number(e, "t_min", "evolve", ev.sp.t_min);
    ev.sp.band_fraction = get_number(e, "band_fraction", "evolve", ev.sp.band_fraction);
    ev.r_stride = std::max<std::size_t>(1, get_count(e, "r_stride", "evolve", 1));
    ev.x3_stride = std::max<std::size_t>(1, get_count(e, "x3_stride", "evolve", 1));
    if (e.contains("x3_extent")) {
      const auto &x = e.at("x3_extent");
      allow_keys(x, "evolve.x3_extent", {"min", "max"});
      const double lo = get_number(x, "min", "evolve.x3_extent", 0.0);
      const double hi = get_number(x, "max", "evolve.x3_extent", 0.0);
      if (!(hi > lo))
        throw Error(ErrorKind::config, "evolve.x3_extent: need max > min");
      ev.x3_extent = {lo, hi};
    }
    if (e.contains("Q")) {
      const auto &q = e.at("Q");
      allow_keys(q, "evolve.Q", {"kind", "lo", "hi"});
      if (get<std::string>(q, "kind", "evolve.Q", "indicator") != "indicator")
        throw Error(ErrorKind::config, "evolve.Q.kind must be 'indicator'");
      ev.q.present = true;
      ev.q.lo = get_number(q, "lo", "evolve.Q", 0.0);
      ev.q.hi = get_number(q, "hi", "evolve.Q", 0.0);
      if (!(ev.q.hi > ev.q.lo))
        throw Error(ErrorKind::config, "evolve.Q: need hi > lo");
    }
  }
  c.output_dir = get<std::string>(doc, "output_dir", "config", c.output_dir);
  return c;
}

inline RunConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorKind::config, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error &e) {
    throw Error(ErrorKind::config, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

struct CliOptions {
  std::string command;
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  bool plots = false;
  unsigned threads = 1;
  bool verbose = false;
};

//! Runs one command. Files go to the output directory; structured errors go
//! to `err`. Returns the process exit code (0 ok, 2 config, 3 compute).
class Runner {
public:
  Runner(RunConfig cfg, CliOptions opts, std::ostream &log)
      : cfg_(std::move(cfg)), opts_(std::move(opts)), log_(log) {
    out_dir_ = opts_.out ? *opts_.out : std::filesystem::path(cfg_.output_dir);
  }

  void build_field() {
    const auto &f = cfg_.field;
    if (f.kind == "power_law") {
      field_ = FieldProfile::power_law(f.b0, f.delta, f.gauge_c, f.experimental);
    } else {
      std::filesystem::path p(f.path);
      if (p.is_relative() && !opts_.config.empty())
        p = opts_.config.parent_path() / p;
      field_ = load_field_table(p, f.gauge_c);
    }
  }

  void run(Command cmd) {
    cmd_ = cmd;
    std::filesystem::create_directories(out_dir_);
    switch (cmd) {
    case Command::dispersion: run_dispersion(); break;
    case Command::thresholds: run_thresholds(); break;
    case Command::velocity: run_velocity(); break;
    case Command::minima: run_minima(); break;
    case Command::evolve: run_evolve(); break;
    }
    write_manifest();
  }

  const std::vector<std::string> &outputs() const noexcept { return outputs_; }

private:
  GridPolicy policy() const {
    if (cfg_.grid.policy == "fixed")
      return GridPolicy::fixed(RadialGrid(cfg_.grid.R, cfg_.grid.N));
    return GridPolicy::automatic(cfg_.grid.options);
  }

  SweepResult sweep_m(int m, int n_max, bool keep_psi) {
    const auto p = cfg_.p_range.samples();
    SweepOptions so;
    so.keep_psi = keep_psi;
    so.threads = opts_.threads;
    auto res = sweep(*field_, m, n_max, p, policy(), so);
    record_grid(m, res.grid);
    for (const auto &w : res.warnings)
      add_warning("m = " + std::to_string(m) + ": " + w);
    verbose("swept m = " + std::to_string(m) + " on " + res.grid.tag());
    return res;
  }

  void record_grid(int m, const RadialGrid &g) {
    json j;
    j["m"] = m;
    j["R"] = g.R();
    j["N"] = g.size();
    j["h"] = g.spacing();
    grids_.push_back(std::move(j));
  }

  void add_warning(const std::string &w) {
    warnings_.push_back(w);
    verbose("warning: " + w);
  }

  void verbose(const std::string &s) {
    if (opts_.verbose)
      log_ << s << '\n';
  }

  std::ofstream open(const std::string &name, bool binary = false) {
    outputs_.push_back(name);
    std::ofstream os(out_dir_ / name, binary ? std::ios::binary : std::ios::out);
    if (!os)
      throw Error(ErrorKind::io, "cannot write " + (out_dir_ / name).string());
    return os;
  }

  void write_json(const std::string &name, const json &j) {
    auto os = open(name);
    os << j.dump(2) << '\n';
  }

  static std::string curve_name(int n, int m) {
    return "curve_n" + std::to_string(n) + "_m" + std::to_string(m) + ".csv";
  }

  void run_dispersion() {
    std::vector<std::string> csvs;
    for (int m : cfg_.m_list) {
      const auto res = sweep_m(m, cfg_.n_max, false);
      for (const auto &c : res.curves) {
        const auto name = curve_name(c.n, m);
        auto os = open(name);
        write_curve_csv(os, std::span<const DispersionCurve>(&c, 1));
        csvs.push_back(name);
      }
    }
    if (opts_.plots) {
      std::ostringstream gp;
      gp << "set datafile separator ','\nset key outside\nset xlabel 'p'\nset ylabel 'lambda'\n"
            "plot ";
      for (std::size_t k = 0; k < csvs.size(); ++k)
        gp << (k ? ", \\\n     " : "") << "'" << csvs[k] << "' using 1:4 every ::1 with lines title '"
           << csvs[k].substr(0, csvs[k].size() - 4) << "'";
      gp << '\n';
      auto os = open("plot_dispersion.gp");
      os << gp.str();
    }
  }

  void run_thresholds() {
    json all = json::array();
    for (int m : cfg_.m_list) {
      const auto res = sweep_m(m, cfg_.n_max, false);
      for (const auto &c : res.curves) {
        auto os = open(curve_name(c.n, m));
        write_curve_csv(os, std::span<const DispersionCurve>(&c, 1));
      }
      const auto rep = thresholds(res.curves);
      for (const auto &e : rep.per_n)
        if (!e.advisory.empty())
          add_warning("m = " + std::to_string(m) + ", n = " + std::to_string(e.n) + ": " +
                      e.advisory);
      all.push_back(threshold_json(rep));
    }
    write_json("thresholds.json", all);
    if (opts_.plots) {
      auto os = open("plot_thresholds.gp");
      os << "set datafile separator ','\nset xlabel 'p'\nset ylabel 'lambda'\nplot ";
      bool first = true;
      for (int m : cfg_.m_list)
        for (int n = 1; n <= cfg_.n_max; ++n) {
          os << (first ? "" : ", \\\n     ") << "'" << curve_name(n, m)
             << "' using 1:4 every ::1 with lines title 'n=" << n << " m=" << m << "'";
          first = false;
        }
      os << '\n';
    }
  }

  void run_velocity() {
    const auto p = cfg_.p_range.samples();
    json certs = json::array();
    std::vector<std::string> csvs;
    for (int m : cfg_.m_list) {
      const auto res = sweep_m(m, cfg_.n_max, false);
      const FiberSolver solver(*field_, res.grid, m);
      std::vector<VelocityEstimate> rows(p.size() * static_cast<std::size_t>(cfg_.n_max));
      parallel_for(rows.size(), opts_.threads, [&](std::size_t k) {
        const int n = static_cast<int>(k / p.size()) + 1;
        rows[k] = estimate_velocity(solver, p[k % p.size()], n, cfg_.velocity.sign.dp);
      });
      const auto name = "velocity_m" + std::to_string(m) + ".csv";
      auto os = open(name);
      write_velocity_csv(os, rows);
      csvs.push_back(name);
      const bool sufficient = monotonicity_sufficient_condition(*field_, res.grid, m);
      for (int n = 1; n <= cfg_.n_max; ++n) {
        auto so = cfg_.velocity.sign;
        so.threads = opts_.threads;
        const auto cert = sign_certificate(solver, n, p, so);
        json j;
        j["n"] = n;
        j["m"] = m;
        j["sign"] = to_string(cert.sign);
        j["p_star"] = cert.p_star;
        j["max_disagreement"] = json_number(cert.max_disagreement);
        j["sufficient_condition"] = sufficient;
        j["diagnostics"] = cert.diagnostics;
        certs.push_back(std::move(j));
      }
    }
    write_json("velocity.json", certs);
    if (opts_.plots) {
      auto os = open("plot_velocity.gp");
      os << "set datafile separator ','\nset xlabel 'p'\nset ylabel \"lambda'\"\nplot ";
      for (std::size_t k = 0; k < csvs.size(); ++k)
        os << (k ? ", \\\n     " : "") << "'" << csvs[k]
           << "' using 1:4 every ::1 with points title '" << csvs[k] << " v_fh'";
      os << '\n';
    }
  }

  void run_minima() {
    json all = json::array();
    for (int m : cfg_.m_list) {
      const auto res = sweep_m(m, cfg_.n_max, false);
      for (const auto &c : res.curves) {
        auto os = open(curve_name(c.n, m));
        write_curve_csv(os, std::span<const DispersionCurve>(&c, 1));
        json j;
        j["n"] = c.n;
        j["m"] = m;
        j["minima"] = json::array();
        for (const auto &mn : find_local_minima(c))
          j["minima"].push_back({{"p", mn.p}, {"lambda", mn.lambda}});
        all.push_back(std::move(j));
      }
    }
    write_json("minima.json", all);
    if (opts_.plots) {
      auto os = open("plot_minima.gp");
      os << "set datafile separator ','\nset xlabel 'p'\nset ylabel 'lambda'\nplot ";
      bool first = true;
      for (int m : cfg_.m_list)
        for (int n = 1; n <= cfg_.n_max; ++n) {
          os << (first ? "" : ", \\\n     ") << "'" << curve_name(n, m)
             << "' using 1:4 every ::1 with lines title 'n=" << n << " m=" << m << "'";
          first = false;
        }
      os << '\n';
    }
  }

  void run_evolve() {
    const auto &ev = cfg_.evolve;
    double lo, hi;
    if (ev.packet.kind == "gaussian") {
      lo = ev.packet.p0 - 4.0 * ev.packet.sigma;
      hi = ev.packet.p0 + 4.0 * ev.packet.sigma;
    } else {
      lo = ev.packet.p_lo;
      hi = ev.packet.p_hi;
    }
    double t_max = 0.0;
    for (double t : ev.t_list)
      t_max = std::max(t_max, std::fabs(t));
    RadialGrid grid(12.0, RadialGrid::min_nodes);
    if (cfg_.grid.policy == "fixed") {
      grid = RadialGrid(cfg_.grid.R, cfg_.grid.N);
    } else {
      // cover the packet sweep with a half-unit margin
      const auto rec =
          recommend_grid(*field_, ev.m, lo - 0.5, hi + 0.5, ev.n, cfg_.grid.options);
      grid = rec.grid;
      if (!rec.warning.empty())
        add_warning(rec.warning);
    }
    record_grid(ev.m, grid);
    const FiberSolver solver(*field_, grid, ev.m);
    const auto p = plan_packet_sweep(solver, ev.n, lo, hi, t_max);
    SweepOptions so;
    so.threads = opts_.threads;
    auto res = sweep(*field_, ev.m, ev.n, p, GridPolicy::fixed(grid), so);
    const auto branch = branch_data(*field_, std::move(res.curves.back()));
    const auto intervals = detect_intervals(branch.curve);
    const auto spec = ev.packet.kind == "gaussian"
                          ? gaussian_packet(branch, intervals, ev.packet.p0, ev.packet.sigma)
                          : zero_packet(branch, intervals,
                                        detail::containing_interval(intervals, lo, hi, 0.0));
    const double f2 = spec.norm_squared(branch.step());
    evolve_report_["p_step"] = branch.step();
    evolve_report_["p_samples"] = branch.curve.size();
    evolve_report_["f_norm_squared"] = f2;
    evolve_report_["interval"] = {{"p_lo", spec.interval.p_lo},
                                  {"p_hi", spec.interval.p_hi},
                                  {"curvature_sign", spec.interval.curvature_sign}};
    evolve_report_["localization_radius"] = f2 > 0 ? localization_radius(branch, spec) : 0.0;
    std::optional<StationaryPhaseData> sp;
    const bool want_sp =
        std::find(ev.methods.begin(), ev.methods.end(), "stationary_phase") != ev.methods.end();
    if (want_sp) {
      sp.emplace(branch, spec.interval);
      evolve_report_["alpha"] = sp->alpha();
      evolve_report_["beta"] = sp->beta();
    }
    json snaps = json::array();
    for (double t : ev.t_list) {
      const auto uq = evolve_quadrature(branch, spec, t);
      const double nq = norm_squared(uq);
      json row;
      row["t"] = t;
      row["x3_cells"] = uq.n_x3();
      row["dx"] = uq.dx;
      row["norm_squared"] = nq;
      row["norm_relative_drift"] = f2 > 0 ? json_number(nq / f2 - 1.0) : json(0.0);
      row["mass_fraction_x3_positive"] = mass_fraction_positive(uq);
      row["mass_fraction_x3_negative"] = mass_fraction_negative(uq);
      if (std::find(ev.methods.begin(), ev.methods.end(), "quadrature") != ev.methods.end())
        emit_snapshot(uq, row);
      if (sp) {
        if (std::fabs(t) >= ev.sp.t_min) {
          const auto us = evolve_stationary_phase(branch, spec, *sp, uq.x3, t, ev.sp);
          row["stationary_phase_deviation"] = f2 > 0 ? json_number(relative_l2_deviation(uq, us))
                                                     : json(0.0);
          emit_snapshot(us, row);
        } else {
          add_warning("stationary phase skipped at t = " + format_double(t) + " (|t| < t_min)");
        }
      }
      snaps.push_back(std::move(row));
    }
    evolve_report_["snapshots"] = std::move(snaps);
    if (ev.q.present) {
      std::vector<double> ts;
      for (double t : ev.t_list)
        if (t != 0.0)
          ts.push_back(t);
      const double qlo = ev.q.lo, qhi = ev.q.hi;
      const auto tab = asymptotic_velocity_check(
          branch, spec, [&](double g) { return g > qlo && g < qhi ? 1.0 : 0.0; }, ts);
      json rows = json::array();
      for (const auto &r : tab.rows)
        rows.push_back({{"t", r.t}, {"lhs", r.lhs}, {"rhs", r.rhs}, {"diff", r.diff}});
      evolve_report_["asymptotic_velocity"] = {{"rows", rows},
                                               {"tail_non_increasing", tab.tail_non_increasing}};
    }
    write_json("evolve.json", evolve_report_);
    if (opts_.plots && !density_files_.empty()) {
      auto os = open("plot_evolve.gp");
      os << "set datafile separator ','\nset xlabel 'x3'\nset ylabel 'r'\nset view map\n";
      for (const auto &f : density_files_)
        os << "splot '" << f << "' using 2:3:($4**2+$5**2) every ::1 with points palette "
           << "pointtype 5 pointsize 0.3 title '" << f << "'\npause -1\n";
    }
  }

  void emit_snapshot(const EvolutionField &u, json &row) {
    const auto stem = "evolution_t" + format_double(u.t) + "_" + to_string(u.method);
    {
      auto os = open(stem + ".bin", true);
      write_snapshot(os, u);
    }
    EvolutionField view = u;
    if (cfg_.evolve.x3_extent) {
      const auto [lo, hi] = *cfg_.evolve.x3_extent;
      EvolutionField cut;
      cut.t = u.t;
      cut.n = u.n;
      cut.m = u.m;
      cut.method = u.method;
      cut.grid = u.grid;
      cut.dx = u.dx;
      std::vector<std::size_t> keep;
      for (std::size_t k = 0; k < u.n_x3(); ++k)
        if (u.x3[k] >= lo && u.x3[k] <= hi)
          keep.push_back(k);
      for (std::size_t k : keep)
        cut.x3.push_back(u.x3[k]);
      cut.values.resize(u.n_r() * keep.size());
      for (std::size_t i = 0; i < u.n_r(); ++i)
        for (std::size_t q = 0; q < keep.size(); ++q)
          cut.values[i * keep.size() + q] = u.at(i, keep[q]);
      view = std::move(cut);
    }
    {
      auto os = open(stem + ".csv");
      write_evolution_csv(os, view, {cfg_.evolve.r_stride, cfg_.evolve.x3_stride});
    }
    density_files_.push_back(stem + ".csv");
    row[std::string(to_string(u.method)) + "_files"] = {stem + ".bin", stem + ".csv"};
  }

  void write_manifest() {
    json m;
    m["tool"] = "magfiber";
    m["version"] = kToolVersion;
    m["command"] = to_string(cmd_);
    m["inputs"] = cfg_.source;
    m["grid"] = grids_;
    json tol;
    tol["eigenvalue_bisection"] = "machine precision bracket (<= 1e-10 max(1, ||T||_inf))";
    tol["inverse_iteration_residual"] = "1e-8 (|lambda| + ||T||_inf)";
    tol["inverse_iteration_shift"] = "1e-12 ||T||_inf";
    tol["degeneracy_gap"] = 1e-9;
    tol["grid"] = {{"policy", cfg_.grid.policy},
                   {"min_radius", cfg_.grid.options.min_radius},
                   {"well_widths", cfg_.grid.options.well_widths},
                   {"max_spacing", cfg_.grid.options.max_spacing},
                   {"max_nodes", cfg_.grid.options.max_nodes},
                   {"relative_spacing", 0.01},
                   {"de_broglie_fraction", 0.25}};
    tol["velocity"] = {{"dp", cfg_.velocity.sign.dp},
                       {"dead_band", cfg_.velocity.sign.dead_band},
                       {"agreement", cfg_.velocity.sign.tolerance},
                       {"crossing", cfg_.velocity.sign.crossing_tol}};
    tol["evolve"] = {{"phase_resolution", "max |d phase / dp| dp <= pi/4"},
                     {"t_min", cfg_.evolve.sp.t_min},
                     {"band_fraction", cfg_.evolve.sp.band_fraction},
                     {"packet_cutoff_sigmas", 4.0},
                     {"packet_margin_steps", 2}};
    m["tolerances"] = tol;
    m["threads"] = opts_.threads;
    m["warnings"] = warnings_;
    std::vector<std::string> files = outputs_;
    files.push_back("manifest.json");
    m["outputs"] = files;
    std::ofstream os(out_dir_ / "manifest.json");
    if (!os)
      throw Error(ErrorKind::io, "cannot write manifest");
    os << m.dump(2) << '\n';
  }

public:
  std::optional<FieldProfile> field_;

private:
  RunConfig cfg_;
  CliOptions opts_;
  std::ostream &log_;
  std::filesystem::path out_dir_;
  Command cmd_ = Command::dispersion;
  json grids_ = json::array();
  json evolve_report_ = json::object();
  std::vector<std::string> warnings_;
  std::vector<std::string> outputs_;
  std::vector<std::string> density_files_;
};

inline void report_error(std::ostream &err, ErrorKind kind, const std::string &what,
                         int code) {
  json j;
  j["error"] = {{"kind", to_string(kind)}, {"message", what}, {"exit_code", code}};
  err << j.dump() << '\n';
}

//! Config-stage failures exit 2, compute failures exit 3.
inline int run_cli(const CliOptions &opts, std::ostream &log, std::ostream &err) {
  RunConfig cfg;
  Command cmd;
  std::optional<Runner> runner;
  try {
    cfg = load_config(opts.config);
    if (!opts.command.empty()) {
      cmd = parse_command(opts.command);
      if (cfg.command && *cfg.command != cmd)
        throw Error(ErrorKind::config, "command differs from the config's 'command'");
    } else if (cfg.command) {
      cmd = *cfg.command;
    } else {
      throw Error(ErrorKind::config, "no command given");
    }
    if (opts.threads < 1)
      throw Error(ErrorKind::config, "--threads must be >= 1");
    runner.emplace(cfg, opts, log);
    runner->build_field();
  } catch (const Error &e) {
    report_error(err, e.kind(), e.what(), 2);
    return 2;
  }
  try {
    runner->run(cmd);
  } catch (const Error &e) {
    report_error(err, e.kind(), e.what(), 3);
    return 3;
  } catch (const std::exception &e) {
    report_error(err, ErrorKind::io, e.what(), 3);
    return 3;
  }
  return 0;
}

} // namespace magfiber
