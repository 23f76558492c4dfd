#include "magfiber/cli.hpp"
#include "magfiber/io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace magfiber;

namespace {

std::vector<std::string> lines(const std::string &s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);)
    out.push_back(l);
  return out;
}

ErrorKind config_error(const json &doc) {
  try {
    parse_config(doc);
  } catch (const Error &e) {
    return e.kind();
  }
  return ErrorKind::domain;
}

} // namespace

TEST(Csv, CurveHeaderAndRows) {
  DispersionCurve c;
  c.m = 2;
  c.n = 3;
  c.p = {-1.0, 0.5};
  c.lambda = {4.25, 0.1};
  std::ostringstream os;
  write_curve_csv(os, std::span<const DispersionCurve>(&c, 1));
  const auto l = lines(os.str());
  ASSERT_EQ(l.size(), 3u);
  EXPECT_EQ(l[0], "p,n,m,lambda");
  EXPECT_EQ(l[1], "-1,3,2,4.25");
  EXPECT_EQ(l[2], "0.5,3,2,0.10000000000000001");
}

TEST(Csv, VelocityLeavesMissingIbpEmpty) {
  std::vector<VelocityEstimate> rows(2);
  rows[0].v_fh = 1.0;
  rows[0].v_ibp = 1.0;
  rows[0].v_fd = 1.0;
  rows[1].p = 2.0;
  const auto l = [&] {
    std::ostringstream os;
    write_velocity_csv(os, rows);
    return lines(os.str());
  }();
  ASSERT_EQ(l.size(), 3u);
  EXPECT_EQ(l[0], "p,n,m,v_fh,v_ibp,v_fd,agreement");
  EXPECT_EQ(l[1], "0,1,0,1,1,1,0");
  EXPECT_EQ(l[2], "2,1,0,0,,0,0");
}

TEST(Csv, EvolutionStride) {
  EvolutionField u;
  u.t = 3.0;
  u.grid = RadialGrid(1.6, 16);
  u.x3 = {0.0, 1.0, 2.0, 3.0};
  u.dx = 1.0;
  u.values.assign(16 * 4, cplx(1.0, -2.0));
  std::ostringstream os;
  write_evolution_csv(os, u, {4, 2});
  const auto l = lines(os.str());
  EXPECT_EQ(l[0], "t,x3,r,re_u,im_u");
  EXPECT_EQ(l.size(), 1u + 4u * 2u);
  EXPECT_EQ(l[1], "3,0,0.050000000000000003,1,-2");
}

TEST(Json, NonFiniteBecomesNull) {
  EXPECT_TRUE(json_number(NAN).is_null());
  EXPECT_TRUE(json_number(INFINITY).is_null());
  EXPECT_EQ(json_number(1.5).get<double>(), 1.5);
}

TEST(Json, ThresholdReport) {
  ThresholdReport rep;
  rep.m = 0;
  rep.E_m = 0.5;
  rep.per_n = {{1, 0.5, true, -1.6, ""}, {2, 3.0, false, 0.0, "edge"}};
  const auto j = threshold_json(rep);
  EXPECT_EQ(j["per_n"][0]["argmin_p"].get<double>(), -1.6);
  EXPECT_FALSE(j["per_n"][0].contains("advisory"));
  EXPECT_TRUE(j["per_n"][1]["argmin_p"].is_null());
  EXPECT_EQ(j["per_n"][1]["advisory"], "edge");
}

TEST(Snapshot, RoundTrip) {
  EvolutionField u;
  u.t = -12.5;
  u.n = 2;
  u.m = -1;
  u.method = EvolutionMethod::stationary_phase;
  u.grid = RadialGrid(1.6, 16);
  u.x3 = {0.0, 0.5, 1.0};
  u.dx = 0.5;
  for (std::size_t k = 0; k < 48; ++k)
    u.values.emplace_back(std::sin(k * 0.3), std::cos(k * 1.7) * 1e-300);
  std::stringstream ss;
  write_snapshot(ss, u);
  EXPECT_EQ(ss.str().size(), 64u + 48u * 16u);
  EXPECT_EQ(ss.str().substr(0, 8), "MSWP0001");
  EXPECT_EQ(static_cast<unsigned char>(ss.str()[8]), 16u);
  const auto b = read_snapshot(ss);
  EXPECT_EQ(b.n_r, 16u);
  EXPECT_EQ(b.n_x3, 3u);
  EXPECT_EQ(b.t, -12.5);
  EXPECT_EQ(b.n, 2);
  EXPECT_EQ(b.m, -1);
  EXPECT_EQ(b.method, 1);
  EXPECT_EQ(b.values, u.values);
}

TEST(Snapshot, BadInputRejected) {
  std::stringstream bad("NOTMAGIC");
  EXPECT_THROW(read_snapshot(bad), Error);
  EvolutionField u;
  u.grid = RadialGrid(1.6, 16);
  u.x3 = {0.0};
  u.values.assign(16, cplx(1.0, 1.0));
  std::stringstream ss;
  write_snapshot(ss, u);
  std::stringstream cut(ss.str().substr(0, ss.str().size() - 5));
  try {
    read_snapshot(cut);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(Config, Defaults) {
  const auto c = parse_config(json::parse(R"({"field": {"delta": 1}})"));
  EXPECT_FALSE(c.command.has_value());
  EXPECT_EQ(c.field.kind, "power_law");
  EXPECT_EQ(c.field.delta, 1.0);
  EXPECT_EQ(c.field.b0, 1.0);
  EXPECT_EQ(c.m_list, std::vector<int>{0});
  EXPECT_EQ(c.n_max, 1);
  EXPECT_EQ(c.p_range.samples().size(), 21u);
  EXPECT_EQ(c.grid.policy, "auto");
}

TEST(Config, FullDocument) {
  const auto c = parse_config(json::parse(R"({
    "command": "evolve", "field": {"kind": "power_law", "b0": 2, "delta": 0.5},
    "m_list": [0, -1], "n_max": 3, "p_range": {"min": -2, "max": 2, "count": 5},
    "grid": {"policy": "fixed", "R": 20, "N": 800},
    "velocity": {"dp": 0.02},
    "evolve": {"n": 1, "m": 1, "packet": {"kind": "gaussian", "p0": 1, "sigma": 0.2},
               "t_list": [0, 100], "methods": ["quadrature", "stationary_phase"],
               "x3_extent": {"min": -10, "max": 300}, "Q": {"kind": "indicator", "lo": 1, "hi": 2}},
    "output_dir": "o"})"));
  EXPECT_EQ(*c.command, Command::evolve);
  EXPECT_EQ(c.m_list, (std::vector<int>{0, -1}));
  EXPECT_EQ(c.p_range.samples()[1], -1.0);
  EXPECT_EQ(c.grid.N, 800u);
  EXPECT_EQ(c.velocity.sign.dp, 0.02);
  EXPECT_EQ(c.evolve.methods.size(), 2u);
  EXPECT_TRUE(c.evolve.q.present);
  EXPECT_EQ(c.evolve.x3_extent->second, 300.0);
  EXPECT_EQ(c.output_dir, "o");
}

TEST(Config, RejectsUnknownKeysAtEveryLevel) {
  for (const char *doc :
       {R"({"field": {}, "colour": 1})", R"({"field": {"delta": 0, "gamma": 1}})",
        R"({"field": {}, "grid": {"h": 0.1}})", R"({"field": {}, "p_range": {"step": 1}})",
        R"({"field": {}, "evolve": {"packet": {"width": 1}}})",
        R"({"field": {}, "evolve": {"Q": {"lo": 0, "hi": 1, "x": 2}}})"})
    EXPECT_EQ(config_error(json::parse(doc)), ErrorKind::config) << doc;
}

TEST(Config, RejectsBadValues) {
  for (const char *doc :
       {R"({})", R"({"field": {"kind": "dipole"}})", R"({"field": {}, "m_list": []})",
        R"({"field": {}, "m_list": [0.5]})", R"({"field": {}, "n_max": 0})",
        R"({"field": {}, "p_range": {"min": 1, "max": 0}})",
        R"({"field": {}, "grid": {"policy": "adaptive"}})", R"({"field": {"delta": "one"}})",
        R"({"field": {}, "command": "plot"})", R"({"field": {"kind": "tabulated"}})",
        R"({"field": {}, "evolve": {"methods": ["wkb"]}})",
        R"({"field": {}, "evolve": {"packet": {"sigma": -1}}})"})
    EXPECT_EQ(config_error(json::parse(doc)), ErrorKind::config) << doc;
}

TEST(Config, LoadFailures) {
  try {
    load_config("/nonexistent/config.json");
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
  const auto path = std::filesystem::temp_directory_path() / "magfiber_bad_config.json";
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(load_config(path), Error);
  std::filesystem::remove(path);
}

TEST(Cli, ErrorReportIsJson) {
  std::ostringstream os;
  report_error(os, ErrorKind::convergence, "no luck", 3);
  const auto j = json::parse(os.str());
  EXPECT_EQ(j["error"]["kind"], "convergence");
  EXPECT_EQ(j["error"]["exit_code"], 3);
}
