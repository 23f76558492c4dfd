#include "magfiber/dispersion.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace magfiber;

namespace {

std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> p(n);
  for (std::size_t j = 0; j < n; ++j)
    p[j] = a + (b - a) * static_cast<double>(j) / static_cast<double>(n - 1);
  return p;
}

const FieldProfile constant_field = FieldProfile::power_law(1.0, 0.0);

} // namespace

TEST(Sweep, HarmonicPointAndDeepWell) {
  const std::vector<double> p{-15.0, 0.0};
  const auto res = sweep(constant_field, 0, 1, p, GridPolicy::automatic());
  ASSERT_EQ(res.curves.size(), 1u);
  EXPECT_NEAR(res.curves[0].lambda[1], 2.0, 1e-3);
  EXPECT_GT(res.curves[0].lambda[0], 0.0);
  EXPECT_LT(res.curves[0].lambda[0], 1.0);
}

TEST(Sweep, SharedGridAndLabels) {
  const auto p = linspace(-5.0, 5.0, 11);
  const auto res = sweep(constant_field, 1, 3, p, GridPolicy::automatic());
  ASSERT_EQ(res.curves.size(), 3u);
  for (int n = 1; n <= 3; ++n) {
    const auto &c = res.curves[n - 1];
    EXPECT_EQ(c.n, n);
    EXPECT_EQ(c.m, 1);
    EXPECT_TRUE(c.grid == res.grid);
    EXPECT_TRUE(c.has_psi());
  }
  EXPECT_GE(res.grid.R(), 5.0 + 8.0);
}

TEST(Sweep, ZeroLevelsAndBadGrid) {
  const std::vector<double> p{0.0, 1.0};
  EXPECT_TRUE(sweep(constant_field, 0, 0, p, GridPolicy::automatic()).curves.empty());
  const std::vector<double> bad{1.0, 0.0};
  EXPECT_THROW(sweep(constant_field, 0, 1, bad, GridPolicy::automatic()), Error);
}

TEST(Sweep, InterlacingAndCentrifugalOrder) {
  const auto f = FieldProfile::power_law(1.0, 0.5);
  const auto p = linspace(-4.0, 4.0, 17);
  const GridPolicy fixed = GridPolicy::fixed(RadialGrid(30.0, 1500));
  std::vector<SweepResult> by_m;
  for (int m = 0; m <= 2; ++m)
    by_m.push_back(sweep(f, m, 3, p, fixed, {false, 1}));
  for (int m = 0; m <= 2; ++m)
    for (std::size_t j = 0; j < p.size(); ++j) {
      for (int n = 0; n + 1 < 3; ++n)
        EXPECT_LT(by_m[m].curves[n].lambda[j], by_m[m].curves[n + 1].lambda[j]);
      for (int n = 0; n < 3; ++n) {
        EXPECT_GT(by_m[m].curves[n].lambda[j], 0.0);
        if (m > 0) {
          EXPECT_GT(by_m[m].curves[n].lambda[j], by_m[m - 1].curves[n].lambda[j]);
        }
      }
    }
}

TEST(Sweep, SignContinuity) {
  const auto p = linspace(-6.0, 4.0, 41);
  const auto res = sweep(constant_field, 0, 3, p, GridPolicy::automatic());
  for (const auto &c : res.curves)
    for (std::size_t j = 1; j < p.size(); ++j)
      EXPECT_GT(weighted_dot(c.grid, c.psi[j], c.psi[j - 1]), 0.0) << c.n << " " << j;
}

TEST(Sweep, ThreadsDoNotChangeResults) {
  const auto p = linspace(-3.0, 3.0, 13);
  const auto a = sweep(constant_field, 1, 2, p, GridPolicy::automatic(), {true, 1});
  const auto b = sweep(constant_field, 1, 2, p, GridPolicy::automatic(), {true, 3});
  for (int n = 0; n < 2; ++n) {
    EXPECT_EQ(a.curves[n].lambda, b.curves[n].lambda);
    EXPECT_EQ(a.curves[n].psi, b.curves[n].psi);
  }
}

// Adding c to a(r) gives lambda_c(p) = lambda_0(p + c).
TEST(Sweep, GaugeCovariance) {
  const auto f0 = FieldProfile::power_law(1.0, 0.5);
  const auto f3 = f0.with_gauge(3.0);
  const auto p = linspace(-4.0, 2.0, 13);
  std::vector<double> shifted;
  for (double x : p)
    shifted.push_back(x + 3.0);
  const auto grid = GridPolicy::fixed(RadialGrid(30.0, 1500));
  const auto a = sweep(f3, 1, 2, p, grid, {false, 1});
  const auto b = sweep(f0, 1, 2, shifted, grid, {false, 1});
  for (int n = 0; n < 2; ++n)
    for (std::size_t j = 0; j < p.size(); ++j)
      EXPECT_NEAR(a.curves[n].lambda[j], b.curves[n].lambda[j], 1e-8);
}

TEST(Sweep, RightTailApproachesFreeParticle) {
  const std::vector<double> p{5.0, 10.0, 20.0, 40.0};
  const auto ratio = right_tail_ratios(constant_field, 0, 1, p);
  for (std::size_t k = 1; k < ratio.size(); ++k)
    EXPECT_LT(ratio[k], ratio[k - 1]);
  for (double r : ratio)
    EXPECT_GT(r, 1.0);
  EXPECT_LT(ratio.back(), 1.05);
}

TEST(Sweep, ConstantFieldStaysBelowLandauLevels) {
  const std::vector<double> p{-20.0, -15.0, -10.0, -5.0};
  const auto res = sweep(constant_field, 0, 2, p, GridPolicy::automatic());
  for (int n = 1; n <= 2; ++n) {
    const auto &c = res.curves[n - 1];
    const double level = 2.0 * n - 1.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      EXPECT_LT(c.lambda[j], level);
      if (j > 0) {
        // gap shrinks as k = -p grows
        EXPECT_LT(level - c.lambda[j - 1], level - c.lambda[j]);
      }
    }
  }
}

TEST(Thresholds, ConstantFieldBelowB0) {
  const auto p = linspace(-8.0, 2.0, 101);
  const auto res = sweep(constant_field, 0, 2, p, GridPolicy::automatic(), {false, 1});
  const auto rep = thresholds(res.curves);
  EXPECT_GT(rep.E_m, 0.0);
  EXPECT_LT(rep.E_m, 1.0);
  EXPECT_EQ(rep.E_m, rep.per_n[0].E);
  EXPECT_TRUE(rep.per_n[0].attained);
  EXPECT_LT(rep.per_n[0].argmin_p, 0.0);
  EXPECT_LE(rep.per_n[0].E, rep.per_n[1].E);
  EXPECT_LT(rep.per_n[0].E, rep.per_n[1].E);
}

TEST(Thresholds, LogFieldPositive) {
  const auto p = linspace(-6.0, 6.0, 49);
  const auto res = sweep(FieldProfile::power_law(1.0, 1.0), 1, 1, p, GridPolicy::automatic(),
                         {false, 1});
  const auto rep = thresholds(res.curves);
  EXPECT_GT(rep.E_m, 0.0);
  // increasing curve: the infimum sits at the left end and is not attained
  EXPECT_FALSE(rep.per_n[0].attained);
  EXPECT_NE(rep.per_n[0].advisory.find("extend sweep"), std::string::npos);
}

TEST(Thresholds, ParabolicRefinementIsExactForQuadratic) {
  DispersionCurve c;
  for (int j = 0; j <= 10; ++j) {
    const double x = -1.0 + 0.23 * j;
    c.p.push_back(x);
    c.lambda.push_back(3.0 + 2.0 * (x - 0.1234) * (x - 0.1234));
  }
  const std::vector<DispersionCurve> cs{c};
  const auto rep = thresholds(cs);
  EXPECT_TRUE(rep.per_n[0].attained);
  EXPECT_NEAR(rep.per_n[0].argmin_p, 0.1234, 1e-12);
  EXPECT_NEAR(rep.E_m, 3.0, 1e-12);
  const auto mins = find_local_minima(c);
  ASSERT_EQ(mins.size(), 1u);
  EXPECT_NEAR(mins[0].p, 0.1234, 1e-12);
}

TEST(Thresholds, Errors) {
  EXPECT_THROW(thresholds(std::vector<DispersionCurve>{}), Error);
  DispersionCurve a, b;
  a.m = 0;
  b.m = 1;
  a.p = b.p = {0.0};
  a.lambda = b.lambda = {1.0};
  EXPECT_THROW(thresholds(std::vector<DispersionCurve>{a, b}), Error);
}

TEST(LeftAsymptotics, ConstantFieldLandauLevels) {
  const std::vector<double> k{5.0, 10.0, 15.0, 20.0};
  const auto r1 = classify_left_asymptotics(constant_field, 0, 1, k);
  EXPECT_EQ(r1.left_law, LeftLaw::landau);
  EXPECT_NEAR(r1.left_limit_fit, 1.0, 0.05);
  ASSERT_TRUE(r1.below_landau.has_value());
  EXPECT_TRUE(*r1.below_landau);
  EXPECT_TRUE(r1.hypotheses_verified);
  const auto r2 = classify_left_asymptotics(constant_field, 0, 2, k);
  EXPECT_EQ(r2.left_law, LeftLaw::landau);
  EXPECT_NEAR(r2.left_limit_fit, 3.0, 0.1);
}

TEST(LeftAsymptotics, DecayingFieldGoesToZero) {
  const std::vector<double> k{4.0, 8.0, 16.0, 32.0};
  const auto f = FieldProfile::power_law(1.0, 0.5);
  const auto r = classify_left_asymptotics(f, 1, 1, k);
  EXPECT_EQ(r.left_law, LeftLaw::to_zero);
  for (std::size_t j = 1; j < r.lambda.size(); ++j)
    EXPECT_LT(r.lambda[j], r.lambda[j - 1]);
  const auto r0 = classify_left_asymptotics(f, 0, 1, k);
  EXPECT_EQ(r0.left_law, LeftLaw::to_zero);
  // lambda tracks the local Landau scale b(rho_k)
  for (std::size_t j = 0; j < r.lambda.size(); ++j)
    EXPECT_NEAR(r.lambda[j] / r.landau_scale[j], 1.0, 0.5);
}

TEST(LeftAsymptotics, TruncatesAtGridCap) {
  GridOptions o;
  o.max_nodes = 3000;
  const std::vector<double> k{2.0, 4.0, 6.0, 8.0, 10.0};
  const auto r = classify_left_asymptotics(FieldProfile::power_law(1.0, 1.0), 1, 1, k, o);
  EXPECT_TRUE(r.truncated);
  EXPECT_LT(r.achieved_k_max, 10.0);
}

TEST(LeftAsymptotics, TabulatedFlagsHypotheses) {
  std::vector<double> r, b;
  for (int j = 0; j <= 400; ++j) {
    r.push_back(0.0 + 0.1 * j);
    b.push_back(1.0);
  }
  const auto f = FieldProfile::tabulated(r, b);
  const std::vector<double> k{4.0, 6.0, 8.0, 10.0};
  const auto rep = classify_left_asymptotics(f, 1, 1, k);
  EXPECT_FALSE(rep.hypotheses_verified);
  EXPECT_EQ(rep.left_law, LeftLaw::landau);
}

TEST(LeftAsymptotics, NeedsFourValues) {
  const std::vector<double> k{5.0, 10.0, 15.0};
  EXPECT_THROW(classify_left_asymptotics(constant_field, 0, 1, k), Error);
}

TEST(LocalMinima, ConstantFieldLosesMonotonicity) {
  const auto p = linspace(-25.0, 5.0, 121);
  const auto res = sweep(constant_field, 0, 1, p, GridPolicy::automatic(), {false, 1});
  const auto mins = find_local_minima(res.curves[0]);
  ASSERT_GE(mins.size(), 1u);
  for (const auto &m : mins)
    EXPECT_LT(m.p, 0.0);
}

TEST(LocalMinima, MonotoneCasesHaveNone) {
  const auto p = linspace(-4.0, 4.0, 81);
  const auto r1 = sweep(FieldProfile::power_law(1.0, 1.0), 0, 1, p, GridPolicy::automatic(),
                        {false, 1});
  EXPECT_TRUE(find_local_minima(r1.curves[0]).empty());
  const auto r2 = sweep(FieldProfile::power_law(1.0, 0.5), 1, 1, p, GridPolicy::automatic(),
                        {false, 1});
  EXPECT_TRUE(find_local_minima(r2.curves[0]).empty());
}
