#include "magfiber/field.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace magfiber;

TEST(PotentialA, PowerLawExamples) {
  EXPECT_DOUBLE_EQ(potential_a(FieldProfile::power_law(1.0, 0.0), 2.0), 2.0);
  EXPECT_DOUBLE_EQ(potential_a(FieldProfile::power_law(1.0, 1.0), 1.0), 0.0);
  EXPECT_NEAR(potential_a(FieldProfile::power_law(2.0, 0.5), 4.0), 8.0, 1e-14);
}

TEST(PotentialA, DomainAndRangeErrors) {
  const auto f = FieldProfile::power_law(1.0, 0.0);
  try {
    potential_a(f, 0.0);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::domain);
  }
  const auto t = FieldProfile::tabulated({1.0, 2.0, 3.0}, {1.0, 1.0, 1.0});
  try {
    potential_a(t, 3.5);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::range);
  }
}

TEST(PotentialA, GaugeIsExactShift) {
  for (double d : {0.0, 0.3, 0.5, 1.0}) {
    const auto f0 = FieldProfile::power_law(1.3, d);
    const auto fc = f0.with_gauge(2.5);
    for (double r : {0.01, 0.7, 3.0, 40.0})
      EXPECT_EQ(potential_a(fc, r), potential_a(f0, r) + 2.5) << d << " " << r;
  }
}

TEST(FieldProfile, RejectsInvalidParameters) {
  EXPECT_THROW(FieldProfile::power_law(0.0, 0.0), Error);
  EXPECT_THROW(FieldProfile::power_law(1.0, 1.5), Error);
  EXPECT_THROW(FieldProfile::power_law(1.0, -0.5), Error);
  EXPECT_NO_THROW(FieldProfile::power_law(1.0, -0.5, 0.0, true));
  EXPECT_THROW(FieldProfile::tabulated({1.0, 1.0}, {1.0, 1.0}), Error);
  EXPECT_THROW(FieldProfile::tabulated({1.0, 2.0}, {1.0, 0.0}), Error);
}

TEST(FieldProfile, TabulatedPotentialIsExactIntegralOfLinearB) {
  // b = 1 + r on [0, 4]: a = r + r^2/2
  std::vector<double> r, b;
  for (int k = 0; k <= 8; ++k) {
    r.push_back(0.5 * k);
    b.push_back(1.0 + 0.5 * k);
  }
  const auto f = FieldProfile::tabulated(r, b, 0.0);
  for (double x : {0.1, 1.3, 2.0, 3.99})
    EXPECT_NEAR(f.a(x), x + 0.5 * x * x, 1e-13);
  EXPECT_NEAR(f.b(1.3), 2.3, 1e-14);
}

TEST(RhoK, Examples) {
  EXPECT_NEAR(rho_k(FieldProfile::power_law(1.0, 0.0), 20.0), 20.0, 1e-12);
  EXPECT_NEAR(rho_k(FieldProfile::power_law(1.0, 1.0), 3.0), std::exp(3.0), 1e-12);
  EXPECT_NEAR(rho_k(FieldProfile::power_law(1.0, 0.5), 4.0), 4.0, 1e-12);
}

TEST(RhoK, BisectionOracleForHalfPower) {
  // independent bisection on a(r) = 2 sqrt(r) = k
  const auto f = FieldProfile::power_law(1.0, 0.5);
  double lo = 1e-9, hi = 100.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (2.0 * std::sqrt(mid) < 4.0 ? lo : hi) = mid;
  }
  EXPECT_NEAR(rho_k(f, 4.0), lo, 1e-10);
}

TEST(RhoK, InvertsPotential) {
  for (double d : {0.0, 0.5, 1.0}) {
    const auto f = FieldProfile::power_law(1.7, d, 0.4);
    for (double k : {1.0, 5.0, 12.0})
      EXPECT_NEAR(potential_a(f, rho_k(f, k)), k, 1e-12 * std::max(1.0, k));
  }
  const auto t = FieldProfile::tabulated({0.5, 1.0, 2.0, 4.0, 8.0}, {2.0, 1.5, 1.0, 0.8, 0.5});
  for (double k : {0.3, 2.0, 5.0})
    EXPECT_NEAR(potential_a(t, rho_k(t, k)), k, 1e-12);
}

TEST(RhoK, BelowPotentialRange) {
  const auto f = FieldProfile::power_law(1.0, 0.0, 3.0);
  try {
    rho_k(f, 2.0);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::below_potential_range);
  }
  const auto t = FieldProfile::tabulated({1.0, 2.0, 3.0}, {1.0, 1.0, 1.0}, 1.0);
  try {
    rho_k(t, 0.5);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::below_potential_range);
  }
}

TEST(DerivedData, Examples) {
  const auto d1 = derived_data(FieldProfile::power_law(1.0, 1.0));
  for (double r : {0.1, 1.0, 7.0})
    EXPECT_EQ(d1.v(r), 0.0);
  EXPECT_DOUBLE_EQ(derived_data(FieldProfile::power_law(2.0, 0.0)).tau(3.0), 1.5);
  EXPECT_DOUBLE_EQ(derived_data(FieldProfile::power_law(1.0, 0.5)).v(1.0), -0.75);
}

TEST(DerivedData, PowerLawMatchesCentralDifferenceOracle) {
  for (double delta : {0.0, 0.25, 0.5, 0.8}) {
    const double b0 = 1.3;
    const auto f = FieldProfile::power_law(b0, delta);
    const auto d = derived_data(f);
    auto tau = [&](double r) { return r / f.b(r); };
    auto inner = [&](double r, double e) { return (tau(r + e) - tau(r - e)) / (2.0 * e) / r; };
    for (double r : {0.5, 1.0, 2.5, 6.0}) {
      const double e = 2e-4 * r;
      EXPECT_NEAR(d.tau(r), tau(r), 1e-12 * tau(r));
      const double v_fd = r * (inner(r + e, e) - inner(r - e, e)) / (2.0 * e);
      if (delta != 1.0) {
        EXPECT_NEAR(d.v(r), v_fd, 1e-6 * std::fabs(d.v(r))) << delta << " " << r;
      }
      const double vp_fd = (d.v(r + e) - d.v(r - e)) / (2.0 * e);
      EXPECT_NEAR(d.v_prime(r), vp_fd, 1e-6 * std::max(std::fabs(vp_fd), 1e-12));
    }
  }
}

TEST(DerivedData, TabulatedNeedsFourPoints) {
  const auto t = FieldProfile::tabulated({1.0, 2.0, 3.0}, {1.0, 1.0, 1.0});
  try {
    derived_data(t);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::insufficient_data);
  }
}

TEST(DerivedData, TabulatedApproximatesPowerLaw) {
  std::vector<double> r, b;
  for (int k = 0; k <= 400; ++k) {
    const double x = 0.5 + 0.025 * k;
    r.push_back(x);
    b.push_back(std::pow(x, -0.5));
  }
  const auto d = derived_data(FieldProfile::tabulated(r, b));
  const auto exact = derived_data(FieldProfile::power_law(1.0, 0.5));
  for (double x : {2.0, 4.0, 8.0}) {
    EXPECT_NEAR(d.tau(x), exact.tau(x), 1e-3 * exact.tau(x));
    EXPECT_NEAR(d.v(x), exact.v(x), 1e-2 * std::fabs(exact.v(x)));
  }
}

TEST(DerivedData, LocalSlopeBound) {
  const auto d = derived_data(FieldProfile::power_law(1.0, 0.5));
  // |b'| = 0.5 r^{-3/2} is largest at r/2
  EXPECT_NEAR(d.b1(2.0), 0.5, 1e-14);
  EXPECT_EQ(derived_data(FieldProfile::power_law(1.0, 0.0)).b1(3.0), 0.0);
}

TEST(FieldTable, ParsesCommentsAndHeader) {
  std::istringstream in("# sample field\nr,b\n1.0,2.0\n2.0, 1.5\n# mid comment\n3.0,1.0\n");
  const auto f = parse_field_table(in, 0.5);
  EXPECT_EQ(f.kind(), FieldKind::tabulated);
  ASSERT_EQ(f.table().r.size(), 3u);
  EXPECT_DOUBLE_EQ(f.b(2.0), 1.5);
  EXPECT_DOUBLE_EQ(f.a(1.0), 0.5);
}

TEST(FieldTable, RejectsMalformedInput) {
  std::istringstream non_increasing("1,1\n1,2\n");
  EXPECT_THROW(parse_field_table(non_increasing), Error);
  std::istringstream negative("1,1\n2,-1\n");
  EXPECT_THROW(parse_field_table(negative), Error);
  std::istringstream garbage("1,1\nfoo,bar\n");
  EXPECT_THROW(parse_field_table(garbage), Error);
  EXPECT_THROW(load_field_table("/nonexistent/field.csv"), Error);
}
