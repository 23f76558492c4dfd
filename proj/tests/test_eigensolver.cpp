#include "magfiber/eigensolver.hpp"

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace magfiber;

namespace {

TridiagonalOperator laplace3() {
  TridiagonalOperator t;
  t.diag = {2.0, 2.0, 2.0};
  t.off = {-1.0, -1.0};
  return t;
}

Eigen::VectorXd dense_eigenvalues(const TridiagonalOperator &t) {
  const auto n = static_cast<Eigen::Index>(t.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a(i, i) = t.diag[i];
    if (i + 1 < n)
      a(i, i + 1) = a(i + 1, i) = t.off[i];
  }
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a, Eigen::EigenvaluesOnly).eigenvalues();
}

TridiagonalOperator harmonic(int m, std::size_t N = 2400) {
  return discretize(FieldProfile::power_law(1.0, 0.0), RadialGrid(12.0, N), m, 0.0);
}

} // namespace

TEST(LowestEigenvalues, Laplace3) {
  const auto ev = lowest_eigenvalues(laplace3(), 3);
  for (int k = 1; k <= 3; ++k)
    EXPECT_NEAR(ev[k - 1], 2.0 - 2.0 * std::cos(k * M_PI / 4.0), 1e-14);
}

TEST(LowestEigenvalues, HarmonicLevels) {
  EXPECT_NEAR(lowest_eigenvalues(harmonic(0), 1)[0], 2.0, 1e-3);
  const auto ev = lowest_eigenvalues(harmonic(2), 2);
  EXPECT_NEAR(ev[0], 6.0, 1e-3);
  EXPECT_NEAR(ev[1], 10.0, 1e-3);
}

TEST(LowestEigenvalues, RejectsTooManyLevels) {
  try {
    lowest_eigenvalues(laplace3(), 4);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::precondition);
  }
}

TEST(LowestEigenvalues, DenseOracleOnRandomInstances) {
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_int_distribution<int> size(2, 512);
  for (int rep = 0; rep < 20; ++rep) {
    TridiagonalOperator t;
    const int n = size(rng);
    for (int i = 0; i < n; ++i)
      t.diag.push_back(u(rng));
    for (int i = 0; i + 1 < n; ++i)
      t.off.push_back(0.5 * u(rng));
    const auto ours = lowest_eigenvalues(t, t.size());
    const auto ref = dense_eigenvalues(t);
    for (int k = 0; k < n; ++k)
      EXPECT_NEAR(ours[k], ref[k], 1e-9 * std::fabs(ref[k])) << "n=" << n << " k=" << k;
  }
}

TEST(Eigenvector, MiddleLaplaceVectorWithSignConvention) {
  const auto g = eigenvector(laplace3(), 2.0);
  // accuracy is residual / gap with the 1e-8 residual target
  EXPECT_NEAR(g[0], 1.0 / std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(g[1], 0.0, 1e-9);
  EXPECT_NEAR(g[2], -1.0 / std::sqrt(2.0), 1e-9);
}

TEST(Eigenvector, HarmonicGroundStateIsGaussian) {
  const auto t = harmonic(0);
  const auto pairs = eigenpairs(t, 1);
  const auto &psi = pairs[0].psi;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    const double r = t.nodes[i];
    const double gauss = std::exp(-r * r / 2.0);
    const double w = r * t.spacing;
    sxy += psi[i] * gauss * w;
    sxx += psi[i] * psi[i] * w;
    syy += gauss * gauss * w;
  }
  EXPECT_GE(sxy / std::sqrt(sxx * syy), 0.999);
}

TEST(Eigenvector, GroundStateHasNoSignChange) {
  for (int m : {0, 1, 3}) {
    const auto g = eigenpairs(
        discretize(FieldProfile::power_law(1.0, 0.5), RadialGrid(20.0, 1000), m, -2.0), 1)[0].g;
    const double top = *std::max_element(g.begin(), g.end());
    // the far tail underflows to rounding noise
    for (double v : g)
      EXPECT_GE(v, -1e-9 * top);
  }
}

TEST(Eigenpairs, EmptyAndNormalizations) {
  EXPECT_TRUE(eigenpairs(harmonic(0), 0).empty());
  const auto t = harmonic(1);
  const auto pairs = eigenpairs(t, 3);
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_NEAR(pairs[0].lambda, 4.0, 1e-3);
  for (const auto &pr : pairs) {
    double sg = 0, sp = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      sg += pr.g[i] * pr.g[i] * t.spacing;
      sp += pr.psi[i] * pr.psi[i] * t.nodes[i] * t.spacing;
    }
    EXPECT_NEAR(sg, 1.0, 1e-12);
    EXPECT_NEAR(sp, 1.0, 1e-12);
    EXPECT_LE(pr.residual, 1e-8 * (std::fabs(pr.lambda) + t.norm_inf()));
    EXPECT_GT(pr.lambda, 0.0);
  }
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b) {
      double dot = 0;
      for (std::size_t i = 0; i < t.size(); ++i)
        dot += pairs[a].g[i] * pairs[b].g[i] * t.spacing;
      EXPECT_LE(std::fabs(dot), 1e-8);
    }
}

TEST(Eigenpairs, GoldenLogField) {
  // independent tridiagonal solve of the same matrix (R = 40, h = 0.01)
  const auto t = discretize(FieldProfile::power_law(1.0, 1.0), RadialGrid(40.0, 4000), 1, 0.0);
  EXPECT_NEAR(eigenpairs(t, 1)[0].lambda, 1.400548703700393, 1e-10);
  // dense oracle on the coarser N = 2000 grid
  const auto tc = discretize(FieldProfile::power_law(1.0, 1.0), RadialGrid(40.0, 2000), 1, 0.0);
  const auto ref = dense_eigenvalues(tc);
  const auto ours = lowest_eigenvalues(tc, 2);
  EXPECT_NEAR(ours[0], ref[0], 1e-9 * ref[0]);
  EXPECT_NEAR(ours[1], ref[1], 1e-9 * ref[1]);
}

TEST(Eigenpairs, BoundaryExponent) {
  for (int m : {0, 1, 2}) {
    const auto t = harmonic(m);
    const auto psi = eigenpairs(t, 1)[0].psi;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int k = 5; // nodes h/2 .. 9h/2, one decade in r
    for (int i = 0; i < k; ++i) {
      const double x = std::log(t.nodes[i]), y = std::log(psi[i]);
      sx += x; sy += y; sxx += x * x; sxy += x * y;
    }
    const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    EXPECT_NEAR(slope, std::abs(m), 0.15) << "m=" << m;
  }
}

TEST(Eigenpairs, SturmCountAtZero) {
  for (int m : {0, 1})
    for (double p : {-5.0, 0.0, 5.0})
      EXPECT_EQ(sturm_count(discretize(FieldProfile::power_law(1.0, 0.5), RadialGrid(30.0, 1500), m, p), 0.0), 0u);
}
