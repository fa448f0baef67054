#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace qtherm;
using qtest::cplx;

TEST(MakeGrid, EightPointsUnitSpacing) {
  const Grid1D g = make_grid(8, 4.0);
  EXPECT_DOUBLE_EQ(g.spacing(), 1.0);
  const RealField x = g.nodes();
  ASSERT_EQ(x.size(), 8u);
  for (std::size_t m = 0; m < 8; ++m)
    EXPECT_DOUBLE_EQ(x[m], -4.0 + static_cast<double>(m));
}

TEST(MakeGrid, SpacingFormula) {
  EXPECT_DOUBLE_EQ(make_grid(512, 30.0).spacing(), 0.1171875);
}

TEST(MakeGrid, RejectsBadArguments) {
  try {
    (void)make_grid(7, 4.0);
    FAIL() << "odd count accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("odd point count"), std::string::npos);
  }
  EXPECT_THROW((void)make_grid(6, 4.0), std::invalid_argument);
  EXPECT_THROW((void)make_grid(8, 0.0), std::invalid_argument);
  EXPECT_THROW((void)make_grid(8, -1.0), std::invalid_argument);
}

TEST(MakeGrid, NodesIncreaseAndAreSymmetric) {
  const Grid1D g = make_grid(64, 7.5);
  for (std::size_t m = 1; m < 64; ++m) EXPECT_GT(g.node(m), g.node(m - 1));
  // one-sided convention: -L is a node, +L is not
  for (std::size_t m = 1; m < 64; ++m)
    EXPECT_NEAR(g.node(m), -g.node(64 - m), 1e-12);
}

TEST(MakeGrid, WavenumbersInFftOrder) {
  const Grid1D g = make_grid(8, M_PI);
  EXPECT_DOUBLE_EQ(g.wavenumber(0), 0.0);
  EXPECT_DOUBLE_EQ(g.wavenumber(1), 1.0);
  EXPECT_DOUBLE_EQ(g.wavenumber(3), 3.0);
  EXPECT_DOUBLE_EQ(g.wavenumber(4), -4.0);
  EXPECT_DOUBLE_EQ(g.wavenumber(7), -1.0);
  EXPECT_DOUBLE_EQ(g.max_wavenumber(), 4.0);
}

TEST(ConfigGrid, TotalPointsIsProductOfAxes) {
  for (std::size_t N : {1u, 2u}) {
    const ConfigGrid g(make_grid(16, 2.0), N);
    EXPECT_EQ(g.total_points(), static_cast<std::size_t>(std::pow(16, N)));
    EXPECT_DOUBLE_EQ(g.cell_volume(), std::pow(0.25, static_cast<double>(N)));
  }
}

TEST(ConfigGrid, RowMajorParticleZeroSlowest) {
  const ConfigGrid g(make_grid(8, 4.0), 2);
  EXPECT_EQ(g.stride(0), 8u);
  EXPECT_EQ(g.stride(1), 1u);
  const std::size_t i = 3 * 8 + 5;
  EXPECT_EQ(g.axis_index(i, 0), 3u);
  EXPECT_EQ(g.axis_index(i, 1), 5u);
  EXPECT_DOUBLE_EQ(g.coordinate(i, 0), -1.0);
  EXPECT_DOUBLE_EQ(g.coordinate(i, 1), 1.0);
}

TEST(NormSq, NormalizedGaussian) {
  const auto g = qtest::axis_grid(128, 10.0, 1);
  const auto psi = qtest::sample_state(g, [](const auto& x) { return qtest::gauss(x[0]); });
  EXPECT_NEAR(norm_sq(psi), 1.0, 1e-10);
}

TEST(NormSq, ZeroAndQuadraticScaling) {
  const auto g = qtest::axis_grid(64, 8.0, 2);
  WaveFunction zero(g);
  EXPECT_EQ(norm_sq(zero), 0.0);
  auto psi = qtest::sample_state(
      g, [](const auto& x) { return qtest::gauss(x[0], 1.0) * qtest::gauss(x[1], -0.5, 1.0); },
      false);
  const double n = norm_sq(psi);
  for (auto& a : psi.amplitudes) a *= 2.0;
  EXPECT_NEAR(norm_sq(psi), 4.0 * n, 1e-14 * n);
}

TEST(Normalize, RejectsZeroState) {
  WaveFunction zero(qtest::axis_grid(8, 1.0, 1));
  EXPECT_THROW(normalize(zero), std::domain_error);
}

TEST(Expectation, Examples) {
  const auto g = qtest::axis_grid(128, 10.0, 1);
  const auto psi = qtest::sample_state(g, [](const auto& x) { return qtest::gauss(x[0]); });
  const RealField one(g.total_points(), 1.0);
  EXPECT_NEAR(expectation(one, psi), 1.0, 1e-10);
  const RealField x = coordinate_field(g, 0);
  EXPECT_NEAR(expectation(x, psi), 0.0, 1e-10);
  RealField x2(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) x2[i] = x[i] * x[i];
  // ground state of the unit-frequency oscillator: <x^2> = 1/(2 omega)
  EXPECT_NEAR(expectation(x2, psi), 0.5, 1e-6);
}

TEST(Expectation, ShapeMismatchThrows) {
  const auto g = qtest::axis_grid(16, 2.0, 1);
  WaveFunction psi(g);
  const RealField f(15, 1.0);
  EXPECT_THROW((void)expectation(f, psi), std::invalid_argument);
}

TEST(Expectation, LinearInField) {
  const auto g = qtest::axis_grid(32, 4.0, 2);
  const auto psi = qtest::sample_state(
      g, [](const auto& x) { return qtest::gauss(x[0], 0.3, 1.0) * qtest::gauss(x[1], -0.7, -2.0); });
  const RealField a = coordinate_field(g, 0), b = coordinate_field(g, 1);
  RealField c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = 2.5 * a[i] - 0.75 * b[i];
  EXPECT_NEAR(expectation(c, psi), 2.5 * expectation(a, psi) - 0.75 * expectation(b, psi),
              1e-13);
}

TEST(Expectation, RefinementConverges) {
  // Riemann sums of a Gaussian integrand converge spectrally in 1/dx
  auto error = [](std::size_t M) {
    const auto g = qtest::axis_grid(M, 8.0, 1);
    auto psi = qtest::sample_state(
        g, [](const auto& x) { return qtest::gauss(x[0], 0.4); }, false);
    return std::abs(norm_sq(psi) - std::sqrt(M_PI));
  };
  EXPECT_GT(error(12), 1e-6);
  EXPECT_LT(error(32), 1e-12);
  EXPECT_LT(error(64), 1e-12);
}

TEST(L2Distance, MatchesDirectSum) {
  const auto g = qtest::axis_grid(16, 2.0, 1);
  WaveFunction a(g), b(g);
  a.amplitudes[3] = cplx{1.0, 0.0};
  b.amplitudes[3] = cplx{0.0, 1.0};
  EXPECT_NEAR(l2_distance(a, b), std::sqrt(2.0 * 0.25), 1e-15);
  EXPECT_THROW((void)l2_distance(a, WaveFunction(qtest::axis_grid(16, 3.0, 1))),
               std::invalid_argument);
}

TEST(CompensatedSum, RecoversLostLowOrderBits) {
  CompensatedSum s;
  s += 1e16;
  for (int k = 0; k < 1000; ++k) s += 1.0;
  s += -1e16;
  EXPECT_EQ(s.value(), 1000.0);
}
