#include <gtest/gtest.h>

#include <cmath>

#include "sdot/problem.hpp"

using namespace sdot;

TEST(GridMeasure, MidpointRule) {
  const Box b{{0.0}, {1.0}};
  const std::vector<std::size_t> res{2};
  const auto mu = build_grid_measure(b, res, [](std::span<const double> x) { return x[0]; });
  ASSERT_EQ(mu.size(), 2u);
  EXPECT_DOUBLE_EQ(mu.point(0)[0], 0.25);
  EXPECT_DOUBLE_EQ(mu.point(1)[0], 0.75);
  EXPECT_NEAR(mu.mass(0), 0.25, 1e-15);
  EXPECT_NEAR(mu.mass(1), 0.75, 1e-15);
}

TEST(GridMeasure, UniformTwoDimensional) {
  const Box b{{0.0, -1.0}, {2.0, 1.0}};
  const std::vector<std::size_t> res{4, 5};
  const auto mu = build_grid_measure(b, res);
  ASSERT_EQ(mu.size(), 20u);
  EXPECT_EQ(mu.dim(), 2u);
  for (std::size_t i = 0; i < mu.size(); ++i) EXPECT_NEAR(mu.mass(i), 0.05, 1e-15);
}

TEST(GridMeasure, DropsZeroDensityCells) {
  const Box b{{0.0}, {1.0}};
  const std::vector<std::size_t> res{4};
  const auto mu = build_grid_measure(b, res, [](std::span<const double> x) { return x[0] < 0.5 ? 0.0 : 1.0; });
  EXPECT_EQ(mu.size(), 2u);
}

TEST(GridMeasure, RejectsBadInput) {
  const Box b{{0.0}, {1.0}};
  const std::vector<std::size_t> res{4}, zero{0};
  EXPECT_THROW(build_grid_measure(b, zero), InputError);
  EXPECT_THROW(build_grid_measure(Box{{1.0}, {1.0}}, res), InputError);
  try {
    build_grid_measure(b, res, [](std::span<const double>) { return 0.0; });
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate density"), std::string::npos);
  }
  EXPECT_THROW(build_grid_measure(b, res, [](std::span<const double>) { return -1.0; }), InputError);
}

TEST(Measure, Validation) {
  EXPECT_THROW(QuadratureMeasure(PointCloud(1, {0.0, 1.0}), {0.5, 0.4}), InputError);
  EXPECT_THROW(QuadratureMeasure(PointCloud(1, {0.0, 1.0}), {1.0, 0.0}), InputError);
  EXPECT_THROW(QuadratureMeasure(PointCloud(1, {0.0}), {0.5, 0.5}), InputError);
  EXPECT_THROW(QuadratureMeasure(PointCloud(1, {2.0}), {1.0}, Box{{0.0}, {1.0}}), InputError);
  EXPECT_NO_THROW(QuadratureMeasure(PointCloud(1, {0.5}), {1.0}, Box{{0.0}, {1.0}}));
}

TEST(SiteSet, RejectsDuplicates) {
  try {
    SiteSet s(2, {0.0, 0.0, 1.0, 1.0, 0.0, 0.0});
    FAIL();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("sites"), std::string::npos);
    EXPECT_NE(msg.find("duplicate"), std::string::npos);
  }
  EXPECT_THROW(SiteSet(1, {}), InputError);
}

TEST(Cost, PowerAndInnerProduct) {
  const auto c2 = CostFunction::power(2.0);
  const std::vector<double> x{0.0, 0.0}, y{3.0, 4.0};
  EXPECT_DOUBLE_EQ(c2(x, y, 0, 0), 25.0);
  EXPECT_DOUBLE_EQ(CostFunction::power(1.0)(x, y, 0, 0), 5.0);
  EXPECT_DOUBLE_EQ(CostFunction::inner_product(1.0)(std::vector<double>{1, 2}, y, 0, 0), 1.0 - 11.0);
  EXPECT_THROW(CostFunction::power(0.5), InputError);
}

TEST(Cost, Gradient) {
  const auto c = CostFunction::power(2.0);
  const auto g = c.gradient(std::vector<double>{1.0, 1.0}, std::vector<double>{0.0, 3.0});
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], -4.0);
  const auto g1 = CostFunction::power(1.0).gradient(std::vector<double>{1.0}, std::vector<double>{1.0});
  EXPECT_EQ(g1[0], 0.0);
}

TEST(Twist, QuadraticCostIsTwisted) {
  const SiteSet s(1, {0.0, 1.0});
  const PointCloud samples(1, {0.1, 0.5, 0.9});
  EXPECT_TRUE(check_twist(CostFunction::power(2.0), s, samples).holds);
}

TEST(Twist, DistanceCostFailsOutsideHull) {
  // For |x - y| every sample to the right of both sites sees equal gradients.
  const SiteSet s(1, {0.0, 1.0});
  const PointCloud samples(1, {0.5, 1.5});
  const auto rep = check_twist(CostFunction::power(1.0), s, samples);
  EXPECT_FALSE(rep.holds);
  ASSERT_FALSE(rep.witnesses.empty());
}

TEST(Twist, TableCostRejected) {
  const SiteSet s(1, {0.0, 1.0});
  const PointCloud samples(1, {0.5});
  try {
    check_twist(CostFunction::table(1, 2, {0.0, 1.0}), s, samples);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("twist check requires gradients"), std::string::npos);
  }
}

TEST(CostMatrix, EntriesAndErrors) {
  const QuadratureMeasure mu(PointCloud(1, {0.25, 0.75}), {0.5, 0.5});
  const SiteSet s(1, {0.0, 1.0});
  const auto m = cost_matrix(mu, s, CostFunction::power(2.0));
  EXPECT_DOUBLE_EQ(m(0, 0), 0.0625);
  EXPECT_DOUBLE_EQ(m(1, 0), 0.5625);
  EXPECT_THROW(cost_matrix(mu, SiteSet(2, {0.0, 0.0}), CostFunction::power(2.0)), InputError);
  try {
    cost_matrix(mu, s, CostFunction::table(2, 2, {0.0, 1.0, std::nan(""), 0.0}));
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("(2, 1)"), std::string::npos) << e.what();
  }
}

TEST(Problem, SiteDimensionMismatchNamesSites) {
  const QuadratureMeasure mu(PointCloud(1, {0.5}), {1.0});
  try {
    Problem p(mu, SiteSet(2, {0.0, 0.0, 1.0, 1.0, 0.0, 1.0}), CostFunction::power(2.0), StorageFee::zero(3));
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("sites"), std::string::npos);
  }
}
