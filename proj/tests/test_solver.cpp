#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"

using namespace sdot;
using sdot::testing::atoms_1d;
using sdot::testing::e1;
using sdot::testing::e2;
using sdot::testing::e3;

TEST(Solve, E1) {
  const auto r = solve_storage(e1());
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.gap, 1e-7);
  EXPECT_NEAR(r.lambda[0], 0.5, 2e-3);
  EXPECT_NEAR(r.primal_value, 1.0 / 12, 1e-3);
  EXPECT_TRUE(r.certificate.passed());
}

TEST(Solve, E2) {
  const auto r = solve_storage(e2());
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.lambda[0], 0.65, 2e-3);
  EXPECT_NEAR(r.lambda[1], 0.35, 2e-3);
  const double expected = (std::pow(0.65, 3) + std::pow(0.35, 3)) / 3 + 0.3 * 0.35;
  EXPECT_NEAR(r.primal_value, expected, 1e-3);
  EXPECT_NEAR(r.psi[1] - r.psi[0], 0.3, 1e-4);
  EXPECT_NEAR(r.psi[0] + r.psi[1], 0.0, 1e-15);
  EXPECT_TRUE(r.certificate.passed());
}

TEST(Solve, E3) {
  const auto r = solve_storage(e3());
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.lambda[0], 0.5, 2e-3);
  EXPECT_NEAR(r.primal_value, 1.0 / 12 + 0.25, 1e-3);
}

TEST(Solve, SingleSite) {
  const auto prob = atoms_1d({0.1, 0.6}, {0.5, 0.5}, {0.0}, StorageFee::zero(1));
  const auto r = solve_storage(prob);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.lambda, (WeightVector{1.0}));
  EXPECT_NEAR(r.primal_value, 0.5 * (0.01 + 0.36), 1e-15);
  EXPECT_TRUE(r.certificate.passed());
}

TEST(Solve, IterationCapIsReportedNotThrown) {
  SolverConfig cfg;
  cfg.max_iters = 1;
  cfg.step_rule = StepRule::Diminishing;
  const auto r = solve_storage(e2(200), cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_GT(r.gap, cfg.tol_gap);
  EXPECT_EQ(r.iterations, 1);
}

TEST(Solve, RejectsBadConfig) {
  SolverConfig cfg;
  cfg.tol_gap = 0.0;
  EXPECT_THROW(solve_storage(e1(10), cfg), InputError);
  cfg = {};
  cfg.initial_psi = DualPotential{0.0};
  EXPECT_THROW(solve_storage(e1(10), cfg), InputError);
}

TEST(Solve, WeakDualityAndMonotoneBestDual) {
  for (StepRule rule : {StepRule::Cut, StepRule::Diminishing, StepRule::Polyak, StepRule::Fixed}) {
    SolverConfig cfg;
    cfg.step_rule = rule;
    cfg.max_iters = 300;
    cfg.eta = 0.1;
    double last_best = -kInf;
    int seen = 0;
    cfg.observer = [&](const IterateInfo& it) {
      ++seen;
      EXPECT_GE(it.primal_value - it.dual_value, -1e-10) << to_string(rule);
      EXPECT_GE(it.best_dual, last_best) << to_string(rule);
      last_best = it.best_dual;
    };
    const Problem prob = sdot::testing::unit_interval(400, StorageFee::separable({{{0.0, 0.0}, {0.5, 0.1}, {1.0, 0.5}},
                                                                                   {{0.0, 0.2}, {1.0, 0.4}}}));
    const auto r = solve_storage(prob, cfg);
    EXPECT_GT(seen, 0);
    EXPECT_GE(r.gap, -1e-10);
  }
}

TEST(Solve, GaugeInvariantIterates) {
  std::vector<std::vector<std::size_t>> a, b;
  SolverConfig cfg;
  cfg.max_iters = 40;
  cfg.step_rule = StepRule::Diminishing;
  cfg.eta = 0.05;
  cfg.initial_psi = DualPotential{0.1, -0.2};
  cfg.observer = [&](const IterateInfo& it) { a.push_back(it.assignment->owner); };
  solve_storage(e2(300), cfg);
  cfg.initial_psi = DualPotential{2.1, 1.8};
  cfg.observer = [&](const IterateInfo& it) { b.push_back(it.assignment->owner); };
  solve_storage(e2(300), cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k], b[k]) << "iteration " << k + 1;
}

TEST(Solve, UniqueUnderTwist) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto prob = e2(1000);
  const auto ref = solve_storage(prob);
  for (int rep = 0; rep < 5; ++rep) {
    SolverConfig cfg;
    cfg.initial_psi = DualPotential{g(rng), g(rng)};
    const auto r = solve_storage(prob, cfg);
    ASSERT_TRUE(r.converged);
    EXPECT_LE(max_abs_diff(r.lambda, ref.lambda), 10 * cfg.tol_certificate);
  }
}

TEST(Solve, BoxCapacityBinds) {
  const auto prob = sdot::testing::unit_interval(1000, StorageFee::box({0.4, 1.0}));
  const auto r = solve_storage(prob);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.lambda[0], 0.4, 1e-9);
  EXPECT_NEAR(r.primal_value, (std::pow(0.4, 3) + std::pow(0.6, 3)) / 3, 1e-5);
  EXPECT_TRUE(r.certificate.passed());
}

TEST(Solve, TwoDimensionalBox) {
  const std::vector<std::size_t> res{60, 60};
  const Problem prob(build_grid_measure(Box{{0.0, 0.0}, {1.0, 1.0}}, res,
                                        [](std::span<const double> x) { return x[0]; }),
                     SiteSet(2, {0.2, 0.2, 0.8, 0.3, 0.5, 0.8}), CostFunction::power(2.0),
                     StorageFee::box({0.3, 0.5, 0.6}));
  const auto r = solve_storage(prob);
  EXPECT_TRUE(r.converged);
  EXPECT_TRUE(r.certificate.passed());
  for (std::size_t j = 0; j < 3; ++j) EXPECT_LE(r.lambda[j], prob.fee().coefficients()[j] + 1e-12);
}

TEST(Certify, HandBuiltPotentialFailsFenchelYoung) {
  const auto prob = e2();
  const auto c = certify(prob, std::vector<double>{0.0, 0.0}, std::vector<double>{0.5, 0.5}, 1e-6);
  EXPECT_NEAR(c.fy_residual, 0.15, 1e-12);
  EXPECT_FALSE(c.fy_ok);
  EXPECT_FALSE(c.passed());
  EXPECT_TRUE(c.mass_ok);
}

TEST(Certify, SingleSitePassesTrivially) {
  const auto prob = atoms_1d({0.3}, {1.0}, {0.0}, StorageFee::zero(1));
  EXPECT_TRUE(certify(prob, std::vector<double>{0.0}, std::vector<double>{1.0}, 1e-6).passed());
}

TEST(Certify, ExcludesEmptySites) {
  const auto prob = sdot::testing::unit_interval(100, StorageFee::linear({0.0, 5.0}));
  const auto r = solve_storage(prob);
  EXPECT_TRUE(r.certificate.passed());
  EXPECT_EQ(r.certificate.excluded_sites, (std::vector<std::size_t>{1}));
}

TEST(PrimalValue, Examples) {
  const auto prob = e1();
  const auto a = assign_cells(prob, std::vector<double>{0.0, 0.0});
  EXPECT_NEAR(primal_value(prob, a, cell_masses(prob, a)), 1.0 / 12, 1e-6);
  const auto one = atoms_1d({0.0}, {1.0}, {0.0, 1.0}, StorageFee::zero(2));
  EXPECT_EQ(primal_value(one, assign_cells(one, std::vector<double>{0.0, 0.0}), std::vector<double>{1.0, 0.0}), 0.0);
  const auto boxed = one.with_fee(StorageFee::box({0.5, 0.6}));
  EXPECT_TRUE(std::isinf(
      primal_value(boxed, assign_cells(boxed, std::vector<double>{0.0, 0.0}), std::vector<double>{1.0, 0.0})));
}

TEST(FixedMarginal, Examples) {
  const auto prob = e1();
  auto r = solve_fixed_marginal(prob, std::vector<double>{0.5, 0.5});
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.transport_cost, 1.0 / 12, 1e-3);
  EXPECT_LE(r.marginal_residual, 1e-9);
  EXPECT_NEAR(transport_cost(prob, std::vector<double>{1.0, 0.0}), 1.0 / 3, 1e-3);
  EXPECT_NEAR(transport_cost(prob, std::vector<double>{0.65, 0.35}), (std::pow(0.65, 3) + std::pow(0.35, 3)) / 3,
              1e-3);
}

TEST(FixedMarginal, SplitsAtoms) {
  // Two atoms, marginal (0.75, 0.25): half of the right atom must move.
  const auto prob = atoms_1d({0.25, 0.75}, {0.5, 0.5}, {0.0, 1.0}, StorageFee::zero(2));
  const auto r = solve_fixed_marginal(prob, std::vector<double>{0.75, 0.25});
  EXPECT_LE(r.marginal_residual, 1e-12);
  EXPECT_NEAR(r.transport_cost, 0.5 * 0.0625 + 0.25 * 0.5625 + 0.25 * 0.0625, 1e-12);
}

TEST(FixedMarginal, MidpointConvexity) {
  const auto prob = e1(400);
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    const auto a = sdot::testing::random_simplex_point(2, rng, 0.05);
    const auto b = sdot::testing::random_simplex_point(2, rng, 0.05);
    const std::vector<double> mid{0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])};
    EXPECT_LE(transport_cost(prob, mid), 0.5 * (transport_cost(prob, a) + transport_cost(prob, b)) + 1e-9);
  }
}

TEST(Solve, RandomInstancesCertify) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const FeeKind kinds[] = {FeeKind::Zero, FeeKind::Linear, FeeKind::Quadratic, FeeKind::Separable, FeeKind::Box};
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 2 + rep % 3;
    std::vector<double> sites(2 * n);
    for (auto& s : sites) s = u(rng);
    const std::vector<std::size_t> res{40, 40};
    const Problem prob(build_grid_measure(Box{{0.0, 0.0}, {1.0, 1.0}}, res), SiteSet(2, sites),
                       CostFunction::power(rep % 2 ? 1.0 : 2.0), sdot::testing::random_fee(kinds[rep % 5], n, rng));
    const auto r = solve_storage(prob);
    EXPECT_TRUE(r.converged) << rep << " gap " << r.gap;
    EXPECT_TRUE(r.certificate.passed()) << rep << " " << to_string(prob.fee().kind()) << " fy "
                                        << r.certificate.fy_residual << " mass " << r.certificate.mass_mismatch
                                        << " conj " << r.certificate.conjugacy_residual;
  }
}
