#pragma once

#include <random>
#include <vector>

#include "sdot/sdot.hpp"

namespace sdot::testing {

/// Uniform [0, 1] at midpoints, sites {0, 1}, squared distance.
inline Problem unit_interval(std::size_t resolution, StorageFee fee, double p = 2.0) {
  const std::vector<std::size_t> res{resolution};
  return Problem(build_grid_measure(Box{{0.0}, {1.0}}, res), SiteSet(1, {0.0, 1.0}), CostFunction::power(p),
                 std::move(fee));
}

inline Problem e1(std::size_t resolution = 2000) { return unit_interval(resolution, StorageFee::zero(2)); }
inline Problem e2(std::size_t resolution = 2000) { return unit_interval(resolution, StorageFee::linear({0.0, 0.3})); }
inline Problem e3(std::size_t resolution = 2000) { return unit_interval(resolution, StorageFee::quadratic(2, 1.0)); }

/// Atomic measure from explicit 1D points and masses.
inline Problem atoms_1d(std::vector<double> x, std::vector<double> m, std::vector<double> sites, StorageFee fee,
                        double p = 2.0) {
  return Problem(QuadratureMeasure(PointCloud(1, std::move(x)), std::move(m)),
                 SiteSet(1, std::move(sites)), CostFunction::power(p), std::move(fee));
}

inline std::vector<double> random_simplex_point(std::size_t n, std::mt19937_64& rng, double floor = 0.0) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> w(n);
  double s = 0.0;
  for (auto& x : w) s += (x = e(rng));
  for (auto& x : w) x = floor + (1.0 - floor * static_cast<double>(n)) * x / s;
  return w;
}

/// A random fee of the given kind on n sites.
inline StorageFee random_fee(FeeKind kind, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (kind) {
    case FeeKind::Zero: return StorageFee::zero(n);
    case FeeKind::Linear: {
      std::vector<double> a(n);
      for (auto& x : a) x = 0.4 * u(rng);
      return StorageFee::linear(a);
    }
    case FeeKind::Quadratic: return StorageFee::quadratic(n, 0.05 + u(rng));
    case FeeKind::Separable: {
      std::vector<std::vector<std::pair<double, double>>> tables;
      for (std::size_t j = 0; j < n; ++j) {
        const double h0 = 0.2 * u(rng), b1 = 0.5 * u(rng), b2 = b1 + u(rng), t = 0.2 + 0.6 * u(rng);
        tables.push_back({{0.0, h0}, {t, h0 + b1 * t}, {1.0, h0 + b1 * t + b2 * (1.0 - t)}});
      }
      return StorageFee::separable(tables);
    }
    case FeeKind::Box: {
      std::vector<double> cap(n);
      for (auto& x : cap) x = (1.1 + 0.8 * u(rng)) / static_cast<double>(n);
      return StorageFee::box(cap);
    }
    case FeeKind::Fixed: return StorageFee::fixed(random_simplex_point(n, rng, 0.05));
  }
  return StorageFee::zero(n);
}

}  // namespace sdot::testing
