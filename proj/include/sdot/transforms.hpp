#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "sdot/numeric.hpp"
#include "sdot/problem.hpp"
#include "sdot/storage_fee.hpp"

namespace sdot {

/// One potential per site. Adding a constant to every entry changes nothing
/// observable; `canonical` picks the mean-zero representative.
using DualPotential = std::vector<double>;

inline DualPotential canonical(std::span<const double> psi) {
  DualPotential out(psi.begin(), psi.end());
  const double mean = pairwise_sum(out) / static_cast<double>(out.size());
  for (auto& p : out) p -= mean;
  return out;
}

inline void check_potential(const Problem& prob, std::span<const double> psi) {
  if (psi.size() != prob.num_sites()) throw InputError("potential length does not match site count");
  for (double p : psi)
    if (!std::isfinite(p)) throw InputError("potential entries must be finite");
}

inline double tie_tolerance(double value) { return 1e-12 * (1.0 + std::abs(value)); }

/// Laguerre-cell ownership of every quadrature point (0-based site index).
struct CellAssignment {
  std::vector<std::size_t> owner;
  std::vector<bool> tied;  // top two candidates within tie_tolerance
};

struct CStarValue {
  double value = 0.0;
  std::size_t argmax = 0;  // lowest index attaining the max
};

/// psi^{c*}(x) = max_j (-c(x, y_j) - psi_j) for one cost row.
inline CStarValue cstar_transform(std::span<const double> psi, std::span<const double> cost_row) {
  CStarValue best{-cost_row[0] - psi[0], 0};
  for (std::size_t j = 1; j < psi.size(); ++j) {
    const double v = -cost_row[j] - psi[j];
    if (v > best.value) best = {v, j};
  }
  return best;
}

/// psi^{c*} at every quadrature point.
inline std::vector<double> cstar_values(const Problem& prob, std::span<const double> psi) {
  check_potential(prob, psi);
  std::vector<double> phi(prob.num_points());
  parallel_for(phi.size(), [&](std::size_t i) { phi[i] = cstar_transform(psi, prob.costs().row(i)).value; });
  return phi;
}

/// (phi^c)_j = max_i (-c(x_i, y_j) - phi(x_i)), the sup taken over quadrature points.
inline std::vector<double> c_transform(const Problem& prob, std::span<const double> phi) {
  if (phi.size() != prob.num_points()) throw InputError("c-transform: one value per quadrature point required");
  const auto& c = prob.costs();
  std::vector<double> out(prob.num_sites(), -kInf);
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (!std::isfinite(phi[i])) throw InputError("c-transform: values must be finite");
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::max(out[j], -c(i, j) - phi[i]);
  }
  return out;
}

/// psi^{c*c}: the tightest site potential feasible against psi^{c*}.
inline DualPotential double_transform(const Problem& prob, std::span<const double> psi) {
  return c_transform(prob, cstar_values(prob, psi));
}

inline CellAssignment assign_cells(const Problem& prob, std::span<const double> psi) {
  check_potential(prob, psi);
  const std::size_t m = prob.num_points(), n = prob.num_sites();
  CellAssignment a;
  a.owner.resize(m);
  std::vector<char> tied(m, 0);
  parallel_for(m, [&](std::size_t i) {
    const auto row = prob.costs().row(i);
    const auto best = cstar_transform(psi, row);
    a.owner[i] = best.argmax;
    const double tol = tie_tolerance(best.value);
    for (std::size_t j = 0; j < n; ++j)
      if (j != best.argmax && -row[j] - psi[j] >= best.value - tol) {
        tied[i] = 1;
        break;
      }
  });
  a.tied.assign(tied.begin(), tied.end());
  return a;
}

/// Cell masses of an assignment (whole points, no splitting).
inline WeightVector cell_masses(const Problem& prob, const CellAssignment& a) {
  if (a.owner.size() != prob.num_points()) throw InputError("assignment size does not match measure");
  const std::size_t n = prob.num_sites();
  std::vector<std::vector<double>> parts(n);
  for (std::size_t i = 0; i < a.owner.size(); ++i) {
    if (a.owner[i] >= n) throw InputError("assignment owner out of range");
    parts[a.owner[i]].push_back(prob.measure().mass(i));
  }
  WeightVector w(n);
  for (std::size_t j = 0; j < n; ++j) w[j] = pairwise_sum(parts[j]);
  return w;
}

inline double tied_mass(const Problem& prob, const CellAssignment& a) {
  std::vector<double> t;
  for (std::size_t i = 0; i < a.tied.size(); ++i)
    if (a.tied[i]) t.push_back(prob.measure().mass(i));
  return pairwise_sum(t);
}

/// -sum_i m_i psi^{c*}(x_i), the transport part of the dual objective.
inline double dual_transport_term(const Problem& prob, std::span<const double> psi) {
  const auto phi = cstar_values(prob, psi);
  std::vector<double> terms(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) terms[i] = -prob.measure().mass(i) * phi[i];
  return pairwise_sum(terms);
}

/// D(psi) = -int psi^{c*} dmu - F*(psi).
inline double dual_value(const Problem& prob, std::span<const double> psi) {
  return dual_transport_term(prob, psi) - fee_conjugate(prob.fee(), psi);
}

/// Bitmask of the sites attaining psi^{c*}(x_i) within tie_tolerance.
/// Supports up to 64 sites.
inline std::vector<std::uint64_t> tie_masks(const Problem& prob, std::span<const double> psi) {
  check_potential(prob, psi);
  const std::size_t n = prob.num_sites();
  if (n > 64) throw InputError("tie masks support at most 64 sites");
  std::vector<std::uint64_t> masks(prob.num_points());
  parallel_for(masks.size(), [&](std::size_t i) {
    const auto row = prob.costs().row(i);
    const double best = cstar_transform(psi, row).value;
    const double tol = tie_tolerance(best);
    std::uint64_t mk = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (-row[j] - psi[j] >= best - tol) mk |= std::uint64_t{1} << j;
    masks[i] = mk;
  });
  return masks;
}

}  // namespace sdot
