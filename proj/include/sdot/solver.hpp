#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdot/numeric.hpp"
#include "sdot/plan.hpp"
#include "sdot/problem.hpp"
#include "sdot/storage_fee.hpp"
#include "sdot/transforms.hpp"

namespace sdot {

/// Ascent rule for the dual potentials.
///   Cut:         exact line search along the steepest site-subset direction
///   Fixed:       supergradient step eta
///   Diminishing: supergradient step eta / sqrt(k)
///   Polyak:      supergradient step (best primal - dual) / |g|^2
enum class StepRule { Cut, Fixed, Diminishing, Polyak };

inline std::string to_string(StepRule r) {
  switch (r) {
    case StepRule::Cut: return "cut";
    case StepRule::Fixed: return "fixed";
    case StepRule::Diminishing: return "diminishing";
    case StepRule::Polyak: return "polyak";
  }
  return "?";
}

struct IterateInfo {
  int iteration = 0;
  const DualPotential* psi = nullptr;
  double dual_value = 0.0;
  double best_dual = 0.0;
  double primal_value = 0.0;  // candidate built from this iterate
  const CellAssignment* assignment = nullptr;
};

struct SolverConfig {
  int max_iters = 10000;
  double tol_gap = 1e-7;
  StepRule step_rule = StepRule::Cut;
  double eta = 1.0;
  std::optional<DualPotential> initial_psi;
  double tol_certificate = 1e-6;
  /// Called once per iteration when set; primal candidates are then built
  /// at every iterate.
  std::function<void(const IterateInfo&)> observer;

  void validate() const {
    if (!(tol_gap > 0.0)) throw InputError("solver: tol_gap must be > 0");
    if (max_iters < 1) throw InputError("solver: max_iters must be >= 1");
    if (!(eta > 0.0)) throw InputError("solver: eta must be > 0");
    if (!(tol_certificate > 0.0)) throw InputError("solver: tol_certificate must be > 0");
  }
};

/// Residuals of the optimality conditions for a (potential, weights) pair:
///   fy_residual         F(w) + F*(psi) - <w, psi>
///   mass_mismatch       distance from w to the (tie-split) Laguerre cell masses
///   conjugacy_residual  max |psi_j - (psi^{c*c})_j| over sites with w_j > tol
struct Certificate {
  double fy_residual = 0.0;
  double mass_mismatch = 0.0;
  double conjugacy_residual = 0.0;
  double tied_mass = 0.0;
  std::vector<std::size_t> excluded_sites;
  std::optional<double> gap;
  bool fy_ok = false;
  bool mass_ok = false;
  bool conjugacy_ok = false;
  bool gap_ok = true;

  bool passed() const { return fy_ok && mass_ok && conjugacy_ok && gap_ok; }
};

struct SolveReport {
  DualPotential psi;  // mean-zero
  WeightVector lambda;
  CellAssignment assignment;
  TransportPlan plan;
  double primal_value = 0.0;
  double dual_value = 0.0;
  double gap = 0.0;
  int iterations = 0;
  bool converged = false;
  Certificate certificate;
};

/// Objective of a whole-point assignment: sum_i m_i c(x_i, y_owner(i)) + F(w).
inline double primal_value(const Problem& prob, const CellAssignment& a, std::span<const double> w) {
  if (a.owner.size() != prob.num_points()) throw InputError("assignment size does not match measure");
  const double f = fee_eval(prob.fee(), w);
  if (!std::isfinite(f)) return kInf;
  std::vector<double> t(a.owner.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = prob.measure().mass(i) * prob.costs()(i, a.owner[i]);
  return pairwise_sum(t) + f;
}

inline Certificate certify(const Problem& prob, std::span<const double> psi, std::span<const double> w,
                           double tol_certificate, std::optional<double> gap = {},
                           double tol_gap = 1e-7) {
  check_potential(prob, psi);
  if (w.size() != prob.num_sites()) throw InputError("weights length does not match site count");
  Certificate c;
  c.fy_residual = fenchel_young_residual(prob.fee(), w, psi);
  const auto groups = TieGroups::build(prob, tie_masks(prob, psi));
  c.mass_mismatch = tie_aware_mismatch(groups, w);
  c.tied_mass = groups.tied_mass();
  const auto cc = double_transform(prob, psi);
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (w[j] > tol_certificate) c.conjugacy_residual = std::max(c.conjugacy_residual, std::abs(psi[j] - cc[j]));
    else c.excluded_sites.push_back(j);
  }
  c.fy_ok = c.fy_residual <= tol_certificate;
  c.mass_ok = c.mass_mismatch <= tol_certificate;
  c.conjugacy_ok = c.conjugacy_residual <= tol_certificate;
  c.gap = gap;
  c.gap_ok = !gap || *gap <= tol_gap;
  return c;
}

inline Certificate certify(const Problem& prob, const SolveReport& r, const SolverConfig& cfg = {}) {
  return certify(prob, r.psi, r.lambda, cfg.tol_certificate, r.gap, cfg.tol_gap);
}

namespace detail {

struct PrimalCandidate {
  TransportPlan plan;
  WeightVector lambda;
  double value = kInf;
};

inline PrimalCandidate evaluate_plan(const Problem& prob, TransportPlan plan) {
  PrimalCandidate c;
  c.lambda = plan.site_masses(prob.num_sites());
  const double f = fee_eval(prob.fee(), c.lambda);
  c.value = std::isfinite(f) ? plan.cost(prob) + f : kInf;
  c.plan = std::move(plan);
  return c;
}

/// Best feasible primal pair derivable from psi: tie splitting into the
/// conjugate face, the Laguerre cells themselves, and a repair of the
/// cells toward the conjugate maximizer.
inline PrimalCandidate recover_primal(const Problem& prob, std::span<const double> psi,
                                      const CellAssignment& a) {
  const auto face = conjugate_face(prob.fee(), psi);
  const auto groups = TieGroups::build(prob, tie_masks(prob, psi));
  PrimalCandidate best = evaluate_plan(prob, split_ties(prob, groups, face.lo, face.hi));
  auto consider = [&](PrimalCandidate c) {
    if (c.value < best.value) best = std::move(c);
  };
  consider(evaluate_plan(prob, TransportPlan::from_assignment(prob, a)));
  consider(evaluate_plan(prob, repair_to_marginal(prob, a, face_point(face))));
  return best;
}

// Cut ascent stops once no subset direction has slope above this.
inline constexpr double kCutSlopeTol = 1e-12;

struct CutDirection {
  std::uint64_t subset = 0;
  double slope = 0.0;
};

/// Steepest ascent direction among site-subset indicators e_S. The one-sided
/// derivative of the dual along e_S is (mass that must stay in S) minus the
/// largest mass the conjugate face can put in S.
inline CutDirection steepest_cut(const Problem& prob, std::span<const double> psi) {
  const std::size_t n = prob.num_sites();
  const auto groups = TieGroups::build(prob, tie_masks(prob, psi));
  const SubsetMass sm(groups);
  const auto face = conjugate_face(prob.fee(), psi);
  CutDirection best;
  double best_score = 0.0;
  auto candidates = sm.candidate_subsets();
  if (n > kMaxExhaustiveSites)
    for (auto s : bound_violations(groups, face.lo, face.hi)) candidates.push_back(s);
  for (std::uint64_t s : candidates) {
    const double slope = sm.must(s) - face.max_mass(s);
    if (slope <= kCutSlopeTol) continue;
    const double k = static_cast<double>(std::popcount(s));
    const double score = slope / std::sqrt(k * (static_cast<double>(n) - k) / static_cast<double>(n));
    if (score > best_score) {
      best_score = score;
      best = {s, slope};
    }
  }
  return best;
}

/// Exact maximization of h -> D(psi + h e_S) over h >= 0. The transport
/// part has a nonincreasing step derivative with jumps where points leave
/// S; the fee part contributes the nondecreasing max face mass on S.
inline double cut_line_search(const Problem& prob, std::span<const double> psi, std::uint64_t subset) {
  const std::size_t m = prob.num_points(), n = prob.num_sites();
  struct Break {
    double g, mass;
  };
  std::vector<Break> br;
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = prob.costs().row(i);
    double in = -kInf, out = -kInf;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = -row[j] - psi[j];
      if (subset >> j & 1u) in = std::max(in, v);
      else out = std::max(out, v);
    }
    if (in - out > 0.0) br.push_back({in - out, prob.measure().mass(i)});
  }
  if (br.empty()) return 0.0;
  std::sort(br.begin(), br.end(), [](const Break& a, const Break& b) { return a.g < b.g; });
  std::vector<double> suffix(br.size() + 1, 0.0);
  for (std::size_t k = br.size(); k-- > 0;) suffix[k] = suffix[k + 1] + br[k].mass;

  DualPotential shifted(psi.begin(), psi.end());
  auto face_mass = [&](double h) {
    for (std::size_t j = 0; j < n; ++j) shifted[j] = psi[j] + ((subset >> j & 1u) ? h : 0.0);
    // Exact kinks, so the step lands on a kink rather than at the edge of its tolerance window.
    return conjugate_face(prob.fee(), shifted, 0.0).max_mass(subset);
  };
  // Mass strictly preferring S after raising psi_S by h.
  auto stay = [&](double h) {
    const auto it = std::upper_bound(br.begin(), br.end(), h, [](double v, const Break& b) { return v < b.g; });
    return suffix[static_cast<std::size_t>(it - br.begin())];
  };

  std::size_t lo = 0, hi = br.size() - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (stay(br[mid].g) - face_mass(br[mid].g) <= 0.0) hi = mid;
    else lo = mid + 1;
  }
  double a = lo > 0 ? br[lo - 1].g : 0.0;
  double b = br[lo].g;
  const double w = stay(a);
  if (face_mass(b) < w) return b;
  for (int it = 0; it < 200; ++it) {
    const double mid = a + 0.5 * (b - a);
    if (!(mid > a && mid < b)) break;
    if (face_mass(mid) >= w) b = mid;
    else a = mid;
  }
  return b;
}

inline constexpr int kMaxStalledCuts = 8;

inline DualPotential initial_potential(const Problem& prob, const SolverConfig& cfg) {
  if (!cfg.initial_psi) return DualPotential(prob.num_sites(), 0.0);
  check_potential(prob, *cfg.initial_psi);
  return canonical(*cfg.initial_psi);
}

}  // namespace detail

/// Best primal plan built from a potential: tie splitting into the fee
/// face, the plain cell assignment, or a repair toward the face point.
inline detail::PrimalCandidate primal_from_potential(const Problem& prob, std::span<const double> psi) {
  return detail::recover_primal(prob, psi, assign_cells(prob, psi));
}

/// Maximizes D(psi) = -int psi^{c*} dmu - F*(psi) and rebuilds the primal
/// pair. Stops when the duality gap drops to cfg.tol_gap; otherwise the
/// report is returned with converged = false.
inline SolveReport solve_storage(const Problem& prob, const SolverConfig& cfg = {}) {
  cfg.validate();
  const std::size_t n = prob.num_sites();
  if (n > 64) throw InputError("solver supports at most 64 sites");

  DualPotential psi = detail::initial_potential(prob, cfg);
  DualPotential best_psi = psi;
  double best_dual = -kInf;
  double best_upper = kInf;
  int iters = 0;
  bool done = false;

  auto notify = [&](int k, double d, const CellAssignment& a, double primal) {
    if (!cfg.observer) return;
    IterateInfo info;
    info.iteration = k;
    info.psi = &psi;
    info.dual_value = d;
    info.best_dual = best_dual;
    info.primal_value = primal;
    info.assignment = &a;
    cfg.observer(info);
  };

  int stalled = 0;
  double last_dual = -kInf;
  for (int k = 1; k <= cfg.max_iters && !done; ++k) {
    iters = k;
    const double d = dual_value(prob, psi);
    if (d > best_dual) {
      best_dual = d;
      best_psi = psi;
    }
    const auto assignment = assign_cells(prob, psi);
    const auto candidate = detail::recover_primal(prob, psi, assignment);
    const double primal = candidate.value;
    best_upper = std::min(best_upper, primal);
    notify(k, d, assignment, primal);
    // A small gap alone can come from a repaired plan that is not yet
    // consistent with psi; stop once the pair also certifies.
    if (primal - d <= cfg.tol_gap && certify(prob, psi, candidate.lambda, cfg.tol_certificate).passed()) {
      done = true;
      break;
    }

    if (cfg.step_rule == StepRule::Cut) {
      // Steps below the resolution of psi leave the iterate unchanged.
      stalled = d > last_dual ? 0 : stalled + 1;
      last_dual = std::max(last_dual, d);
      if (stalled >= detail::kMaxStalledCuts) break;
      const auto dir = detail::steepest_cut(prob, psi);
      if (dir.subset == 0) {
        done = true;
        break;
      }
      const double h = detail::cut_line_search(prob, psi, dir.subset);
      for (std::size_t j = 0; j < n; ++j)
        if (dir.subset >> j & 1u) psi[j] += h;
      continue;
    }

    const WeightVector cells = cell_masses(prob, assignment);
    const WeightVector hat = fee_conjugate_argmax(prob.fee(), psi);
    std::vector<double> g(n);
    double g2 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      g[j] = cells[j] - hat[j];
      g2 += g[j] * g[j];
    }
    if (g2 == 0.0) {
      done = true;
      break;
    }
    double step = cfg.eta;
    if (cfg.step_rule == StepRule::Diminishing) step = cfg.eta / std::sqrt(static_cast<double>(k));
    else if (cfg.step_rule == StepRule::Polyak) step = std::max(best_upper - d, 0.0) / g2;
    for (std::size_t j = 0; j < n; ++j) psi[j] += step * g[j];
  }

  // Cut ascent is monotone, so its last iterate is the best; the
  // supergradient rules report the best iterate seen.
  {
    const double d = dual_value(prob, psi);
    if (d > best_dual || (cfg.step_rule == StepRule::Cut && d >= best_dual)) {
      best_dual = d;
      best_psi = psi;
    }
  }

  SolveReport r;
  r.psi = canonical(best_psi);
  r.assignment = assign_cells(prob, r.psi);
  auto primal = detail::recover_primal(prob, r.psi, r.assignment);
  r.plan = std::move(primal.plan);
  r.lambda = std::move(primal.lambda);
  r.primal_value = primal.value;
  r.dual_value = dual_value(prob, r.psi);
  r.gap = r.primal_value - r.dual_value;
  r.iterations = iters;
  r.converged = r.gap <= cfg.tol_gap;
  r.certificate = certify(prob, r, cfg);
  return r;
}

struct FixedMarginalResult {
  DualPotential psi;
  double transport_cost = 0.0;
  CellAssignment assignment;
  TransportPlan plan;
  double marginal_residual = 0.0;  // max_j |plan mass_j - target_j|
  double gap = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Classical semi-discrete transport to the fixed weights `w`.
inline FixedMarginalResult solve_fixed_marginal(const Problem& prob, std::span<const double> w,
                                                const SolverConfig& cfg = {}) {
  if (w.size() != prob.num_sites()) throw InputError("weights length does not match site count");
  const Problem fixed = prob.with_fee(StorageFee::fixed(std::vector<double>(w.begin(), w.end())));
  SolveReport r = solve_storage(fixed, cfg);
  FixedMarginalResult out;
  out.psi = std::move(r.psi);
  out.transport_cost = r.plan.cost(prob);
  out.assignment = std::move(r.assignment);
  out.marginal_residual = max_abs_diff(r.plan.site_masses(prob.num_sites()), w);
  out.plan = std::move(r.plan);
  out.gap = r.gap;
  out.iterations = r.iterations;
  out.converged = r.converged;
  return out;
}

/// Optimal transport cost to the fixed weights `w` (the function C(w)).
inline double transport_cost(const Problem& prob, std::span<const double> w, const SolverConfig& cfg = {}) {
  return solve_fixed_marginal(prob, w, cfg).transport_cost;
}

}  // namespace sdot
