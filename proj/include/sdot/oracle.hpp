#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdot/numeric.hpp"
#include "sdot/problem.hpp"
#include "sdot/solver.hpp"
#include "sdot/storage_fee.hpp"

namespace sdot {

enum class OracleMode { Enumerate, LambdaScan1d };

inline std::string to_string(OracleMode m) { return m == OracleMode::Enumerate ? "enumerate" : "lambda-scan-1d"; }

struct OracleConfig {
  int splits = 1;        // sub-atoms per source atom
  double delta = 1e-3;   // simplex mesh of the lambda scan
  OracleMode mode = OracleMode::Enumerate;

  void validate() const {
    if (splits < 1) throw InputError("oracle: splits must be >= 1");
    if (!(delta > 0.0) || delta > 1.0) throw InputError("oracle: delta must lie in (0, 1]");
  }
};

/// Any lower-semicontinuous fee; +inf marks points outside its domain.
using FeeFunction = std::function<double(std::span<const double>)>;

struct OracleResult {
  double value = 0.0;
  WeightVector lambda;
  std::vector<std::size_t> map;  // site per sub-atom, atom-major; empty for the scan
  double work = 0.0;             // DP transitions or grid points visited
};

inline constexpr double kEnumerationBudget = 1e7;
inline constexpr double kScanBudget = 1e7;

inline double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

/// Number of points in the simplex grid of mesh 1/k in dimension n.
inline double simplex_grid_size(std::size_t n, std::size_t k) { return binomial(k + n - 1, n - 1); }

/// Calls fn(counts) for every composition of k into n parts, in
/// lexicographic order of the count vector.
template <class Fn>
void for_each_composition(std::size_t n, std::size_t k, Fn&& fn) {
  std::vector<std::size_t> c(n, 0);
  if (n == 0) return;
  c[n - 1] = k;
  for (;;) {
    fn(std::span<const std::size_t>(c));
    // Successor: move one unit from the last nonzero part p > 0 to p - 1
    // and park the rest of that part at the end.
    std::size_t p = n - 1;
    while (p > 0 && c[p] == 0) --p;
    if (p == 0) return;
    const std::size_t rest = c[p] - 1;
    c[p] = 0;
    ++c[p - 1];
    c[n - 1] = rest;
  }
}

inline std::size_t grid_divisions(double delta) {
  const double k = 1.0 / delta;
  const double r = std::round(k);
  if (std::abs(k - r) > 1e-9 * std::max(1.0, r)) throw InputError("oracle: 1/delta must be an integer");
  return static_cast<std::size_t>(r);
}

/// Simplex grid with mesh delta, as weight vectors in lexicographic order.
inline std::vector<WeightVector> simplex_grid(std::size_t n, double delta) {
  const std::size_t k = grid_divisions(delta);
  if (simplex_grid_size(n, k) > kScanBudget) throw InputError("oracle: simplex grid too large");
  std::vector<WeightVector> out;
  for_each_composition(n, k, [&](std::span<const std::size_t> c) {
    WeightVector w(n);
    for (std::size_t j = 0; j < n; ++j) w[j] = static_cast<double>(c[j]) / static_cast<double>(k);
    out.push_back(std::move(w));
  });
  return out;
}

namespace detail {

/// Integer bookkeeping for the enumeration DP. When every atom mass is a
/// multiple of 1/K for a small K, states are per-site mass units; otherwise
/// atoms with equal masses share a class and states count sub-atoms per
/// (class, site).
struct MassLattice {
  std::size_t classes = 1;
  std::vector<std::size_t> atom_class;
  std::vector<std::int64_t> atom_weight;
  std::vector<double> class_scale;  // lambda contribution of one state unit

  static MassLattice build(std::span<const double> masses, int splits) {
    MassLattice l;
    const std::size_t m = masses.size();
    constexpr std::int64_t kMaxDenominator = 4096;
    for (std::int64_t k = 1; k <= kMaxDenominator; ++k) {
      bool ok = true;
      for (double mi : masses) {
        const double u = mi * static_cast<double>(k);
        if (std::abs(u - std::round(u)) > 1e-9) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      l.classes = 1;
      l.atom_class.assign(m, 0);
      for (double mi : masses) l.atom_weight.push_back(std::llround(mi * static_cast<double>(k)));
      l.class_scale = {1.0 / (static_cast<double>(k) * splits)};
      return l;
    }
    std::vector<double> distinct;
    for (double mi : masses)
      if (std::find(distinct.begin(), distinct.end(), mi) == distinct.end()) distinct.push_back(mi);
    l.classes = distinct.size();
    for (double mi : masses) {
      l.atom_class.push_back(
          static_cast<std::size_t>(std::find(distinct.begin(), distinct.end(), mi) - distinct.begin()));
      l.atom_weight.push_back(1);
    }
    for (double d : distinct) l.class_scale.push_back(d / splits);
    return l;
  }

  /// Upper bound on the number of DP states.
  double state_bound(std::size_t n, int splits) const {
    std::vector<std::int64_t> units(classes, 0);
    for (std::size_t i = 0; i < atom_class.size(); ++i) units[atom_class[i]] += atom_weight[i] * splits;
    double b = 1.0;
    for (auto u : units) b *= binomial(static_cast<std::size_t>(u) + n - 1, n - 1);
    return b;
  }
};

struct StateHash {
  std::size_t operator()(const std::vector<std::int64_t>& v) const {
    std::size_t h = 1469598103934665603ull;
    for (auto x : v) h = (h ^ static_cast<std::size_t>(x)) * 1099511628211ull;
    return h;
  }
};

}  // namespace detail

/// Work estimate of oracle_enumerate (DP transitions).
inline double enumeration_budget(const Problem& prob, const OracleConfig& cfg) {
  cfg.validate();
  const std::size_t n = prob.num_sites();
  const auto lat = detail::MassLattice::build(prob.measure().masses(), cfg.splits);
  return static_cast<double>(prob.num_points()) * lat.state_bound(n, cfg.splits) *
         binomial(static_cast<std::size_t>(cfg.splits) + n - 1, n - 1);
}

/// Exact minimum of sum mass * cost + fee(lambda) over all maps sending
/// each of the splits sub-atoms of every source atom to one site. Sub-atoms
/// of an atom are interchangeable, so the search runs over per-atom count
/// vectors; ties go to the lexicographically smallest map.
inline OracleResult oracle_enumerate(const Problem& prob, const OracleConfig& cfg, const FeeFunction& fee) {
  cfg.validate();
  const std::size_t m = prob.num_points(), n = prob.num_sites();
  const auto s = static_cast<std::size_t>(cfg.splits);
  const double budget = enumeration_budget(prob, cfg);
  if (budget > kEnumerationBudget) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "oracle: enumeration budget exceeded (requires %.3g transitions, limit %.3g)",
                  budget, kEnumerationBudget);
    throw InputError(buf);
  }
  const auto lat = detail::MassLattice::build(prob.measure().masses(), cfg.splits);
  const std::size_t width = lat.classes * n;

  // Per-atom choices: nondecreasing site sequences of length s, in
  // lexicographic order, stored as counts.
  std::vector<std::vector<std::size_t>> choices;
  {
    std::vector<std::size_t> seq(s, 0);
    for (;;) {
      std::vector<std::size_t> cnt(n, 0);
      for (auto j : seq) ++cnt[j];
      choices.push_back(cnt);
      std::size_t p = s;
      while (p > 0 && seq[p - 1] == n - 1) --p;
      if (p == 0) break;
      const std::size_t v = seq[p - 1] + 1;
      for (std::size_t q = p - 1; q < s; ++q) seq[q] = v;
    }
  }

  using State = std::vector<std::int64_t>;
  std::vector<std::vector<State>> layer(m + 1);
  std::vector<std::unordered_map<State, std::size_t, detail::StateHash>> index(m + 1);
  std::vector<std::vector<double>> best(m + 1);
  layer[0].push_back(State(width, 0));
  index[0].emplace(layer[0][0], 0);
  best[0].push_back(0.0);
  double work = 0.0;

  auto step_cost = [&](std::size_t i, const std::vector<std::size_t>& cnt) {
    const double sub = prob.measure().mass(i) / static_cast<double>(s);
    double c = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (cnt[j]) c += sub * static_cast<double>(cnt[j]) * prob.costs()(i, j);
    return c;
  };
  auto advance = [&](std::size_t i, const State& st, const std::vector<std::size_t>& cnt) {
    State nx = st;
    const std::size_t base = lat.atom_class[i] * n;
    for (std::size_t j = 0; j < n; ++j) nx[base + j] += static_cast<std::int64_t>(cnt[j]) * lat.atom_weight[i];
    return nx;
  };

  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t a = 0; a < layer[i].size(); ++a) {
      for (const auto& cnt : choices) {
        ++work;
        State nx = advance(i, layer[i][a], cnt);
        const double v = best[i][a] + step_cost(i, cnt);
        auto [it, inserted] = index[i + 1].try_emplace(nx, layer[i + 1].size());
        if (inserted) {
          layer[i + 1].push_back(std::move(nx));
          best[i + 1].push_back(v);
        } else {
          best[i + 1][it->second] = std::min(best[i + 1][it->second], v);
        }
      }
    }
  }

  auto lambda_of = [&](const State& st) {
    WeightVector w(n, 0.0);
    for (std::size_t c = 0; c < lat.classes; ++c)
      for (std::size_t j = 0; j < n; ++j) w[j] += lat.class_scale[c] * static_cast<double>(st[c * n + j]);
    return w;
  };

  // Cost-to-go including the fee, for the lexicographic reconstruction.
  std::vector<std::vector<double>> togo(m + 1);
  togo[m].resize(layer[m].size());
  double opt = kInf;
  for (std::size_t a = 0; a < layer[m].size(); ++a) {
    const double f = fee(lambda_of(layer[m][a]));
    togo[m][a] = std::isnan(f) ? kInf : f;
    opt = std::min(opt, best[m][a] + togo[m][a]);
  }
  if (!std::isfinite(opt)) throw InputError("oracle: no assignment has a finite fee");
  for (std::size_t i = m; i-- > 0;) {
    togo[i].assign(layer[i].size(), kInf);
    for (std::size_t a = 0; a < layer[i].size(); ++a)
      for (const auto& cnt : choices) {
        const auto b = index[i + 1].at(advance(i, layer[i][a], cnt));
        togo[i][a] = std::min(togo[i][a], step_cost(i, cnt) + togo[i + 1][b]);
      }
  }

  OracleResult r;
  r.value = opt;
  r.work = work;
  const double slack = 1e-12 * (1.0 + std::abs(opt));
  std::size_t a = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (const auto& cnt : choices) {
      const auto b = index[i + 1].at(advance(i, layer[i][a], cnt));
      const double c = step_cost(i, cnt);
      if (acc + c + togo[i + 1][b] <= opt + slack) {
        for (std::size_t j = 0; j < n; ++j) r.map.insert(r.map.end(), cnt[j], j);
        acc += c;
        a = b;
        break;
      }
    }
  }
  r.lambda = lambda_of(layer[m][a]);
  return r;
}

inline OracleResult oracle_enumerate(const Problem& prob, const OracleConfig& cfg) {
  const StorageFee& f = prob.fee();
  return oracle_enumerate(prob, cfg, [&f](std::span<const double> w) { return fee_eval(f, w); });
}

/// Optimal 1D transport cost to the weights w by monotone rearrangement,
/// for a cost that is a convex nondecreasing function of |x - y|.
class MonotoneTransport {
 public:
  explicit MonotoneTransport(const Problem& prob) : n_(prob.num_sites()) {
    if (prob.measure().dim() != 1) throw InputError("oracle: lambda scan requires dimension 1");
    if (prob.cost().kind() != CostKind::Power) throw InputError("oracle: lambda scan requires a power cost");
    for (std::size_t j = 1; j < n_; ++j)
      if (!(prob.sites()[j][0] > prob.sites()[j - 1][0])) throw InputError("oracle: sites must be sorted");
    const std::size_t m = prob.num_points();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return prob.measure().point(a)[0] < prob.measure().point(b)[0];
    });
    q_.assign(m + 1, 0.0);
    for (std::size_t k = 0; k < m; ++k) q_[k + 1] = q_[k] + prob.measure().mass(order[k]);
    q_[m] = 1.0;
    g_.assign(n_, std::vector<double>(m + 1, 0.0));
    for (std::size_t j = 0; j < n_; ++j)
      for (std::size_t k = 0; k < m; ++k)
        g_[j][k + 1] = g_[j][k] + prob.measure().mass(order[k]) * prob.costs()(order[k], j);
  }

  /// Cost of sending the quantile band [a, b] to site j.
  double band(std::size_t j, double a, double b) const { return integral(j, b) - integral(j, a); }

  double cost(std::span<const double> w) const {
    double acc = 0.0, lo = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      const double hi = j + 1 == n_ ? 1.0 : std::min(1.0, lo + w[j]);
      if (hi > lo) acc += band(j, lo, hi);
      lo = hi;
    }
    return acc;
  }

 private:
  // Cumulative cost to site j over quantiles [0, t]; atoms split linearly.
  double integral(std::size_t j, double t) const {
    const auto it = std::upper_bound(q_.begin(), q_.end(), t);
    if (it == q_.begin()) return 0.0;
    const auto k = static_cast<std::size_t>(it - q_.begin()) - 1;
    if (k + 1 >= q_.size()) return g_[j].back();
    const double span = q_[k + 1] - q_[k];
    const double frac = span > 0.0 ? (t - q_[k]) / span : 0.0;
    return g_[j][k] + frac * (g_[j][k + 1] - g_[j][k]);
  }

  std::size_t n_;
  std::vector<double> q_;
  std::vector<std::vector<double>> g_;
};

/// Scans the simplex grid of mesh delta for min C(w) + fee(w), with C the
/// exact monotone-rearrangement cost. Ties go to the first grid point in
/// lexicographic order.
inline OracleResult oracle_lambda_scan_1d(const Problem& prob, const OracleConfig& cfg) {
  cfg.validate();
  const std::size_t n = prob.num_sites();
  const MonotoneTransport mt(prob);
  const std::size_t k = grid_divisions(cfg.delta);
  if (simplex_grid_size(n, k) > kScanBudget) throw InputError("oracle: simplex grid too large");
  OracleResult r;
  r.value = kInf;
  WeightVector w(n);
  for_each_composition(n, k, [&](std::span<const std::size_t> c) {
    for (std::size_t j = 0; j < n; ++j) w[j] = static_cast<double>(c[j]) / static_cast<double>(k);
    ++r.work;
    const double f = fee_eval(prob.fee(), w);
    if (!std::isfinite(f)) return;
    const double v = mt.cost(w) + f;
    if (v < r.value) {
      r.value = v;
      r.lambda = w;
    }
  });
  if (!std::isfinite(r.value)) throw InputError("oracle: no grid point lies in the fee domain");
  return r;
}

inline OracleResult run_oracle(const Problem& prob, const OracleConfig& cfg) {
  return cfg.mode == OracleMode::Enumerate ? oracle_enumerate(prob, cfg) : oracle_lambda_scan_1d(prob, cfg);
}

inline double cost_range(const Problem& prob) {
  double lo = kInf, hi = -kInf;
  for (std::size_t i = 0; i < prob.num_points(); ++i)
    for (std::size_t j = 0; j < prob.num_sites(); ++j) {
      lo = std::min(lo, prob.costs()(i, j));
      hi = std::max(hi, prob.costs()(i, j));
    }
  return hi - lo;
}

/// Agreement band between the solver and the lambda scan: the nearest grid
/// point is within n*delta in l1, moving at most half of that mass.
inline double scan_slack(const Problem& prob, double delta, double tol_gap) {
  const double l1 = static_cast<double>(prob.num_sites()) * delta;
  return tol_gap + l1 * (0.5 * cost_range(prob) + prob.fee().max_abs_slope());
}

/// Agreement band between the solver and oracle_enumerate: rounding every
/// atom that `plan` splits to multiples of mass/splits.
inline double enumeration_slack(const Problem& prob, const TransportPlan& plan, int splits, double tol_gap) {
  std::vector<std::size_t> parts(prob.num_points(), 0);
  for (const auto& e : plan.entries)
    if (e.mass > 0.0) ++parts[e.point];
  double l1 = 0.0;
  for (std::size_t i = 0; i < parts.size(); ++i)
    if (parts[i] > 1)
      l1 += static_cast<double>(prob.num_sites()) * prob.measure().mass(i) / static_cast<double>(splits);
  return tol_gap + l1 * (0.5 * cost_range(prob) + prob.fee().max_abs_slope());
}

// ---------------------------------------------------------------------------
// Stability under fee perturbations.

/// Estimate of sup |f1 - f2| over the union of both domains on a simplex
/// grid. `slack` is the largest change of f1 - f2 between adjacent grid
/// points, a bound on what the grid can miss.
struct SupDiff {
  double value = 0.0;
  double slack = 0.0;
  double mesh = 0.0;
};

inline constexpr std::size_t kSupGridDivisions = 200;
inline constexpr double kSupGridPoints = 1e6;

inline SupDiff fee_sup_diff(const StorageFee& f1, const StorageFee& f2) {
  if (f1.size() != f2.size()) throw InputError("stability: fees have different lengths");
  const std::size_t n = f1.size();
  std::size_t k = kSupGridDivisions;
  while (k > 1 && simplex_grid_size(n, k) > kSupGridPoints) --k;
  SupDiff out;
  out.mesh = 1.0 / static_cast<double>(k);
  WeightVector w(n), v(n);
  auto diff = [&](std::span<const double> x) {
    const double a = fee_eval(f1, x), b = fee_eval(f2, x);
    if (!std::isfinite(a) && !std::isfinite(b)) return std::nan("");
    if (!std::isfinite(a) || !std::isfinite(b)) return kInf;
    return a - b;
  };
  for_each_composition(n, k, [&](std::span<const std::size_t> c) {
    for (std::size_t j = 0; j < n; ++j) w[j] = static_cast<double>(c[j]) / static_cast<double>(k);
    const double d = diff(w);
    if (std::isnan(d)) return;
    out.value = std::max(out.value, std::abs(d));
    if (!std::isfinite(d)) return;
    for (std::size_t a = 0; a < n; ++a) {
      if (c[a] == 0) continue;
      for (std::size_t b = a + 1; b < n; ++b) {
        v = w;
        v[a] -= out.mesh;
        v[b] += out.mesh;
        const double e = diff(v);
        if (std::isfinite(e)) out.slack = std::max(out.slack, std::abs(e - d));
      }
    }
  });
  return out;
}

struct StabilityReport {
  double m1 = 0.0, m2 = 0.0;
  double sup_diff = 0.0;
  double slack = 0.0;
  double mesh = 0.0;
  bool holds = false;
  bool inconclusive = false;
};

/// Checks |m(F1) - m(F2)| <= sup |F1 - F2| + 2 tol_gap + grid slack.
inline StabilityReport stability_bound_check(const Problem& prob, const StorageFee& f1, const StorageFee& f2,
                                             const SolverConfig& cfg = {}) {
  const auto r1 = solve_storage(prob.with_fee(f1), cfg);
  const auto r2 = solve_storage(prob.with_fee(f2), cfg);
  const auto sd = fee_sup_diff(f1, f2);
  StabilityReport s;
  s.m1 = r1.primal_value;
  s.m2 = r2.primal_value;
  s.sup_diff = sd.value;
  s.slack = sd.slack;
  s.mesh = sd.mesh;
  s.inconclusive = !r1.converged || !r2.converged;
  s.holds = std::abs(s.m1 - s.m2) <= s.sup_diff + 2.0 * cfg.tol_gap + s.slack;
  return s;
}

struct ConvergenceStep {
  int k = 0;
  double sup_diff = 0.0;
  double slack = 0.0;            // grid slack of sup_diff
  double value_diff = 0.0;
  bool bound_holds = false;      // value_diff <= sup_diff + 2 tol_gap + slack
  double lambda_distance = 0.0;  // max norm
  double overlap_mass = 0.0;     // mass whose cell owner matches the limit
  bool converged = false;
};

struct ConvergenceReport {
  WeightVector limit_lambda;
  double limit_value = 0.0;
  std::vector<ConvergenceStep> steps;
  bool passes = false;
  bool inconclusive = false;
};

/// Solves the problem for each fee of the sequence and for the limit fee
/// and tracks the distance of the weight vectors. Passes when the distance
/// is nonincreasing up to 10 tol_certificate.
inline ConvergenceReport stability_convergence_check(const Problem& prob, const std::vector<StorageFee>& sequence,
                                                     const StorageFee& limit, const SolverConfig& cfg = {}) {
  if (sequence.empty()) throw InputError("stability: steps must be ≥ 1");
  ConvergenceReport rep;
  const auto lim = solve_storage(prob.with_fee(limit), cfg);
  rep.limit_lambda = lim.lambda;
  rep.limit_value = lim.primal_value;
  rep.inconclusive = !lim.converged;
  for (std::size_t k = 0; k < sequence.size(); ++k) {
    const auto r = solve_storage(prob.with_fee(sequence[k]), cfg);
    ConvergenceStep st;
    st.k = static_cast<int>(k) + 1;
    const auto sd = fee_sup_diff(sequence[k], limit);
    st.sup_diff = sd.value;
    st.slack = sd.slack;
    st.value_diff = std::abs(r.primal_value - lim.primal_value);
    st.bound_holds = st.value_diff <= st.sup_diff + 2.0 * cfg.tol_gap + st.slack;
    st.lambda_distance = max_abs_diff(r.lambda, lim.lambda);
    std::vector<double> same;
    for (std::size_t i = 0; i < prob.num_points(); ++i)
      if (r.assignment.owner[i] == lim.assignment.owner[i]) same.push_back(prob.measure().mass(i));
    st.overlap_mass = pairwise_sum(same);
    st.converged = r.converged;
    if (!r.converged) rep.inconclusive = true;
    rep.steps.push_back(st);
  }
  rep.passes = true;
  for (std::size_t k = 1; k < rep.steps.size(); ++k)
    if (rep.steps[k].lambda_distance > rep.steps[k - 1].lambda_distance + 10.0 * cfg.tol_certificate)
      rep.passes = false;
  return rep;
}

}  // namespace sdot
