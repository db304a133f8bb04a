#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <span>
#include <tuple>
#include <vector>

#include "sdot/numeric.hpp"
#include "sdot/problem.hpp"
#include "sdot/storage_fee.hpp"
#include "sdot/transforms.hpp"

namespace sdot {

struct PlanEntry {
  std::size_t point = 0;
  std::size_t site = 0;
  double mass = 0.0;
};

/// A discrete coupling between the quadrature points and the sites. Entries
/// are sorted by point; a point split across sites has several entries.
struct TransportPlan {
  std::vector<PlanEntry> entries;

  double cost(const Problem& prob) const {
    std::vector<double> t(entries.size());
    for (std::size_t k = 0; k < entries.size(); ++k)
      t[k] = entries[k].mass * prob.costs()(entries[k].point, entries[k].site);
    return pairwise_sum(t);
  }

  WeightVector site_masses(std::size_t n) const {
    std::vector<std::vector<double>> parts(n);
    for (const auto& e : entries) parts[e.site].push_back(e.mass);
    WeightVector w(n);
    for (std::size_t j = 0; j < n; ++j) w[j] = pairwise_sum(parts[j]);
    return w;
  }

  static TransportPlan from_assignment(const Problem& prob, const CellAssignment& a) {
    TransportPlan p;
    p.entries.reserve(a.owner.size());
    for (std::size_t i = 0; i < a.owner.size(); ++i) p.entries.push_back({i, a.owner[i], prob.measure().mass(i)});
    return p;
  }
};

/// Quadrature points grouped by the set of sites they are tied between.
struct TieGroups {
  std::size_t num_sites = 0;
  std::vector<std::uint64_t> mask;               // per group
  std::vector<double> mass;                      // per group
  std::vector<std::vector<std::size_t>> points;  // per group, ascending
  double total = 0.0;

  static TieGroups build(const Problem& prob, std::span<const std::uint64_t> masks) {
    TieGroups g;
    g.num_sites = prob.num_sites();
    std::map<std::uint64_t, std::size_t> index;
    for (std::size_t i = 0; i < masks.size(); ++i) {
      auto [it, inserted] = index.try_emplace(masks[i], g.mask.size());
      if (inserted) {
        g.mask.push_back(masks[i]);
        g.points.emplace_back();
      }
      g.points[it->second].push_back(i);
    }
    g.mass.resize(g.mask.size());
    for (std::size_t k = 0; k < g.mask.size(); ++k) {
      std::vector<double> ms;
      ms.reserve(g.points[k].size());
      for (auto i : g.points[k]) ms.push_back(prob.measure().mass(i));
      g.mass[k] = pairwise_sum(ms);
    }
    g.total = pairwise_sum(g.mass);
    return g;
  }

  double tied_mass() const {
    std::vector<double> t;
    for (std::size_t k = 0; k < mask.size(); ++k)
      if (std::popcount(mask[k]) > 1) t.push_back(mass[k]);
    return pairwise_sum(t);
  }
};

// Site subsets are enumerated exhaustively up to this many sites; above it
// only singletons and their complements are used.
inline constexpr std::size_t kMaxExhaustiveSites = 16;

inline std::uint64_t full_mask(std::size_t n) {
  return n >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << n) - 1;
}

/// Mass that must land inside each site subset S: points whose tie set is
/// contained in S.
class SubsetMass {
 public:
  explicit SubsetMass(const TieGroups& g) : g_(&g), n_(g.num_sites) {
    if (n_ <= kMaxExhaustiveSites) {
      table_.assign(std::size_t{1} << n_, 0.0);
      for (std::size_t k = 0; k < g.mask.size(); ++k) table_[g.mask[k]] += g.mass[k];
      for (std::size_t b = 0; b < n_; ++b)
        for (std::size_t s = 0; s < table_.size(); ++s)
          if (s >> b & 1u) table_[s] += table_[s ^ (std::size_t{1} << b)];
    }
  }

  double must(std::uint64_t s) const {
    if (!table_.empty()) return table_[s];
    double acc = 0.0;
    for (std::size_t k = 0; k < g_->mask.size(); ++k)
      if ((g_->mask[k] & ~s) == 0) acc += g_->mass[k];
    return acc;
  }
  /// Mass that can land inside S (tie set meets S).
  double can(std::uint64_t s) const { return g_->total - must(full_mask(n_) & ~s); }

  std::vector<std::uint64_t> candidate_subsets() const {
    std::vector<std::uint64_t> out;
    const std::uint64_t full = full_mask(n_);
    if (n_ <= kMaxExhaustiveSites) {
      for (std::uint64_t s = 1; s < full; ++s) out.push_back(s);
    } else {
      for (std::size_t j = 0; j < n_; ++j) {
        out.push_back(std::uint64_t{1} << j);
        out.push_back(full & ~(std::uint64_t{1} << j));
      }
    }
    return out;
  }

 private:
  const TieGroups* g_;
  std::size_t n_;
  std::vector<double> table_;
};

inline double subset_sum(std::span<const double> w, std::uint64_t s) {
  double acc = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j)
    if (s >> j & 1u) acc += w[j];
  return acc;
}

/// Max-norm distance from `w` to the set of site-mass vectors reachable by
/// splitting tied points among their tied sites (supply-demand theorem on
/// the subset conditions). With no ties this is max_j |w_j - cell mass_j|.
inline double tie_aware_mismatch(const TieGroups& g, std::span<const double> w) {
  const SubsetMass sm(g);
  double t = 0.0;
  for (std::uint64_t s : sm.candidate_subsets()) {
    const double k = static_cast<double>(std::popcount(s));
    const double ws = subset_sum(w, s);
    t = std::max({t, (sm.must(s) - ws) / k, (ws - sm.can(s)) / k});
  }
  if (g.num_sites == 1) t = std::abs(g.total - w[0]);
  return t;
}

namespace detail {

/// Small Edmonds-Karp max-flow on doubles.
class FlowNetwork {
 public:
  explicit FlowNetwork(std::size_t nodes) : adj_(nodes) {}

  std::size_t add_edge(std::size_t u, std::size_t v, double cap) {
    adj_[u].push_back(edges_.size());
    edges_.push_back({v, cap});
    adj_[v].push_back(edges_.size());
    edges_.push_back({u, 0.0});
    return edges_.size() - 2;
  }
  void set_capacity(std::size_t e, double cap) { edges_[e].cap = cap - flow(e); }
  double flow(std::size_t e) const { return edges_[e ^ 1].cap; }

  /// Nodes reachable from s in the residual graph (source side of a min cut).
  std::vector<char> source_side(std::size_t s) const {
    std::vector<char> seen(adj_.size(), 0);
    std::deque<std::size_t> q{s};
    seen[s] = 1;
    while (!q.empty()) {
      const auto u = q.front();
      q.pop_front();
      for (auto e : adj_[u])
        if (!seen[edges_[e].to] && edges_[e].cap > kEps) {
          seen[edges_[e].to] = 1;
          q.push_back(edges_[e].to);
        }
    }
    return seen;
  }

  double max_flow(std::size_t s, std::size_t t) {
    double total = 0.0;
    std::vector<std::size_t> via(adj_.size());
    for (;;) {
      std::vector<char> seen(adj_.size(), 0);
      std::deque<std::size_t> q{s};
      seen[s] = 1;
      while (!q.empty() && !seen[t]) {
        const auto u = q.front();
        q.pop_front();
        for (auto e : adj_[u]) {
          const auto v = edges_[e].to;
          if (!seen[v] && edges_[e].cap > kEps) {
            seen[v] = 1;
            via[v] = e;
            q.push_back(v);
          }
        }
      }
      if (!seen[t]) break;
      double push = std::numeric_limits<double>::infinity();
      for (auto v = t; v != s; v = edges_[via[v] ^ 1].to) push = std::min(push, edges_[via[v]].cap);
      for (auto v = t; v != s; v = edges_[via[v] ^ 1].to) {
        edges_[via[v]].cap -= push;
        edges_[via[v] ^ 1].cap += push;
      }
      total += push;
    }
    return total;
  }

 private:
  struct Edge {
    std::size_t to;
    double cap;
  };
  static constexpr double kEps = 1e-18;
  std::vector<std::vector<std::size_t>> adj_;
  std::vector<Edge> edges_;
};

}  // namespace detail

/// Site subsets S whose bound conditions fail: Must(S) > hi(S), or
/// Can(T) < lo(T) reported as S = complement of T. Read off the min cuts of
/// the two flow phases; empty when every split-compatible bound holds.
inline std::vector<std::uint64_t> bound_violations(const TieGroups& g, std::span<const double> lo,
                                                   std::span<const double> hi) {
  const std::size_t n = g.num_sites, ng = g.mask.size();
  const std::size_t src = 0, sink = 1 + ng + n;
  const std::uint64_t full = full_mask(n);
  detail::FlowNetwork net(sink + 1);
  for (std::size_t k = 0; k < ng; ++k) {
    net.add_edge(src, 1 + k, g.mass[k]);
    for (std::size_t j = 0; j < n; ++j)
      if (g.mask[k] >> j & 1u) net.add_edge(1 + k, 1 + ng + j, kInf);
  }
  std::vector<std::size_t> site_edge(n);
  for (std::size_t j = 0; j < n; ++j) site_edge[j] = net.add_edge(1 + ng + j, sink, lo[j]);
  auto reached_sites = [&] {
    const auto side = net.source_side(src);
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (side[1 + ng + j]) s |= std::uint64_t{1} << j;
    return s;
  };
  std::vector<std::uint64_t> out;
  net.max_flow(src, sink);
  // Unmet lower bounds sit outside the source side.
  const std::uint64_t low = reached_sites();
  if (low != 0 && low != full) out.push_back(low);
  for (std::size_t j = 0; j < n; ++j) net.set_capacity(site_edge[j], hi[j]);
  net.max_flow(src, sink);
  const std::uint64_t high = reached_sites();
  if (high != 0 && high != full) out.push_back(high);
  return out;
}

/// Splits tied points among their tied sites so that the site masses fall in
/// [lo_j, hi_j]. Mass that cannot be routed within the bounds (only possible
/// away from optimality) goes to the lowest tied site.
inline TransportPlan split_ties(const Problem& prob, const TieGroups& g, std::span<const double> lo,
                                std::span<const double> hi) {
  const std::size_t n = prob.num_sites(), ng = g.mask.size();
  const std::size_t src = 0, sink = 1 + ng + n;
  detail::FlowNetwork net(sink + 1);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> arcs(ng);  // (site, edge)
  for (std::size_t k = 0; k < ng; ++k) {
    net.add_edge(src, 1 + k, g.mass[k]);
    for (std::size_t j = 0; j < n; ++j)
      if (g.mask[k] >> j & 1u) arcs[k].emplace_back(j, net.add_edge(1 + k, 1 + ng + j, kInf));
  }
  std::vector<std::size_t> site_edge(n);
  for (std::size_t j = 0; j < n; ++j) site_edge[j] = net.add_edge(1 + ng + j, sink, lo[j]);
  net.max_flow(src, sink);
  for (std::size_t j = 0; j < n; ++j) net.set_capacity(site_edge[j], hi[j]);
  net.max_flow(src, sink);

  TransportPlan plan;
  std::vector<std::vector<std::pair<std::size_t, double>>> share(ng);  // (site, fraction)
  for (std::size_t k = 0; k < ng; ++k) {
    double routed = 0.0;
    for (auto [j, e] : arcs[k]) {
      const double f = net.flow(e);
      if (f > 0.0) {
        share[k].emplace_back(j, f);
        routed += f;
      }
    }
    const double left = g.mass[k] - routed;
    if (left > 0.0) {
      const auto j0 = static_cast<std::size_t>(std::countr_zero(g.mask[k]));
      auto it = std::find_if(share[k].begin(), share[k].end(), [&](auto& p) { return p.first == j0; });
      if (it == share[k].end()) share[k].emplace_back(j0, left);
      else it->second += left;
    }
    std::sort(share[k].begin(), share[k].end());
    double sum = 0.0;
    for (auto& [j, f] : share[k]) sum += f;
    for (auto& [j, f] : share[k]) f /= sum;
  }
  std::vector<std::size_t> group_of(prob.num_points());
  for (std::size_t k = 0; k < ng; ++k)
    for (auto i : g.points[k]) group_of[i] = k;
  for (std::size_t i = 0; i < prob.num_points(); ++i) {
    const auto& sh = share[group_of[i]];
    const double mi = prob.measure().mass(i);
    if (sh.size() == 1) {
      plan.entries.push_back({i, sh[0].first, mi});
      continue;
    }
    for (auto [j, f] : sh)
      if (f > 0.0) plan.entries.push_back({i, j, mi * f});
  }
  return plan;
}

/// Feasible coupling with site masses `target`, obtained from the Laguerre
/// assignment by moving mass out of overfull cells along the cheapest
/// point-by-point reassignments. An upper bound on the optimal cost for
/// `target`, exact in simple cases only.
inline TransportPlan repair_to_marginal(const Problem& prob, const CellAssignment& a,
                                        std::span<const double> target) {
  const std::size_t n = prob.num_sites(), m = prob.num_points();
  const WeightVector cells = cell_masses(prob, a);
  std::vector<double> excess(n);
  for (std::size_t j = 0; j < n; ++j) excess[j] = cells[j] - target[j];

  struct Move {
    double delta;
    std::size_t point, to;
  };
  std::vector<Move> moves;
  for (std::size_t i = 0; i < m; ++i) {
    const auto j = a.owner[i];
    if (excess[j] <= 0.0) continue;
    for (std::size_t k = 0; k < n; ++k)
      if (excess[k] < 0.0) moves.push_back({prob.costs()(i, k) - prob.costs()(i, j), i, k});
  }
  std::sort(moves.begin(), moves.end(), [](const Move& x, const Move& y) {
    return std::tie(x.delta, x.point, x.to) < std::tie(y.delta, y.point, y.to);
  });
  std::vector<double> stay(m);
  for (std::size_t i = 0; i < m; ++i) stay[i] = prob.measure().mass(i);
  std::vector<std::vector<std::pair<std::size_t, double>>> moved(m);
  for (const auto& mv : moves) {
    const auto j = a.owner[mv.point];
    const double amount = std::min({stay[mv.point], excess[j], -excess[mv.to]});
    if (amount <= 0.0) continue;
    stay[mv.point] -= amount;
    excess[j] -= amount;
    excess[mv.to] += amount;
    moved[mv.point].emplace_back(mv.to, amount);
  }
  TransportPlan plan;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<std::pair<std::size_t, double>> parts = moved[i];
    if (stay[i] > 0.0) parts.emplace_back(a.owner[i], stay[i]);
    std::sort(parts.begin(), parts.end());
    for (auto [j, w] : parts) plan.entries.push_back({i, j, w});
  }
  return plan;
}

}  // namespace sdot
