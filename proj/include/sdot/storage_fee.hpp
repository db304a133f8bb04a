#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdot/numeric.hpp"

namespace sdot {

/// Masses assigned to the target sites; a point of the probability simplex.
using WeightVector = std::vector<double>;

/// True when `w` lies in the simplex up to the library tolerances.
inline bool in_simplex(std::span<const double> w) {
  double total = 0.0;
  for (double x : w) {
    if (!(x >= -kNonnegTol)) return false;
    total += x;
  }
  return std::abs(total - 1.0) <= kSumTol;
}

// Relative tolerance used when comparing a slope to a kink of a site fee.
inline constexpr double kKinkTol = 1e-12;

enum class FeeKind { Zero, Linear, Quadratic, Separable, Box, Fixed };

inline std::string to_string(FeeKind k) {
  switch (k) {
    case FeeKind::Zero: return "zero";
    case FeeKind::Linear: return "linear";
    case FeeKind::Quadratic: return "quadratic";
    case FeeKind::Separable: return "separable";
    case FeeKind::Box: return "box";
    case FeeKind::Fixed: return "fixed";
  }
  return "?";
}

/// One convex quadratic piece c0 + c1*t + c2*t^2/2 on [t0, t1].
struct FeePiece {
  double t0 = 0.0;
  double t1 = 1.0;
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;

  double value(double t) const { return c0 + c1 * t + 0.5 * c2 * t * t; }
  double slope(double t) const { return c1 + c2 * t; }
};

/// Convex fee charged on a single site as a function of its mass, finite on
/// [lo, hi] and +inf elsewhere. Pieces tile [lo, hi] left to right.
struct SiteFee {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<FeePiece> pieces;

  double value(double t) const {
    t = std::clamp(t, lo, hi);
    for (const auto& p : pieces)
      if (t <= p.t1) return p.value(t);
    return pieces.back().value(t);
  }

  /// Interval of masses t maximizing s*t - f(t) over [lo, hi].
  /// Slopes within kink_tol (relative) of a kink count as attaining it.
  std::pair<double, double> response(double s, double kink_tol = kKinkTol) const {
    const double eps = kink_tol * (1.0 + std::abs(s));
    double rlo = hi;
    for (const auto& p : pieces) {
      if (p.slope(p.t1) >= s - eps) {
        if (p.slope(p.t0) >= s - eps || p.c2 <= 0.0)
          rlo = p.t0;
        else
          rlo = std::clamp((s - p.c1) / p.c2, p.t0, p.t1);
        break;
      }
    }
    double rhi = lo;
    for (auto it = pieces.rbegin(); it != pieces.rend(); ++it) {
      const auto& p = *it;
      if (p.slope(p.t0) <= s + eps) {
        if (p.slope(p.t1) <= s + eps || p.c2 <= 0.0)
          rhi = p.t1;
        else
          rhi = std::clamp((s - p.c1) / p.c2, p.t0, p.t1);
        break;
      }
    }
    return {rlo, std::max(rlo, rhi)};
  }

  /// Largest |f'| on the domain; zero for point domains.
  double max_abs_slope() const {
    double m = 0.0;
    for (const auto& p : pieces) {
      if (p.t1 <= p.t0) continue;
      m = std::max({m, std::abs(p.slope(p.t0)), std::abs(p.slope(p.t1))});
    }
    return m;
  }
};

/// Convex storage fee F on weight vectors: a sum of per-site convex fees plus
/// a constant offset, restricted to the simplex.
class StorageFee {
 public:
  StorageFee() = default;

  static StorageFee zero(std::size_t n) {
    require_sites(n);
    StorageFee f(FeeKind::Zero, n);
    for (auto& s : f.sites_) s.pieces = {FeePiece{}};
    return f;
  }

  static StorageFee linear(std::vector<double> a) {
    require_sites(a.size());
    StorageFee f(FeeKind::Linear, a.size());
    for (std::size_t j = 0; j < a.size(); ++j) {
      require_finite(a[j], "linear fee coefficient");
      f.sites_[j].pieces = {FeePiece{0.0, 1.0, 0.0, a[j], 0.0}};
    }
    f.coeffs_ = std::move(a);
    return f;
  }

  static StorageFee quadratic(std::size_t n, double sigma) {
    require_sites(n);
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
      throw InputError("convex fee required; use oracle module (quadratic sigma must be >= 0)");
    StorageFee f(FeeKind::Quadratic, n);
    for (auto& s : f.sites_) s.pieces = {FeePiece{0.0, 1.0, 0.0, 0.0, sigma}};
    f.sigma_ = sigma;
    return f;
  }

  /// Separable fee sum_j t*h_j(t) with h_j piecewise linear through the
  /// given (t, h) breakpoints, which must span [0, 1].
  static StorageFee separable(std::vector<std::vector<std::pair<double, double>>> tables) {
    require_sites(tables.size());
    StorageFee f(FeeKind::Separable, tables.size());
    for (std::size_t j = 0; j < tables.size(); ++j) {
      const auto& tab = tables[j];
      if (tab.size() < 2 || tab.front().first != 0.0 || tab.back().first != 1.0)
        throw InputError("separable fee table for site " + std::to_string(j + 1) +
                         " must have breakpoints starting at 0 and ending at 1");
      double prev_slope = 0.0;
      for (std::size_t k = 0; k + 1 < tab.size(); ++k) {
        const auto [t0, h0] = tab[k];
        const auto [t1, h1] = tab[k + 1];
        require_finite(h0, "separable fee value");
        require_finite(h1, "separable fee value");
        if (!(t1 > t0))
          throw InputError("separable fee breakpoints must be strictly increasing");
        const double beta = (h1 - h0) / (t1 - t0);
        if (beta < prev_slope - 1e-12)
          throw InputError("convex fee required; use oracle module (separable h_j must be "
                           "nondecreasing and convex)");
        prev_slope = beta;
        f.sites_[j].pieces.push_back(FeePiece{t0, t1, 0.0, h0 - beta * t0, 2.0 * beta});
      }
    }
    f.tables_ = std::move(tables);
    return f;
  }

  /// Zero fee restricted to {w in simplex : w <= u}.
  static StorageFee box(std::vector<double> u) {
    require_sites(u.size());
    StorageFee f(FeeKind::Box, u.size());
    double total = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
      if (!(u[j] >= 0.0)) throw InputError("box capacity must be nonnegative");
      const double cap = std::min(u[j], 1.0);
      f.sites_[j].hi = cap;
      f.sites_[j].pieces = {FeePiece{0.0, cap, 0.0, 0.0, 0.0}};
      total += cap;
    }
    if (total < 1.0 - kSumTol) throw InputError("box capacities sum below 1: empty fee domain");
    f.coeffs_ = std::move(u);
    return f;
  }

  /// Indicator of the single weight vector `w`.
  static StorageFee fixed(std::vector<double> w) {
    require_sites(w.size());
    if (!in_simplex(w)) throw InputError("fixed marginal must lie in the simplex");
    StorageFee f(FeeKind::Fixed, w.size());
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double t = std::max(0.0, w[j]);
      f.sites_[j].lo = f.sites_[j].hi = t;
      f.sites_[j].pieces = {FeePiece{t, t, 0.0, 0.0, 0.0}};
    }
    f.coeffs_ = std::move(w);
    return f;
  }

  StorageFee with_offset(double c) const {
    require_finite(c, "fee offset");
    StorageFee f = *this;
    f.offset_ = c;
    return f;
  }

  FeeKind kind() const { return kind_; }
  std::size_t size() const { return sites_.size(); }
  double offset() const { return offset_; }
  const SiteFee& site(std::size_t j) const { return sites_[j]; }
  std::span<const SiteFee> sites() const { return sites_; }

  /// Linear coefficients, box capacities, or fixed weights, depending on kind.
  const std::vector<double>& coefficients() const { return coeffs_; }
  double sigma() const { return sigma_; }
  const std::vector<std::vector<std::pair<double, double>>>& tables() const { return tables_; }

  /// F without domain checks: masses are clamped into each site's domain.
  double raw_value(std::span<const double> w) const {
    std::vector<double> terms(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) terms[j] = sites_[j].value(w[j]);
    return pairwise_sum(terms) + offset_;
  }

  /// Largest |f_j'| over all sites; a Lipschitz bound for mass moves.
  double max_abs_slope() const {
    double m = 0.0;
    for (const auto& s : sites_) m = std::max(m, s.max_abs_slope());
    return m;
  }

 private:
  StorageFee(FeeKind k, std::size_t n) : kind_(k), sites_(n) {}

  static void require_sites(std::size_t n) {
    if (n == 0) throw InputError("fee needs at least one site");
  }
  static void require_finite(double x, const char* what) {
    if (!std::isfinite(x)) throw InputError(std::string(what) + " must be finite");
  }

  FeeKind kind_ = FeeKind::Zero;
  std::vector<SiteFee> sites_;
  double offset_ = 0.0;
  double sigma_ = 0.0;
  std::vector<double> coeffs_;
  std::vector<std::vector<std::pair<double, double>>> tables_;
};

/// F(w); +inf outside the fee's domain.
inline double fee_eval(const StorageFee& fee, std::span<const double> w) {
  if (w.size() != fee.size()) throw InputError("weight vector length does not match fee");
  if (!in_simplex(w)) return kInf;
  for (std::size_t j = 0; j < w.size(); ++j) {
    const auto& s = fee.site(j);
    const double lo_tol = s.lo > 0.0 ? kDomainTol : kNonnegTol;
    if (w[j] < s.lo - lo_tol || w[j] > s.hi + kDomainTol) return kInf;
  }
  return fee.raw_value(w);
}

/// The face argmax_w <psi, w> - F(w): a box [lo, hi] intersected with the
/// hyperplane sum(w) = 1, together with the simplex multiplier tau.
struct ConjugateFace {
  double tau = 0.0;
  std::vector<double> lo;
  std::vector<double> hi;

  /// max of w(S) over the face, S given as a site bitmask.
  double max_mass(std::uint64_t mask) const {
    double in_hi = 0.0, out_lo = 0.0;
    for (std::size_t j = 0; j < lo.size(); ++j) {
      if (mask >> j & 1u) in_hi += hi[j];
      else out_lo += lo[j];
    }
    return std::min(in_hi, 1.0 - out_lo);
  }
  double min_mass(std::uint64_t mask) const {
    double in_lo = 0.0, out_hi = 0.0;
    for (std::size_t j = 0; j < lo.size(); ++j) {
      if (mask >> j & 1u) in_lo += lo[j];
      else out_hi += hi[j];
    }
    return std::max(in_lo, 1.0 - out_hi);
  }
};

/// Solves the KKT system of sup_{w in simplex} <psi, w> - F(w) exactly: the
/// total response to the multiplier tau is piecewise linear between the
/// slope breakpoints of the site fees.
inline ConjugateFace conjugate_face(const StorageFee& fee, std::span<const double> psi,
                                    double kink_tol = kKinkTol) {
  const std::size_t n = fee.size();
  if (psi.size() != n) throw InputError("potential length does not match fee");
  for (double p : psi)
    if (!std::isfinite(p)) throw NumericError("conjugate solve failed: non-finite potential");

  auto totals = [&](double tau) {
    double l = 0.0, u = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto [a, b] = fee.site(j).response(psi[j] - tau, kink_tol);
      l += a;
      u += b;
    }
    return std::pair{l, u};
  };

  std::vector<double> taus;
  for (std::size_t j = 0; j < n; ++j)
    for (const auto& p : fee.site(j).pieces) {
      taus.push_back(psi[j] - p.slope(p.t0));
      taus.push_back(psi[j] - p.slope(p.t1));
    }
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());

  // Smallest breakpoint whose lower total response is <= 1.
  std::size_t lo_idx = 0, hi_idx = taus.size() - 1;
  if (totals(taus[hi_idx]).first > 1.0 + kSumTol)
    throw NumericError("conjugate solve failed: empty fee domain");
  while (lo_idx < hi_idx) {
    const std::size_t mid = (lo_idx + hi_idx) / 2;
    if (totals(taus[mid]).first <= 1.0) hi_idx = mid;
    else lo_idx = mid + 1;
  }
  const std::size_t b = lo_idx;
  double tau = taus[b];
  if (b > 0 && totals(taus[b]).second < 1.0) {
    // Root lies strictly between two breakpoints where the response is affine.
    const double t0 = taus[b - 1], t1 = taus[b];
    const double r0 = totals(t0).first;   // right limit at t0
    const double r1 = totals(t1).second;  // left limit at t1
    tau = r0 > r1 ? t0 + (r0 - 1.0) / (r0 - r1) * (t1 - t0) : t1;
    tau = std::clamp(tau, t0, t1);
  }

  ConjugateFace face;
  face.tau = tau;
  face.lo.resize(n);
  face.hi.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto [a, b2] = fee.site(j).response(psi[j] - tau, kink_tol);
    face.lo[j] = a;
    face.hi[j] = b2;
  }
  return face;
}

/// A maximizer of <psi, w> - F(w); within the face, mass is filled in site
/// order, so ties go to the lowest index.
inline WeightVector face_point(const ConjugateFace& face) {
  const std::size_t n = face.lo.size();
  WeightVector w = face.lo;
  double rest = 1.0 - pairwise_sum(w);
  if (rest >= 0.0) {
    for (std::size_t j = 0; j < n && rest > 0.0; ++j) {
      const double add = std::min(rest, face.hi[j] - w[j]);
      w[j] += add;
      rest -= add;
    }
  } else {
    for (std::size_t j = n; j-- > 0 && rest < 0.0;) {
      const double take = std::min(-rest, w[j]);
      w[j] -= take;
      rest += take;
    }
  }
  if (std::abs(rest) > kSumTol) throw NumericError("conjugate solve failed: inconsistent face");
  if (rest != 0.0) {
    // Rounding residue: park it on the heaviest site.
    const auto k = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
    w[k] += rest;
  }
  return w;
}

inline WeightVector fee_conjugate_argmax(const StorageFee& fee, std::span<const double> psi) {
  return face_point(conjugate_face(fee, psi));
}

/// F*(psi) = sup_w <psi, w> - F(w). Always finite.
inline double fee_conjugate(const StorageFee& fee, std::span<const double> psi) {
  const WeightVector w = fee_conjugate_argmax(fee, psi);
  const double v = dot(psi, w) - fee.raw_value(w);
  if (!std::isfinite(v)) throw NumericError("conjugate solve failed");
  return v;
}

/// F(w) + F*(psi) - <w, psi>; zero iff psi is a subgradient of F at w.
inline double fenchel_young_residual(const StorageFee& fee, std::span<const double> w,
                                     std::span<const double> psi) {
  const double f = fee_eval(fee, w);
  if (!std::isfinite(f)) return kInf;
  return f + fee_conjugate(fee, psi) - dot(w, psi);
}

}  // namespace sdot
