#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdot/numeric.hpp"
#include "sdot/storage_fee.hpp"

namespace sdot {

/// Flat row-major storage for `count` points of dimension `dim`.
class PointCloud {
 public:
  PointCloud() = default;
  PointCloud(std::size_t dim, std::vector<double> coords) : dim_(dim), coords_(std::move(coords)) {
    if (dim_ == 0) throw InputError("point dimension must be positive");
    if (coords_.size() % dim_ != 0) throw InputError("coordinate count is not a multiple of dimension");
    for (double c : coords_)
      if (!std::isfinite(c)) throw InputError("point coordinates must be finite");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return dim_ == 0 ? 0 : coords_.size() / dim_; }
  std::span<const double> operator[](std::size_t i) const {
    return std::span<const double>(coords_).subspan(i * dim_, dim_);
  }
  const std::vector<double>& coords() const { return coords_; }

 private:
  std::size_t dim_ = 0;
  std::vector<double> coords_;
};

/// The fixed target sites y_1..y_N. Sites must be pairwise distinct.
class SiteSet {
 public:
  SiteSet() = default;
  explicit SiteSet(PointCloud pts) : pts_(std::move(pts)) {
    if (pts_.size() == 0) throw InputError("sites: at least one site is required");
    for (std::size_t j = 0; j < pts_.size(); ++j)
      for (std::size_t k = j + 1; k < pts_.size(); ++k)
        if (std::equal(pts_[j].begin(), pts_[j].end(), pts_[k].begin()))
          throw InputError("sites: duplicate site " + std::to_string(j + 1) + " and " +
                           std::to_string(k + 1));
  }
  SiteSet(std::size_t dim, std::vector<double> coords) : SiteSet(PointCloud(dim, std::move(coords))) {}

  std::size_t size() const { return pts_.size(); }
  std::size_t dim() const { return pts_.dim(); }
  std::span<const double> operator[](std::size_t j) const { return pts_[j]; }
  const PointCloud& points() const { return pts_; }

 private:
  PointCloud pts_;
};

struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  bool contains(std::span<const double> x, double tol = 1e-12) const {
    for (std::size_t d = 0; d < lo.size(); ++d)
      if (x[d] < lo[d] - tol || x[d] > hi[d] + tol) return false;
    return true;
  }
};

/// Discrete approximation of the source measure: weighted points.
class QuadratureMeasure {
 public:
  QuadratureMeasure() = default;
  QuadratureMeasure(PointCloud pts, std::vector<double> masses, std::optional<Box> bbox = {})
      : pts_(std::move(pts)), masses_(std::move(masses)) {
    if (pts_.size() == 0) throw InputError("measure: no points");
    if (masses_.size() != pts_.size()) throw InputError("measure: mass count does not match point count");
    for (double m : masses_)
      if (!(m > 0.0) || !std::isfinite(m)) throw InputError("measure: every mass must be positive");
    if (std::abs(pairwise_sum(masses_) - 1.0) > 1e-12) throw InputError("measure: masses must sum to 1");
    if (bbox) {
      bbox_ = std::move(*bbox);
      for (std::size_t i = 0; i < size(); ++i)
        if (!bbox_.contains(pts_[i])) throw InputError("measure: point outside bounding box");
    } else {
      bbox_.lo.assign(dim(), kInf);
      bbox_.hi.assign(dim(), -kInf);
      for (std::size_t i = 0; i < size(); ++i)
        for (std::size_t d = 0; d < dim(); ++d) {
          bbox_.lo[d] = std::min(bbox_.lo[d], pts_[i][d]);
          bbox_.hi[d] = std::max(bbox_.hi[d], pts_[i][d]);
        }
    }
  }

  std::size_t size() const { return pts_.size(); }
  std::size_t dim() const { return pts_.dim(); }
  std::span<const double> point(std::size_t i) const { return pts_[i]; }
  const PointCloud& points() const { return pts_; }
  std::span<const double> masses() const { return masses_; }
  double mass(std::size_t i) const { return masses_[i]; }
  const Box& bbox() const { return bbox_; }

 private:
  PointCloud pts_;
  std::vector<double> masses_;
  Box bbox_;
};

/// Scalar density on R^n; must be nonnegative on the box.
using Density = std::function<double(std::span<const double>)>;

/// Midpoint rule on a regular grid: one point per cell center, mass
/// proportional to density(center) * cell volume, renormalized to 1.
/// Cells with zero density are dropped. An empty density means uniform.
inline QuadratureMeasure build_grid_measure(const Box& bounds, std::span<const std::size_t> resolution,
                                            const Density& density = {}) {
  const std::size_t n = bounds.lo.size();
  if (n == 0 || bounds.hi.size() != n || resolution.size() != n)
    throw InputError("grid: bounds and resolution dimensions disagree");
  std::size_t cells = 1;
  for (std::size_t d = 0; d < n; ++d) {
    if (!(bounds.hi[d] > bounds.lo[d])) throw InputError("grid: nonpositive box extent");
    if (resolution[d] < 1) throw InputError("grid: resolution must be >= 1 per axis");
    cells *= resolution[d];
  }
  std::vector<double> coords(cells * n), weights(cells);
  std::vector<std::size_t> idx(n, 0);
  std::vector<double> x(n);
  for (std::size_t c = 0; c < cells; ++c) {
    std::size_t rem = c;
    for (std::size_t d = n; d-- > 0;) {
      idx[d] = rem % resolution[d];
      rem /= resolution[d];
    }
    for (std::size_t d = 0; d < n; ++d) {
      const double h = (bounds.hi[d] - bounds.lo[d]) / static_cast<double>(resolution[d]);
      x[d] = bounds.lo[d] + (static_cast<double>(idx[d]) + 0.5) * h;
      coords[c * n + d] = x[d];
    }
    const double rho = density ? density(x) : 1.0;
    if (!(rho >= 0.0) || !std::isfinite(rho)) throw InputError("grid: density must be finite and nonnegative");
    weights[c] = rho;  // cell volumes are equal, so they cancel
  }
  const double total = pairwise_sum(weights);
  if (!(total > 0.0)) throw InputError("degenerate density");
  std::vector<double> kept_coords, masses;
  for (std::size_t c = 0; c < cells; ++c) {
    if (weights[c] <= 0.0) continue;
    masses.push_back(weights[c] / total);
    kept_coords.insert(kept_coords.end(), coords.begin() + c * n, coords.begin() + (c + 1) * n);
  }
  // Final renormalization so the masses sum to one in pairwise order.
  const double s = pairwise_sum(masses);
  for (auto& m : masses) m /= s;
  return QuadratureMeasure(PointCloud(n, std::move(kept_coords)), std::move(masses), bounds);
}

enum class CostKind { Power, InnerProduct, Table };

/// Transport cost c(x, y).
///   Power:        |x - y|^p, p >= 1
///   InnerProduct: shift - <x, y>
///   Table:        explicit M x N values indexed by (point, site); no gradient
class CostFunction {
 public:
  static CostFunction power(double p) {
    if (!(p >= 1.0) || !std::isfinite(p)) throw InputError("cost: exponent must be >= 1");
    CostFunction c;
    c.kind_ = CostKind::Power;
    c.exponent_ = p;
    return c;
  }
  static CostFunction inner_product(double shift = 0.0) {
    CostFunction c;
    c.kind_ = CostKind::InnerProduct;
    c.shift_ = shift;
    return c;
  }
  static CostFunction table(std::size_t points, std::size_t sites, std::vector<double> values) {
    if (values.size() != points * sites) throw InputError("cost: table size must be points x sites");
    CostFunction c;
    c.kind_ = CostKind::Table;
    c.rows_ = points;
    c.cols_ = sites;
    c.table_ = std::move(values);
    return c;
  }

  CostKind kind() const { return kind_; }
  double exponent() const { return exponent_; }
  double shift() const { return shift_; }
  bool has_gradient() const { return kind_ != CostKind::Table; }
  std::size_t table_rows() const { return rows_; }
  std::size_t table_cols() const { return cols_; }
  const std::vector<double>& table_values() const { return table_; }

  /// c(x, y); `i`, `j` index the table for the Table kind.
  double operator()(std::span<const double> x, std::span<const double> y, std::size_t i = 0,
                    std::size_t j = 0) const {
    switch (kind_) {
      case CostKind::Power: {
        double r2 = 0.0;
        for (std::size_t d = 0; d < x.size(); ++d) r2 += (x[d] - y[d]) * (x[d] - y[d]);
        if (exponent_ == 2.0) return r2;
        return std::pow(std::sqrt(r2), exponent_);
      }
      case CostKind::InnerProduct: {
        double s = 0.0;
        for (std::size_t d = 0; d < x.size(); ++d) s += x[d] * y[d];
        return shift_ - s;
      }
      case CostKind::Table:
        if (i >= rows_ || j >= cols_) throw InputError("cost: table index out of range");
        return table_[i * cols_ + j];
    }
    return 0.0;
  }

  /// Gradient of c(., y) at x. For p = 1 at x = y the zero subgradient is returned.
  std::vector<double> gradient(std::span<const double> x, std::span<const double> y) const {
    if (!has_gradient()) throw InputError("cost: gradient unavailable for table costs");
    std::vector<double> g(x.size());
    if (kind_ == CostKind::InnerProduct) {
      for (std::size_t d = 0; d < x.size(); ++d) g[d] = -y[d];
      return g;
    }
    double r2 = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) r2 += (x[d] - y[d]) * (x[d] - y[d]);
    if (r2 == 0.0) return g;
    const double scale = exponent_ * std::pow(std::sqrt(r2), exponent_ - 2.0);
    for (std::size_t d = 0; d < x.size(); ++d) g[d] = scale * (x[d] - y[d]);
    return g;
  }

 private:
  CostKind kind_ = CostKind::Power;
  double exponent_ = 2.0;
  double shift_ = 0.0;
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> table_;
};

inline constexpr double kTwistTol = 1e-9;

struct TwistWitness {
  std::vector<double> x;
  std::size_t j = 0;  // 0-based site indices, j < k
  std::size_t k = 0;
};

struct TwistReport {
  bool holds = true;
  std::vector<TwistWitness> witnesses;
};

/// Sample-based twist check: gradients of c(., y_j) must differ pairwise at
/// every sample by more than `tol` in Euclidean norm.
inline TwistReport check_twist(const CostFunction& cost, const SiteSet& sites, const PointCloud& samples,
                               double tol = kTwistTol) {
  if (!cost.has_gradient()) throw InputError("twist check requires gradients");
  if (samples.size() == 0) throw InputError("twist check requires at least one sample");
  if (samples.dim() != sites.dim()) throw InputError("twist check: sample dimension mismatch");
  TwistReport rep;
  std::vector<std::vector<double>> grads(sites.size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto x = samples[s];
    for (std::size_t j = 0; j < sites.size(); ++j) grads[j] = cost.gradient(x, sites[j]);
    for (std::size_t j = 0; j < sites.size(); ++j)
      for (std::size_t k = j + 1; k < sites.size(); ++k) {
        double d2 = 0.0;
        for (std::size_t d = 0; d < x.size(); ++d) d2 += (grads[j][d] - grads[k][d]) * (grads[j][d] - grads[k][d]);
        if (!(std::sqrt(d2) > tol)) {
          rep.holds = false;
          rep.witnesses.push_back({std::vector<double>(x.begin(), x.end()), j, k});
        }
      }
  }
  return rep;
}

/// Dense M x N cost table, row-major by quadrature point.
class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> v)
      : rows_(rows), cols_(cols), v_(std::move(v)) {}
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t i, std::size_t j) const { return v_[i * cols_ + j]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(v_).subspan(i * cols_, cols_);
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> v_;
};

inline CostMatrix cost_matrix(const QuadratureMeasure& mu, const SiteSet& sites, const CostFunction& cost) {
  if (mu.dim() != sites.dim()) throw InputError("sites: dimension does not match measure dimension");
  if (cost.kind() == CostKind::Table && (cost.table_rows() != mu.size() || cost.table_cols() != sites.size()))
    throw InputError("cost: table shape does not match measure x sites");
  const std::size_t m = mu.size(), n = sites.size();
  std::vector<double> v(m * n);
  parallel_for(m, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = cost(mu.point(i), sites[j], i, j);
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (!std::isfinite(v[i * n + j]))
        throw InputError("cost: non-finite value at (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) + ")");
  return CostMatrix(m, n, std::move(v));
}

/// Full problem data: source measure, sites, cost and storage fee, with the
/// cost table precomputed.
class Problem {
 public:
  Problem(QuadratureMeasure mu, SiteSet sites, CostFunction cost, StorageFee fee)
      : mu_(std::move(mu)), sites_(std::move(sites)), cost_(std::move(cost)), fee_(std::move(fee)) {
    if (mu_.dim() != sites_.dim()) throw InputError("sites: dimension does not match measure dimension");
    if (fee_.size() != sites_.size()) throw InputError("fee: length does not match site count");
    c_ = cost_matrix(mu_, sites_, cost_);
  }

  /// Same data with a different fee; the cost table is shared by copy.
  Problem with_fee(StorageFee fee) const {
    if (fee.size() != sites_.size()) throw InputError("fee: length does not match site count");
    Problem p = *this;
    p.fee_ = std::move(fee);
    return p;
  }

  const QuadratureMeasure& measure() const { return mu_; }
  const SiteSet& sites() const { return sites_; }
  const CostFunction& cost() const { return cost_; }
  const StorageFee& fee() const { return fee_; }
  const CostMatrix& costs() const { return c_; }
  std::size_t num_points() const { return mu_.size(); }
  std::size_t num_sites() const { return sites_.size(); }

 private:
  QuadratureMeasure mu_;
  SiteSet sites_;
  CostFunction cost_;
  StorageFee fee_;
  CostMatrix c_;
};

}  // namespace sdot
