#pragma once

// B-spline bases on a closed interval, least-squares projection of
// discretely observed curves, and Gram matrices with symmetric half-powers.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fpqr/error.hpp"

namespace fpqr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  double length() const { return hi - lo; }
  bool operator==(const Interval&) const = default;
};

/// Strictly increasing observation points.
class Grid {
 public:
  Grid() = default;

  explicit Grid(std::vector<double> points) : points_(std::move(points)) {
    if (points_.size() < 4) {
      throw DomainError("grid needs at least 4 points, got " + std::to_string(points_.size()));
    }
    for (std::size_t l = 0; l < points_.size(); ++l) {
      if (!std::isfinite(points_[l])) throw DomainError("grid point " + std::to_string(l) + " is not finite");
      if (l > 0 && !(points_[l] > points_[l - 1])) {
        throw DomainError("grid is not strictly increasing at index " + std::to_string(l));
      }
    }
  }

  /// `count` equally spaced points from lo to hi inclusive.
  static Grid uniform(Interval domain, std::size_t count) {
    std::vector<double> pts(count);
    for (std::size_t l = 0; l < count; ++l) {
      pts[l] = domain.lo + domain.length() * static_cast<double>(l) / static_cast<double>(count - 1);
    }
    if (count > 0) pts.back() = domain.hi;
    return Grid(std::move(pts));
  }

  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t l) const { return points_[l]; }
  double front() const { return points_.front(); }
  double back() const { return points_.back(); }
  std::span<const double> points() const { return points_; }
  const std::vector<double>& vec() const { return points_; }

  bool operator==(const Grid&) const = default;

 private:
  std::vector<double> points_;
};

/// n curves sampled on a shared grid; row i is curve i.
class FunctionalSample {
 public:
  FunctionalSample() = default;

  FunctionalSample(Grid grid, Matrix values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (static_cast<std::size_t>(values_.cols()) != grid_.size()) {
      throw ShapeError("sample has " + std::to_string(values_.cols()) + " columns but grid has " +
                       std::to_string(grid_.size()) + " points");
    }
    if (!values_.allFinite()) throw DomainError("sample contains non-finite values");
  }

  const Grid& grid() const { return grid_; }
  const Matrix& values() const { return values_; }
  Eigen::Index n() const { return values_.rows(); }

  FunctionalSample rows(std::span<const Eigen::Index> idx) const {
    Matrix out(static_cast<Eigen::Index>(idx.size()), values_.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = values_.row(idx[i]);
    return FunctionalSample(grid_, std::move(out));
  }

  FunctionalSample head(Eigen::Index count) const { return FunctionalSample(grid_, values_.topRows(count)); }
  FunctionalSample tail(Eigen::Index count) const { return FunctionalSample(grid_, values_.bottomRows(count)); }

 private:
  Grid grid_;
  Matrix values_;
};

namespace detail {

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int count) {
  std::vector<double> nodes(count), weights(count);
  for (int i = 0; i < (count + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (count + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= count; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = count * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    nodes[i] = -x;
    nodes[count - 1 - i] = x;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    weights[i] = w;
    weights[count - 1 - i] = w;
  }
  return {nodes, weights};
}

}  // namespace detail

/// Trapezoid-rule weights for integrating over the grid's span.
inline Vector trapezoid_weights(std::span<const double> pts) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  Vector w = Vector::Zero(n);
  for (Eigen::Index l = 0; l + 1 < n; ++l) {
    const double h = pts[l + 1] - pts[l];
    w(l) += 0.5 * h;
    w(l + 1) += 0.5 * h;
  }
  return w;
}

/// Clamped B-spline basis with its Gram matrix G = int B(t) B(t)^T dt and
/// the symmetric factors G^{1/2}, G^{-1/2}.
class BasisSystem {
 public:
  BasisSystem() = default;

  const Interval& domain() const { return domain_; }
  int order() const { return order_; }
  int n_basis() const { return n_basis_; }
  const std::vector<double>& knots() const { return knots_; }
  const Matrix& gram() const { return gram_; }
  const Matrix& gram_half() const { return gram_half_; }
  const Matrix& gram_half_inv() const { return gram_half_inv_; }

  bool contains(double x) const {
    const double tol = 1e-12 * std::max(1.0, domain_.length());
    return x >= domain_.lo - tol && x <= domain_.hi + tol;
  }

  /// Values of all basis functions at x (Cox-de Boor triangular recursion).
  Vector evaluate(double x) const {
    if (!contains(x)) {
      throw DomainError("point " + std::to_string(x) + " outside [" + std::to_string(domain_.lo) + ", " +
                        std::to_string(domain_.hi) + "]");
    }
    x = std::clamp(x, domain_.lo, domain_.hi);
    const int p = order_ - 1;
    const int span = find_span(x);
    std::vector<double> nonzero(order_, 0.0), left(order_, 0.0), right(order_, 0.0);
    nonzero[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = x - knots_[span + 1 - j];
      right[j] = knots_[span + j] - x;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double denom = right[r + 1] + left[j - r];
        const double tmp = denom > 0.0 ? nonzero[r] / denom : 0.0;
        nonzero[r] = saved + right[r + 1] * tmp;
        saved = left[j - r] * tmp;
      }
      nonzero[j] = saved;
    }
    Vector out = Vector::Zero(n_basis_);
    for (int j = 0; j <= p; ++j) out(span - p + j) = nonzero[j];
    return out;
  }

  friend BasisSystem build_bspline_basis(Interval domain, int n_basis, int order);

 private:
  // Index i such that knots_[i] <= x < knots_[i+1], with the right endpoint
  // assigned to the last non-empty span.
  int find_span(double x) const {
    const int last = n_basis_ - 1;
    if (x >= knots_[last + 1]) return last;
    const auto it = std::upper_bound(knots_.begin() + order_ - 1, knots_.begin() + last + 1, x);
    return static_cast<int>(it - knots_.begin()) - 1;
  }

  Interval domain_;
  int order_ = 0;
  int n_basis_ = 0;
  std::vector<double> knots_;
  Matrix gram_;
  Matrix gram_half_;
  Matrix gram_half_inv_;
};

/// Smallest eigenvalue allowed when forming half-powers of a Gram matrix.
inline constexpr double kMinGramEigenvalue = 1e-12;

/// Symmetric square root and inverse square root of an SPD matrix.
inline std::pair<Matrix, Matrix> symmetric_half_powers(const Matrix& spd) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(spd);
  if (eig.info() != Eigen::Success) throw ConditioningError("eigendecomposition of Gram matrix failed");
  const Vector& lambda = eig.eigenvalues();
  if (lambda.minCoeff() < kMinGramEigenvalue) {
    throw ConditioningError("Gram matrix has eigenvalue " + std::to_string(lambda.minCoeff()) + " below " +
                            std::to_string(kMinGramEigenvalue));
  }
  const Matrix& v = eig.eigenvectors();
  Matrix half = v * lambda.cwiseSqrt().asDiagonal() * v.transpose();
  Matrix half_inv = v * lambda.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
  // Exact symmetry.
  half = 0.5 * (half + half.transpose()).eval();
  half_inv = 0.5 * (half_inv + half_inv.transpose()).eval();
  return {std::move(half), std::move(half_inv)};
}

inline BasisSystem build_bspline_basis(Interval domain, int n_basis, int order) {
  if (order < 2) throw DomainError("B-spline order must be at least 2, got " + std::to_string(order));
  if (n_basis < order) {
    throw DomainError("n_basis (" + std::to_string(n_basis) + ") must be at least the order (" +
                      std::to_string(order) + ")");
  }
  if (!(domain.hi > domain.lo) || !std::isfinite(domain.lo) || !std::isfinite(domain.hi)) {
    throw DomainError("degenerate domain [" + std::to_string(domain.lo) + ", " + std::to_string(domain.hi) + "]");
  }

  BasisSystem b;
  b.domain_ = domain;
  b.order_ = order;
  b.n_basis_ = n_basis;

  const int interior = n_basis - order;
  b.knots_.reserve(static_cast<std::size_t>(n_basis + order));
  for (int j = 0; j < order; ++j) b.knots_.push_back(domain.lo);
  for (int j = 1; j <= interior; ++j) {
    b.knots_.push_back(domain.lo + domain.length() * static_cast<double>(j) / static_cast<double>(interior + 1));
  }
  for (int j = 0; j < order; ++j) b.knots_.push_back(domain.hi);

  // order nodes per span integrate polynomials of degree 2*order-1 exactly,
  // which covers products of two degree order-1 pieces.
  const auto [nodes, weights] = detail::gauss_legendre(order);
  Matrix gram = Matrix::Zero(n_basis, n_basis);
  for (int span = order - 1; span < n_basis; ++span) {
    const double a = b.knots_[span], c = b.knots_[span + 1];
    if (!(c > a)) continue;
    const double half_width = 0.5 * (c - a), mid = 0.5 * (a + c);
    for (int q = 0; q < order; ++q) {
      const Vector v = b.evaluate(mid + half_width * nodes[q]);
      gram.noalias() += (weights[q] * half_width) * v * v.transpose();
    }
  }
  b.gram_ = 0.5 * (gram + gram.transpose());
  std::tie(b.gram_half_, b.gram_half_inv_) = symmetric_half_powers(b.gram_);
  return b;
}

/// L x K matrix with entry (l, k) = B_k(points[l]).
inline Matrix eval_basis(const BasisSystem& basis, std::span<const double> points) {
  Matrix out(static_cast<Eigen::Index>(points.size()), basis.n_basis());
  for (std::size_t l = 0; l < points.size(); ++l) out.row(static_cast<Eigen::Index>(l)) = basis.evaluate(points[l]);
  return out;
}

inline Matrix eval_basis(const BasisSystem& basis, const Grid& grid) { return eval_basis(basis, grid.points()); }

/// Basis-expansion coefficients of a sample: one row per curve.
struct CoefBlock {
  BasisSystem basis;
  Matrix coefs;
};

/// Row-wise ordinary least squares of each curve on the evaluated basis.
inline CoefBlock fit_coefficients(const FunctionalSample& sample, const BasisSystem& basis) {
  const Grid& grid = sample.grid();
  if (grid.size() < static_cast<std::size_t>(basis.n_basis())) {
    throw ConditioningError("grid has " + std::to_string(grid.size()) + " points, fewer than n_basis = " +
                            std::to_string(basis.n_basis()));
  }
  for (std::size_t l = 0; l < grid.size(); ++l) {
    if (!basis.contains(grid[l])) {
      throw DomainError("grid point " + std::to_string(l) + " (" + std::to_string(grid[l]) + ") outside basis domain");
    }
  }
  const Matrix design = eval_basis(basis, grid);
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < basis.n_basis()) {
    throw ConditioningError("basis evaluation matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                            " < " + std::to_string(basis.n_basis()) + ")");
  }
  Matrix coefs = qr.solve(sample.values().transpose()).transpose();
  return CoefBlock{basis, std::move(coefs)};
}

/// Block-diagonal assembly of several bases, in input order.
class CompositeBasis {
 public:
  CompositeBasis() = default;

  explicit CompositeBasis(std::vector<BasisSystem> bases) : bases_(std::move(bases)) {
    if (bases_.empty()) throw ShapeError("block-diagonal Gram needs at least one basis");
    int total = 0;
    for (const auto& b : bases_) {
      offsets_.push_back(total);
      total += b.n_basis();
    }
    gram_ = Matrix::Zero(total, total);
    gram_half_ = Matrix::Zero(total, total);
    gram_half_inv_ = Matrix::Zero(total, total);
    for (std::size_t m = 0; m < bases_.size(); ++m) {
      const int off = offsets_[m], k = bases_[m].n_basis();
      gram_.block(off, off, k, k) = bases_[m].gram();
      gram_half_.block(off, off, k, k) = bases_[m].gram_half();
      gram_half_inv_.block(off, off, k, k) = bases_[m].gram_half_inv();
    }
  }

  std::size_t size() const { return bases_.size(); }
  const BasisSystem& operator[](std::size_t m) const { return bases_[m]; }
  const std::vector<BasisSystem>& bases() const { return bases_; }
  int offset(std::size_t m) const { return offsets_[m]; }
  int total_basis() const { return static_cast<int>(gram_.rows()); }
  const Matrix& gram() const { return gram_; }
  const Matrix& gram_half() const { return gram_half_; }
  const Matrix& gram_half_inv() const { return gram_half_inv_; }

 private:
  std::vector<BasisSystem> bases_;
  std::vector<int> offsets_;
  Matrix gram_;
  Matrix gram_half_;
  Matrix gram_half_inv_;
};

inline CompositeBasis block_diagonal_gram(std::vector<BasisSystem> bases) { return CompositeBasis(std::move(bases)); }

}  // namespace fpqr
