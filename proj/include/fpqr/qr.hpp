#pragma once

// Check-loss machinery: the loss itself, a linear quantile regression solver,
// an exhaustive reference solver for small instances, and quantile covariance.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "fpqr/basis.hpp"
#include "fpqr/error.hpp"

namespace fpqr {

/// Quantile level in (0, 1).
class QuantileSpec {
 public:
  explicit QuantileSpec(double tau) : tau_(tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw DomainError("tau must lie in (0, 1), got " + std::to_string(tau));
  }
  double tau() const { return tau_; }
  operator double() const { return tau_; }

 private:
  double tau_;
};

/// rho_tau(u) = u (tau - 1{u < 0}).
inline double check_loss(double u, double tau) { return u >= 0.0 ? u * tau : u * (tau - 1.0); }

inline double check_loss_sum(const Vector& residuals, double tau) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < residuals.size(); ++i) total += check_loss(residuals(i), tau);
  return total;
}

struct QrSolution {
  double intercept = 0.0;
  Vector slopes;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Raised when the solver exhausts its iteration budget; carries the last iterate.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, QrSolution last) : Error(ErrorKind::Convergence, what), last_(std::move(last)) {}
  const QrSolution& last_iterate() const { return last_; }

 private:
  QrSolution last_;
};

struct QrOptions {
  /// Smoothing levels, relative to the response scale, annealed in order.
  std::vector<double> smoothing{1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
  double rel_tol = 1e-10;
  int max_iter_per_stage = 500;
  int max_pivots = 0;  // 0 selects 50 * (n + p)
};

namespace detail {

inline Matrix with_intercept(const Matrix& design, bool fit_intercept) {
  if (!fit_intercept) return design;
  Matrix x(design.rows(), design.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(design.cols()) = design;
  return x;
}

inline double response_scale(const Vector& y) {
  if (y.size() < 2) return 1.0;
  const double mean = y.mean();
  const double sd = std::sqrt((y.array() - mean).square().sum() / static_cast<double>(y.size() - 1));
  return sd > 0.0 ? sd : std::max(1.0, std::abs(mean));
}

inline QrSolution unpack(const Vector& coef, bool fit_intercept, double objective, int iterations, bool converged) {
  QrSolution s;
  if (fit_intercept) {
    s.intercept = coef(0);
    s.slopes = coef.tail(coef.size() - 1);
  } else {
    s.slopes = coef;
  }
  s.objective = objective;
  s.iterations = iterations;
  s.converged = converged;
  return s;
}

// Minimizes sum 0.5 sqrt(r^2 + eps^2) + (tau - 1/2) r by majorize-minimize
// reweighted least squares, annealing eps.
inline Vector smoothed_irls(const Matrix& x, const Vector& y, double tau, const QrOptions& opt, int& iterations) {
  const double scale = response_scale(y);
  Eigen::LDLT<Matrix> ls(x.transpose() * x);
  Vector beta = ls.solve(x.transpose() * y);
  const Vector tilt = (tau - 0.5) * x.transpose() * Vector::Ones(x.rows());
  Vector w(x.rows());
  for (double level : opt.smoothing) {
    const double eps = level * scale;
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opt.max_iter_per_stage; ++it) {
      ++iterations;
      const Vector r = y - x * beta;
      double obj = 0.0;
      for (Eigen::Index i = 0; i < r.size(); ++i) {
        const double root = std::sqrt(r(i) * r(i) + eps * eps);
        obj += 0.5 * root + (tau - 0.5) * r(i);
        w(i) = 0.5 / root;
      }
      if (std::abs(prev - obj) <= opt.rel_tol * std::max(1.0, std::abs(obj))) break;
      prev = obj;
      const Matrix xtw = x.transpose() * w.asDiagonal();
      Eigen::LDLT<Matrix> sys(xtw * x);
      Vector next = sys.solve(xtw * y + tilt);
      if (!next.allFinite()) break;
      beta = std::move(next);
    }
  }
  return beta;
}

// Chooses p linearly independent rows, preferring small |residual|.
inline std::vector<Eigen::Index> initial_vertex(const Matrix& x, const Vector& r) {
  const Eigen::Index n = x.rows(), p = x.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return std::abs(r(a)) < std::abs(r(b)); });
  std::vector<Eigen::Index> chosen;
  Matrix q(p, p);
  for (Eigen::Index i : order) {
    Vector v = x.row(i).transpose();
    const double norm0 = v.norm();
    if (norm0 == 0.0) continue;
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(chosen.size()); ++k) v -= q.col(k).dot(v) * q.col(k);
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(chosen.size()); ++k) v -= q.col(k).dot(v) * q.col(k);
    const double norm = v.norm();
    if (norm > 1e-8 * norm0) {
      q.col(static_cast<Eigen::Index>(chosen.size())) = v / norm;
      chosen.push_back(i);
      if (static_cast<Eigen::Index>(chosen.size()) == p) break;
    }
  }
  if (static_cast<Eigen::Index>(chosen.size()) < p) throw ConditioningError("design is rank deficient");
  return chosen;
}

// Exact finish: simplex pivoting between basic solutions (vertices that
// interpolate p observations) until no edge direction decreases the loss.
inline Vector vertex_descent(const Matrix& x, const Vector& y, double tau, const Vector& start, int max_pivots,
                             int& pivots, bool& optimal) {
  const Eigen::Index n = x.rows(), p = x.cols();
  const double zero_tol = 1e-11 * (1.0 + y.cwiseAbs().maxCoeff());
  std::vector<Eigen::Index> basis = initial_vertex(x, y - x * start);
  std::vector<char> is_basic(static_cast<std::size_t>(n), 0);
  for (auto i : basis) is_basic[static_cast<std::size_t>(i)] = 1;

  auto solve_vertex = [&](Matrix& inv) {
    Matrix xb(p, p);
    Vector yb(p);
    for (Eigen::Index k = 0; k < p; ++k) {
      xb.row(k) = x.row(basis[static_cast<std::size_t>(k)]);
      yb(k) = y(basis[static_cast<std::size_t>(k)]);
    }
    Eigen::FullPivLU<Matrix> lu(xb);
    if (!lu.isInvertible()) throw ConditioningError("singular basic solution");
    inv = lu.inverse();
    return Vector(inv * yb);
  };

  Matrix inv;
  Vector beta = solve_vertex(inv);
  optimal = false;
  struct Breakpoint {
    double t;
    double weight;
    Eigen::Index index;
  };
  std::vector<Breakpoint> bps;
  bps.reserve(static_cast<std::size_t>(n));

  for (pivots = 0; pivots < max_pivots; ++pivots) {
    const Vector r = y - x * beta;
    const Matrix g = x * inv;  // column j: change of fitted values along edge j

    double best = -1e-10;
    Eigen::Index best_j = -1;
    double best_sign = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      for (double s : {1.0, -1.0}) {
        double slope = s > 0 ? (1.0 - tau) : tau;
        for (Eigen::Index i = 0; i < n; ++i) {
          if (is_basic[static_cast<std::size_t>(i)]) continue;
          const double gi = s * g(i, j);
          if (r(i) > zero_tol) slope -= tau * gi;
          else if (r(i) < -zero_tol) slope += (1.0 - tau) * gi;
          else slope += std::max((1.0 - tau) * gi, -tau * gi);
        }
        if (slope < best) {
          best = slope;
          best_j = j;
          best_sign = s;
        }
      }
    }
    if (best_j < 0) {
      optimal = true;
      return beta;
    }

    bps.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (is_basic[static_cast<std::size_t>(i)] || std::abs(r(i)) <= zero_tol) continue;
      const double gi = best_sign * g(i, best_j);
      if (gi == 0.0) continue;
      const double t = r(i) / gi;
      if (t > 0.0) bps.push_back({t, std::abs(gi), i});
    }
    std::sort(bps.begin(), bps.end(), [](const Breakpoint& a, const Breakpoint& b) { return a.t < b.t; });
    double slope = best;
    Eigen::Index entering = -1;
    double step = 0.0;
    for (const auto& bp : bps) {
      slope += bp.weight;
      if (slope >= 0.0) {
        entering = bp.index;
        step = bp.t;
        break;
      }
    }
    if (entering < 0) throw ConditioningError("check-loss objective unbounded along an edge; design degenerate");

    const Eigen::Index leaving = basis[static_cast<std::size_t>(best_j)];
    is_basic[static_cast<std::size_t>(leaving)] = 0;
    is_basic[static_cast<std::size_t>(entering)] = 1;
    basis[static_cast<std::size_t>(best_j)] = entering;
    beta = solve_vertex(inv);
  }
  return beta;
}

}  // namespace detail

/// Linear quantile regression: minimizes sum_i rho_tau(y_i - b0 - x_i^T b).
///
/// Smoothed reweighted least squares brings the iterate close to the
/// optimum; simplex pivoting over basic solutions then lands on an exact
/// minimizer, which also gives the residual-sign quantile property.
inline QrSolution solve_qr(const Matrix& design, const Vector& response, double tau, bool fit_intercept = true,
                           const QrOptions& opt = {}) {
  QuantileSpec{tau};
  if (design.rows() != response.size()) {
    throw ShapeError("design has " + std::to_string(design.rows()) + " rows but response has " +
                     std::to_string(response.size()));
  }
  const Matrix x = detail::with_intercept(design, fit_intercept);
  const Eigen::Index n = x.rows(), p = x.cols();
  if (p == 0) throw ShapeError("design has no columns and no intercept");
  if (n < p) throw ConditioningError("need at least as many observations as coefficients");
  if (!x.allFinite() || !response.allFinite()) throw DomainError("non-finite values in quantile regression input");

  Eigen::ColPivHouseholderQR<Matrix> rank_check(x);
  rank_check.setThreshold(1e-12);
  if (rank_check.rank() < p) {
    throw ConditioningError("design is rank deficient (rank " + std::to_string(rank_check.rank()) + " < " +
                            std::to_string(p) + ")");
  }

  int iterations = 0;
  const Vector start = detail::smoothed_irls(x, response, tau, opt, iterations);
  int pivots = 0;
  bool optimal = false;
  const int max_pivots = opt.max_pivots > 0 ? opt.max_pivots : static_cast<int>(50 * (n + p));
  const Vector beta = detail::vertex_descent(x, response, tau, start, max_pivots, pivots, optimal);
  const double objective = check_loss_sum(response - x * beta, tau);
  QrSolution sol = detail::unpack(beta, fit_intercept, objective, iterations + pivots, optimal);
  if (!optimal) throw ConvergenceError("quantile regression did not reach an optimal vertex", sol);
  return sol;
}

/// Exhaustive reference solver: every basic solution (p observations fitted
/// exactly, p counting the intercept) is tried and the best one kept.
inline QrSolution qr_oracle(const Matrix& design, const Vector& response, double tau, bool fit_intercept = true) {
  QuantileSpec{tau};
  if (design.rows() != response.size()) throw ShapeError("design/response row mismatch");
  if (design.rows() > 200 || design.cols() > 6) {
    throw SizeError("oracle limited to n <= 200 and p <= 6, got n = " + std::to_string(design.rows()) +
                    ", p = " + std::to_string(design.cols()));
  }
  const Matrix x = detail::with_intercept(design, fit_intercept);
  const Eigen::Index n = x.rows(), p = x.cols();
  if (n < p || p == 0) throw ConditioningError("not enough observations for the oracle");

  double combos = 1.0;
  for (Eigen::Index k = 0; k < p; ++k) combos = combos * static_cast<double>(n - k) / static_cast<double>(k + 1);
  if (combos > 5e7) throw SizeError("oracle would enumerate " + std::to_string(combos) + " subsets");

  std::vector<Eigen::Index> idx(static_cast<std::size_t>(p));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Matrix xb(p, p);
  Vector yb(p);
  double best = std::numeric_limits<double>::infinity();
  Vector best_beta;
  std::int64_t visited = 0;
  while (true) {
    ++visited;
    for (Eigen::Index k = 0; k < p; ++k) {
      xb.row(k) = x.row(idx[static_cast<std::size_t>(k)]);
      yb(k) = response(idx[static_cast<std::size_t>(k)]);
    }
    Eigen::FullPivLU<Matrix> lu(xb);
    if (lu.isInvertible()) {
      const Vector beta = lu.solve(yb);
      const double obj = check_loss_sum(response - x * beta, tau);
      if (obj < best) {
        best = obj;
        best_beta = beta;
      }
    }
    // Next combination in lexicographic order.
    Eigen::Index k = p - 1;
    while (k >= 0 && idx[static_cast<std::size_t>(k)] == n - p + k) --k;
    if (k < 0) break;
    ++idx[static_cast<std::size_t>(k)];
    for (Eigen::Index j = k + 1; j < p; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
  if (best_beta.size() == 0) throw ConditioningError("no nonsingular basic solution");
  return detail::unpack(best_beta, fit_intercept, best, static_cast<int>(visited), true);
}

/// Loss driving direction extraction and the final fit.
enum class Loss { Quantile, Squared };

/// Quantile covariance of y with z: the slope of the tau-quantile regression
/// of y on (z - mean z) / var z. For standardized z this is the plain slope.
inline double quantile_covariance(const Vector& y, const Vector& z, double tau) {
  if (y.size() != z.size()) throw ShapeError("quantile_covariance: length mismatch");
  const Eigen::Index n = z.size();
  if (n < 3) throw ShapeError("quantile_covariance needs at least 3 observations");
  const double mean = z.mean();
  const double var = (z.array() - mean).square().sum() / static_cast<double>(n - 1);
  if (!(var > 1e-24)) throw DegenerateError("quantile_covariance: predictor column is constant");
  const Matrix u = ((z.array() - mean) / var).matrix();
  return solve_qr(u, y, tau, true).slopes(0);
}

inline double sample_covariance(const Vector& a, const Vector& b) {
  const auto n = static_cast<double>(a.size());
  return ((a.array() - a.mean()) * (b.array() - b.mean())).sum() / (n - 1.0);
}

struct DirectionMatrix {
  Matrix c;                       // K_Z x K_Y, unit or zero columns
  std::vector<bool> degenerate;   // per response column
  bool all_degenerate() const { return std::all_of(degenerate.begin(), degenerate.end(), [](bool d) { return d; }); }
};

/// Threshold below which a raw direction column counts as zero.
inline constexpr double kDegenerateDirectionNorm = 1e-10;

/// Entry (j, k) is the covariance (quantile or ordinary) between response
/// column k and predictor column j; columns are then normalized.
inline DirectionMatrix covariance_directions(const Matrix& omega, const Matrix& z, double tau, Loss loss) {
  if (omega.rows() != z.rows()) throw ShapeError("covariance_directions: row mismatch");
  const Eigen::Index kz = z.cols(), ky = omega.cols();
  DirectionMatrix out{Matrix::Zero(kz, ky), std::vector<bool>(static_cast<std::size_t>(ky), false)};
  const auto n = static_cast<double>(z.rows());
  for (Eigen::Index j = 0; j < kz; ++j) {
    const Vector zj = z.col(j);
    const double var = (zj.array() - zj.mean()).square().sum() / (n - 1.0);
    if (!(var > 1e-24)) continue;  // exhausted column carries no direction
    for (Eigen::Index k = 0; k < ky; ++k) {
      out.c(j, k) = loss == Loss::Quantile ? quantile_covariance(omega.col(k), zj, tau)
                                           : sample_covariance(omega.col(k), zj);
    }
  }
  for (Eigen::Index k = 0; k < ky; ++k) {
    const double norm = out.c.col(k).norm();
    if (norm < kDegenerateDirectionNorm) {
      out.c.col(k).setZero();
      out.degenerate[static_cast<std::size_t>(k)] = true;
    } else {
      out.c.col(k) /= norm;
    }
  }
  return out;
}

/// Quantile-covariance direction matrix (K_Z x K_Y) with unit columns.
inline DirectionMatrix quantile_cov_matrix(const Matrix& omega, const Matrix& z, double tau) {
  QuantileSpec{tau};
  return covariance_directions(omega, z, tau, Loss::Quantile);
}

}  // namespace fpqr
