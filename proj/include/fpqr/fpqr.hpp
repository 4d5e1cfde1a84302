#pragma once

// Function-on-function partial quantile regression.
//
// Curves are projected onto B-spline bases; with Gram matrices Phi (response)
// and Psi (predictors, block diagonal) the coefficient matrices are mapped to
// Omega = B Phi^{1/2} and Z = A Psi^{1/2}, where the functional model becomes
// a multivariate one. Components are extracted stage by stage from quantile
// covariance directions with least-squares deflation of Z; the final
// quantile regression of Omega on the retained components gives Theta, from
// which the coefficient surfaces follow as Psi^{-1/2} Theta Phi^{-1/2}.

#include <Eigen/Dense>

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fpqr/basis.hpp"
#include "fpqr/error.hpp"
#include "fpqr/qr.hpp"

namespace fpqr {

struct ZoPair {
  Matrix omega;  // n x K_Y
  Matrix z;      // n x sum K_m
};

/// Maps basis coefficients into the Gram-weighted coordinates
/// Omega = B Phi^{1/2}, Z = [A_1 ... A_M] Psi^{1/2}.
inline ZoPair assemble_zo(const FunctionalSample& y, const std::vector<FunctionalSample>& xs,
                          const BasisSystem& y_basis, const CompositeBasis& x_bases) {
  if (xs.empty()) throw ShapeError("at least one functional predictor is required");
  if (xs.size() != x_bases.size()) {
    throw ShapeError("got " + std::to_string(xs.size()) + " predictors but " + std::to_string(x_bases.size()) + " bases");
  }
  const Eigen::Index n = y.n();
  Matrix a(n, x_bases.total_basis());
  for (std::size_t m = 0; m < xs.size(); ++m) {
    if (xs[m].n() != n) {
      throw ShapeError("predictor " + std::to_string(m + 1) + " has " + std::to_string(xs[m].n()) +
                       " curves, response has " + std::to_string(n));
    }
    a.middleCols(x_bases.offset(m), x_bases[m].n_basis()) = fit_coefficients(xs[m], x_bases[m]).coefs;
  }
  const Matrix b = fit_coefficients(y, y_basis).coefs;
  return ZoPair{b * y_basis.gram_half(), a * x_bases.gram_half()};
}

/// Extraction bookkeeping. Every component is a linear image of the
/// standardized predictors: scores() == standardize(Z) * rotation.
struct PqrState {
  std::vector<Matrix> directions;  // per stage, K_Z x K_Y with unit (or zero) columns
  std::vector<Matrix> components;  // per stage, n x K_Y
  Matrix rotation;                 // K_Z x (h K_Y)
  RowVector z_mean;
  RowVector z_scale;
  /// Orthonormal basis (K_Z x r) of the row space of the centered raw Z.
  Matrix z_rowspace;
  Eigen::Index n_obs = 0;
  Eigen::Index k_y = 0;
  int h = 0;
  bool stopped_early = false;

  /// All retained components side by side, stage-major.
  Matrix scores(int stages = -1) const {
    if (stages < 0) stages = h;
    const Eigen::Index w = k_y;
    Matrix t(n_obs, stages * w);
    for (int s = 0; s < stages; ++s) t.middleCols(s * w, w) = components[static_cast<std::size_t>(s)];
    return t;
  }

  Matrix standardize(const Matrix& z) const {
    return ((z.rowwise() - z_mean).array().rowwise() / z_scale.array()).matrix();
  }
};

/// Relative singular value threshold for the row space of the centered predictors.
inline constexpr double kRowspaceTol = 1e-9;

/// Runs up to `stages` rounds of direction finding and deflation.
///
/// The response side is never deflated. If every direction column of a stage
/// degenerates (no covariance left to extract), extraction stops early with
/// `stopped_early` set and `h` below the requested count.
inline PqrState extract_components(const Matrix& omega, const Matrix& z, double tau, int stages,
                                   Loss loss = Loss::Quantile) {
  if (stages < 1) throw DomainError("number of components must be at least 1");
  if (omega.rows() != z.rows()) throw ShapeError("omega and z row counts differ");
  const Eigen::Index n = z.rows(), kz = z.cols(), ky = omega.cols();
  if (n <= ky * stages + 1) {
    throw ConditioningError("n = " + std::to_string(n) + " too small for " + std::to_string(stages) + " stages of " +
                            std::to_string(ky) + " components");
  }

  PqrState st;
  st.n_obs = n;
  st.k_y = ky;
  st.z_mean = z.colwise().mean();
  st.z_scale.resize(kz);
  for (Eigen::Index j = 0; j < kz; ++j) {
    const double sd = std::sqrt((z.col(j).array() - st.z_mean(j)).square().sum() / static_cast<double>(n - 1));
    st.z_scale(j) = sd > 1e-12 ? sd : 1.0;
  }
  {
    Eigen::JacobiSVD<Matrix> svd(z.rowwise() - st.z_mean, Eigen::ComputeThinV);
    svd.setThreshold(kRowspaceTol);
    st.z_rowspace = svd.matrixV().leftCols(svd.rank());
  }
  Matrix current = st.standardize(z);
  Matrix to_current = Matrix::Identity(kz, kz);  // current = standardized Z * to_current
  st.rotation.resize(kz, 0);

  for (int s = 0; s < stages; ++s) {
    DirectionMatrix dir = covariance_directions(omega, current, tau, loss);
    if (dir.all_degenerate()) {
      st.stopped_early = true;
      break;
    }
    Matrix t = current * dir.c;
    const Matrix r_block = to_current * dir.c;

    // Least-squares deflation of the current predictors on this stage's
    // components; minimum-norm solve tolerates collinear direction columns.
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(t);
    const Matrix w = cod.solve(current);
    current -= t * w;
    to_current -= r_block * w;

    st.directions.push_back(std::move(dir.c));
    st.components.push_back(std::move(t));
    st.rotation.conservativeResize(kz, st.rotation.cols() + ky);
    st.rotation.rightCols(ky) = r_block;
    ++st.h;
  }
  return st;
}

struct FinalFit {
  Matrix theta;            // K_Z x K_Y, acts on (z - z_mean)
  Vector intercept;        // K_Y
  Matrix gamma;            // (h K_Y) x K_Y, acts on the component scores
  Matrix fitted_omega;     // n x K_Y
  double loss_value = 0.0;
};

/// Relative pivot threshold below which a component column counts as
/// linearly dependent on the ones already kept.
inline constexpr double kComponentRankTol = 1e-9;

/// Indices (ascending) of a maximal linearly independent subset of the
/// columns, chosen by column-pivoted QR. Zero columns from degenerate
/// directions, and components that repeat the span of others (a predictor
/// space of lower rank than K_Y), are never selected.
inline std::vector<Eigen::Index> independent_columns(const Matrix& t) {
  std::vector<Eigen::Index> live;
  if (t.cols() == 0 || t.cwiseAbs().maxCoeff() == 0.0) return live;
  Eigen::ColPivHouseholderQR<Matrix> qr(t);
  qr.setThreshold(kComponentRankTol);
  const auto perm = qr.colsPermutation().indices();
  for (Eigen::Index r = 0; r < qr.rank(); ++r) live.push_back(perm(r));
  std::sort(live.begin(), live.end());
  return live;
}

/// Regresses each response column on the first `stages` stages of components
/// (quantile or least squares, with intercept) and maps the slopes back to
/// the raw centered Z coordinates. Dependent component columns get zero
/// weight; the fitted span is unchanged. When Z is rank deficient, Theta is
/// projected onto its row space.
inline FinalFit finalize(const Matrix& omega, const PqrState& state, double tau, int stages = -1,
                         Loss loss = Loss::Quantile) {
  if (stages < 0) stages = state.h;
  if (stages > state.h) throw DomainError("requested more stages than were extracted");
  const Eigen::Index n = omega.rows(), ky = omega.cols(), kz = state.rotation.rows();
  const Matrix t = state.scores(stages);

  const std::vector<Eigen::Index> live = independent_columns(t);
  Matrix design(n, static_cast<Eigen::Index>(live.size()));
  for (std::size_t c = 0; c < live.size(); ++c) design.col(static_cast<Eigen::Index>(c)) = t.col(live[c]);

  FinalFit out;
  out.gamma = Matrix::Zero(t.cols(), ky);
  out.intercept.resize(ky);
  out.loss_value = 0.0;
  for (Eigen::Index k = 0; k < ky; ++k) {
    const Vector target = omega.col(k);
    Vector slopes;
    double icpt = 0.0;
    if (loss == Loss::Quantile) {
      const QrSolution s = solve_qr(design, target, tau, true);
      slopes = s.slopes;
      icpt = s.intercept;
      out.loss_value += s.objective;
    } else {
      const Matrix x = detail::with_intercept(design, true);
      Eigen::ColPivHouseholderQR<Matrix> qr(x);
      qr.setThreshold(1e-12);
      if (qr.rank() < x.cols()) throw ConditioningError("component design is rank deficient");
      const Vector coef = qr.solve(target);
      icpt = coef(0);
      slopes = coef.tail(coef.size() - 1);
      out.loss_value += (target - x * coef).squaredNorm();
    }
    out.intercept(k) = icpt;
    for (std::size_t c = 0; c < live.size(); ++c) out.gamma(live[c], k) = slopes(static_cast<Eigen::Index>(c));
  }
  const Matrix r = state.rotation.leftCols(t.cols());
  out.theta = state.z_scale.cwiseInverse().asDiagonal() * r * out.gamma;
  if (t.cols() == 0) out.theta = Matrix::Zero(kz, ky);
  // Directions outside the predictors' row space never reach a fitted value;
  // dropping them gives the minimum-norm surfaces with the same fit.
  const Matrix& v = state.z_rowspace;
  if (v.cols() < kz) out.theta = v * (v.transpose() * out.theta);
  out.fitted_omega = (t * out.gamma).rowwise() + out.intercept.transpose();
  return out;
}

/// Sentinel for "choose the number of components by BIC".
inline constexpr int kAutoComponents = 0;

struct FitOptions {
  int order = 4;
  int response_basis = 10;
  /// One entry per predictor, or a single entry applied to all; empty means 10.
  std::vector<int> predictor_basis;
  /// Fixed number of stages, or kAutoComponents.
  int components = kAutoComponents;
  /// Upper bound for the automatic search; 0 selects min(10, (n - 2) / K_Y).
  int h_max = 0;
};

inline int default_h_max(Eigen::Index n, int k_y) {
  return static_cast<int>(std::max<Eigen::Index>(1, std::min<Eigen::Index>(10, (n - 2) / k_y)));
}

/// Basis-expanded training data shared by every model fitted on it.
struct ExpandedData {
  BasisSystem response_basis;
  CompositeBasis predictor_bases;
  Grid response_grid;
  std::vector<Grid> predictor_grids;
  Matrix response_values;
  Matrix response_eval;  // response basis evaluated on the response grid
  ZoPair zo;

  Eigen::Index n() const { return zo.omega.rows(); }
};

inline std::vector<int> resolve_predictor_basis(const FitOptions& opt, std::size_t m) {
  if (opt.predictor_basis.empty()) return std::vector<int>(m, 10);
  if (opt.predictor_basis.size() == 1) return std::vector<int>(m, opt.predictor_basis.front());
  if (opt.predictor_basis.size() != m) {
    throw ConfigError("got " + std::to_string(opt.predictor_basis.size()) + " predictor basis sizes for " +
                      std::to_string(m) + " predictors");
  }
  return opt.predictor_basis;
}

inline Interval grid_domain(const Grid& g) { return {g.front(), g.back()}; }

inline ExpandedData expand(const FunctionalSample& y, const std::vector<FunctionalSample>& xs, const FitOptions& opt) {
  if (xs.empty()) throw ShapeError("at least one functional predictor is required");
  ExpandedData d;
  d.response_basis = build_bspline_basis(grid_domain(y.grid()), opt.response_basis, opt.order);
  const std::vector<int> kx = resolve_predictor_basis(opt, xs.size());
  std::vector<BasisSystem> bases;
  for (std::size_t m = 0; m < xs.size(); ++m) {
    bases.push_back(build_bspline_basis(grid_domain(xs[m].grid()), kx[m], opt.order));
    d.predictor_grids.push_back(xs[m].grid());
  }
  d.predictor_bases = CompositeBasis(std::move(bases));
  d.response_grid = y.grid();
  d.response_values = y.values();
  d.response_eval = eval_basis(d.response_basis, y.grid());
  d.zo = assemble_zo(y, xs, d.response_basis, d.predictor_bases);
  return d;
}

/// A fitted model; holds everything prediction needs, and no training data.
struct FpqrFit {
  double tau = 0.5;
  Loss loss = Loss::Quantile;
  BasisSystem response_basis;
  CompositeBasis predictor_bases;
  Grid response_grid;
  std::vector<Grid> predictor_grids;
  PqrState state;
  int h = 0;
  Matrix gamma;
  Matrix theta;             // K_Z x K_Y
  Vector intercept_coefs;   // K_Y, in Omega coordinates
  std::vector<Matrix> beta_coefs;  // per predictor, K_m x K_Y
  Matrix fitted_omega;
  double loss_value = 0.0;

  /// Psi^{-1/2} Theta Phi^{-1/2}: coefficients of the surfaces in the tensor basis.
  Matrix surface_coefs() const {
    return predictor_bases.gram_half_inv() * theta * response_basis.gram_half_inv();
  }

  /// Response-basis coefficients of fitted curves from Omega rows.
  Matrix response_coefs(const Matrix& omega_rows) const { return omega_rows * response_basis.gram_half_inv(); }
};

inline FpqrFit assemble_fit(const ExpandedData& d, const PqrState& state, const FinalFit& fin, int h, double tau,
                            Loss loss) {
  FpqrFit f;
  f.tau = tau;
  f.loss = loss;
  f.response_basis = d.response_basis;
  f.predictor_bases = d.predictor_bases;
  f.response_grid = d.response_grid;
  f.predictor_grids = d.predictor_grids;
  f.state = state;
  f.h = h;
  f.gamma = fin.gamma;
  f.theta = fin.theta;
  f.intercept_coefs = fin.intercept;
  f.fitted_omega = fin.fitted_omega;
  f.loss_value = fin.loss_value;
  const Matrix all = f.surface_coefs();
  for (std::size_t m = 0; m < d.predictor_bases.size(); ++m) {
    f.beta_coefs.emplace_back(all.middleRows(d.predictor_bases.offset(m), d.predictor_bases[m].n_basis()));
  }
  return f;
}

/// Fits with a fixed number of stages on already expanded data.
inline FpqrFit fit_expanded(const ExpandedData& d, double tau, Loss loss, int h) {
  if (loss == Loss::Quantile) QuantileSpec{tau};
  const PqrState state = extract_components(d.zo.omega, d.zo.z, tau, h, loss);
  const FinalFit fin = finalize(d.zo.omega, state, tau, state.h, loss);
  return assemble_fit(d, state, fin, state.h, tau, loss);
}

struct SelectionTrace;
struct ComponentSelection;
inline ComponentSelection select_components_expanded(const ExpandedData& d, double tau, Loss loss, int h_max);

namespace detail {

inline FpqrFit fit_with_options(const FunctionalSample& y, const std::vector<FunctionalSample>& xs, double tau,
                                Loss loss, const FitOptions& opt);

}  // namespace detail

/// tau-th conditional quantile model of y given the predictors.
inline FpqrFit fit_fpqr(const FunctionalSample& y, const std::vector<FunctionalSample>& xs, double tau,
                        const FitOptions& opt = {}) {
  QuantileSpec{tau};
  return detail::fit_with_options(y, xs, tau, Loss::Quantile, opt);
}

/// Squared-loss counterpart (functional PLS): ordinary covariance directions
/// and least-squares final regression.
inline FpqrFit fit_fpls(const FunctionalSample& y, const std::vector<FunctionalSample>& xs, const FitOptions& opt = {}) {
  return detail::fit_with_options(y, xs, 0.5, Loss::Squared, opt);
}

/// Projects predictor curves into the fitted model's Z coordinates.
inline Matrix predictor_z(const FpqrFit& fit, const std::vector<FunctionalSample>& xs_new) {
  const CompositeBasis& bases = fit.predictor_bases;
  if (xs_new.size() != bases.size()) {
    throw ShapeError("model has " + std::to_string(bases.size()) + " predictors, got " + std::to_string(xs_new.size()));
  }
  const Eigen::Index n = xs_new.front().n();
  Matrix a(n, bases.total_basis());
  for (std::size_t m = 0; m < xs_new.size(); ++m) {
    if (xs_new[m].n() != n) throw ShapeError("predictor " + std::to_string(m + 1) + " has a different curve count");
    const Grid& g = xs_new[m].grid();
    for (std::size_t l = 0; l < g.size(); ++l) {
      if (!bases[m].contains(g[l])) {
        throw DomainError("predictor " + std::to_string(m + 1) + " grid column " + std::to_string(l + 1) + " (" +
                          std::to_string(g[l]) + ") outside the fitted domain");
      }
    }
    a.middleCols(bases.offset(m), bases[m].n_basis()) = fit_coefficients(xs_new[m], bases[m]).coefs;
  }
  return a * bases.gram_half();
}

/// Predicted quantile curves, one row per new observation, on t_grid.
inline Matrix predict(const FpqrFit& fit, const std::vector<FunctionalSample>& xs_new, std::span<const double> t_grid) {
  const Matrix z = predictor_z(fit, xs_new);
  const Matrix omega = ((z.rowwise() - fit.state.z_mean) * fit.theta).rowwise() + fit.intercept_coefs.transpose();
  return fit.response_coefs(omega) * eval_basis(fit.response_basis, t_grid).transpose();
}

inline Matrix predict(const FpqrFit& fit, const std::vector<FunctionalSample>& xs_new) {
  return predict(fit, xs_new, fit.response_grid.points());
}

/// In-sample fitted curves from the final regression (intercept + T Gamma).
inline Matrix fitted_curves(const FpqrFit& fit, std::span<const double> t_grid) {
  return fit.response_coefs(fit.fitted_omega) * eval_basis(fit.response_basis, t_grid).transpose();
}

/// beta_m(s, t) on a grid: Psi_m(s)^T B_m Phi(t).
inline Matrix coefficient_surface(const FpqrFit& fit, std::size_t m, std::span<const double> s_grid,
                                  std::span<const double> t_grid) {
  if (m >= fit.beta_coefs.size()) {
    throw DomainError("predictor index " + std::to_string(m) + " out of range (model has " +
                      std::to_string(fit.beta_coefs.size()) + ")");
  }
  return eval_basis(fit.predictor_bases[m], s_grid) * fit.beta_coefs[m] *
         eval_basis(fit.response_basis, t_grid).transpose();
}

/// Intercept function: the prediction at the training mean of the predictors.
inline Vector intercept_curve(const FpqrFit& fit, std::span<const double> t_grid) {
  return eval_basis(fit.response_basis, t_grid) * fit.response_coefs(fit.intercept_coefs.transpose()).transpose();
}

}  // namespace fpqr

#include "fpqr/model_select.hpp"
