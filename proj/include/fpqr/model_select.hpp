#pragma once

// Number-of-components selection by BIC and forward stepwise selection of
// functional predictors.

#include <cmath>
#include <limits>
#include <vector>

#include "fpqr/fpqr.hpp"

namespace fpqr {

/// One record per evaluated candidate.
struct SelectionTrace {
  struct Entry {
    int step = 0;
    std::vector<std::size_t> predictors;  // 0-based indices
    int h = 0;
    double bic = 0.0;
  };
  std::vector<Entry> entries;
  /// exp(BIC_best_new - BIC_current) per step after the first, i.e. the
  /// ratio of the criteria on the positive exp scale.
  std::vector<double> step_ratios;
  std::vector<std::size_t> chosen_predictors;
  int chosen_h = 0;
};

struct ComponentSelection {
  int h = 0;
  SelectionTrace trace;
  FpqrFit fit;
};

struct ForwardSelection {
  std::vector<std::size_t> indices;  // selection order, 0-based
  SelectionTrace trace;
};

/// L2 norm over t of sum_i loss(residual_i(t)), trapezoid rule on the grid.
/// The loss is the check loss, or the squared residual for the FPLS variant.
inline double residual_loss_norm(const Matrix& residuals, std::span<const double> grid, double tau, Loss loss) {
  const Vector w = trapezoid_weights(grid);
  double acc = 0.0;
  for (Eigen::Index l = 0; l < residuals.cols(); ++l) {
    double f = 0.0;
    for (Eigen::Index i = 0; i < residuals.rows(); ++i) {
      const double r = residuals(i, l);
      f += loss == Loss::Quantile ? check_loss(r, tau) : r * r;
    }
    acc += w(l) * f * f;
  }
  return std::sqrt(acc);
}

/// ln(norm) + penalty; -infinity flags a perfect fit.
inline double bic_value(double norm, double penalty) {
  if (!(norm > 0.0)) return -std::numeric_limits<double>::infinity();
  return std::log(norm) + penalty;
}

inline Matrix training_residuals(const ExpandedData& d, const FpqrFit& fit) {
  return d.response_values - fit.response_coefs(fit.fitted_omega) * d.response_eval.transpose();
}

/// BIC(h) = ln || sum_i rho_tau(resid_i) ||_{L2} + h ln n.
inline double bic_components(const FunctionalSample& y, const std::vector<FunctionalSample>& xs, double tau, int h,
                             const FitOptions& opt = {}, Loss loss = Loss::Quantile) {
  if (h < 1) throw DomainError("h must be at least 1");
  const ExpandedData d = expand(y, xs, opt);
  const FpqrFit fit = fit_expanded(d, tau, loss, h);
  const double norm = residual_loss_norm(training_residuals(d, fit), d.response_grid.points(), tau, loss);
  return bic_value(norm, h * std::log(static_cast<double>(d.n())));
}

/// Fits h = 1..h_max from one extraction and keeps the BIC minimizer
/// (ties go to the smaller h).
inline ComponentSelection select_components_expanded(const ExpandedData& d, double tau, Loss loss, int h_max) {
  if (h_max < 1) throw DomainError("h_max must be at least 1");
  const PqrState state = extract_components(d.zo.omega, d.zo.z, tau, h_max, loss);
  ComponentSelection out;
  if (state.h == 0) {
    const FinalFit fin = finalize(d.zo.omega, state, tau, 0, loss);
    out.fit = assemble_fit(d, state, fin, 0, tau, loss);
    return out;
  }
  const double log_n = std::log(static_cast<double>(d.n()));
  double best = std::numeric_limits<double>::infinity();
  double norm = 0.0;
  for (int h = 1; h <= state.h; ++h) {
    const FinalFit fin = finalize(d.zo.omega, state, tau, h, loss);
    FpqrFit fit = assemble_fit(d, state, fin, h, tau, loss);
    norm = residual_loss_norm(training_residuals(d, fit), d.response_grid.points(), tau, loss);
    const double bic = bic_value(norm, h * log_n);
    out.trace.entries.push_back({h, {}, h, bic});
    if (bic < best || out.h == 0) {
      best = bic;
      out.h = h;
      out.fit = std::move(fit);
    }
  }
  // Past an early stop, larger h refits the same model with a larger penalty.
  for (int h = state.h + 1; h <= h_max; ++h) out.trace.entries.push_back({h, {}, h, bic_value(norm, h * log_n)});
  // The stored state keeps every extracted stage; trim it to the chosen h.
  out.fit.state.components.resize(static_cast<std::size_t>(out.h));
  out.fit.state.directions.resize(static_cast<std::size_t>(out.h));
  out.fit.state.rotation = Matrix(out.fit.state.rotation.leftCols(out.h * state.k_y));
  out.fit.state.h = out.h;
  out.trace.chosen_h = out.h;
  return out;
}

inline ComponentSelection select_n_components(const FunctionalSample& y, const std::vector<FunctionalSample>& xs,
                                              double tau, int h_max, const FitOptions& opt = {},
                                              Loss loss = Loss::Quantile) {
  return select_components_expanded(expand(y, xs, opt), tau, loss, h_max);
}

/// Expanded data restricted to a subset of predictors, in the given order.
inline ExpandedData restrict_predictors(const ExpandedData& full, const std::vector<std::size_t>& which) {
  if (which.empty()) throw ShapeError("predictor subset is empty");
  ExpandedData d;
  d.response_basis = full.response_basis;
  d.response_grid = full.response_grid;
  d.response_values = full.response_values;
  d.response_eval = full.response_eval;
  d.zo.omega = full.zo.omega;
  std::vector<BasisSystem> bases;
  int width = 0;
  for (std::size_t m : which) {
    if (m >= full.predictor_bases.size()) throw DomainError("predictor index out of range");
    bases.push_back(full.predictor_bases[m]);
    d.predictor_grids.push_back(full.predictor_grids[m]);
    width += full.predictor_bases[m].n_basis();
  }
  d.zo.z.resize(full.n(), width);
  int col = 0;
  for (std::size_t m : which) {
    const int k = full.predictor_bases[m].n_basis();
    d.zo.z.middleCols(col, k) = full.zo.z.middleCols(full.predictor_bases.offset(m), k);
    col += k;
  }
  d.predictor_bases = CompositeBasis(std::move(bases));
  return d;
}

/// Acceptance margin of the stepwise rule: a candidate must lower the
/// criterion by ln(1/ratio), i.e. improve exp(BIC) by the given fraction.
inline double ratio_rule_margin(double ratio_threshold) { return std::log(ratio_threshold); }

/// Forward stepwise search with one component per fit and the criterion
/// BIC(M) = ln || sum_i rho(resid_i) ||_{L2} + |M| ln(n) / (2n).
/// A predictor is added only when BIC_new < BIC_current + ln(ratio_threshold).
inline ForwardSelection forward_select_expanded(const ExpandedData& full, double tau, Loss loss,
                                                double ratio_threshold = 0.9) {
  if (!(ratio_threshold > 0.0 && ratio_threshold <= 1.0)) throw ConfigError("ratio threshold must lie in (0, 1]");
  const std::size_t m_total = full.predictor_bases.size();
  const double n = static_cast<double>(full.n());
  const double per_predictor = std::log(n) / (2.0 * n);
  const double margin = ratio_rule_margin(ratio_threshold);

  auto criterion = [&](const std::vector<std::size_t>& set) {
    const ExpandedData d = restrict_predictors(full, set);
    const FpqrFit fit = fit_expanded(d, tau, loss, 1);
    const double norm = residual_loss_norm(training_residuals(d, fit), d.response_grid.points(), tau, loss);
    return bic_value(norm, static_cast<double>(set.size()) * per_predictor);
  };

  ForwardSelection out;
  std::vector<bool> used(m_total, false);
  double current = std::numeric_limits<double>::infinity();
  for (int step = 1; out.indices.size() < m_total; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_m = m_total;
    for (std::size_t m = 0; m < m_total; ++m) {
      if (used[m]) continue;
      std::vector<std::size_t> set = out.indices;
      set.push_back(m);
      const double bic = criterion(set);
      out.trace.entries.push_back({step, set, 1, bic});
      if (bic < best || best_m == m_total) {
        best = bic;
        best_m = m;
      }
    }
    if (step == 1) {
      out.indices.push_back(best_m);
      used[best_m] = true;
      current = best;
      continue;
    }
    out.trace.step_ratios.push_back(std::exp(best - current));
    if (!(best < current + margin)) break;
    out.indices.push_back(best_m);
    used[best_m] = true;
    current = best;
  }
  out.trace.chosen_predictors = out.indices;
  out.trace.chosen_h = 1;
  return out;
}

inline ForwardSelection forward_select(const FunctionalSample& y, const std::vector<FunctionalSample>& xs, double tau,
                                       double ratio_threshold = 0.9, const FitOptions& opt = {},
                                       Loss loss = Loss::Quantile) {
  return forward_select_expanded(expand(y, xs, opt), tau, loss, ratio_threshold);
}

}  // namespace fpqr

namespace fpqr::detail {

inline FpqrFit fit_with_options(const FunctionalSample& y, const std::vector<FunctionalSample>& xs, double tau,
                                Loss loss, const FitOptions& opt) {
  const ExpandedData d = expand(y, xs, opt);
  if (opt.components != kAutoComponents) {
    if (opt.components < 1) throw ConfigError("components must be a positive integer or auto");
    return fit_expanded(d, tau, loss, opt.components);
  }
  const int h_max = opt.h_max > 0 ? opt.h_max : default_h_max(d.n(), d.response_basis.n_basis());
  return select_components_expanded(d, tau, loss, h_max).fit;
}

}  // namespace fpqr::detail
