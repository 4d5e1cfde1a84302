#pragma once

// Case-sampling bootstrap bands for predicted quantile curves, and the
// MSPE / coverage-deviance / interval-score metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "fpqr/fpqr.hpp"

namespace fpqr {

struct IntervalBand {
  std::vector<double> t_grid;
  Matrix lower;  // n_test x L
  Matrix upper;  // n_test x L
  double alpha = 0.05;
  int n_boot = 0;
};

struct MetricReport {
  double mspe = 0.0;
  double cpd = 0.0;
  double score = 0.0;
};

struct BootstrapOptions {
  int n_boot = 100;
  double alpha = 0.05;
  std::uint64_t seed = 1;
};

namespace detail {

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

/// Empirical quantile with linear interpolation between order statistics.
inline double interpolated_quantile(std::vector<double>& values, double p) {
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

inline ExpandedData resample_rows(const ExpandedData& d, const std::vector<Eigen::Index>& rows) {
  ExpandedData r = d;
  const auto n = static_cast<Eigen::Index>(rows.size());
  r.zo.omega.resize(n, d.zo.omega.cols());
  r.zo.z.resize(n, d.zo.z.cols());
  r.response_values.resize(n, d.response_values.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = rows[static_cast<std::size_t>(i)];
    r.zo.omega.row(i) = d.zo.omega.row(src);
    r.zo.z.row(i) = d.zo.z.row(src);
    r.response_values.row(i) = d.response_values.row(src);
  }
  return r;
}

}  // namespace detail

/// Fits one model on expanded data, with BIC selection when h is automatic.
inline FpqrFit fit_model(const ExpandedData& d, double tau, Loss loss, const FitOptions& opt) {
  if (opt.components != kAutoComponents) return fit_expanded(d, tau, loss, opt.components);
  const int h_max = opt.h_max > 0 ? opt.h_max : default_h_max(d.n(), d.response_basis.n_basis());
  return select_components_expanded(d, tau, loss, h_max).fit;
}

struct Replicate {
  Matrix prediction;  // n_test x L
  int draws = 0;      // resamples consumed, including redraws
};

/// Bootstrap replicate b. Its random stream depends only on (seed, b,
/// attempt), so replicates can be recomputed in isolation or in any order.
inline Replicate bootstrap_replicate(const ExpandedData& train, const std::vector<FunctionalSample>& xs_test,
                                     double tau, Loss loss, const FitOptions& opt, std::uint64_t seed, int b,
                                     int max_draws) {
  const Eigen::Index n = train.n();
  Replicate rep;
  for (int attempt = 0; attempt < max_draws; ++attempt) {
    ++rep.draws;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(attempt)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
    for (auto& r : rows) r = pick(rng);
    try {
      const FpqrFit fit = fit_model(detail::resample_rows(train, rows), tau, loss, opt);
      rep.prediction = predict(fit, xs_test);
      return rep;
    } catch (const Error&) {
      // Degenerate resample; draw again.
    }
  }
  return rep;
}

/// Pointwise [alpha/2, 1 - alpha/2] bootstrap band for the predicted curves
/// of xs_test. Failed resamples are redrawn, at most 3B draws in total.
inline IntervalBand bootstrap_band(const FunctionalSample& y_train, const std::vector<FunctionalSample>& xs_train,
                                   const std::vector<FunctionalSample>& xs_test, double tau, const FitOptions& opt,
                                   const BootstrapOptions& bopt, Loss loss = Loss::Quantile) {
  if (bopt.n_boot < 20) throw ConfigError("bootstrap needs at least 20 replicates, got " + std::to_string(bopt.n_boot));
  if (!(bopt.alpha > 0.0 && bopt.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (loss == Loss::Quantile) QuantileSpec{tau};
  const ExpandedData train = expand(y_train, xs_train, opt);

  const int cap = 3 * bopt.n_boot;
  int used = 0;
  std::vector<Matrix> preds;
  preds.reserve(static_cast<std::size_t>(bopt.n_boot));
  for (int b = 0; b < bopt.n_boot; ++b) {
    Replicate rep = bootstrap_replicate(train, xs_test, tau, loss, opt, bopt.seed, b, cap - used);
    used += rep.draws;
    if (rep.prediction.size() == 0) {
      throw DegenerateError("bootstrap exhausted " + std::to_string(cap) + " draws before collecting " +
                            std::to_string(bopt.n_boot) + " replicates");
    }
    preds.push_back(std::move(rep.prediction));
  }

  IntervalBand band;
  band.t_grid = y_train.grid().vec();
  band.alpha = bopt.alpha;
  band.n_boot = bopt.n_boot;
  const Eigen::Index rows = preds.front().rows(), cols = preds.front().cols();
  band.lower.resize(rows, cols);
  band.upper.resize(rows, cols);
  std::vector<double> values(preds.size());
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index l = 0; l < cols; ++l) {
      for (std::size_t b = 0; b < preds.size(); ++b) values[b] = preds[b](i, l);
      band.lower(i, l) = detail::interpolated_quantile(values, bopt.alpha / 2.0);
      band.upper(i, l) = detail::interpolated_quantile(values, 1.0 - bopt.alpha / 2.0);
    }
  }
  return band;
}

/// Mean over curves of the trapezoid L2 norm squared of the error.
inline double mspe(const FunctionalSample& y_true, const Matrix& y_pred) {
  detail::check_same_shape(y_true.values(), y_pred, "mspe");
  const Vector w = trapezoid_weights(y_true.grid().points());
  const Matrix err = y_true.values() - y_pred;
  return (err.array().square().matrix() * w).mean();
}

/// (1 - alpha) minus the fraction of (curve, grid point) pairs inside the band.
inline double cpd(const IntervalBand& band, const FunctionalSample& y_true) {
  const Matrix& y = y_true.values();
  detail::check_same_shape(band.lower, y, "cpd");
  detail::check_same_shape(band.upper, y, "cpd");
  const double covered = ((band.lower.array() <= y.array()) && (y.array() <= band.upper.array())).cast<double>().mean();
  return (1.0 - band.alpha) - covered;
}

/// Mean over curves of the grid-averaged (trapezoid) interval score.
inline double interval_score(const IntervalBand& band, const FunctionalSample& y_true) {
  const Matrix& y = y_true.values();
  detail::check_same_shape(band.lower, y, "interval_score");
  detail::check_same_shape(band.upper, y, "interval_score");
  const double k = 2.0 / band.alpha;
  const Eigen::ArrayXXd below = (band.lower.array() - y.array()).max(0.0);
  const Eigen::ArrayXXd above = (y.array() - band.upper.array()).max(0.0);
  const Matrix pointwise = ((band.upper.array() - band.lower.array()) + k * below + k * above).matrix();
  const auto& g = y_true.grid();
  const Vector w = trapezoid_weights(g.points()) / (g.back() - g.front());
  return (pointwise * w).mean();
}

inline MetricReport evaluate_band(const IntervalBand& band, const FunctionalSample& y_true, const Matrix& y_pred) {
  return MetricReport{mspe(y_true, y_pred), cpd(band, y_true), interval_score(band, y_true)};
}

}  // namespace fpqr
