#pragma once

// Synthetic functional data (five predictors, three of which drive the
// response through smooth surfaces) with Ornstein-Uhlenbeck errors, and a
// seeded Monte Carlo harness comparing quantile and least-squares fits.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fpqr/bootstrap.hpp"
#include "fpqr/fpqr.hpp"

namespace fpqr {

enum class ErrorCase { Gaussian = 1, ChiSquare = 2, Contaminated = 3 };

struct OuParams {
  double gamma = 0.0;  // long-run mean
  double theta = 1.0;  // mean reversion rate
  double sigma = 0.5;  // diffusion
};

struct SimConfig {
  int n_train = 100;
  int n_test = 100;
  int grid_size = 100;
  ErrorCase error_case = ErrorCase::Gaussian;
  double tau = 0.5;
  std::uint64_t seed = 1;
  int mc_runs = 20;
  OuParams ou;
  double contamination = 0.10;
  double outlier_mean = 5.0;
  /// Outliers may also fall among test curves; by default only training
  /// curves are contaminated and predictions are scored on clean data.
  bool contaminate_test = false;
  int n_basis = 10;
  int h_max = 0;  // 0: default rule
  double ratio_threshold = 0.9;
  bool selection = true;
  bool bootstrap = false;
  int n_boot = 100;
  double alpha = 0.05;

  void validate() const {
    if (n_train < 50) throw ConfigError("n_train must be at least 50");
    if (n_test < 1) throw ConfigError("n_test must be positive");
    if (grid_size < 4) throw ConfigError("grid needs at least 4 points");
    if (!(contamination >= 0.0 && contamination < 1.0)) throw ConfigError("contamination rate must lie in [0, 1)");
    if (mc_runs < 1) throw ConfigError("mc_runs must be positive");
    if (!(ou.theta > 0.0) || !(ou.sigma > 0.0)) throw ConfigError("OU theta and sigma must be positive");
    QuantileSpec{tau};
  }
};

/// Independent random stream for a (seed, tag...) combination.
inline std::mt19937_64 substream(std::uint64_t seed, std::initializer_list<std::uint32_t> tags) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  words.insert(words.end(), tags.begin(), tags.end());
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

namespace stream_tag {
inline constexpr std::uint32_t predictors = 1;
inline constexpr std::uint32_t errors = 2;
inline constexpr std::uint32_t outliers = 3;
inline constexpr std::uint32_t run = 4;
inline constexpr std::uint32_t bootstrap = 5;
}  // namespace stream_tag

inline constexpr int kNumPredictors = 5;
inline constexpr std::size_t kActivePredictors[] = {0, 1, 4};

/// Five predictors X_m(s) = sum_{j=1}^5 xi_j (sin(j pi s) - cos(j pi s)),
/// xi_j ~ N(0, 4 j^{-3/2}), drawn independently per curve and per m.
inline std::vector<FunctionalSample> gen_predictors(Eigen::Index n, const Grid& grid, std::uint64_t seed) {
  auto rng = substream(seed, {stream_tag::predictors});
  std::normal_distribution<double> normal;
  const auto len = static_cast<Eigen::Index>(grid.size());
  Matrix shapes(5, len);
  for (int j = 1; j <= 5; ++j) {
    for (Eigen::Index l = 0; l < len; ++l) {
      const double s = grid[static_cast<std::size_t>(l)];
      shapes(j - 1, l) = std::sin(j * std::numbers::pi * s) - std::cos(j * std::numbers::pi * s);
    }
  }
  Vector sd(5);
  for (int j = 1; j <= 5; ++j) sd(j - 1) = std::sqrt(4.0 * std::pow(j, -1.5));

  std::vector<FunctionalSample> xs;
  for (int m = 0; m < kNumPredictors; ++m) {
    Matrix xi(n, 5);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < 5; ++j) xi(i, j) = sd(j) * normal(rng);
    }
    xs.emplace_back(grid, xi * shapes);
  }
  return xs;
}

/// The five coefficient surfaces, m = 1..5.
inline double beta_surface(int m, double s, double t) {
  using std::numbers::pi;
  switch (m) {
    case 1: return 2.0 * std::sin(2.0 * pi * s) * std::sin(pi * t);
    case 2: return std::cos(1.5 * pi * s) * std::cos(1.5 * pi * t);
    case 3: return std::exp(-(s - 0.5) * (s - 0.5)) * std::exp(-2.0 * (t - 1.0) * (t - 1.0));
    case 4: return (s - 0.5) * (s - 0.5) * (t - 0.5) * (t - 0.5);
    case 5: return 4.0 * std::sqrt(s) * std::sqrt(2.0 * t);
    default: throw DomainError("surface index must be 1..5, got " + std::to_string(m));
  }
}

struct ErrorDraw {
  FunctionalSample errors;
  std::vector<bool> outlier;
};

/// Ornstein-Uhlenbeck paths by exact discretization on the grid:
///   e_{k+1} = gamma + (e_k - gamma) exp(-theta d) + sigma sqrt((1 - exp(-2 theta d)) / (2 theta)) w_k.
/// Gaussian: w ~ N(0,1), e_0 ~ N(0,1). Chi-square: w = (chi2_1 - 1)/sqrt(2),
/// e_0 ~ chi2_1. Contaminated: Gaussian, with a random `rate` share of the
/// curves starting from an initial value with mean `outlier_mean`. Only the
/// first `eligible` curves (all when negative) can be contaminated; the
/// share is taken of those.
inline ErrorDraw gen_ou_error(Eigen::Index n, const Grid& grid, ErrorCase error_case, const OuParams& p,
                              std::uint64_t seed, double rate = 0.10, double outlier_mean = 5.0,
                              Eigen::Index eligible = -1) {
  if (!(p.theta > 0.0) || !(p.sigma > 0.0)) throw ConfigError("OU theta and sigma must be positive");
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("contamination rate must lie in [0, 1)");
  auto rng = substream(seed, {stream_tag::errors});
  std::normal_distribution<double> normal;
  const bool chi = error_case == ErrorCase::ChiSquare;
  auto draw = [&]() {
    const double g = normal(rng);
    return chi ? (g * g - 1.0) / std::sqrt(2.0) : g;
  };

  std::vector<bool> outlier(static_cast<std::size_t>(n), false);
  if (error_case == ErrorCase::Contaminated) {
    auto pick_rng = substream(seed, {stream_tag::outliers});
    if (eligible < 0 || eligible > n) eligible = n;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(eligible));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::shuffle(idx.begin(), idx.end(), pick_rng);
    const auto count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(eligible)));
    for (std::size_t k = 0; k < count; ++k) outlier[static_cast<std::size_t>(idx[k])] = true;
  }

  const auto len = static_cast<Eigen::Index>(grid.size());
  Matrix e(n, len);
  for (Eigen::Index i = 0; i < n; ++i) {
    double value;
    if (chi) {
      const double g = normal(rng);
      value = g * g;
    } else {
      value = normal(rng);
    }
    if (outlier[static_cast<std::size_t>(i)]) value += outlier_mean;
    e(i, 0) = value;
    for (Eigen::Index l = 1; l < len; ++l) {
      const double d = grid[static_cast<std::size_t>(l)] - grid[static_cast<std::size_t>(l - 1)];
      const double decay = std::exp(-p.theta * d);
      const double scale = p.sigma * std::sqrt((1.0 - std::exp(-2.0 * p.theta * d)) / (2.0 * p.theta));
      value = p.gamma + (value - p.gamma) * decay + scale * draw();
      e(i, l) = value;
    }
  }
  return {FunctionalSample(grid, std::move(e)), std::move(outlier)};
}

/// Noise-free part of the response: sum over m in {1, 2, 5} of the
/// trapezoid-rule integral of X_m(s) beta_m(s, t) over the predictor grid.
inline Matrix response_signal(const std::vector<FunctionalSample>& xs, const Grid& t_grid) {
  if (xs.size() != static_cast<std::size_t>(kNumPredictors)) throw ShapeError("expected the five generated predictors");
  const Eigen::Index n = xs.front().n();
  Matrix signal = Matrix::Zero(n, static_cast<Eigen::Index>(t_grid.size()));
  for (std::size_t m : kActivePredictors) {
    const Grid& s_grid = xs[m].grid();
    const Vector w = trapezoid_weights(s_grid.points());
    Matrix kernel(static_cast<Eigen::Index>(s_grid.size()), static_cast<Eigen::Index>(t_grid.size()));
    for (std::size_t r = 0; r < s_grid.size(); ++r) {
      for (std::size_t l = 0; l < t_grid.size(); ++l) {
        kernel(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(l)) =
            w(static_cast<Eigen::Index>(r)) * beta_surface(static_cast<int>(m) + 1, s_grid[r], t_grid[l]);
      }
    }
    signal += xs[m].values() * kernel;
  }
  return signal;
}

struct GeneratedResponse {
  FunctionalSample y;
  Matrix signal;
  std::vector<bool> outlier;
};

inline GeneratedResponse gen_response(const std::vector<FunctionalSample>& xs, const Grid& grid, ErrorCase error_case,
                                      const OuParams& p, std::uint64_t seed, double rate = 0.10,
                                      double outlier_mean = 5.0, Eigen::Index eligible = -1) {
  Matrix signal = response_signal(xs, grid);
  ErrorDraw err = gen_ou_error(xs.front().n(), grid, error_case, p, seed, rate, outlier_mean, eligible);
  Matrix y = signal + err.errors.values();
  return {FunctionalSample(grid, std::move(y)), std::move(signal), std::move(err.outlier)};
}

inline double standard_normal_quantile(double p) {
  // Acklam's rational approximation refined by one Halley step.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01, -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549671750135291e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  double x;
  if (p < 0.02425) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p > 1.0 - 0.02425) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

/// tau-quantile of the Gaussian-case error at each grid point:
/// mean gamma (1 - e^{-theta t}), variance e^{-2 theta t} + sigma^2 (1 - e^{-2 theta t}) / (2 theta).
inline Vector gaussian_error_quantile(const Grid& grid, const OuParams& p, double tau) {
  QuantileSpec{tau};
  const double z = standard_normal_quantile(tau);
  Vector q(static_cast<Eigen::Index>(grid.size()));
  const double t0 = grid.front();
  for (std::size_t l = 0; l < grid.size(); ++l) {
    const double t = grid[l] - t0;
    const double decay = std::exp(-p.theta * t);
    const double mean = p.gamma * (1.0 - decay);
    const double var = decay * decay + p.sigma * p.sigma * (1.0 - decay * decay) / (2.0 * p.theta);
    q(static_cast<Eigen::Index>(l)) = mean + z * std::sqrt(var);
  }
  return q;
}

enum class Variant { Full = 0, True = 1, Selected = 2 };
inline constexpr const char* kVariantNames[] = {"full", "true", "selected"};
inline constexpr const char* kMethodNames[] = {"fpqr", "fpls"};

struct MethodRun {
  double mspe[3] = {0.0, 0.0, 0.0};  // indexed by Variant
  int h[3] = {0, 0, 0};
  std::vector<std::size_t> selected;  // 0-based, selection order
  std::optional<MetricReport> band;   // bootstrap metrics for the selected model
};

struct RunResult {
  int run = 0;
  bool ok = false;
  std::string error;
  MethodRun method[2];  // fpqr, fpls
};

struct ExperimentReport {
  SimConfig config;
  std::vector<RunResult> runs;

  int completed() const {
    int c = 0;
    for (const auto& r : runs) c += r.ok ? 1 : 0;
    return c;
  }
};

struct SimulatedData {
  std::vector<FunctionalSample> xs_train, xs_test;
  FunctionalSample y_train, y_test;
  Matrix signal_test;
};

/// Generates n_train + n_test curves for one run and splits them in order.
inline SimulatedData simulate_run_data(const SimConfig& cfg, int run) {
  const Grid grid = Grid::uniform({0.0, 1.0}, static_cast<std::size_t>(cfg.grid_size));
  const std::uint64_t run_seed = substream(cfg.seed, {stream_tag::run, static_cast<std::uint32_t>(run)})();
  const Eigen::Index n = cfg.n_train + cfg.n_test;
  const auto xs = gen_predictors(n, grid, run_seed);
  const auto resp = gen_response(xs, grid, cfg.error_case, cfg.ou, run_seed, cfg.contamination, cfg.outlier_mean,
                                 cfg.contaminate_test ? n : Eigen::Index{cfg.n_train});
  SimulatedData d;
  for (const auto& x : xs) {
    d.xs_train.push_back(x.head(cfg.n_train));
    d.xs_test.push_back(x.tail(cfg.n_test));
  }
  d.y_train = resp.y.head(cfg.n_train);
  d.y_test = resp.y.tail(cfg.n_test);
  d.signal_test = resp.signal.bottomRows(cfg.n_test);
  return d;
}

inline FitOptions sim_fit_options(const SimConfig& cfg) {
  FitOptions opt;
  opt.response_basis = cfg.n_basis;
  opt.predictor_basis = {cfg.n_basis};
  opt.h_max = cfg.h_max;
  return opt;
}

/// One Monte Carlo run: both methods under the full, true and selected models.
inline RunResult run_once(const SimConfig& cfg, int run) {
  RunResult out;
  out.run = run;
  try {
    const SimulatedData data = simulate_run_data(cfg, run);
    const FitOptions opt = sim_fit_options(cfg);
    const ExpandedData full = expand(data.y_train, data.xs_train, opt);
    const int h_max = cfg.h_max > 0 ? cfg.h_max : default_h_max(full.n(), full.response_basis.n_basis());

    for (int method = 0; method < 2; ++method) {
      const Loss loss = method == 0 ? Loss::Quantile : Loss::Squared;
      MethodRun& mr = out.method[method];
      std::vector<std::size_t> all{0, 1, 2, 3, 4};
      std::vector<std::size_t> truth(std::begin(kActivePredictors), std::end(kActivePredictors));
      if (cfg.selection) {
        mr.selected = forward_select_expanded(full, cfg.tau, loss, cfg.ratio_threshold).indices;
      } else {
        mr.selected = all;
      }
      const std::vector<std::size_t>* sets[3] = {&all, &truth, &mr.selected};
      for (int v = 0; v < 3; ++v) {
        const ExpandedData sub = restrict_predictors(full, *sets[v]);
        const ComponentSelection sel = select_components_expanded(sub, cfg.tau, loss, h_max);
        std::vector<FunctionalSample> xs_test;
        for (std::size_t m : *sets[v]) xs_test.push_back(data.xs_test[m]);
        mr.mspe[v] = mspe(data.y_test, predict(sel.fit, xs_test));
        mr.h[v] = sel.h;
        if (v == static_cast<int>(Variant::Selected) && cfg.bootstrap) {
          std::vector<FunctionalSample> xs_train;
          for (std::size_t m : *sets[v]) xs_train.push_back(data.xs_train[m]);
          FitOptions bopt_fit = opt;
          bopt_fit.components = std::max(1, sel.h);
          BootstrapOptions bopt;
          bopt.n_boot = cfg.n_boot;
          bopt.alpha = cfg.alpha;
          bopt.seed = substream(cfg.seed, {stream_tag::bootstrap, static_cast<std::uint32_t>(run),
                                           static_cast<std::uint32_t>(method)})();
          const IntervalBand band = bootstrap_band(data.y_train, xs_train, xs_test, cfg.tau, bopt_fit, bopt, loss);
          mr.band = evaluate_band(band, data.y_test, predict(sel.fit, xs_test));
        }
      }
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

/// All runs of an experiment; each run draws from its own substream of the
/// master seed, so results do not depend on execution order.
inline ExperimentReport run_experiment(const SimConfig& cfg) {
  cfg.validate();
  ExperimentReport report;
  report.config = cfg;
  for (int r = 0; r < cfg.mc_runs; ++r) report.runs.push_back(run_once(cfg, r));
  return report;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

/// Per-run metric values over successful runs.
template <class Getter>
std::vector<double> collect(const ExperimentReport& rep, Getter get) {
  std::vector<double> out;
  for (const auto& r : rep.runs) {
    if (r.ok) out.push_back(get(r));
  }
  return out;
}

}  // namespace fpqr
