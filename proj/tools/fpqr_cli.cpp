// fpqr: fit, predict, simulate and bootstrap from the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "fpqr/bootstrap.hpp"
#include "fpqr/fpqr.hpp"
#include "fpqr/io.hpp"
#include "fpqr/simulate.hpp"

namespace fs = std::filesystem;
using namespace fpqr;

namespace {

struct ModelArgs {
  std::vector<double> tau{0.5};
  std::string method = "fpqr";
  std::vector<int> n_basis{10};
  int order = 4;
  std::string components = "auto";
  int h_max = 0;
  bool select = false;
  double ratio = 0.9;
};

void add_model_options(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--tau", m.tau, "Quantile levels in (0,1)")->delimiter(',');
  cmd->add_option("--method", m.method, "fpqr (quantile) or fpls (least squares)")
      ->check(CLI::IsMember({"fpqr", "fpls"}));
  cmd->add_option("--n-basis", m.n_basis,
                  "Basis sizes: one value for every variable, or the response size followed by one per predictor")
      ->delimiter(',');
  cmd->add_option("--order", m.order, "B-spline order (4 = cubic)");
  cmd->add_option("--components", m.components, "Number of stages, or 'auto' for BIC selection");
  cmd->add_option("--h-max", m.h_max, "Largest h searched by 'auto' (0: min(10, (n-2)/K_Y))");
  cmd->add_flag("--select,!--no-select", m.select, "Forward selection of predictors");
  cmd->add_option("--ratio", m.ratio, "Forward selection acceptance ratio");
}

Loss method_loss(const ModelArgs& m) { return m.method == "fpls" ? Loss::Squared : Loss::Quantile; }

FitOptions fit_options(const ModelArgs& m, std::size_t n_predictors) {
  FitOptions opt;
  opt.order = m.order;
  if (m.n_basis.size() == 1) {
    opt.response_basis = m.n_basis.front();
    opt.predictor_basis = {m.n_basis.front()};
  } else if (m.n_basis.size() == n_predictors + 1) {
    opt.response_basis = m.n_basis.front();
    opt.predictor_basis.assign(m.n_basis.begin() + 1, m.n_basis.end());
  } else {
    throw ConfigError("--n-basis takes 1 or " + std::to_string(n_predictors + 1) + " values, got " +
                      std::to_string(m.n_basis.size()));
  }
  if (m.components == "auto") {
    opt.components = kAutoComponents;
  } else {
    try {
      std::size_t used = 0;
      opt.components = std::stoi(m.components, &used);
      if (used != m.components.size() || opt.components < 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ConfigError("--components must be a positive integer or 'auto', got '" + m.components + "'");
    }
  }
  opt.h_max = m.h_max;
  return opt;
}

std::vector<FunctionalSample> read_all(const std::vector<std::string>& paths) {
  std::vector<FunctionalSample> out;
  for (const auto& p : paths) out.push_back(read_curves_csv(p));
  return out;
}

std::string tau_tag(double tau) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", tau);
  return std::string("tau") + buf;
}

std::vector<FunctionalSample> pick(const std::vector<FunctionalSample>& xs, const std::vector<std::size_t>& ids) {
  std::vector<FunctionalSample> out;
  for (std::size_t m : ids) out.push_back(xs[m]);
  return out;
}

std::vector<std::size_t> all_ids(std::size_t m) {
  std::vector<std::size_t> ids(m);
  for (std::size_t i = 0; i < m; ++i) ids[i] = i;
  return ids;
}

struct Selected {
  std::vector<std::size_t> ids;
  std::optional<SelectionTrace> trace;
};

Selected choose_predictors(const ModelArgs& m, const FunctionalSample& y, const std::vector<FunctionalSample>& xs,
                           double tau, const FitOptions& opt) {
  if (!m.select) return {all_ids(xs.size()), std::nullopt};
  const ForwardSelection fs = forward_select(y, xs, tau, m.ratio, opt, method_loss(m));
  return {fs.indices, fs.trace};
}

FitOptions subset_options(FitOptions opt, const std::vector<std::size_t>& ids) {
  if (opt.predictor_basis.size() > 1) {
    std::vector<int> k;
    for (std::size_t m : ids) k.push_back(opt.predictor_basis[m]);
    opt.predictor_basis = k;
  }
  return opt;
}

struct FitCmd {
  std::string response;
  std::vector<std::string> predictors;
  std::string out = "fpqr_out";
  std::uint64_t seed = 1;
  ModelArgs model;
};

int cmd_fit(const FitCmd& c) {
  const FunctionalSample y = read_curves_csv(c.response);
  const std::vector<FunctionalSample> xs = read_all(c.predictors);
  const FitOptions opt = fit_options(c.model, xs.size());
  fs::create_directories(c.out);
  const Loss loss = method_loss(c.model);
  const std::vector<double> taus = loss == Loss::Squared ? std::vector<double>{0.5} : c.model.tau;

  Json report;
  report["method"] = c.model.method;
  report["n"] = y.n();
  report["seed"] = c.seed;
  Json fits = Json::array();
  for (double tau : taus) {
    if (loss == Loss::Quantile) QuantileSpec{tau};
    const Selected sel = choose_predictors(c.model, y, xs, tau, opt);
    const FitOptions sub_opt = subset_options(opt, sel.ids);
    const ExpandedData d = expand(y, pick(xs, sel.ids), sub_opt);
    FpqrFit fit;
    std::optional<SelectionTrace> h_trace;
    if (sub_opt.components == kAutoComponents) {
      const int h_max = sub_opt.h_max > 0 ? sub_opt.h_max : default_h_max(d.n(), d.response_basis.n_basis());
      ComponentSelection cs = select_components_expanded(d, tau, loss, h_max);
      h_trace = cs.trace;
      fit = std::move(cs.fit);
    } else {
      fit = fit_expanded(d, tau, loss, sub_opt.components);
    }
    const std::string tag = tau_tag(tau);
    write_json((fs::path(c.out) / ("fit_" + tag + ".json")).string(), fit_to_json(fit, sel.ids));
    const Matrix fitted = fitted_curves(fit, y.grid().points());
    write_curves_csv((fs::path(c.out) / ("fitted_" + tag + ".csv")).string(), y.grid().points(), fitted);
    for (std::size_t k = 0; k < sel.ids.size(); ++k) {
      const Grid& s_grid = xs[sel.ids[k]].grid();
      const Matrix surf = coefficient_surface(fit, k, s_grid.points(), y.grid().points());
      write_surface_csv(
          (fs::path(c.out) / ("surface_x" + std::to_string(sel.ids[k] + 1) + "_" + tag + ".csv")).string(),
          s_grid.points(), y.grid().points(), surf);
    }
    write_curves_csv((fs::path(c.out) / ("intercept_" + tag + ".csv")).string(), y.grid().points(),
                     intercept_curve(fit, y.grid().points()).transpose());

    Json f;
    f["tau"] = tau;
    f["predictors"] = ids_to_json(sel.ids);
    f["h"] = fit.h;
    f["loss"] = fit.loss_value;
    f["mse"] = mspe(y, fitted);
    const Matrix resid = y.values() - fitted;
    f["check_loss"] = residual_loss_norm(resid, y.grid().points(), tau, loss);
    if (sel.trace) f["selection_trace"] = trace_to_json(*sel.trace);
    if (h_trace) f["components_trace"] = trace_to_json(*h_trace);
    fits.push_back(std::move(f));
  }
  report["fits"] = std::move(fits);
  write_json((fs::path(c.out) / "report.json").string(), report);
  std::cout << "wrote " << taus.size() << " fit(s) to " << c.out << "\n";
  return 0;
}

struct PredictCmd {
  std::string fit;
  std::vector<std::string> predictors;
  std::string out = "predictions.csv";
};

int cmd_predict(const PredictCmd& c) {
  const FpqrFit fit = fit_from_json(read_json(c.fit));
  const std::vector<FunctionalSample> xs = read_all(c.predictors);
  const Matrix pred = predict(fit, xs);
  write_curves_csv(c.out, fit.response_grid.points(), pred);
  std::cout << "wrote " << pred.rows() << " predicted curve(s) to " << c.out << "\n";
  return 0;
}

struct SimulateCmd {
  SimConfig cfg;
  int error_case = 1;
  std::string out = "fpqr_sim";
  bool export_data = false;
  bool full_scale = false;
  bool n_test_given = false, mc_runs_given = false;
};

int cmd_simulate(SimulateCmd c) {
  if (c.full_scale) {
    if (!c.n_test_given) c.cfg.n_test = 300;
    if (!c.mc_runs_given) c.cfg.mc_runs = 200;
  }
  if (c.error_case < 1 || c.error_case > 3) throw ConfigError("--case must be 1, 2 or 3");
  c.cfg.error_case = static_cast<ErrorCase>(c.error_case);
  c.cfg.validate();
  fs::create_directories(c.out);
  if (c.export_data) {
    const SimulatedData d = simulate_run_data(c.cfg, 0);
    const fs::path dir = fs::path(c.out) / "data";
    fs::create_directories(dir);
    write_curves_csv((dir / "y_train.csv").string(), d.y_train);
    write_curves_csv((dir / "y_test.csv").string(), d.y_test);
    for (std::size_t m = 0; m < d.xs_train.size(); ++m) {
      write_curves_csv((dir / ("x" + std::to_string(m + 1) + "_train.csv")).string(), d.xs_train[m]);
      write_curves_csv((dir / ("x" + std::to_string(m + 1) + "_test.csv")).string(), d.xs_test[m]);
    }
  }
  const ExperimentReport rep = run_experiment(c.cfg);
  const Json j = experiment_to_json(rep);
  write_json((fs::path(c.out) / "report.json").string(), j);
  std::cout << j["summary"].dump(2) << "\n";
  return rep.completed() == c.cfg.mc_runs ? 0 : 3;
}

struct BootstrapCmd {
  std::string response;
  std::vector<std::string> predictors;
  std::vector<std::string> test_predictors;
  std::string test_response;
  std::string out = "fpqr_boot";
  std::uint64_t seed = 1;
  int n_boot = 100;
  double alpha = 0.05;
  ModelArgs model;
};

int cmd_bootstrap(const BootstrapCmd& c) {
  const FunctionalSample y = read_curves_csv(c.response);
  const std::vector<FunctionalSample> xs = read_all(c.predictors);
  const std::vector<FunctionalSample> xs_test = read_all(c.test_predictors);
  if (xs_test.size() != xs.size()) throw ShapeError("need one test file per training predictor");
  const FitOptions opt = fit_options(c.model, xs.size());
  const Loss loss = method_loss(c.model);
  const double tau = loss == Loss::Squared ? 0.5 : c.model.tau.front();
  if (c.model.tau.size() > 1) std::cerr << "note: bootstrap uses only the first --tau value\n";
  fs::create_directories(c.out);

  const Selected sel = choose_predictors(c.model, y, xs, tau, opt);
  const FitOptions sub_opt = subset_options(opt, sel.ids);
  const auto xs_sel = pick(xs, sel.ids), xs_test_sel = pick(xs_test, sel.ids);
  BootstrapOptions bopt;
  bopt.n_boot = c.n_boot;
  bopt.alpha = c.alpha;
  bopt.seed = c.seed;
  const IntervalBand band = bootstrap_band(y, xs_sel, xs_test_sel, tau, sub_opt, bopt, loss);
  const FpqrFit fit = detail::fit_with_options(y, xs_sel, tau, loss, sub_opt);
  const Matrix pred = predict(fit, xs_test_sel);
  const fs::path dir(c.out);
  write_curves_csv((dir / "lower.csv").string(), band.t_grid, band.lower);
  write_curves_csv((dir / "upper.csv").string(), band.t_grid, band.upper);
  write_curves_csv((dir / "prediction.csv").string(), band.t_grid, pred);

  Json report{{"tau", tau},       {"method", c.model.method}, {"alpha", c.alpha},
              {"n_boot", c.n_boot}, {"seed", c.seed},         {"predictors", ids_to_json(sel.ids)},
              {"h", fit.h}};
  if (!c.test_response.empty()) {
    const FunctionalSample y_test = read_curves_csv(c.test_response);
    report["metrics"] = metrics_to_json(evaluate_band(band, y_test, pred));
  }
  write_json((dir / "report.json").string(), report);
  std::cout << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Function-on-function partial quantile regression"};
  app.set_config("--config", "", "Key/value configuration file (INI/TOML); command-line flags take precedence");
  app.require_subcommand(1);

  FitCmd fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit models and write surfaces, fitted curves and a report");
  fit_cmd->add_option("--response", fit.response, "Response curves CSV")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--predictors", fit.predictors, "Predictor curve CSVs")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", fit.out, "Output directory");
  fit_cmd->add_option("--seed", fit.seed, "Seed (fits are deterministic; recorded in the report)");
  add_model_options(fit_cmd, fit.model);

  PredictCmd pred;
  auto* pred_cmd = app.add_subcommand("predict", "Predict response curves from a saved fit");
  pred_cmd->add_option("--fit", pred.fit, "Fit artifact (JSON)")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--predictors", pred.predictors, "Predictor curve CSVs, in the fit's order")
      ->required()
      ->check(CLI::ExistingFile);
  pred_cmd->add_option("--out", pred.out, "Output CSV");

  SimulateCmd sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run the Monte Carlo comparison of FPQR and FPLS");
  sim_cmd->add_option("--case", sim.error_case, "1 Gaussian, 2 chi-square, 3 contaminated");
  sim_cmd->add_option("--n-train", sim.cfg.n_train);
  auto* n_test_opt = sim_cmd->add_option("--n-test", sim.cfg.n_test);
  sim_cmd->add_option("--grid-size", sim.cfg.grid_size);
  auto* mc_runs_opt = sim_cmd->add_option("--mc-runs", sim.cfg.mc_runs);
  sim_cmd->add_flag("--full-scale", sim.full_scale, "200 runs and 300 test curves unless given explicitly");
  sim_cmd->add_option("--tau", sim.cfg.tau);
  sim_cmd->add_option("--seed", sim.cfg.seed);
  sim_cmd->add_option("--n-basis", sim.cfg.n_basis);
  sim_cmd->add_option("--h-max", sim.cfg.h_max);
  sim_cmd->add_option("--contamination", sim.cfg.contamination);
  sim_cmd->add_option("--outlier-mean", sim.cfg.outlier_mean);
  sim_cmd->add_flag("--contaminate-test,!--clean-test", sim.cfg.contaminate_test,
                    "Let outliers fall in the test set too (default: training set only)");
  sim_cmd->add_option("--ou-gamma", sim.cfg.ou.gamma);
  sim_cmd->add_option("--ou-theta", sim.cfg.ou.theta);
  sim_cmd->add_option("--ou-sigma", sim.cfg.ou.sigma);
  sim_cmd->add_flag("--select,!--no-select", sim.cfg.selection, "Forward selection for the selected model");
  sim_cmd->add_flag("--bootstrap", sim.cfg.bootstrap, "Bootstrap bands for the selected model");
  sim_cmd->add_option("--boot-b", sim.cfg.n_boot);
  sim_cmd->add_option("--alpha", sim.cfg.alpha);
  sim_cmd->add_flag("--export", sim.export_data, "Write the first run's data as curve CSVs");
  sim_cmd->add_option("--out", sim.out, "Output directory");

  BootstrapCmd boot;
  auto* boot_cmd = app.add_subcommand("bootstrap", "Case-resampling bootstrap bands for predicted curves");
  boot_cmd->add_option("--response", boot.response, "Training response CSV")->required()->check(CLI::ExistingFile);
  boot_cmd->add_option("--predictors", boot.predictors, "Training predictor CSVs")
      ->required()
      ->check(CLI::ExistingFile);
  boot_cmd->add_option("--test-predictors", boot.test_predictors, "Test predictor CSVs")
      ->required()
      ->check(CLI::ExistingFile);
  boot_cmd->add_option("--test-response", boot.test_response, "Test response CSV (enables metrics)")
      ->check(CLI::ExistingFile);
  boot_cmd->add_option("--boot-b", boot.n_boot, "Bootstrap replicates (at least 20)");
  boot_cmd->add_option("--alpha", boot.alpha, "Band level: [alpha/2, 1 - alpha/2]");
  boot_cmd->add_option("--seed", boot.seed);
  boot_cmd->add_option("--out", boot.out, "Output directory");
  add_model_options(boot_cmd, boot.model);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fit_cmd) return cmd_fit(fit);
    if (*pred_cmd) return cmd_predict(pred);
    if (*sim_cmd) {
      sim.n_test_given = n_test_opt->count() > 0;
      sim.mc_runs_given = mc_runs_opt->count() > 0;
      return cmd_simulate(sim);
    }
    if (*boot_cmd) return cmd_bootstrap(boot);
  } catch (const Error& e) {
    std::cerr << "fpqr: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fpqr: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
