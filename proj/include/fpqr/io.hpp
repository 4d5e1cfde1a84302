#pragma once

// Wide curve CSV files (first row: grid, then one curve per row), surface
// tables, and JSON serialization of fitted models and reports.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fpqr/bootstrap.hpp"
#include "fpqr/fpqr.hpp"
#include "fpqr/simulate.hpp"

namespace fpqr {

using Json = nlohmann::json;

/// Decimal text with 17 significant digits; reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<double> parse_csv_row(const std::string& line, const std::string& where) {
  std::vector<double> out;
  std::size_t start = 0, field = 1;
  while (true) {
    const std::size_t end = line.find(',', start);
    const std::string_view cell =
        trim(std::string_view(line).substr(start, end == std::string::npos ? std::string::npos : end - start));
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (!cell.empty() && *first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (cell.empty() || res.ec != std::errc() || res.ptr != last) {
      throw ParseError(where + ", field " + std::to_string(field) + ": not a number: '" + std::string(cell) + "'");
    }
    out.push_back(v);
    if (end == std::string::npos) break;
    start = end + 1;
    ++field;
  }
  return out;
}

}  // namespace detail

/// Reads one functional variable: first row the grid, each further row a curve.
inline FunctionalSample read_curves_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  std::string line;
  std::vector<double> grid;
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    std::vector<double> values = detail::parse_csv_row(line, where);
    if (grid.empty()) {
      grid = std::move(values);
      continue;
    }
    if (values.size() != grid.size()) {
      throw ParseError(where + ": expected " + std::to_string(grid.size()) + " fields, got " +
                       std::to_string(values.size()));
    }
    rows.push_back(std::move(values));
  }
  if (grid.empty()) throw ParseError(path + ": empty file (expected a grid row and at least one curve)");
  if (rows.empty()) throw ParseError(path + ": no curves after the grid row");
  Grid g = [&] {
    try {
      return Grid(grid);
    } catch (const Error& e) {
      throw ParseError(path + ":1: invalid grid: " + e.what());
    }
  }();
  Matrix values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t l = 0; l < grid.size(); ++l) values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = rows[i][l];
  }
  return FunctionalSample(std::move(g), std::move(values));
}

inline void write_rows(std::ostream& out, std::span<const double> header, const Matrix& values) {
  auto row = [&](auto get, Eigen::Index count) {
    for (Eigen::Index l = 0; l < count; ++l) out << (l ? "," : "") << format_double(get(l));
    out << '\n';
  };
  row([&](Eigen::Index l) { return header[static_cast<std::size_t>(l)]; }, static_cast<Eigen::Index>(header.size()));
  for (Eigen::Index i = 0; i < values.rows(); ++i) row([&](Eigen::Index l) { return values(i, l); }, values.cols());
}

inline void write_curves_csv(const std::string& path, std::span<const double> grid, const Matrix& values) {
  if (static_cast<std::size_t>(values.cols()) != grid.size()) throw ShapeError(path + ": grid and value widths differ");
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  write_rows(out, grid, values);
  if (!out) throw ParseError(path + ": write failed");
}

inline void write_curves_csv(const std::string& path, const FunctionalSample& sample) {
  write_curves_csv(path, sample.grid().points(), sample.values());
}

/// Surface table: first row "s\t" followed by the t grid; then one row per s.
inline void write_surface_csv(const std::string& path, std::span<const double> s_grid, std::span<const double> t_grid,
                              const Matrix& surface) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << "s\\t";
  for (double t : t_grid) out << ',' << format_double(t);
  out << '\n';
  for (Eigen::Index r = 0; r < surface.rows(); ++r) {
    out << format_double(s_grid[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < surface.cols(); ++c) out << ',' << format_double(surface(r, c));
    out << '\n';
  }
}

// --- JSON helpers -----------------------------------------------------------

inline Json to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Matrix matrix_from_json(const Json& j, Eigen::Index cols) {
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != static_cast<std::size_t>(cols)) throw ParseError("matrix rows have unequal length");
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), c) = j[i][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline Vector vector_from_json(const Json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

inline Json basis_to_json(const BasisSystem& b) {
  return {{"domain", {b.domain().lo, b.domain().hi}}, {"n_basis", b.n_basis()}, {"order", b.order()}};
}

inline BasisSystem basis_from_json(const Json& j) {
  return build_bspline_basis({j.at("domain")[0].get<double>(), j.at("domain")[1].get<double>()},
                             j.at("n_basis").get<int>(), j.at("order").get<int>());
}

inline const char* loss_name(Loss loss) { return loss == Loss::Quantile ? "quantile" : "squared"; }

/// Everything prediction needs. Bases are stored by their parameters and
/// rebuilt on load, which reproduces them exactly.
inline Json fit_to_json(const FpqrFit& fit, const std::vector<std::size_t>& predictor_ids = {}) {
  Json j;
  j["format"] = "fpqr-fit/1";
  j["tau"] = fit.tau;
  j["loss"] = loss_name(fit.loss);
  j["h"] = fit.h;
  j["response_basis"] = basis_to_json(fit.response_basis);
  j["response_grid"] = fit.response_grid.vec();
  Json preds = Json::array();
  for (std::size_t m = 0; m < fit.predictor_bases.size(); ++m) {
    Json p{{"basis", basis_to_json(fit.predictor_bases[m])}, {"grid", fit.predictor_grids[m].vec()}};
    if (!predictor_ids.empty()) p["id"] = predictor_ids[m] + 1;
    preds.push_back(std::move(p));
  }
  j["predictors"] = std::move(preds);
  j["z_mean"] = to_json(Vector(fit.state.z_mean.transpose()));
  j["theta"] = to_json(fit.theta);
  j["intercept"] = to_json(fit.intercept_coefs);
  return j;
}

inline FpqrFit fit_from_json(const Json& j) {
  try {
    if (j.value("format", "") != "fpqr-fit/1") throw ParseError("not a fit artifact (missing format tag)");
    FpqrFit f;
    f.tau = j.at("tau").get<double>();
    f.loss = j.at("loss").get<std::string>() == "squared" ? Loss::Squared : Loss::Quantile;
    f.h = j.at("h").get<int>();
    f.response_basis = basis_from_json(j.at("response_basis"));
    f.response_grid = Grid(j.at("response_grid").get<std::vector<double>>());
    std::vector<BasisSystem> bases;
    for (const Json& p : j.at("predictors")) {
      bases.push_back(basis_from_json(p.at("basis")));
      f.predictor_grids.emplace_back(p.at("grid").get<std::vector<double>>());
    }
    f.predictor_bases = CompositeBasis(std::move(bases));
    const Eigen::Index kz = f.predictor_bases.total_basis(), ky = f.response_basis.n_basis();
    const Vector z_mean = vector_from_json(j.at("z_mean"));
    if (z_mean.size() != kz) throw ParseError("z_mean length does not match the predictor bases");
    f.state.z_mean = z_mean.transpose();
    f.theta = matrix_from_json(j.at("theta"), ky);
    if (f.theta.rows() != kz) throw ParseError("theta shape does not match the bases");
    f.intercept_coefs = vector_from_json(j.at("intercept"));
    if (f.intercept_coefs.size() != ky) throw ParseError("intercept length does not match the response basis");
    const Matrix all = f.surface_coefs();
    for (std::size_t m = 0; m < f.predictor_bases.size(); ++m) {
      f.beta_coefs.emplace_back(all.middleRows(f.predictor_bases.offset(m), f.predictor_bases[m].n_basis()));
    }
    return f;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("fit artifact: ") + e.what());
  }
}

inline Json metrics_to_json(const MetricReport& m) { return {{"mspe", m.mspe}, {"cpd", m.cpd}, {"score", m.score}}; }

inline Json ids_to_json(const std::vector<std::size_t>& ids) {
  Json a = Json::array();
  for (std::size_t m : ids) a.push_back(m + 1);
  return a;
}

inline Json trace_to_json(const SelectionTrace& t) {
  Json entries = Json::array();
  for (const auto& e : t.entries) {
    Json x{{"step", e.step}, {"h", e.h}, {"bic", e.bic}};
    if (!e.predictors.empty()) x["predictors"] = ids_to_json(e.predictors);
    entries.push_back(std::move(x));
  }
  return {{"entries", entries}, {"step_ratios", t.step_ratios}};
}

inline Json experiment_to_json(const ExperimentReport& rep) {
  const SimConfig& c = rep.config;
  Json j;
  j["config"] = {{"n_train", c.n_train},     {"n_test", c.n_test},
                 {"grid_size", c.grid_size}, {"case", static_cast<int>(c.error_case)},
                 {"tau", c.tau},             {"seed", c.seed},
                 {"mc_runs", c.mc_runs},     {"ou", {{"gamma", c.ou.gamma}, {"theta", c.ou.theta}, {"sigma", c.ou.sigma}}},
                 {"contamination", c.contamination},
                 {"outlier_mean", c.outlier_mean},
                 {"contaminate_test", c.contaminate_test},
                 {"n_basis", c.n_basis},     {"h_max", c.h_max},
                 {"selection", c.selection}, {"bootstrap", c.bootstrap},
                 {"n_boot", c.n_boot},       {"alpha", c.alpha}};
  Json runs = Json::array();
  for (const auto& r : rep.runs) {
    Json x{{"run", r.run}, {"ok", r.ok}};
    if (!r.ok) x["error"] = r.error;
    if (r.ok) {
      for (int m = 0; m < 2; ++m) {
        const MethodRun& mr = r.method[m];
        Json mj;
        for (int v = 0; v < 3; ++v) mj[kVariantNames[v]] = {{"mspe", mr.mspe[v]}, {"h", mr.h[v]}};
        mj["selected_predictors"] = ids_to_json(mr.selected);
        if (mr.band) mj["bootstrap"] = metrics_to_json(*mr.band);
        x[kMethodNames[m]] = std::move(mj);
      }
    }
    runs.push_back(std::move(x));
  }
  j["runs"] = std::move(runs);

  Json summary;
  const std::vector<std::size_t> truth(std::begin(kActivePredictors), std::end(kActivePredictors));
  for (int m = 0; m < 2; ++m) {
    Json s;
    for (int v = 0; v < 3; ++v) {
      s[std::string("median_mspe_") + kVariantNames[v]] =
          median(collect(rep, [&](const RunResult& r) { return r.method[m].mspe[v]; }));
    }
    std::vector<double> exact = collect(rep, [&](const RunResult& r) {
      std::vector<std::size_t> sel = r.method[m].selected;
      std::sort(sel.begin(), sel.end());
      return sel == truth ? 1.0 : 0.0;
    });
    std::vector<double> contains = collect(rep, [&](const RunResult& r) {
      const auto& sel = r.method[m].selected;
      return std::all_of(truth.begin(), truth.end(),
                         [&](std::size_t t) { return std::find(sel.begin(), sel.end(), t) != sel.end(); })
                 ? 1.0
                 : 0.0;
    });
    auto mean = [](const std::vector<double>& v) {
      double acc = 0.0;
      for (double x : v) acc += x;
      return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
    };
    s["selection_exact_rate"] = mean(exact);
    s["selection_contains_rate"] = mean(contains);
    if (c.bootstrap) {
      s["median_cpd"] = median(collect(rep, [&](const RunResult& r) { return r.method[m].band ? r.method[m].band->cpd : 0.0; }));
      s["median_score"] =
          median(collect(rep, [&](const RunResult& r) { return r.method[m].band ? r.method[m].band->score : 0.0; }));
    }
    summary[kMethodNames[m]] = std::move(s);
  }
  summary["completed_runs"] = rep.completed();
  j["summary"] = std::move(summary);
  return j;
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace fpqr
