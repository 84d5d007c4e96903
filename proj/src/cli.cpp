#include "divker/cli.hpp"

#include "divker/conditioning.hpp"
#include "divker/config.hpp"
#include "divker/diffusion_fit.hpp"
#include "divker/linresp.hpp"
#include "divker/oracle.hpp"
#include "divker/score.hpp"
#include "divker/simulate.hpp"
#include "divker/svg.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>

#ifndef DIVKER_GIT_DESCRIBE
#define DIVKER_GIT_DESCRIBE "unknown"
#endif

namespace divker {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------- presets

const std::map<std::string, std::string>& presets() {
  static const std::map<std::string, std::string> p = {
      {"sec4.1", R"([model]
name = mult1d
gamma = 0

[simulate]
dt = 0.01
T = 0.3
n_paths = 40000

[estimator]
alpha = 10
mode = continuous

[bins]
lo = -2
hi = 2
n_bins = 10
min_count = 180

[oracle]
eps = 0.05
n_bootstrap = 200
)"},
      {"sec4.2", R"([model]
name = lorenz96
dim = 10
gamma = 0

[ergodic]
window = 1.5
T = 100
burn_in = 10
dt = 0.002
n_orbits = 4
alpha = 10
observable = mean_square

[oracle]
enabled = true
eps = 0.1
)"},
      {"sec4.2-full", R"([model]
name = lorenz96
dim = 40
gamma = 0

[ergodic]
window = 1.5
T = 400
burn_in = 10
dt = 0.002
n_orbits = 7
alpha = 10
observable = mean_square

[oracle]
enabled = false
eps = 0.1
)"},
      {"sec5.1", R"([fit]
model = diffproto1d
dim = 1
gamma0 = 5, 1
gamma_true = 0, 0
n_data = 200
n_paths = 200
eta = 1
n_neighbors = 5
n_updates = 10
dt = 0.01
T = 0.75
alpha = 10
)"},
      {"sec5.2", R"([fit]
model = diffproto5d
dim = 5
gamma0 = 0, 0, 0, 0, 0, 0
gamma_true = 5, 6, 7, 8, 9, 2
n_data = 200
n_paths = 200
eta = 1
n_neighbors = 5
n_updates = 50
dt = 0.01
T = 0.75
alpha = 10
)"},
  };
  return p;
}

// ---------------------------------------------------------------- run state

struct Run {
  std::string subcommand;
  std::string preset;
  Config cfg;
  fs::path out;
  std::uint64_t seed = 1;
  int workers = 1;
  ojson summary = ojson::object();
  std::vector<std::string> outputs;

  std::ofstream open(const std::string& name) {
    std::ofstream os(out / name);
    if (!os) throw ConfigError("cannot write " + (out / name).string());
    outputs.push_back(name);
    os << std::setprecision(17);
    return os;
  }

  void plot(const std::string& name, const SvgPlot& p) {
    p.write((out / name).string());
    outputs.push_back(name);
  }
};

ModelInstance model_from(Config& c, const std::string& sec = "model") {
  const auto name = c.get_string(sec, "name", "ou");
  const auto dim = static_cast<int>(c.get_int(sec, "dim", 1));
  const auto gamma = c.get_list(sec, "gamma", {});
  ModelOptions o;
  o.sigma0 = c.get_positive(sec, "sigma0", 1.0);
  o.init_mean = c.get_double(sec, "init_mean", 0.0);
  o.init_var = c.get_positive(sec, "init_var", 1.0);
  return get_model(name, ModelParams{gamma, dim}, o);
}

int steps_for(double horizon, double dt, const std::string& what) {
  const auto n = std::llround(horizon / dt);
  if (n < 1 || std::abs(static_cast<double>(n) * dt - horizon) > 1e-9 * std::max(1.0, horizon))
    throw ConfigError(what + ": T must be a positive multiple of dt");
  return static_cast<int>(n);
}

PathConfig paths_from(Run& r) {
  auto& c = r.cfg;
  PathConfig pc;
  pc.dt = c.get_positive("simulate", "dt", 0.01);
  const double horizon = c.get_positive("simulate", "T", 1.0);
  pc.n_steps = steps_for(horizon, pc.dt, "simulate");
  const auto n = c.get_int("simulate", "n_paths", 1000);
  if (n < 1) throw ConfigError("simulate.n_paths must be >= 1");
  pc.n_paths = static_cast<std::size_t>(n);
  pc.t0 = c.get_double("simulate", "t0", 0.0);
  pc.seed = r.seed;
  pc.workers = r.workers;
  return pc;
}

EstimatorOptions estimator_from(Config& c) {
  EstimatorOptions o;
  const auto mode = c.get_string("estimator", "mode", "continuous");
  if (mode == "continuous") {
    o.mode = StepMode::Continuous;
  } else if (mode == "discrete") {
    o.mode = StepMode::Discrete;
  } else {
    throw ConfigError("estimator.mode must be continuous or discrete (got '" + mode + "')");
  }
  const auto div = c.get_string("estimator", "divergence", "approximate");
  if (div == "approximate") {
    o.divergence = DivergenceMode::Approximate;
  } else if (div == "exact") {
    o.divergence = DivergenceMode::ExactFD;
  } else {
    throw ConfigError("estimator.divergence must be approximate or exact (got '" + div + "')");
  }
  o.alpha = c.get_double("estimator", "alpha", 10.0);
  if (!(o.alpha >= 0.0)) throw ConfigError("estimator.alpha must be >= 0");
  return o;
}

Direction direction_from(Config& c, const std::string& sec, const ModelInstance& m) {
  auto d = c.get_list(sec, "direction", coordinate_direction(m.n_params(), 0));
  if (d.size() != m.n_params())
    throw ConfigError(sec + ".direction needs " + std::to_string(m.n_params()) + " entries");
  return d;
}

BinSpec bins_from(Config& c, int& coord, int dim) {
  BinSpec b;
  b.lo = c.get_double("bins", "lo", -2.0);
  b.hi = c.get_double("bins", "hi", 2.0);
  b.n_bins = static_cast<int>(c.get_int("bins", "n_bins", 10));
  b.min_count = static_cast<std::size_t>(c.get_int("bins", "min_count", 30));
  coord = static_cast<int>(c.get_int("bins", "coord", 0));
  if (!(b.hi > b.lo) || b.n_bins < 1) throw ConfigError("bins: need hi > lo and n_bins >= 1");
  if (coord < 0 || coord >= dim) throw ConfigError("bins.coord out of range");
  return b;
}

ErgodicConfig ergodic_from(Run& r, const ModelInstance& m) {
  auto& c = r.cfg;
  ErgodicConfig e;
  e.window = c.get_positive("ergodic", "window", 1.5);
  e.horizon = c.get_positive("ergodic", "T", 400.0);
  e.burn_in = c.get_double("ergodic", "burn_in", 10.0);
  e.dt = c.get_positive("ergodic", "dt", 0.002);
  e.n_orbits = static_cast<int>(c.get_int("ergodic", "n_orbits", 7));
  e.alpha = c.get_double("ergodic", "alpha", 10.0);
  e.observable = observable_by_name(c.get_string("ergodic", "observable", "mean_square"));
  e.direction = direction_from(c, "ergodic", m);
  e.seed = r.seed;
  e.workers = r.workers;
  e.validate();
  return e;
}

FitConfig fit_from(Run& r) {
  auto& c = r.cfg;
  FitConfig f;
  f.model = c.get_string("fit", "model", "diffproto1d");
  f.dim = static_cast<int>(c.get_int("fit", "dim", 1));
  f.gamma0 = c.get_list("fit", "gamma0", {});
  f.gamma_true = c.get_list("fit", "gamma_true", {});
  f.n_data = static_cast<std::size_t>(c.get_int("fit", "n_data", 200));
  f.n_paths = static_cast<std::size_t>(c.get_int("fit", "n_paths", 200));
  f.eta = c.get_double("fit", "eta", 1.0);
  f.n_neighbors = static_cast<std::size_t>(c.get_int("fit", "n_neighbors", 5));
  f.n_updates = static_cast<int>(c.get_int("fit", "n_updates", 10));
  f.dt = c.get_positive("fit", "dt", 0.01);
  f.horizon = c.get_positive("fit", "T", 0.75);
  steps_for(f.horizon, f.dt, "fit");
  f.alpha = c.get_double("fit", "alpha", 10.0);
  f.seed = r.seed;
  f.workers = r.workers;
  f.validate();
  return f;
}

std::vector<double> centers(const ConditionalTable& t) {
  std::vector<double> x(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) x[i] = t.center(i);
  return x;
}

SvgPlot::Series table_series(const std::string& label, const ConditionalTable& t,
                             SvgPlot::Style style = SvgPlot::Style::LinePoints) {
  return {label, centers(t), t.means, t.ses, style};
}

ojson table_summary(const ConditionalTable& t) {
  std::size_t min_count = t.counts.empty() ? 0 : t.counts.front();
  for (auto c : t.counts) min_count = std::min(min_count, c);
  return {{"bins", t.size()},
          {"min_bin_count", min_count},
          {"in_range", t.total - t.out_of_range},
          {"out_of_range", t.out_of_range}};
}

// ---------------------------------------------------------------- subcommands

void cmd_simulate(Run& r) {
  const auto model = model_from(r.cfg);
  const auto pc = paths_from(r);
  int coord = 0;
  const auto bins = bins_from(r.cfg, coord, model.dim());
  r.cfg.reject_unknown();
  const auto ens = simulate_ensemble(model, pc);

  auto os = r.open("results.csv");
  os << "path,valid";
  for (int j = 0; j < ens.dim; ++j) os << ",x_" << j;
  os << '\n';
  std::vector<double> xs, zeros;
  for (std::size_t p = 0; p < ens.size(); ++p) {
    os << p << ',' << int(ens.valid[p]);
    for (int j = 0; j < ens.dim; ++j) os << ',' << ens.x(static_cast<Eigen::Index>(p), j);
    os << '\n';
    if (ens.valid[p]) xs.push_back(ens.x(static_cast<Eigen::Index>(p), coord));
  }
  zeros.assign(xs.size(), 0.0);
  const auto hist = bin_1d(xs, zeros, bins.lo, bins.hi, bins.n_bins);
  SvgPlot plot("Empirical log density of x_T", "x_T", "log h_T");
  plot.add({"log density", centers(hist), hist.log_density, {}, SvgPlot::Style::Points});
  r.plot("plot.svg", plot);
  const auto m = mean_se(xs);
  r.summary = {{"n_failed", ens.n_failed}, {"mean_x", m.mean}, {"mean_x_se", m.se}};
}

void cmd_score(Run& r) {
  const auto model = model_from(r.cfg);
  auto pc = paths_from(r);
  const auto opt = estimator_from(r.cfg);
  int coord = 0;
  const auto bins = bins_from(r.cfg, coord, model.dim());
  pc.alpha = opt.alpha;
  r.cfg.reject_unknown();
  const auto ens = run_divergence_kernel(model, pc, opt);
  const auto table = estimate_score(ens, bins, coord);
  auto os = r.open("results.csv");
  write_table_csv(os, table);
  SvgPlot plot("Score E[nu_T | x_T]", "x_T", "score");
  plot.add(table_series("divergence kernel", table));
  r.plot("plot.svg", plot);
  const auto m = mean_nu(ens, coord);
  r.summary = table_summary(table);
  r.summary["mean_nu"] = m.mean;
  r.summary["mean_nu_se"] = m.se;
  r.summary["n_failed"] = ens.n_failed;
}

void cmd_linresp(Run& r) {
  const auto model = model_from(r.cfg);
  auto pc = paths_from(r);
  const auto opt = estimator_from(r.cfg);
  pc.directions = {direction_from(r.cfg, "estimator", model)};
  int coord = 0;
  const auto bins = bins_from(r.cfg, coord, model.dim());
  pc.alpha = opt.alpha;
  r.cfg.reject_unknown();
  const auto ens = run_divergence_kernel(model, pc, opt);
  const auto table = estimate_linear_response(ens, bins, 0, coord);
  auto os = r.open("results.csv");
  write_table_csv(os, table);
  SvgPlot plot("Linear response E[S_T | x_T]", "x_T", "d log h_T");
  plot.add(table_series("divergence kernel", table));
  r.plot("plot.svg", plot);
  const auto m = mean_response(ens);
  r.summary = table_summary(table);
  r.summary["mean_response"] = m.mean;
  r.summary["mean_response_se"] = m.se;
  r.summary["n_failed"] = ens.n_failed;
}

void write_trace(Run& r, const ModelInstance& model, const ErgodicConfig& e, double duration) {
  const auto trace = ergodic_orbit_trace(model, e, 0, duration);
  auto os = r.open("trace.csv");
  os << "t";
  for (int j = 0; j < model.dim(); ++j) os << ",x_" << j;
  os << '\n';
  std::vector<double> t(static_cast<std::size_t>(trace.rows()));
  for (Eigen::Index i = 0; i < trace.rows(); ++i) {
    t[static_cast<std::size_t>(i)] = static_cast<double>(i) * e.dt;
    os << t[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < trace.cols(); ++j) os << ',' << trace(i, j);
    os << '\n';
  }
  SvgPlot plot("Orbit trace", "t", "x");
  for (int j = 0; j < std::min(2, model.dim()); ++j) {
    std::vector<double> y(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) y[i] = trace(static_cast<Eigen::Index>(i), j);
    plot.add({"x_" + std::to_string(j), t, y, {}, SvgPlot::Style::Line});
  }
  r.plot("trace.svg", plot);
}

void write_orbits(Run& r, const ErgodicResult& res, const FdErgodicResult* fd) {
  auto os = r.open("results.csv");
  os << "orbit,phi_avg,response" << (fd ? ",fd_response" : "") << '\n';
  for (std::size_t o = 0; o < res.orbit_response.size(); ++o) {
    os << o << ',' << res.orbit_phi_avg[o] << ',' << res.orbit_response[o];
    if (fd) os << ',' << fd->orbit_response[o];
    os << '\n';
  }
}

void cmd_ergodic(Run& r) {
  const auto model = model_from(r.cfg);
  const auto e = ergodic_from(r, model);
  const bool trace = r.cfg.get_bool("ergodic", "trace", model.dim() > 1);
  const double trace_duration = r.cfg.get_positive("ergodic", "trace_duration", 1.5);
  r.cfg.reject_unknown();
  const auto res = ergodic_linear_response(model, e);
  write_orbits(r, res, nullptr);
  if (trace) write_trace(r, model, e, trace_duration);
  SvgPlot plot("Ergodic linear response per orbit", "orbit", "response");
  std::vector<double> idx(res.orbit_response.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<double>(i);
  plot.add({"response", idx, res.orbit_response, {}, SvgPlot::Style::Points});
  r.plot("plot.svg", plot);
  r.summary = {{"phi_avg", res.phi_avg},
               {"phi_avg_se", res.phi_avg_se},
               {"response", res.response},
               {"response_se", res.response_se},
               {"steps_per_orbit", res.steps_per_orbit},
               {"window_steps", res.window_steps}};
}

void cmd_oracle(Run& r) {
  auto& c = r.cfg;
  const auto kind = c.get_string("oracle", "kind", "quadrature");
  const auto model = model_from(c);
  if (kind == "fd_ergodic") {
    const auto e = ergodic_from(r, model);
    const double eps = c.get_positive("oracle", "eps", 0.1);
    c.reject_unknown();
    const auto fd = fd_ergodic_response(model, e, eps);
    auto os = r.open("results.csv");
    os << "orbit,fd_response\n";
    for (std::size_t o = 0; o < fd.orbit_response.size(); ++o)
      os << o << ',' << fd.orbit_response[o] << '\n';
    r.summary = {{"response", fd.response}, {"se", fd.se},
                 {"phi_plus", fd.phi_plus}, {"phi_minus", fd.phi_minus}};
    return;
  }

  int coord = 0;
  const auto bins = bins_from(c, coord, model.dim());
  ConditionalTable table;
  std::string title;
  if (kind == "quadrature") {
    if (model.dim() != 1) throw ConfigError("oracle quadrature needs a 1-D model");
    const double dt = c.get_positive("simulate", "dt", 0.01);
    const double t0 = c.get_double("simulate", "t0", 0.0);
    const auto dir = direction_from(c, "estimator", model);
    QuadratureOptions q;
    q.n_points = static_cast<int>(c.get_int("oracle", "n_points", q.n_points));
    const int per_bin = static_cast<int>(c.get_int("oracle", "points_per_bin", 200));
    c.reject_unknown();
    table = quadrature_binned_response(one_step_system(model, dt, dir, t0), bins, q, per_bin);
    title = "One-step quadrature d log h_1";
  } else if (kind == "fd_log_density") {
    FdLogDensityConfig f;
    f.eps = c.get_positive("oracle", "eps", 0.05);
    f.n_bootstrap = static_cast<int>(c.get_int("oracle", "n_bootstrap", 200));
    f.bins = bins;
    f.paths = paths_from(r);
    const auto dir = direction_from(c, "estimator", model);
    c.reject_unknown();
    const auto fd = fd_log_density(model, dir, f);
    table = fd.table;
    auto os2 = r.open("fd_double_step.csv");
    write_table_csv(os2, fd.table_double);
    r.summary["locally_linear"] = fd.locally_linear;
    title = "Finite-difference d log h_T";
  } else if (kind == "likelihood_ratio") {
    auto pc = paths_from(r);
    pc.directions = {direction_from(c, "estimator", model)};
    c.reject_unknown();
    const auto ens = run_likelihood_ratio(model, pc);
    table = estimate_linear_response(ens, bins, 0, coord);
    title = "Likelihood-ratio d log h_T";
  } else if (kind == "ou_analytic") {
    if (model.name != "ou" || model.dim() != 1) throw ConfigError("ou_analytic needs the 1-D ou model");
    const double horizon = c.get_positive("simulate", "T", 1.0);
    const double sigma0 = c.get_positive("model", "sigma0", 1.0);
    const auto mo = ou_analytic(horizon, c.get_double("model", "init_mean", 0.0),
                                c.get_positive("model", "init_var", 1.0), model.gamma()[0],
                                sigma0 + model.gamma()[1]);
    c.reject_unknown();
    auto os = r.open("results.csv");
    os << "bin_left,bin_right,score,dlog_drift,dlog_sigma\n";
    const auto pdf = [&](double x) { return mo.pdf(x); };
    std::vector<double> x, s, d, g;
    const double w = (bins.hi - bins.lo) / bins.n_bins;
    for (int i = 0; i < bins.n_bins; ++i) {
      const double l = bins.lo + i * w, rr = l + w;
      x.push_back(0.5 * (l + rr));
      s.push_back(bin_average([&](double v) { return mo.score(v); }, pdf, l, rr));
      d.push_back(bin_average([&](double v) { return mo.dlog_drift(v); }, pdf, l, rr));
      g.push_back(bin_average([&](double v) { return mo.dlog_sigma(v); }, pdf, l, rr));
      os << l << ',' << rr << ',' << s.back() << ',' << d.back() << ',' << g.back() << '\n';
    }
    SvgPlot plot("OU closed forms (bin averages)", "x_T", "value");
    plot.add({"score", x, s, {}});
    plot.add({"d log h / d gamma0", x, d, {}});
    plot.add({"d log h / d sigma", x, g, {}});
    r.plot("plot.svg", plot);
    r.summary = {{"mean", mo.mean}, {"var", mo.var}};
    return;
  } else {
    throw ConfigError("oracle.kind must be quadrature, fd_log_density, likelihood_ratio, "
                      "ou_analytic or fd_ergodic (got '" + kind + "')");
  }
  auto os = r.open("results.csv");
  write_table_csv(os, table);
  SvgPlot plot(title, "x", "d log h");
  plot.add(table_series(kind, table));
  r.plot("plot.svg", plot);
  const auto s = table_summary(table);
  for (auto it = s.begin(); it != s.end(); ++it) r.summary[it.key()] = it.value();
}

void plot_history(Run& r, const FitHistory& h) {
  std::vector<double> it, dist;
  for (const auto& rec : h.records) {
    it.push_back(rec.iteration);
    dist.push_back(rec.distance);
  }
  if (!h.records.empty() && h.records.front().distance >= 0.0) {
    SvgPlot plot("Distance to the true parameters", "iteration", "|gamma_n - gamma_true|");
    plot.add({"distance", it, dist, {}});
    r.plot("plot.svg", plot);
  } else {
    SvgPlot plot("Parameter history", "iteration", "gamma");
    for (std::size_t k = 0; !h.records.empty() && k < h.records.front().gamma.size(); ++k) {
      std::vector<double> g;
      for (const auto& rec : h.records) g.push_back(rec.gamma[k]);
      plot.add({"gamma_" + std::to_string(k), it, g, {}});
    }
    r.plot("plot.svg", plot);
  }
}

void cmd_fit(Run& r) {
  auto f = fit_from(r);
  const auto data_file = r.cfg.get_string("fit", "data_file", "");
  r.cfg.reject_unknown();
  Mat data;
  if (!data_file.empty()) {
    std::ifstream in(data_file);
    if (!in) throw ConfigError("cannot read fit.data_file '" + data_file + "'");
    data = read_dataset_csv(in);
  } else {
    if (f.gamma_true.empty()) throw ConfigError("fit: set gamma_true or data_file");
    const auto truth = get_model(f.model, ModelParams{f.gamma_true, f.dim});
    data = generate_dataset(truth, f.n_data, f.dt, f.n_steps(), f.seed, f.workers);
  }
  {
    auto os = r.open("dataset.csv");
    write_dataset_csv(os, data);
  }
  const auto h = fit(f, data);
  auto os = r.open("results.csv");
  write_history_csv(os, h);
  plot_history(r, h);
  const auto& last = h.records.back();
  r.summary = {{"final_gamma", last.gamma}, {"final_distance", last.distance}};
  if (last.distance >= 0.0) {
    const auto& best = h.records[h.best_index()];
    r.summary["best_iteration"] = best.iteration;
    r.summary["best_gamma"] = best.gamma;
    r.summary["best_distance"] = best.distance;
  }
}

void repro_sec41(Run& r) {
  auto& c = r.cfg;
  const auto model = model_from(c);
  auto pc = paths_from(r);
  const auto opt = estimator_from(c);
  int coord = 0;
  const auto bins = bins_from(c, coord, 1);
  pc.alpha = opt.alpha;
  pc.directions = {coordinate_direction(model.n_params(), 0)};
  const auto ens = run_divergence_kernel(model, pc, opt);
  const auto response = estimate_linear_response(ens, bins, 0, coord);
  const auto score = estimate_score(ens, bins, coord);

  FdLogDensityConfig f;
  f.eps = c.get_positive("oracle", "eps", 0.05);
  f.n_bootstrap = static_cast<int>(c.get_int("oracle", "n_bootstrap", 200));
  f.bins = bins;
  f.paths = pc;
  f.paths.seed = derive_seed(pc.seed, 1);
  f.paths.directions.clear();
  c.reject_unknown();
  const auto fd = fd_log_density(model, pc.directions.front(), f);

  {
    auto os = r.open("results.csv");
    write_table_csv(os, response);
  }
  {
    auto os = r.open("score.csv");
    write_table_csv(os, score);
  }
  {
    auto os = r.open("fd_oracle.csv");
    write_table_csv(os, fd.table);
  }
  SvgPlot rp("Linear response d log h_T", "x_T", "d log h_T");
  rp.add(table_series("divergence kernel", response));
  rp.add(table_series("finite difference", fd.table, SvgPlot::Style::Points));
  r.plot("plot.svg", rp);
  SvgPlot sp("Score of h_T", "x_T", "grad log h_T");
  sp.add(table_series("divergence kernel", score));
  r.plot("score.svg", sp);
  r.summary = table_summary(response);
  r.summary["fd_locally_linear"] = fd.locally_linear;
}

void repro_sec42(Run& r) {
  const auto model = model_from(r.cfg);
  const auto e = ergodic_from(r, model);
  const bool fd_enabled = r.cfg.get_bool("oracle", "enabled", true);
  const double eps = r.cfg.get_positive("oracle", "eps", 0.1);
  r.cfg.reject_unknown();
  const auto res = ergodic_linear_response(model, e);
  std::optional<FdErgodicResult> fd;
  if (fd_enabled) fd = fd_ergodic_response(model, e, eps);
  write_orbits(r, res, fd ? &*fd : nullptr);
  write_trace(r, model, e, 1.5);
  r.outputs.push_back("plot.svg");
  std::filesystem::copy_file(r.out / "trace.svg", r.out / "plot.svg",
                             std::filesystem::copy_options::overwrite_existing);
  r.summary = {{"phi_avg", res.phi_avg},
               {"phi_avg_se", res.phi_avg_se},
               {"response", res.response},
               {"response_se", res.response_se}};
  if (fd) {
    r.summary["fd_response"] = fd->response;
    r.summary["fd_response_se"] = fd->se;
  }
}

// ---------------------------------------------------------------- driver

void write_manifest(const Run& r, double wall) {
  ojson m;
  m["tool"] = "divker";
  m["subcommand"] = r.subcommand;
  if (!r.preset.empty()) m["preset"] = r.preset;
  m["seed"] = r.seed;
  m["workers"] = r.workers;
  m["git_describe"] = DIVKER_GIT_DESCRIBE;
  m["config"] = r.cfg.effective_text();
  m["wall_seconds"] = wall;
  m["outputs"] = r.outputs;
  m["summary"] = r.summary;
  std::ofstream os(r.out / "manifest.json");
  if (!os) throw ConfigError("cannot write manifest.json");
  os << m.dump(2) << '\n';
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out = "out";
  std::string preset;
};

void add_flags(CLI::App* sub, Flags& f, bool config_required) {
  auto* opt = sub->add_option("--config", f.config, "Config file (key = value, [sections])");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  else opt->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "Master seed (overrides run.seed)");
  sub->add_option("--workers", f.workers, "Worker threads; results do not depend on it")
      ->check(CLI::PositiveNumber);
  sub->add_option("--out", f.out, "Output directory")->capture_default_str();
}

int execute(const std::string& subcommand, const Flags& f, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  Run r;
  r.subcommand = subcommand;
  r.preset = f.preset;
  if (!f.preset.empty()) {
    r.cfg = Config::parse(repro_preset_text(f.preset), "preset " + f.preset);
    if (!f.config.empty()) r.cfg.merge(Config::load(f.config));
  } else {
    r.cfg = Config::load(f.config);
  }
  if (f.seed) r.cfg.set("run", "seed", std::to_string(*f.seed));
  r.seed = r.cfg.get_u64("run", "seed", 1);
  r.workers = f.workers ? *f.workers : default_workers();
  r.out = f.out;
  fs::create_directories(r.out);

  if (subcommand == "simulate") cmd_simulate(r);
  else if (subcommand == "score") cmd_score(r);
  else if (subcommand == "linresp") cmd_linresp(r);
  else if (subcommand == "ergodic") cmd_ergodic(r);
  else if (subcommand == "oracle") cmd_oracle(r);
  else if (subcommand == "fit") cmd_fit(r);
  else if (f.preset == "sec4.1") repro_sec41(r);
  else if (f.preset == "sec4.2" || f.preset == "sec4.2-full") repro_sec42(r);
  else if (f.preset == "sec5.1" || f.preset == "sec5.2") cmd_fit(r);

  r.cfg.reject_unknown();
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(r, wall);
  out << subcommand << (r.preset.empty() ? "" : " " + r.preset) << ": wrote "
      << (r.out / "results.csv").string() << " in " << std::fixed << std::setprecision(2)
      << wall << " s\n";
  return kExitOk;
}

}  // namespace

std::vector<std::string> repro_presets() {
  std::vector<std::string> names;
  for (const auto& [k, v] : presets()) names.push_back(k);
  return names;
}

std::string repro_preset_text(const std::string& name) {
  const auto it = presets().find(name);
  if (it == presets().end()) throw ConfigError("unknown repro preset '" + name + "'");
  return it->second;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Divergence-kernel scores and linear responses of SDEs"};
  app.require_subcommand(1);
  Flags flags;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "Simulate an ensemble and write terminal states"},
      {"score", "Binned score estimate E[nu_T | x_T]"},
      {"linresp", "Binned linear response E[S_T | x_T]"},
      {"ergodic", "Linear response of a stationary average"},
      {"oracle", "Reference values: quadrature, finite differences, closed forms"},
      {"fit", "Fit SDE parameters to data by KL gradient descent"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_flags(sub, flags, true);
    subs.push_back(sub);
  }
  auto* repro = app.add_subcommand("repro", "Run a preset experiment");
  repro->add_option("preset", flags.preset, "Preset name")
      ->required()
      ->check(CLI::IsMember(repro_presets()));
  add_flags(repro, flags, false);
  subs.push_back(repro);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  std::string chosen;
  for (auto* s : subs)
    if (s->parsed()) chosen = s->get_name();
  try {
    return execute(chosen, flags, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ModelError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace divker
