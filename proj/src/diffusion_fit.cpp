#include "divker/diffusion_fit.hpp"

#include "divker/conditioning.hpp"
#include "divker/rng.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace divker {

int FitConfig::n_steps() const { return static_cast<int>(std::llround(horizon / dt)); }

void FitConfig::validate() const {
  if (!(dt > 0.0) || !(horizon > 0.0) || n_steps() < 1)
    throw ConfigError("fit: need dt > 0 and T >= dt");
  if (n_data < 1 || n_paths < 1) throw ConfigError("fit: need n_data, n_paths >= 1");
  if (n_neighbors < 1 || n_neighbors > n_paths)
    throw ConfigError("fit: need 1 <= n_neighbors <= n_paths");
  if (n_updates < 0) throw ConfigError("fit: n_updates must be >= 0");
  if (!(eta >= 0.0)) throw ConfigError("fit: eta must be >= 0");
  if (!(alpha >= 0.0)) throw ConfigError("fit: alpha must be >= 0");
}

std::size_t FitHistory::best_index() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].distance < records[best].distance) best = i;
  return best;
}

Mat generate_dataset(const ModelInstance& model, std::size_t n_data, double dt, int n_steps,
                     std::uint64_t seed, int workers) {
  PathConfig pc;
  pc.dt = dt;
  pc.n_steps = n_steps;
  pc.n_paths = n_data;
  pc.seed = derive_seed(seed, static_cast<std::uint64_t>(StreamKind::Dataset));
  pc.workers = workers;
  const auto ens = simulate_ensemble(model, pc);
  Mat data(static_cast<Eigen::Index>(ens.n_valid()), model.dim());
  Eigen::Index row = 0;
  for (std::size_t p = 0; p < ens.size(); ++p)
    if (ens.valid[p]) data.row(row++) = ens.x.row(static_cast<Eigen::Index>(p));
  return data;
}

void write_dataset_csv(std::ostream& os, const Mat& data) {
  for (Eigen::Index j = 0; j < data.cols(); ++j) os << (j ? "," : "") << 'y' << j;
  os << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) os << (j ? "," : "") << data(i, j);
    os << '\n';
  }
}

Mat read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.empty() || line[0] != 'y')
    throw ConfigError("dataset CSV: missing y0..y{M-1} header");
  const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index n = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError("dataset CSV line " + std::to_string(line_no) + ": bad number '" +
                          cell + "'");
      }
      ++n;
    }
    if (n != cols)
      throw ConfigError("dataset CSV line " + std::to_string(line_no) + ": expected " +
                        std::to_string(cols) + " columns");
  }
  const auto rows = static_cast<Eigen::Index>(values.size()) / cols;
  Mat data(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) data(i, j) = values[i * cols + j];
  return data;
}

KlGradient kl_gradient(const Mat& data, const PathEnsemble& ens, std::size_t n_neighbors) {
  if (data.cols() != ens.dim) throw ConfigError("kl_gradient: data dimension mismatch");
  std::vector<Eigen::Index> rows;
  for (std::size_t p = 0; p < ens.size(); ++p)
    if (ens.valid[p]) rows.push_back(static_cast<Eigen::Index>(p));
  if (n_neighbors > rows.size())
    throw ConfigError("kl_gradient: more neighbors than valid paths");
  Mat endpoints(static_cast<Eigen::Index>(rows.size()), ens.dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    endpoints.row(static_cast<Eigen::Index>(i)) = ens.x.row(rows[i]);

  const auto neighbors = knn(data, endpoints, n_neighbors);
  const std::size_t K = ens.n_directions;
  KlGradient g;
  g.value.assign(K, 0.0);
  g.se.assign(K, 0.0);
  std::vector<double> per_point(neighbors.size());
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t q = 0; q < neighbors.size(); ++q) {
      double sum = 0.0;
      for (auto l : neighbors[q]) sum += ens.acc(rows[l], static_cast<Eigen::Index>(k));
      per_point[q] = -sum / static_cast<double>(n_neighbors);
    }
    const auto ms = mean_se(per_point);
    g.value[k] = ms.mean;
    g.se[k] = std::isnan(ms.se) ? 0.0 : ms.se;
  }
  return g;
}

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (b.empty()) return -1.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

FitHistory fit(const FitConfig& config, const Mat& data) {
  config.validate();
  ModelParams params{config.gamma0, config.dim};
  auto model = get_model(config.model, params);
  if (!config.gamma_true.empty() && config.gamma_true.size() != model.n_params())
    throw ConfigError("fit: gamma_true has wrong length");

  PathConfig pc;
  pc.dt = config.dt;
  pc.n_steps = config.n_steps();
  pc.n_paths = config.n_paths;
  pc.alpha = config.alpha;
  pc.workers = config.workers;
  pc.directions = coordinate_directions(model.n_params());
  EstimatorOptions opt;
  opt.alpha = config.alpha;

  FitHistory history;
  std::vector<double> gamma = model.params.gamma;
  for (int it = 0; it <= config.n_updates; ++it) {
    const auto start = std::chrono::steady_clock::now();
    const auto current = model.with_gamma(gamma);
    pc.seed = derive_seed(config.seed, static_cast<std::uint64_t>(it) + 1000);
    const auto ens = run_divergence_kernel(current, pc, opt);
    const auto grad = kl_gradient(data, ens, config.n_neighbors);
    for (double g : grad.value) {
      if (!std::isfinite(g)) {
        std::ostringstream msg;
        msg << "non-finite KL gradient at iteration " << it << ", gamma =";
        for (double v : gamma) msg << ' ' << v;
        msg << ", failed paths = " << ens.n_failed;
        throw NumericalError(msg.str());
      }
    }
    FitRecord rec;
    rec.iteration = it;
    rec.gamma = gamma;
    rec.gradient = grad.value;
    rec.gradient_se = grad.se;
    rec.distance = distance(gamma, config.gamma_true);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.records.push_back(rec);
    if (it == config.n_updates) break;
    for (std::size_t k = 0; k < gamma.size(); ++k) gamma[k] -= config.eta * grad.value[k];
  }
  return history;
}

FitHistory fit(const FitConfig& config) {
  config.validate();
  if (config.gamma_true.empty()) throw ConfigError("fit: gamma_true needed to generate data");
  const auto truth = get_model(config.model, ModelParams{config.gamma_true, config.dim});
  const Mat data = generate_dataset(truth, config.n_data, config.dt, config.n_steps(),
                                    config.seed, config.workers);
  return fit(config, data);
}

void write_history_csv(std::ostream& os, const FitHistory& h) {
  if (h.records.empty()) return;
  const std::size_t n = h.records.front().gamma.size();
  os << "iteration";
  for (std::size_t k = 0; k < n; ++k) os << ",gamma_" << k;
  for (std::size_t k = 0; k < n; ++k) os << ",grad_" << k;
  os << ",distance,wall_seconds\n" << std::setprecision(17);
  for (const auto& r : h.records) {
    os << r.iteration;
    for (double v : r.gamma) os << ',' << v;
    for (double v : r.gradient) os << ',' << v;
    os << ',' << r.distance << ',' << r.wall_seconds << '\n';
  }
}

}  // namespace divker
