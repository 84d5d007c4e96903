#include "divker/linresp.hpp"

#include <cmath>
#include <deque>
#include <sstream>

namespace divker {

Vec delta_x_continuous(const DerivativeBundle& b, const Sensitivity& d, const Vec& dB,
                       double dt) {
  return -d.delta_drift * dt - d.delta_sigma * dB + (d.delta_sigma * dt) * b.grad_sigma;
}

std::optional<Vec> delta_x_discrete(const StepJacobian& jac, const Sensitivity& d,
                                    const Vec& dB, double dt) {
  if (jac.singular) return std::nullopt;
  return Vec(-jac.lu.solve(d.delta_drift * dt + d.delta_sigma * dB));
}

double response_increment(const Vec& nu, const DerivativeBundle& b, const Sensitivity& d,
                          const Vec& dB, double dt) {
  const double nu_term = -nu.dot(d.delta_drift) * dt - d.delta_sigma * nu.dot(dB) +
                         d.delta_sigma * nu.dot(b.grad_sigma) * dt;
  return nu_term + d.delta_sigma * b.lap_sigma * dt - d.div_delta_drift * dt -
         d.grad_delta_sigma.dot(dB) + b.grad_sigma.dot(d.grad_delta_sigma) * dt;
}

double delta_log_det_g(const ModelInstance& model, double t, const Vec& x,
                       const DerivativeBundle& b, const Sensitivity& d, const Direction& dir,
                       const Vec& dB, double dt, DivergenceMode mode) {
  if (mode == DivergenceMode::Approximate) {
    return d.div_delta_drift * dt + d.grad_delta_sigma.dot(dB) -
           b.grad_sigma.dot(d.grad_delta_sigma) * dt;
  }
  // Coordinate partials combined linearly, so the result is exactly linear
  // in `dir` and exactly zero for zero weights.
  constexpr double eps = 1e-6;
  const std::vector<double> g(model.gamma().begin(), model.gamma().end());
  double out = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (dir[k] == 0.0) continue;
    auto gp = g, gm = g;
    gp[k] += eps;
    gm[k] -= eps;
    const double partial = (log_abs_det_g(*model.family, t, x, gp, dB, dt) -
                            log_abs_det_g(*model.family, t, x, gm, dB, dt)) /
                           (2.0 * eps);
    out += dir[k] * partial;
  }
  return out;
}

namespace {

class DivergenceKernelHook final : public PathHook {
 public:
  DivergenceKernelHook(const ModelInstance& model, std::vector<Direction> dirs,
                       EstimatorOptions options)
      : model_(model), dirs_(std::move(dirs)), opt_(options) {}

  void step(PathState& s, const DerivativeBundle& b, const Vec& dB, double dt) override {
    if (opt_.mode == StepMode::Continuous) {
      for (std::size_t k = 0; k < dirs_.size(); ++k)
        s.acc[k] += response_increment(s.nu, b, b.delta[k], dB, dt);
      step_nu_continuous(s.nu, b, dB, dt, opt_.alpha);
      return;
    }
    const StepJacobian jac = step_jacobian(b, dB, dt);
    if (jac.singular) {
      s.failed = true;
      return;
    }
    const Vec dg = div_g(model_, s.t, s.x, b, dB, dt, opt_.divergence);
    for (std::size_t k = 0; k < dirs_.size(); ++k) {
      const auto dx = delta_x_discrete(jac, b.delta[k], dB, dt);
      const double dlog =
          delta_log_det_g(model_, s.t, s.x, b, b.delta[k], dirs_[k], dB, dt, opt_.divergence);
      s.acc[k] = step_accumulator_discrete(s.acc[k], s.nu, dg, *dx, dlog);
    }
    step_nu_discrete(s.nu, jac, dg, dB, b.sigma, dt, opt_.alpha * dt);
  }

 private:
  const ModelInstance& model_;
  std::vector<Direction> dirs_;
  EstimatorOptions opt_;
};

}  // namespace

HookFactory divergence_kernel_hooks(const ModelInstance& model, const PathConfig& config,
                                    const EstimatorOptions& options) {
  if (!(options.alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (options.mode == StepMode::Discrete && options.alpha * config.dt > 1.0)
    throw ConfigError("discrete mode needs alpha * dt <= 1");
  return [&model, dirs = config.directions, options] {
    return std::make_unique<DivergenceKernelHook>(model, dirs, options);
  };
}

PathEnsemble run_divergence_kernel(const ModelInstance& model, const PathConfig& config,
                                   const EstimatorOptions& options) {
  return simulate_ensemble(model, config, divergence_kernel_hooks(model, config, options));
}

ConditionalTable estimate_linear_response(const PathEnsemble& ens, const BinSpec& spec,
                                          std::size_t k, int coord) {
  if (k >= ens.n_directions) throw ConfigError("no accumulator for that direction");
  std::vector<double> x, payload;
  x.reserve(ens.size());
  payload.reserve(ens.size());
  for (std::size_t p = 0; p < ens.size(); ++p) {
    if (!ens.valid[p]) continue;
    const auto i = static_cast<Eigen::Index>(p);
    x.push_back(ens.x(i, coord));
    payload.push_back(ens.acc(i, static_cast<Eigen::Index>(k)));
  }
  auto table = bin_1d(x, payload, spec.lo, spec.hi, spec.n_bins);
  table.apply_min_count(spec.min_count);
  return table;
}

MeanSe mean_response(const PathEnsemble& ens, std::size_t k) {
  std::vector<double> v;
  v.reserve(ens.size());
  for (std::size_t p = 0; p < ens.size(); ++p)
    if (ens.valid[p])
      v.push_back(ens.acc(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)));
  return mean_se(v);
}

Observable observable_by_name(const std::string& name) {
  if (name == "mean")
    return {name, [](const Vec& x) { return x.sum() / static_cast<double>(x.size()); }};
  if (name == "mean_square")
    return {name, [](const Vec& x) { return x.squaredNorm() / static_cast<double>(x.size()); }};
  throw ConfigError("unknown observable '" + name + "' (expected mean or mean_square)");
}

void ErgodicConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("ergodic: dt must be positive");
  if (!(window > 0.0)) throw ConfigError("ergodic: window W must be positive");
  if (!(window < horizon)) throw ConfigError("ergodic: need W < T");
  if (!(burn_in >= 0.0)) throw ConfigError("ergodic: burn_in must be >= 0");
  if (n_orbits < 1) throw ConfigError("ergodic: need at least one orbit");
  if (!observable.value) throw ConfigError("ergodic: observable not set");
  const auto n = static_cast<long long>(std::llround(horizon / dt));
  const auto w = static_cast<long long>(std::llround(window / dt));
  if (n - w < 1) throw ConfigError("ergodic: orbit too short for the window after burn-in");
}

namespace {

struct OrbitResult {
  double phi_avg = 0.0;
  double response = 0.0;
};

OrbitResult run_orbit(const ModelInstance& model, const ErgodicConfig& c, std::size_t orbit) {
  const int m = model.dim();
  const auto n_burn = static_cast<std::size_t>(std::llround(c.burn_in / c.dt));
  const auto n = static_cast<std::size_t>(std::llround(c.horizon / c.dt));
  const auto w = static_cast<std::size_t>(std::llround(c.window / c.dt));
  const std::size_t n_eff = n - w;
  const std::vector<Direction> dirs{c.direction};

  PathRng init_rng(c.seed, orbit, StreamKind::Initial);
  PathRng inc_rng(c.seed, orbit, StreamKind::Increments);
  Vec x(m), nu = Vec::Zero(m), dB(m);
  model.init.sample(init_rng, x);
  DerivativeBundle b(m, 1);
  const double sd = std::sqrt(c.dt);

  // window[j] holds dS of the last w steps; rolling = their sum.
  std::vector<double> window(w, 0.0);
  std::size_t head = 0;
  double rolling = 0.0;
  double phi_sum = 0.0, phi_r = 0.0, r_sum = 0.0;

  for (std::size_t step = 0; step < n_burn + n; ++step) {
    for (int i = 0; i < m; ++i) dB[i] = sd * inc_rng.normal();
    const double t = static_cast<double>(step) * c.dt;
    eval_bundle(model, t, x, dirs, b);
    if (step >= n_burn) {
      const std::size_t k = step - n_burn;
      const double phi = c.observable.value(x);
      phi_sum += phi;
      phi_r += phi * rolling;
      r_sum += rolling;
      const double ds = k < n_eff ? response_increment(nu, b, b.delta[0], dB, c.dt) : 0.0;
      rolling += ds - window[head];
      window[head] = ds;
      head = (head + 1) % w;
    }
    step_nu_continuous(nu, b, dB, c.dt, c.alpha);
    x += b.drift * c.dt + b.sigma * dB;
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > kBlowupThreshold || !nu.allFinite()) {
      std::ostringstream msg;
      msg << "ergodic orbit " << orbit << " blew up at step " << step;
      throw NumericalError(msg.str());
    }
  }
  OrbitResult r;
  r.phi_avg = phi_sum / static_cast<double>(n);
  // sum_n dS_n sum_{m=1..w} (Phi_{n+m} - avg) = sum_k Phi_k R_k - avg sum_k R_k
  r.response = (phi_r - r.phi_avg * r_sum) / static_cast<double>(n_eff);
  return r;
}

}  // namespace

ErgodicResult ergodic_linear_response(const ModelInstance& model, const ErgodicConfig& c) {
  c.validate();
  if (model.family->time_dependent())
    throw ConfigError("ergodic response needs time-independent coefficients");
  if (c.direction.size() != model.n_params())
    throw ConfigError("ergodic: direction has wrong length");

  std::vector<OrbitResult> orbits(static_cast<std::size_t>(c.n_orbits));
  parallel_for(orbits.size(), c.workers, [&](std::size_t b, std::size_t e) {
    for (std::size_t o = b; o < e; ++o) orbits[o] = run_orbit(model, c, o);
  });

  ErgodicResult res;
  res.steps_per_orbit = static_cast<std::size_t>(std::llround(c.horizon / c.dt));
  res.window_steps = static_cast<std::size_t>(std::llround(c.window / c.dt));
  for (const auto& o : orbits) {
    res.orbit_phi_avg.push_back(o.phi_avg);
    res.orbit_response.push_back(o.response);
  }
  const auto phi = mean_se(res.orbit_phi_avg);
  const auto resp = mean_se(res.orbit_response);
  res.phi_avg = phi.mean;
  res.phi_avg_se = phi.se;
  res.response = resp.mean;
  res.response_se = resp.se;
  return res;
}

Mat ergodic_orbit_trace(const ModelInstance& model, const ErgodicConfig& c, std::size_t orbit,
                        double duration, int stride) {
  const int m = model.dim();
  const auto n_burn = static_cast<std::size_t>(std::llround(c.burn_in / c.dt));
  const auto n = static_cast<std::size_t>(std::llround(duration / c.dt));
  PathRng init_rng(c.seed, orbit, StreamKind::Initial);
  PathRng inc_rng(c.seed, orbit, StreamKind::Increments);
  Vec x(m), dB(m);
  model.init.sample(init_rng, x);
  const double sd = std::sqrt(c.dt);
  Mat trace(n / static_cast<std::size_t>(stride) + 1, m);
  Eigen::Index row = 0;
  for (std::size_t step = 0; step <= n_burn + n; ++step) {
    if (step >= n_burn && (step - n_burn) % static_cast<std::size_t>(stride) == 0 &&
        row < trace.rows())
      trace.row(row++) = x.transpose();
    if (step == n_burn + n) break;
    for (int i = 0; i < m; ++i) dB[i] = sd * inc_rng.normal();
    x = em_step(x, static_cast<double>(step) * c.dt, dB, c.dt, model);
  }
  trace.conservativeResize(row, m);
  return trace;
}

}  // namespace divker
