#include "divker/simulate.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>
#include <string>
#include <thread>

namespace divker {

void PathConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (n_steps < 1) throw ConfigError("n_steps must be >= 1");
  if (n_paths < 1) throw ConfigError("n_paths must be >= 1");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

BrownianIncrements generate_increments(std::uint64_t seed, std::uint64_t path_index,
                                       int n_steps, int dim, double dt) {
  PathRng rng(seed, path_index, StreamKind::Increments);
  const double sd = std::sqrt(dt);
  BrownianIncrements out(n_steps, dim);
  for (int n = 0; n < n_steps; ++n)
    for (int i = 0; i < dim; ++i) out(n, i) = sd * rng.normal();
  return out;
}

Vec em_step(const Vec& x, double t, const Vec& dB, double dt, const ModelInstance& model) {
  Vec f(x.size());
  model.drift(t, x, f);
  const double s = model.sigma(t, x);
  if (!(s > 0.0)) throw ModelError(model.name + ": non-positive diffusion");
  Vec next = x + f * dt + s * dB;
  if (!next.allFinite() || next.cwiseAbs().maxCoeff() > kBlowupThreshold)
    throw NumericalError("state blow-up");
  return next;
}

bool state_is_sane(const PathState& s) {
  if (!s.x.allFinite() || s.x.cwiseAbs().maxCoeff() > kBlowupThreshold) return false;
  if (!s.nu.allFinite()) return false;
  for (double a : s.acc)
    if (!std::isfinite(a)) return false;
  return true;
}

void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || n < 2) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(w);
  const std::size_t chunk = (n + w - 1) / w;
  for (std::size_t k = 0; k < w; ++k) {
    const std::size_t b = k * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    threads.emplace_back([&, k, b, e] {
      try {
        fn(b, e);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

int default_workers() {
  if (const char* env = std::getenv("DIVKER_WORKERS")) {
    const int w = std::atoi(env);
    if (w >= 1) return w;
  }
  return 1;
}

PathEnsemble simulate_ensemble(const ModelInstance& model, const PathConfig& config,
                               const HookFactory& hooks) {
  config.validate();
  const int m = model.dim();
  const std::size_t L = config.n_paths;
  const std::size_t K = config.directions.size();

  PathEnsemble ens;
  ens.dim = m;
  ens.n_directions = K;
  ens.horizon = config.horizon();
  ens.x0.resize(L, m);
  ens.x.resize(L, m);
  ens.nu.resize(L, m);
  ens.acc.resize(L, K);
  ens.valid.assign(L, 1);
  if (config.store_trajectories) ens.trajectories.resize(L);

  const double sd = std::sqrt(config.dt);

  parallel_for(L, config.workers, [&](std::size_t begin, std::size_t end) {
    auto hook = hooks ? hooks() : nullptr;
    DerivativeBundle bundle(m, K);
    PathState s;
    s.nu.resize(m);
    s.acc.resize(K);
    Vec dB(m), f(m);
    for (std::size_t p = begin; p < end; ++p) {
      PathRng init_rng(config.seed, p, StreamKind::Initial);
      PathRng inc_rng(config.seed, p, StreamKind::Increments);
      s.path_index = p;
      s.step = 0;
      s.t = config.t0;
      s.failed = false;
      model.init.sample(init_rng, s.x);
      model.init.score(s.x, s.nu);
      for (std::size_t k = 0; k < K; ++k)
        s.acc[k] = model.init.delta_log(s.x, config.directions[k]);
      ens.x0.row(p) = s.x.transpose();
      if (hook) hook->begin(s);
      if (config.store_trajectories) {
        ens.trajectories[p].resize(config.n_steps + 1, m);
        ens.trajectories[p].row(0) = s.x.transpose();
      }

      for (int n = 0; n < config.n_steps && !s.failed; ++n) {
        for (int i = 0; i < m; ++i) dB[i] = sd * inc_rng.normal();
        if (hook) {
          eval_bundle(model, s.t, s.x, config.directions, bundle);
          hook->step(s, bundle, dB, config.dt);
          s.x += bundle.drift * config.dt + bundle.sigma * dB;
        } else {
          model.drift(s.t, s.x, f);
          const double sig = model.sigma(s.t, s.x);
          if (!(sig > 0.0)) throw ModelError(model.name + ": non-positive diffusion");
          s.x += f * config.dt + sig * dB;
        }
        s.t = config.t0 + (n + 1) * config.dt;
        s.step = n + 1;
        if (!state_is_sane(s)) s.failed = true;
        if (config.store_trajectories) ens.trajectories[p].row(n + 1) = s.x.transpose();
      }

      ens.x.row(p) = s.x.transpose();
      ens.nu.row(p) = s.nu.transpose();
      for (std::size_t k = 0; k < K; ++k) ens.acc(p, k) = s.acc[k];
      ens.valid[p] = s.failed ? 0 : 1;
    }
  });

  for (auto v : ens.valid) ens.n_failed += v ? 0 : 1;
  if (static_cast<double>(ens.n_failed) > config.max_blowup_fraction * static_cast<double>(L)) {
    std::ostringstream msg;
    msg << ens.n_failed << " of " << L << " paths blew up (budget "
        << config.max_blowup_fraction * 100.0 << "%)";
    throw NumericalError(msg.str());
  }
  return ens;
}

}  // namespace divker
