#pragma once

#include "divker/conditioning.hpp"
#include "divker/model.hpp"
#include "divker/score.hpp"
#include "divker/simulate.hpp"

#include <functional>
#include <optional>
#include <string>

namespace divker {

/// Leading-order perturbation of x_n under fixed x_{n+1}:
///   -dF dt - d(sigma) dB + d(sigma) grad(sigma) dt.
Vec delta_x_continuous(const DerivativeBundle& b, const Sensitivity& d, const Vec& dB,
                       double dt);

/// Exact form -g_*^{-1} (dF dt + d(sigma) dB); nullopt when g_* is singular.
std::optional<Vec> delta_x_discrete(const StepJacobian& jac, const Sensitivity& d,
                                    const Vec& dB, double dt);

/// Continuous-time increment of the response accumulator, with nu at step n:
///   nu . (-dF dt - ds dB + ds grad s dt) + ds lap s dt - div dF dt
///   - grad ds . dB + grad s . grad ds dt
/// where s = sigma and ds = d(sigma).
double response_increment(const Vec& nu, const DerivativeBundle& b, const Sensitivity& d,
                          const Vec& dB, double dt);

inline double step_accumulator(double acc, const Vec& nu, const DerivativeBundle& b,
                               const Sensitivity& d, const Vec& dB, double dt) {
  return acc + response_increment(nu, b, d, dB, dt);
}

/// d log|g^gamma_*| along `dir`: central difference in gamma (step 1e-6) of
/// log|det g_*|, or the leading-order form
///   div dF dt + grad ds . dB - grad s . grad ds dt.
double delta_log_det_g(const ModelInstance& model, double t, const Vec& x,
                       const DerivativeBundle& b, const Sensitivity& d, const Direction& dir,
                       const Vec& dB, double dt, DivergenceMode mode);

/// Discrete increment (nu_n - grad log|g_*|) . dx_n - d log|g^gamma_*|.
inline double response_increment_discrete(const Vec& nu, const Vec& div_g, const Vec& delta_x,
                                          double delta_log_det) {
  return (nu - div_g).dot(delta_x) - delta_log_det;
}

inline double step_accumulator_discrete(double acc, const Vec& nu, const Vec& div_g,
                                        const Vec& delta_x, double delta_log_det) {
  return acc + response_increment_discrete(nu, div_g, delta_x, delta_log_det);
}

enum class StepMode { Continuous, Discrete };

struct EstimatorOptions {
  StepMode mode = StepMode::Continuous;
  DivergenceMode divergence = DivergenceMode::Approximate;
  double alpha = 10.0;
};

/// Hooks that evolve nu and one accumulator per direction of `config`.
HookFactory divergence_kernel_hooks(const ModelInstance& model, const PathConfig& config,
                                    const EstimatorOptions& options);

/// Convenience: simulate_ensemble with divergence-kernel hooks.
PathEnsemble run_divergence_kernel(const ModelInstance& model, const PathConfig& config,
                                   const EstimatorOptions& options);

/// Per-bin E[dlog h_0 + S_T | x_T] for accumulator `k`, binned on x_T[coord].
ConditionalTable estimate_linear_response(const PathEnsemble& ens, const BinSpec& spec,
                                          std::size_t k = 0, int coord = 0);

/// Unconditioned mean of accumulator k.
MeanSe mean_response(const PathEnsemble& ens, std::size_t k = 0);

struct Observable {
  std::string name;
  std::function<double(const Vec&)> value;
};

/// "mean" = sum(x) / M, "mean_square" = |x|^2 / M.
Observable observable_by_name(const std::string& name);

struct ErgodicConfig {
  double window = 1.5;      ///< W, time units
  double horizon = 400.0;   ///< T per orbit after burn-in
  double burn_in = 10.0;
  double dt = 0.002;
  int n_orbits = 7;
  double alpha = 10.0;
  std::uint64_t seed = 1;
  Direction direction;
  Observable observable;
  int workers = 1;

  void validate() const;
};

struct ErgodicResult {
  double phi_avg = 0.0;
  double phi_avg_se = 0.0;
  double response = 0.0;  ///< d/dgamma of the stationary average of Phi
  double response_se = 0.0;
  std::vector<double> orbit_phi_avg;
  std::vector<double> orbit_response;
  std::size_t steps_per_orbit = 0;
  std::size_t window_steps = 0;
};

/// Windowed correlation of the centered observable with the per-step
/// response increments along long orbits, nu started at 0. Orbit o uses the
/// random streams of path index o. SE from orbit-to-orbit spread.
ErgodicResult ergodic_linear_response(const ModelInstance& model, const ErgodicConfig& config);

/// Runs one orbit and returns its trajectory (post burn-in states every
/// `stride` steps), for plotting.
Mat ergodic_orbit_trace(const ModelInstance& model, const ErgodicConfig& config,
                        std::size_t orbit, double duration, int stride = 1);

}  // namespace divker
