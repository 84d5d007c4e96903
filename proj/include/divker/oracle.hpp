#pragma once

#include "divker/conditioning.hpp"
#include "divker/linresp.hpp"
#include "divker/model.hpp"
#include "divker/simulate.hpp"

#include <functional>
#include <vector>

namespace divker {

/// 1-D one-step system x_1 = f(x_0; s) + sigma(x_0; s) b, b ~ N(0, kernel_var),
/// x_0 ~ h_0(.; s), with s a scalar offset along a perturbation direction.
struct OneStepSystem {
  std::function<double(double, double)> map;
  std::function<double(double, double)> sigma;
  std::function<double(double, double)> h0_pdf;
  double h0_mean = 0.0;
  double h0_sd = 1.0;
  double kernel_var = 1.0;
};

/// One Euler step of a 1-D model at time t0: f = x + F dt, b = dB.
OneStepSystem one_step_system(const ModelInstance& model, double dt, const Direction& dir,
                              double t0 = 0.0);

struct QuadratureOptions {
  int n_points = 10000;       ///< trapezoid nodes in x_0
  double half_width_sd = 8.0; ///< x_0 range: mean +- half_width_sd * sd
  double gamma_step = 1e-4;   ///< central difference in s
};

/// h^s_1 at each grid point by trapezoid quadrature over x_0. Throws
/// NumericalError when the truncated tail mass of h_0 exceeds 1e-8.
std::vector<double> quadrature_one_step(const OneStepSystem& sys, double s,
                                        const std::vector<double>& x1_grid,
                                        const QuadratureOptions& opt = {});

/// d log h_1 at each grid point (central difference in s).
std::vector<double> quadrature_delta_log_h1(const OneStepSystem& sys,
                                            const std::vector<double>& x1_grid,
                                            const QuadratureOptions& opt = {});

/// Bin-conditional oracle: (int_bin d h_1) / (int_bin h_1) per bin, Simpson
/// in x_1 with `points_per_bin` panels. `counts` are left empty.
ConditionalTable quadrature_binned_response(const OneStepSystem& sys, const BinSpec& bins,
                                            const QuadratureOptions& opt = {},
                                            int points_per_bin = 200);

struct FdLogDensityResult {
  ConditionalTable table;        ///< step eps; mean = estimate, se = bootstrap SE
  ConditionalTable table_double; ///< step 2 eps
  bool locally_linear = true;    ///< eps and 2 eps agree within 3 combined SE
};

struct FdLogDensityConfig {
  double eps = 0.05;
  BinSpec bins;
  PathConfig paths;  ///< dt, n_steps, n_paths, seed, workers (directions ignored)
  int n_bootstrap = 200;
};

/// Common-random-number central difference of binned log densities,
/// (log h^{+eps} - log h^{-eps}) / (2 eps), with paired bootstrap SE.
FdLogDensityResult fd_log_density(const ModelInstance& model, const Direction& dir,
                                  const FdLogDensityConfig& config);

/// Closed-form marginal of dx = (g - x) dt + sigma dB, x_0 ~ N(m0, v0).
struct OuMarginal {
  double t, m0, v0, gamma, sigma;
  double mean, var;

  double pdf(double x) const;
  double score(double x) const { return -(x - mean) / var; }
  /// d log h_t / d gamma
  double dlog_drift(double x) const;
  /// d log h_t / d sigma
  double dlog_sigma(double x) const;
};

OuMarginal ou_analytic(double t, double m0, double v0, double gamma, double sigma);

/// E[f(x) | x in [l, r]] under density `pdf`, Simpson with 400 panels.
double bin_average(const std::function<double(double)>& f,
                   const std::function<double(double)>& pdf, double l, double r);

/// Likelihood-ratio (kernel-differentiation) accumulator per direction:
///   dlog h_0 - sum_n [ M ds/s + grad log k(b_n) (ds b_n + dF dt) / s ].
/// With ds = 0 this is the classical sum dF . dB / sigma. Unless
/// `allow_sigma_perturbation` (one-step validation only), a nonzero ds
/// throws ModelError.
HookFactory likelihood_ratio_hooks(const PathConfig& config, bool allow_sigma_perturbation = false);

PathEnsemble run_likelihood_ratio(const ModelInstance& model, const PathConfig& config,
                                  bool allow_sigma_perturbation = false);

struct FdErgodicResult {
  double response = 0.0;
  double se = 0.0;
  double phi_plus = 0.0;
  double phi_minus = 0.0;
  std::vector<double> orbit_response;
};

/// Central difference (Phi_avg(gamma + eps d) - Phi_avg(gamma - eps d)) / (2 eps)
/// of orbit time averages, orbit o of both sides sharing random streams.
FdErgodicResult fd_ergodic_response(const ModelInstance& model, const ErgodicConfig& config,
                                    double eps);

}  // namespace divker
