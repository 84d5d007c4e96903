#pragma once

#include "divker/conditioning.hpp"
#include "divker/model.hpp"
#include "divker/simulate.hpp"

namespace divker {

/// Constant alpha. Constants are trivially backward adapted. The kernel
/// weight of one discrete step is alpha * dt.
struct AlphaSchedule {
  double alpha = 10.0;
  double discrete_weight(double dt) const { return alpha * dt; }
};

/// nu_0 = grad log h_0(x_0).
Vec init_nu(const Vec& x0, const InitialDensity& init);

/// Ito step of the covector process:
///   dnu = ((grad s grad s^T - J^T - alpha) nu - grad div F + H grad s + grad s lap s) dt
///         - (grad s nu^T + H + alpha / s) dB
/// with s = sigma, H = hess sigma, J = grad F; everything at (t_n, x_n).
void step_nu_continuous(Vec& nu, const DerivativeBundle& b, const Vec& dB, double dt,
                        double alpha);

/// How the discrete recursion obtains div g_* = grad log|g_*| and
/// d log|g^gamma_*|.
enum class DivergenceMode {
  Approximate,  ///< leading-order closed forms in dt
  ExactFD,      ///< central differences of log|det g_*| in x and gamma
};

/// One-step Jacobian data g_* = I + J dt + dB grad sigma^T at (t_n, x_n).
struct StepJacobian {
  Mat g;
  Eigen::PartialPivLU<Mat> lu;
  double log_abs_det = 0.0;
  bool singular = false;
};

/// Builds g_* from a bundle; `singular` is set when |det g_*| < 1e-12.
StepJacobian step_jacobian(const DerivativeBundle& b, const Vec& dB, double dt);

/// log|det g_*| evaluated with the model at (t, x, gamma).
double log_abs_det_g(const ModelFamily& family, double t, const Vec& x, ParamView gamma,
                     const Vec& dB, double dt);

/// grad log|g_*| (the covector div g_*) at x_n.
Vec div_g(const ModelInstance& model, double t, const Vec& x, const DerivativeBundle& b,
          const Vec& dB, double dt, DivergenceMode mode);

/// nu_{n+1} = (1 - w) g_*^{-T} (nu_n - div g_*) + w grad log k(dB) / sigma,
/// grad log k(dB) = -dB / dt. Returns false when g_* is singular.
bool step_nu_discrete(Vec& nu, const StepJacobian& jac, const Vec& div_g, const Vec& dB,
                      double sigma, double dt, double weight);

/// Per-bin E[nu_T | x_T] over the first coordinate of x_T (1-D binning of
/// coordinate `coord`, payload nu_T[coord]). Bins with fewer than
/// spec.min_count samples are marked empty.
ConditionalTable estimate_score(const PathEnsemble& ens, const BinSpec& spec,
                                int coord = 0);

/// Unconditioned mean of nu_T[coord] and its standard error.
MeanSe mean_nu(const PathEnsemble& ens, int coord = 0);

}  // namespace divker
