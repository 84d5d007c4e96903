#pragma once

#include "divker/rng.hpp"
#include "divker/types.hpp"

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace divker {

struct ModelParams {
  std::vector<double> gamma;  ///< N_gamma >= 1
  int dim = 1;                ///< state dimension M >= 1
};

/// Family-specific knobs that are not perturbation parameters.
struct ModelOptions {
  double sigma0 = 1.0;     ///< base diffusion of `ou`
  double init_mean = 0.0;  ///< initial density N(init_mean, init_var I)
  double init_var = 1.0;
};

/// Parameter-derivatives of the coefficients along one direction dgamma.
struct Sensitivity {
  Vec delta_drift;        ///< dF
  double div_delta_drift = 0.0;
  double delta_sigma = 0.0;
  Vec grad_delta_sigma;   ///< grad(d sigma)

  void resize(int dim);
  void set_zero();
  /// this += w * other
  void add_scaled(double w, const Sensitivity& other);
};

/// Everything the estimators need at one (t, x). `delta` holds one entry per
/// requested perturbation direction; every direction shares the spatial part.
struct DerivativeBundle {
  Vec drift;
  Mat jac_drift;  ///< [i][j] = dF^i / dx^j
  double div_drift = 0.0;
  Vec grad_div_drift;
  double sigma = 0.0;
  Vec grad_sigma;
  Mat hess_sigma;
  double lap_sigma = 0.0;
  std::vector<Sensitivity> delta;

  DerivativeBundle() = default;
  DerivativeBundle(int dim, std::size_t n_directions) { resize(dim, n_directions); }
  void resize(int dim, std::size_t n_directions);
  int dim() const { return static_cast<int>(drift.size()); }
};

/// A parameterized SDE family dx = F(t, x; gamma) dt + sigma(t, x; gamma) dB
/// with scalar sigma. Families override `derivatives` and `parameter_partial`
/// with closed forms; the defaults fall back to central differences.
class ModelFamily {
 public:
  virtual ~ModelFamily() = default;

  virtual std::string name() const = 0;
  /// Number of parameters for a given state dimension.
  virtual std::size_t n_params(int dim) const = 0;
  /// Throws ModelError when the dimension is not supported.
  virtual void validate_dim(int dim) const;
  virtual bool time_dependent() const { return false; }
  virtual bool analytic() const { return false; }

  virtual void drift(double t, const Vec& x, ParamView gamma, Vec& out) const = 0;
  virtual double sigma(double t, const Vec& x, ParamView gamma) const = 0;

  /// Fills the gamma-independent part of `out` (everything but `delta`).
  virtual void derivatives(double t, const Vec& x, ParamView gamma,
                           DerivativeBundle& out) const;
  /// Partial derivatives of the coefficients with respect to gamma[k].
  virtual void parameter_partial(double t, const Vec& x, ParamView gamma,
                                 std::size_t k, Sensitivity& out) const;
};

/// Initial density h_0 together with its score and parameter-derivative.
struct InitialDensity {
  std::function<void(PathRng&, Vec&)> sample;
  std::function<void(const Vec&, Vec&)> score;
  /// d log h_0 along a direction; empty means identically zero.
  std::function<double(const Vec&, const Direction&)> delta_log_h0;
  /// Density of one coordinate, used by 1-D quadrature oracles.
  std::function<double(double)> pdf_1d;
  double mean = 0.0;  ///< per-coordinate mean and variance
  double var = 1.0;

  double delta_log(const Vec& x, const Direction& dir) const {
    return delta_log_h0 ? delta_log_h0(x, dir) : 0.0;
  }
};

/// Isotropic Gaussian N(mean * 1, var * I) in `dim` dimensions.
InitialDensity gaussian_initial_density(int dim, double mean, double var);

struct ModelInstance {
  std::string name;
  ModelParams params;
  std::shared_ptr<const ModelFamily> family;
  InitialDensity init;

  int dim() const { return params.dim; }
  std::size_t n_params() const { return params.gamma.size(); }
  ParamView gamma() const { return params.gamma; }

  void drift(double t, const Vec& x, Vec& out) const {
    out.resize(x.size());
    family->drift(t, x, gamma(), out);
  }
  double sigma(double t, const Vec& x) const { return family->sigma(t, x, gamma()); }

  /// Copy of this instance at another parameter value.
  ModelInstance with_gamma(std::vector<double> gamma) const;
};

/// Names of built-in families: ou, mult1d, lorenz96, diffproto1d, diffproto5d.
std::vector<std::string> registered_models();

/// Builds a registered family. An empty `params.gamma` means all zeros.
ModelInstance get_model(const std::string& name, ModelParams params,
                        const ModelOptions& options = {});

/// Wraps a user-supplied family.
ModelInstance make_model(std::shared_ptr<const ModelFamily> family, ModelParams params,
                         InitialDensity init);

/// Evaluates the bundle at (t, x) for the given directions. Throws ModelError
/// when sigma <= 0 or a direction has the wrong length.
void eval_bundle(const ModelInstance& model, double t, const Vec& x,
                 const std::vector<Direction>& directions, DerivativeBundle& out);

DerivativeBundle eval_bundle(const ModelInstance& model, double t, const Vec& x,
                             const Direction& direction);

/// Central-difference bundle built from `drift` and `sigma` only: step
/// 1e-5 (1 + |x_j|) in x and 1e-6 in gamma. Nested differences (grad div F,
/// div dF, grad d sigma) take their outer step as 1e-3 (1 + |x_j|) in x and
/// 1e-4 in gamma.
void fd_bundle(const ModelFamily& family, double t, const Vec& x, ParamView gamma,
               const std::vector<Direction>& directions, DerivativeBundle& out);

struct FdCheckReport {
  /// field name -> max relative error over the sampled points
  std::map<std::string, double> max_rel_error;
  double tolerance = 1e-3;
  double max_error() const;
  bool passed() const { return max_error() <= tolerance; }
};

/// Compares the analytic bundle with `fd_bundle` at `n_samples` random points
/// (x ~ N(0, 4 I), t in [0, 1] for time-dependent families), along
/// every coordinate direction. Relative error is |a - b|_inf / max(1, |b|_inf).
FdCheckReport fd_derivative_check(const ModelInstance& model, int n_samples,
                                  std::uint64_t seed);

}  // namespace divker
