#pragma once

#include "divker/model.hpp"

#include <cmath>
#include <memory>
#include <string>

namespace divker::testing {

/// |a - b| / sqrt(sa^2 + sb^2)
inline double z_score(double a, double sa, double b, double sb = 0.0) {
  return std::abs(a - b) / std::sqrt(sa * sa + sb * sb);
}

/// Euler-Maruyama OU x' = x + (g - x) dt + s dB with x_0 ~ N(m0, v0) is
/// Gaussian after n steps with these moments.
struct EmOuMarginal {
  double mean, var;
};

inline EmOuMarginal em_ou_marginal(int n, double dt, double m0, double v0, double g,
                                   double s) {
  const double a = 1.0 - dt;
  double mean = m0, var = v0;
  for (int i = 0; i < n; ++i) {
    mean = a * mean + g * dt;
    var = a * a * var + s * s * dt;
  }
  return {mean, var};
}

/// ou with an extra parameter that nothing depends on.
class OuWithUnusedParameter final : public ModelFamily {
 public:
  std::string name() const override { return "ou_unused"; }
  std::size_t n_params(int) const override { return 3; }
  bool analytic() const override { return true; }
  void drift(double, const Vec& x, ParamView g, Vec& out) const override {
    out = Vec::Constant(x.size(), g[0]) - x;
  }
  double sigma(double, const Vec&, ParamView g) const override { return 1.0 + g[1]; }
  void derivatives(double t, const Vec& x, ParamView g, DerivativeBundle& out) const override {
    drift(t, x, g, out.drift);
    out.jac_drift = -Mat::Identity(x.size(), x.size());
    out.div_drift = -static_cast<double>(x.size());
    out.grad_div_drift.setZero();
    out.sigma = sigma(t, x, g);
    out.grad_sigma.setZero();
    out.hess_sigma.setZero();
    out.lap_sigma = 0.0;
  }
  void parameter_partial(double, const Vec&, ParamView, std::size_t k,
                         Sensitivity& out) const override {
    out.set_zero();
    if (k == 0) out.delta_drift.setOnes();
    if (k == 1) out.delta_sigma = 1.0;
  }
};

inline ModelInstance ou_with_unused_parameter(int dim = 1) {
  return make_model(std::make_shared<OuWithUnusedParameter>(), ModelParams{{0.3, 0.2, 0.7}, dim},
                    gaussian_initial_density(dim, 0.0, 1.0));
}

}  // namespace divker::testing
