#include "divker/score.hpp"

#include <cmath>

namespace divker {

Vec init_nu(const Vec& x0, const InitialDensity& init) {
  Vec nu(x0.size());
  init.score(x0, nu);
  return nu;
}

void step_nu_continuous(Vec& nu, const DerivativeBundle& b, const Vec& dB, double dt,
                        double alpha) {
  const double gs_nu = b.grad_sigma.dot(nu);
  const double nu_dB = nu.dot(dB);
  Vec drift_part = b.grad_sigma * (gs_nu + b.lap_sigma);
  drift_part.noalias() -= b.jac_drift.transpose() * nu;
  drift_part -= alpha * nu + b.grad_div_drift;
  drift_part.noalias() += b.hess_sigma * b.grad_sigma;
  Vec noise_part = b.grad_sigma * nu_dB + (alpha / b.sigma) * dB;
  noise_part.noalias() += b.hess_sigma * dB;
  nu += drift_part * dt - noise_part;
}

StepJacobian step_jacobian(const DerivativeBundle& b, const Vec& dB, double dt) {
  const auto m = dB.size();
  StepJacobian j;
  j.g = Mat::Identity(m, m) + b.jac_drift * dt + dB * b.grad_sigma.transpose();
  j.lu.compute(j.g);
  const double det = j.lu.determinant();
  j.singular = !(std::abs(det) >= 1e-12) || !std::isfinite(det);
  j.log_abs_det = std::log(std::abs(det));
  return j;
}

double log_abs_det_g(const ModelFamily& family, double t, const Vec& x, ParamView gamma,
                     const Vec& dB, double dt) {
  DerivativeBundle b(static_cast<int>(x.size()), 0);
  family.derivatives(t, x, gamma, b);
  const auto m = x.size();
  const Mat g = Mat::Identity(m, m) + b.jac_drift * dt + dB * b.grad_sigma.transpose();
  return std::log(std::abs(g.partialPivLu().determinant()));
}

Vec div_g(const ModelInstance& model, double t, const Vec& x, const DerivativeBundle& b,
          const Vec& dB, double dt, DivergenceMode mode) {
  if (mode == DivergenceMode::Approximate) {
    Vec out = b.grad_div_drift * dt;
    out.noalias() += b.hess_sigma * (dB - b.grad_sigma * dt);
    return out;
  }
  const auto m = x.size();
  Vec out(m), xp = x;
  for (Eigen::Index j = 0; j < m; ++j) {
    const double h = 1e-5 * (1.0 + std::abs(x[j]));
    xp[j] = x[j] + h;
    const double lp = log_abs_det_g(*model.family, t, xp, model.gamma(), dB, dt);
    xp[j] = x[j] - h;
    const double lm = log_abs_det_g(*model.family, t, xp, model.gamma(), dB, dt);
    xp[j] = x[j];
    out[j] = (lp - lm) / (2.0 * h);
  }
  return out;
}

bool step_nu_discrete(Vec& nu, const StepJacobian& jac, const Vec& div_g, const Vec& dB,
                      double sigma, double dt, double weight) {
  if (jac.singular) return false;
  const Vec pulled = jac.lu.transpose().solve(nu - div_g);
  nu = (1.0 - weight) * pulled - (weight / (sigma * dt)) * dB;
  return true;
}

ConditionalTable estimate_score(const PathEnsemble& ens, const BinSpec& spec, int coord) {
  std::vector<double> x, payload;
  x.reserve(ens.size());
  payload.reserve(ens.size());
  for (std::size_t p = 0; p < ens.size(); ++p) {
    if (!ens.valid[p]) continue;
    const auto i = static_cast<Eigen::Index>(p);
    x.push_back(ens.x(i, coord));
    payload.push_back(ens.nu(i, coord));
  }
  auto table = bin_1d(x, payload, spec.lo, spec.hi, spec.n_bins);
  table.apply_min_count(spec.min_count);
  return table;
}

MeanSe mean_nu(const PathEnsemble& ens, int coord) {
  std::vector<double> v;
  v.reserve(ens.size());
  for (std::size_t p = 0; p < ens.size(); ++p)
    if (ens.valid[p]) v.push_back(ens.nu(static_cast<Eigen::Index>(p), coord));
  return mean_se(v);
}

}  // namespace divker
