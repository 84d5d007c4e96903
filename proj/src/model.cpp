#include "divker/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace divker {

void Sensitivity::resize(int dim) {
  delta_drift.resize(dim);
  grad_delta_sigma.resize(dim);
  set_zero();
}

void Sensitivity::set_zero() {
  delta_drift.setZero();
  grad_delta_sigma.setZero();
  div_delta_drift = 0.0;
  delta_sigma = 0.0;
}

void Sensitivity::add_scaled(double w, const Sensitivity& other) {
  delta_drift += w * other.delta_drift;
  grad_delta_sigma += w * other.grad_delta_sigma;
  div_delta_drift += w * other.div_delta_drift;
  delta_sigma += w * other.delta_sigma;
}

void DerivativeBundle::resize(int dim, std::size_t n_directions) {
  drift = Vec::Zero(dim);
  jac_drift = Mat::Zero(dim, dim);
  grad_div_drift = Vec::Zero(dim);
  grad_sigma = Vec::Zero(dim);
  hess_sigma = Mat::Zero(dim, dim);
  div_drift = sigma = lap_sigma = 0.0;
  delta.resize(n_directions);
  for (auto& s : delta) s.resize(dim);
}

namespace {

constexpr double kGammaStep = 1e-6;

double x_step(double xj) { return 1e-5 * (1.0 + std::abs(xj)); }

// Outer steps of nested differences (second derivatives), larger so that
// round-off of the inner difference stays small.
constexpr double kGammaOuterStep = 1e-4;

double x_outer_step(double xj) { return 1e-3 * (1.0 + std::abs(xj)); }

std::vector<double> shifted(ParamView gamma, const Direction& dir, double eps) {
  std::vector<double> g(gamma.begin(), gamma.end());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] += eps * dir[k];
  return g;
}

// Divergence of F from a central-difference Jacobian trace.
double fd_div(const ModelFamily& f, double t, const Vec& x, ParamView gamma) {
  const auto m = x.size();
  Vec xp = x, fp(m), fm(m);
  double div = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    const double h = x_step(x[j]);
    xp[j] = x[j] + h;
    f.drift(t, xp, gamma, fp);
    xp[j] = x[j] - h;
    f.drift(t, xp, gamma, fm);
    xp[j] = x[j];
    div += (fp[j] - fm[j]) / (2.0 * h);
  }
  return div;
}

Vec fd_grad_sigma(const ModelFamily& f, double t, const Vec& x, ParamView gamma) {
  const auto m = x.size();
  Vec g(m), xp = x;
  for (Eigen::Index j = 0; j < m; ++j) {
    const double h = x_step(x[j]);
    xp[j] = x[j] + h;
    const double sp = f.sigma(t, xp, gamma);
    xp[j] = x[j] - h;
    const double sm = f.sigma(t, xp, gamma);
    xp[j] = x[j];
    g[j] = (sp - sm) / (2.0 * h);
  }
  return g;
}

void fd_base(const ModelFamily& f, double t, const Vec& x, ParamView gamma,
             DerivativeBundle& out) {
  const auto m = x.size();
  f.drift(t, x, gamma, out.drift);
  Vec xp = x, fp(m), fm(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double h = x_step(x[j]);
    xp[j] = x[j] + h;
    f.drift(t, xp, gamma, fp);
    xp[j] = x[j] - h;
    f.drift(t, xp, gamma, fm);
    out.jac_drift.col(j) = (fp - fm) / (2.0 * h);
    const double H = x_outer_step(x[j]);
    xp[j] = x[j] + H;
    const double dp = fd_div(f, t, xp, gamma);
    xp[j] = x[j] - H;
    const double dm = fd_div(f, t, xp, gamma);
    xp[j] = x[j];
    out.grad_div_drift[j] = (dp - dm) / (2.0 * H);
  }
  out.div_drift = out.jac_drift.trace();

  out.sigma = f.sigma(t, x, gamma);
  out.grad_sigma = fd_grad_sigma(f, t, x, gamma);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double hj = x_step(x[j]);
    for (Eigen::Index k = j; k < m; ++k) {
      const double hk = x_step(x[k]);
      double v;
      if (j == k) {
        xp[j] = x[j] + 2 * hj;
        const double sp = f.sigma(t, xp, gamma);
        xp[j] = x[j] - 2 * hj;
        const double sm = f.sigma(t, xp, gamma);
        xp[j] = x[j];
        v = (sp - 2.0 * out.sigma + sm) / (4.0 * hj * hj);
      } else {
        auto eval = [&](double sj, double sk) {
          xp[j] = x[j] + sj * hj;
          xp[k] = x[k] + sk * hk;
          const double s = f.sigma(t, xp, gamma);
          xp[j] = x[j];
          xp[k] = x[k];
          return s;
        };
        v = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * hj * hk);
      }
      out.hess_sigma(j, k) = v;
      out.hess_sigma(k, j) = v;
    }
  }
  out.lap_sigma = out.hess_sigma.trace();
}

void fd_sensitivity(const ModelFamily& f, double t, const Vec& x, ParamView gamma,
                    const Direction& dir, Sensitivity& out) {
  const auto m = x.size();
  const auto gp = shifted(gamma, dir, kGammaStep);
  const auto gm = shifted(gamma, dir, -kGammaStep);
  Vec fp(m), fm(m);
  f.drift(t, x, gp, fp);
  f.drift(t, x, gm, fm);
  out.delta_drift = (fp - fm) / (2.0 * kGammaStep);
  out.delta_sigma = (f.sigma(t, x, gp) - f.sigma(t, x, gm)) / (2.0 * kGammaStep);
  const auto Gp = shifted(gamma, dir, kGammaOuterStep);
  const auto Gm = shifted(gamma, dir, -kGammaOuterStep);
  out.div_delta_drift = (fd_div(f, t, x, Gp) - fd_div(f, t, x, Gm)) / (2.0 * kGammaOuterStep);
  out.grad_delta_sigma =
      (fd_grad_sigma(f, t, x, Gp) - fd_grad_sigma(f, t, x, Gm)) / (2.0 * kGammaOuterStep);
}

// sigma = amp * (0.5 + exp(-|x - c 1|^2 / scale)) and its derivatives in x and c.
struct GaussianBump {
  double amp;
  double scale;

  double value(const Vec& x, double c) const {
    return amp * (0.5 + std::exp(-(x.array() - c).square().sum() / scale));
  }

  void fill(const Vec& x, double c, DerivativeBundle& out) const {
    const Vec u = x.array() - c;
    const double e = std::exp(-u.squaredNorm() / scale);
    const auto m = static_cast<double>(x.size());
    out.sigma = amp * (0.5 + e);
    out.grad_sigma = amp * e * (-2.0 / scale) * u;
    out.hess_sigma = amp * e * (4.0 / (scale * scale)) * (u * u.transpose());
    out.hess_sigma.diagonal().array() -= amp * e * 2.0 / scale;
    out.lap_sigma = amp * e * (4.0 * u.squaredNorm() / (scale * scale) - 2.0 * m / scale);
  }

  // Derivative with respect to the center c.
  void fill_center_partial(const Vec& x, double c, Sensitivity& out) const {
    const Vec u = x.array() - c;
    const double e = std::exp(-u.squaredNorm() / scale);
    const double su = 2.0 * u.sum() / scale;
    out.delta_sigma = amp * e * su;
    out.grad_delta_sigma = (amp * 2.0 * e / scale) * (Vec::Ones(x.size()) - su * u);
  }
};

// (x^{i+1} - x^{i-2}) x^{i-1} - x^i + forcing_i - 0.01 (x^i)^2, cyclic indices.
void lorenz_drift(const Vec& x, auto forcing, Vec& out) {
  const auto m = x.size();
  for (Eigen::Index i = 0; i < m; ++i) {
    const double xp1 = x[(i + 1) % m];
    const double xm1 = x[(i - 1 + m) % m];
    const double xm2 = x[(i - 2 + m) % m];
    out[i] = (xp1 - xm2) * xm1 - x[i] + forcing(i) - 0.01 * x[i] * x[i];
  }
}

void lorenz_derivatives(const Vec& x, DerivativeBundle& out) {
  const auto m = x.size();
  out.jac_drift.setZero();
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto ip1 = (i + 1) % m, im1 = (i - 1 + m) % m, im2 = (i - 2 + m) % m;
    out.jac_drift(i, ip1) += x[im1];
    out.jac_drift(i, im2) -= x[im1];
    out.jac_drift(i, im1) += x[ip1] - x[im2];
    out.jac_drift(i, i) += -1.0 - 0.02 * x[i];
  }
  out.div_drift = -static_cast<double>(m) - 0.02 * x.sum();
  out.grad_div_drift.setConstant(-0.02);
}

class OrnsteinUhlenbeck final : public ModelFamily {
 public:
  explicit OrnsteinUhlenbeck(double sigma0) : sigma0_(sigma0) {}
  std::string name() const override { return "ou"; }
  std::size_t n_params(int) const override { return 2; }
  bool analytic() const override { return true; }

  void drift(double, const Vec& x, ParamView g, Vec& out) const override {
    out = g[0] - x.array();
  }
  double sigma(double, const Vec&, ParamView g) const override { return sigma0_ + g[1]; }

  void derivatives(double t, const Vec& x, ParamView g, DerivativeBundle& out) const override {
    drift(t, x, g, out.drift);
    out.jac_drift.setIdentity();
    out.jac_drift *= -1.0;
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

 private:
  double sigma0_;
};

// dx = beta_t (gamma - x) dt + sqrt(beta_t) (0.5 + exp(-(gamma - x)^2)) dB,
// beta_t = 1 + 3t.
class Multiplicative1d final : public ModelFamily {
 public:
  std::string name() const override { return "mult1d"; }
  std::size_t n_params(int) const override { return 1; }
  void validate_dim(int dim) const override {
    if (dim != 1) throw ModelError("mult1d requires dim = 1");
  }
  bool time_dependent() const override { return true; }
  bool analytic() const override { return true; }

  static double beta(double t) { return 1.0 + 3.0 * t; }

  void drift(double t, const Vec& x, ParamView g, Vec& out) const override {
    out = beta(t) * (g[0] - x.array());
  }
  double sigma(double t, const Vec& x, ParamView g) const override {
    return bump(t).value(x, g[0]);
  }

  void derivatives(double t, const Vec& x, ParamView g, DerivativeBundle& out) const override {
    drift(t, x, g, out.drift);
    out.jac_drift(0, 0) = -beta(t);
    out.div_drift = -beta(t);
    out.grad_div_drift.setZero();
    bump(t).fill(x, g[0], out);
  }

  void parameter_partial(double t, const Vec& x, ParamView g, std::size_t,
                         Sensitivity& out) const override {
    out.set_zero();
    out.delta_drift.setConstant(beta(t));
    bump(t).fill_center_partial(x, g[0], out);
  }

 private:
  static GaussianBump bump(double t) { return {std::sqrt(beta(t)), 1.0}; }
};

// Lorenz 96 with forcing 8 + gamma and sigma = 0.5 + exp(-|x - gamma 1|^2 / M).
class Lorenz96 final : public ModelFamily {
 public:
  std::string name() const override { return "lorenz96"; }
  std::size_t n_params(int) const override { return 1; }
  void validate_dim(int dim) const override {
    if (dim < 4) throw ModelError("lorenz96 requires dim >= 4");
  }
  bool analytic() const override { return true; }

  void drift(double, const Vec& x, ParamView g, Vec& out) const override {
    lorenz_drift(x, [&](Eigen::Index) { return 8.0 + g[0]; }, out);
  }
  double sigma(double, const Vec& x, ParamView g) const override {
    return bump(x).value(x, g[0]);
  }

  void derivatives(double t, const Vec& x, ParamView g, DerivativeBundle& out) const override {
    drift(t, x, g, out.drift);
    lorenz_derivatives(x, out);
    bump(x).fill(x, g[0], out);
  }

  void parameter_partial(double, const Vec& x, ParamView g, std::size_t,
                         Sensitivity& out) const override {
    out.set_zero();
    out.delta_drift.setOnes();
    bump(x).fill_center_partial(x, g[0], out);
  }

 private:
  static GaussianBump bump(const Vec& x) { return {1.0, static_cast<double>(x.size())}; }
};

// dx = (gamma0 - x) dt + (0.5 + exp(-(x - gamma1)^2)) dB
class DiffusionPrototype1d final : public ModelFamily {
 public:
  std::string name() const override { return "diffproto1d"; }
  std::size_t n_params(int) const override { return 2; }
  void validate_dim(int dim) const override {
    if (dim != 1) throw ModelError("diffproto1d requires dim = 1");
  }
  bool analytic() const override { return true; }

  void drift(double, const Vec& x, ParamView g, Vec& out) const override {
    out = g[0] - x.array();
  }
  double sigma(double, const Vec& x, ParamView g) const override {
    return kBump.value(x, g[1]);
  }

  void derivatives(double t, const Vec& x, ParamView g, DerivativeBundle& out) const override {
    drift(t, x, g, out.drift);
    out.jac_drift(0, 0) = -1.0;
    out.div_drift = -1.0;
    out.grad_div_drift.setZero();
    kBump.fill(x, g[1], out);
  }

  void parameter_partial(double, const Vec& x, ParamView g, std::size_t k,
                         Sensitivity& out) const override {
    out.set_zero();
    if (k == 0) out.delta_drift.setOnes();
    if (k == 1) kBump.fill_center_partial(x, g[1], out);
  }

 private:
  static constexpr GaussianBump kBump{1.0, 1.0};
};

// Lorenz 96 with per-coordinate forcing gamma^i (i < M) and
// sigma = 0.5 + exp(-|x - gamma^M 1|^2 / M).
class DiffusionPrototypeLorenz final : public ModelFamily {
 public:
  std::string name() const override { return "diffproto5d"; }
  std::size_t n_params(int dim) const override { return static_cast<std::size_t>(dim) + 1; }
  void validate_dim(int dim) const override {
    if (dim < 4) throw ModelError("diffproto5d requires dim >= 4");
  }
  bool analytic() const override { return true; }

  void drift(double, const Vec& x, ParamView g, Vec& out) const override {
    lorenz_drift(x, [&](Eigen::Index i) { return g[i]; }, out);
  }
  double sigma(double, const Vec& x, ParamView g) const override {
    return bump(x).value(x, g[x.size()]);
  }

  void derivatives(double t, const Vec& x, ParamView g, DerivativeBundle& out) const override {
    drift(t, x, g, out.drift);
    lorenz_derivatives(x, out);
    bump(x).fill(x, g[x.size()], out);
  }

  void parameter_partial(double, const Vec& x, ParamView g, std::size_t k,
                         Sensitivity& out) const override {
    out.set_zero();
    const auto m = static_cast<std::size_t>(x.size());
    if (k < m) {
      out.delta_drift[static_cast<Eigen::Index>(k)] = 1.0;
    } else {
      bump(x).fill_center_partial(x, g[m], out);
    }
  }

 private:
  static GaussianBump bump(const Vec& x) { return {1.0, static_cast<double>(x.size())}; }
};

double rel_error(const auto& a, const auto& b) {
  const double diff = (a - b).cwiseAbs().maxCoeff();
  return diff / std::max(1.0, b.cwiseAbs().maxCoeff());
}

double rel_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

void ModelFamily::validate_dim(int dim) const {
  if (dim < 1) throw ModelError(name() + ": dim must be >= 1");
}

void ModelFamily::derivatives(double t, const Vec& x, ParamView gamma,
                              DerivativeBundle& out) const {
  fd_base(*this, t, x, gamma, out);
}

void ModelFamily::parameter_partial(double t, const Vec& x, ParamView gamma, std::size_t k,
                                    Sensitivity& out) const {
  fd_sensitivity(*this, t, x, gamma, coordinate_direction(gamma.size(), k), out);
}

InitialDensity gaussian_initial_density(int dim, double mean, double var) {
  if (!(var > 0.0)) throw ModelError("initial variance must be positive");
  const double sd = std::sqrt(var);
  InitialDensity d;
  d.sample = [dim, mean, sd](PathRng& rng, Vec& x) {
    x.resize(dim);
    for (int i = 0; i < dim; ++i) x[i] = mean + sd * rng.normal();
  };
  d.score = [mean, var](const Vec& x, Vec& out) { out = -(x.array() - mean) / var; };
  d.pdf_1d = [mean, var](double x) {
    return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * M_PI * var);
  };
  d.mean = mean;
  d.var = var;
  return d;
}

ModelInstance ModelInstance::with_gamma(std::vector<double> g) const {
  if (g.size() != params.gamma.size())
    throw ModelError("with_gamma: expected " + std::to_string(params.gamma.size()) +
                     " parameters");
  ModelInstance copy = *this;
  copy.params.gamma = std::move(g);
  return copy;
}

std::vector<std::string> registered_models() {
  return {"ou", "mult1d", "lorenz96", "diffproto1d", "diffproto5d"};
}

ModelInstance make_model(std::shared_ptr<const ModelFamily> family, ModelParams params,
                         InitialDensity init) {
  family->validate_dim(params.dim);
  const auto n = family->n_params(params.dim);
  if (params.gamma.empty()) params.gamma.assign(n, 0.0);
  if (params.gamma.size() != n) {
    std::ostringstream msg;
    msg << family->name() << ": expected " << n << " parameters, got " << params.gamma.size();
    throw ModelError(msg.str());
  }
  ModelInstance m;
  m.name = family->name();
  m.params = std::move(params);
  m.family = std::move(family);
  m.init = std::move(init);
  return m;
}

ModelInstance get_model(const std::string& name, ModelParams params,
                        const ModelOptions& options) {
  std::shared_ptr<const ModelFamily> family;
  if (name == "ou") {
    family = std::make_shared<OrnsteinUhlenbeck>(options.sigma0);
  } else if (name == "mult1d") {
    family = std::make_shared<Multiplicative1d>();
  } else if (name == "lorenz96") {
    family = std::make_shared<Lorenz96>();
  } else if (name == "diffproto1d") {
    family = std::make_shared<DiffusionPrototype1d>();
  } else if (name == "diffproto5d") {
    family = std::make_shared<DiffusionPrototypeLorenz>();
  } else {
    throw ModelError("unknown model '" + name + "'");
  }
  const int dim = params.dim;
  return make_model(std::move(family), std::move(params),
                    gaussian_initial_density(dim, options.init_mean, options.init_var));
}

void eval_bundle(const ModelInstance& model, double t, const Vec& x,
                 const std::vector<Direction>& directions, DerivativeBundle& out) {
  const int m = model.dim();
  if (out.dim() != m || out.delta.size() != directions.size())
    out.resize(m, directions.size());
  const auto gamma = model.gamma();
  model.family->derivatives(t, x, gamma, out);
  if (!(out.sigma > 0.0) || !std::isfinite(out.sigma)) {
    std::ostringstream msg;
    msg << model.name << ": non-positive diffusion sigma = " << out.sigma << " at t = " << t;
    throw ModelError(msg.str());
  }
  Sensitivity partial;
  partial.resize(m);
  for (std::size_t d = 0; d < directions.size(); ++d) {
    const auto& dir = directions[d];
    if (dir.size() != gamma.size()) throw ModelError("direction has wrong length");
    auto& s = out.delta[d];
    s.set_zero();
    for (std::size_t k = 0; k < dir.size(); ++k) {
      if (dir[k] == 0.0) continue;
      model.family->parameter_partial(t, x, gamma, k, partial);
      s.add_scaled(dir[k], partial);
    }
  }
}

DerivativeBundle eval_bundle(const ModelInstance& model, double t, const Vec& x,
                             const Direction& direction) {
  DerivativeBundle b(model.dim(), 1);
  eval_bundle(model, t, x, std::vector<Direction>{direction}, b);
  return b;
}

void fd_bundle(const ModelFamily& family, double t, const Vec& x, ParamView gamma,
               const std::vector<Direction>& directions, DerivativeBundle& out) {
  out.resize(static_cast<int>(x.size()), directions.size());
  fd_base(family, t, x, gamma, out);
  for (std::size_t d = 0; d < directions.size(); ++d)
    fd_sensitivity(family, t, x, gamma, directions[d], out.delta[d]);
}

double FdCheckReport::max_error() const {
  double e = 0.0;
  for (const auto& [_, v] : max_rel_error) e = std::max(e, v);
  return e;
}

FdCheckReport fd_derivative_check(const ModelInstance& model, int n_samples,
                                  std::uint64_t seed) {
  FdCheckReport report;
  const int m = model.dim();
  const auto dirs = coordinate_directions(model.n_params());
  DerivativeBundle exact(m, dirs.size()), approx(m, dirs.size());
  PathRng rng(seed, 0, StreamKind::Evaluation);
  auto track = [&](const std::string& field, double err) {
    auto& slot = report.max_rel_error[field];
    slot = std::max(slot, err);
  };
  for (int s = 0; s < n_samples; ++s) {
    const double t = model.family->time_dependent() ? rng.uniform() : 0.0;
    Vec x(m);
    rng.fill_normal(x, 2.0);
    eval_bundle(model, t, x, dirs, exact);
    fd_bundle(*model.family, t, x, model.gamma(), dirs, approx);
    track("drift", rel_error(exact.drift, approx.drift));
    track("jac_drift", rel_error(exact.jac_drift, approx.jac_drift));
    track("div_drift", rel_error(exact.div_drift, approx.div_drift));
    track("grad_div_drift", rel_error(exact.grad_div_drift, approx.grad_div_drift));
    track("sigma", rel_error(exact.sigma, approx.sigma));
    track("grad_sigma", rel_error(exact.grad_sigma, approx.grad_sigma));
    track("hess_sigma", rel_error(exact.hess_sigma, approx.hess_sigma));
    track("lap_sigma", rel_error(exact.lap_sigma, approx.lap_sigma));
    for (std::size_t d = 0; d < dirs.size(); ++d) {
      const auto& a = exact.delta[d];
      const auto& b = approx.delta[d];
      track("delta_drift", rel_error(a.delta_drift, b.delta_drift));
      track("div_delta_drift", rel_error(a.div_delta_drift, b.div_delta_drift));
      track("delta_sigma", rel_error(a.delta_sigma, b.delta_sigma));
      track("grad_delta_sigma", rel_error(a.grad_delta_sigma, b.grad_delta_sigma));
    }
  }
  return report;
}

}  // namespace divker
