#include "divker/oracle.hpp"

#include "divker/rng.hpp"

#include <cmath>
#include <sstream>

namespace divker {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> offset_gamma(const ModelInstance& model, const Direction& dir, double s) {
  std::vector<double> g(model.gamma().begin(), model.gamma().end());
  if (dir.size() != g.size()) throw ConfigError("direction has wrong length");
  for (std::size_t k = 0; k < g.size(); ++k) g[k] += s * dir[k];
  return g;
}

// Nodes of the x_0 trapezoid at a fixed offset s.
struct OneStepNodes {
  std::vector<double> center, sd, weight;

  OneStepNodes(const OneStepSystem& sys, double s, const QuadratureOptions& opt) {
    const double lo = sys.h0_mean - opt.half_width_sd * sys.h0_sd;
    const double hi = sys.h0_mean + opt.half_width_sd * sys.h0_sd;
    const int n = opt.n_points;
    const double h = (hi - lo) / (n - 1);
    center.resize(n);
    sd.resize(n);
    weight.resize(n);
    for (int i = 0; i < n; ++i) {
      const double x0 = lo + i * h;
      const double sig = sys.sigma(x0, s);
      if (!(sig > 0.0)) throw ModelError("quadrature: non-positive sigma");
      center[i] = sys.map(x0, s);
      sd[i] = sig * std::sqrt(sys.kernel_var);
      const double w = (i == 0 || i == n - 1) ? 0.5 * h : h;
      weight[i] = w * sys.h0_pdf(x0, s) / (sd[i] * std::sqrt(2.0 * M_PI));
    }
  }

  double density(double x1) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < center.size(); ++i) {
      const double z = (x1 - center[i]) / sd[i];
      sum += weight[i] * std::exp(-0.5 * z * z);
    }
    return sum;
  }
};

void check_tail(const OneStepSystem& sys, const QuadratureOptions& opt) {
  if (opt.n_points < 3) throw ConfigError("quadrature needs at least 3 nodes");
  // tail mass of a Gaussian h_0 outside +- half_width_sd standard deviations
  const double tail = std::erfc(opt.half_width_sd / std::sqrt(2.0));
  if (tail > 1e-8) {
    std::ostringstream msg;
    msg << "quadrature truncation leaves tail mass " << tail << " > 1e-8";
    throw NumericalError(msg.str());
  }
  (void)sys;
}

double simpson(const std::function<double(double)>& f, double l, double r, int panels) {
  if (panels % 2) ++panels;
  const double h = (r - l) / panels;
  double sum = f(l) + f(r);
  for (int i = 1; i < panels; ++i) sum += (i % 2 ? 4.0 : 2.0) * f(l + i * h);
  return sum * h / 3.0;
}

}  // namespace

OneStepSystem one_step_system(const ModelInstance& model, double dt, const Direction& dir,
                              double t0) {
  if (model.dim() != 1) throw ModelError("one_step_system: model must be 1-D");
  if (!model.init.pdf_1d) throw ModelError("one_step_system: initial density has no pdf");
  OneStepSystem sys;
  sys.map = [&model, dir, dt, t0](double x0, double s) {
    const auto g = offset_gamma(model, dir, s);
    Vec x(1), f(1);
    x[0] = x0;
    model.family->drift(t0, x, g, f);
    return x0 + f[0] * dt;
  };
  sys.sigma = [&model, dir, t0](double x0, double s) {
    const auto g = offset_gamma(model, dir, s);
    Vec x(1);
    x[0] = x0;
    return model.family->sigma(t0, x, g);
  };
  sys.h0_pdf = [pdf = model.init.pdf_1d](double x0, double) { return pdf(x0); };
  sys.h0_mean = model.init.mean;
  sys.h0_sd = std::sqrt(model.init.var);
  sys.kernel_var = dt;
  return sys;
}

std::vector<double> quadrature_one_step(const OneStepSystem& sys, double s,
                                        const std::vector<double>& x1_grid,
                                        const QuadratureOptions& opt) {
  check_tail(sys, opt);
  const OneStepNodes nodes(sys, s, opt);
  std::vector<double> out;
  out.reserve(x1_grid.size());
  for (double x1 : x1_grid) out.push_back(nodes.density(x1));
  return out;
}

std::vector<double> quadrature_delta_log_h1(const OneStepSystem& sys,
                                            const std::vector<double>& x1_grid,
                                            const QuadratureOptions& opt) {
  const auto hp = quadrature_one_step(sys, opt.gamma_step, x1_grid, opt);
  const auto hm = quadrature_one_step(sys, -opt.gamma_step, x1_grid, opt);
  std::vector<double> out(x1_grid.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (std::log(hp[i]) - std::log(hm[i])) / (2.0 * opt.gamma_step);
  return out;
}

ConditionalTable quadrature_binned_response(const OneStepSystem& sys, const BinSpec& bins,
                                            const QuadratureOptions& opt, int points_per_bin) {
  check_tail(sys, opt);
  const OneStepNodes n0(sys, 0.0, opt), np(sys, opt.gamma_step, opt),
      nm(sys, -opt.gamma_step, opt);
  ConditionalTable t;
  const double width = (bins.hi - bins.lo) / bins.n_bins;
  for (int b = 0; b < bins.n_bins; ++b) {
    const double l = bins.lo + b * width, r = l + width;
    const double mass = simpson([&](double x) { return n0.density(x); }, l, r, points_per_bin);
    const double dmass = simpson(
        [&](double x) { return (np.density(x) - nm.density(x)) / (2.0 * opt.gamma_step); }, l,
        r, points_per_bin);
    t.left.push_back(l);
    t.right.push_back(r);
    t.counts.push_back(0);
    t.means.push_back(dmass / mass);
    t.ses.push_back(0.0);
    t.log_density.push_back(std::log(mass / width));
  }
  return t;
}

FdLogDensityResult fd_log_density(const ModelInstance& model, const Direction& dir,
                                  const FdLogDensityConfig& config) {
  if (!(config.eps > 0.0)) throw ConfigError("fd_log_density: eps must be positive");
  PathConfig pc = config.paths;
  pc.directions.clear();
  pc.store_trajectories = false;
  const auto& bins = config.bins;
  const std::size_t L = pc.n_paths;

  // bin index per path at offsets +eps, -eps, +2eps, -2eps
  auto bin_of = [&](double s) {
    const auto shifted = model.with_gamma(offset_gamma(model, dir, s));
    const auto ens = simulate_ensemble(shifted, pc);
    std::vector<int> idx(L);
    for (std::size_t p = 0; p < L; ++p)
      idx[p] = ens.valid[p] ? bin_index(ens.x(static_cast<Eigen::Index>(p), 0), bins.lo,
                                        bins.hi, bins.n_bins)
                            : -1;
    return idx;
  };
  const auto plus = bin_of(config.eps), minus = bin_of(-config.eps);
  const auto plus2 = bin_of(2 * config.eps), minus2 = bin_of(-2 * config.eps);

  const auto nb = static_cast<std::size_t>(bins.n_bins);
  auto estimate = [&](const std::vector<int>& a, const std::vector<int>& b, double step,
                      const std::vector<std::size_t>* resample, std::vector<double>& out,
                      std::vector<std::size_t>* ca, std::vector<std::size_t>* cb) {
    std::vector<std::size_t> na(nb, 0), nm(nb, 0);
    for (std::size_t j = 0; j < L; ++j) {
      const std::size_t p = resample ? (*resample)[j] : j;
      if (a[p] >= 0) ++na[static_cast<std::size_t>(a[p])];
      if (b[p] >= 0) ++nm[static_cast<std::size_t>(b[p])];
    }
    out.assign(nb, kNaN);
    for (std::size_t i = 0; i < nb; ++i)
      if (na[i] > 0 && nm[i] > 0)
        out[i] = (std::log(static_cast<double>(na[i])) - std::log(static_cast<double>(nm[i]))) /
                 (2.0 * step);
    if (ca) *ca = na;
    if (cb) *cb = nm;
  };

  auto build = [&](const std::vector<int>& a, const std::vector<int>& b, double step,
                   std::uint64_t stream) {
    ConditionalTable t;
    std::vector<double> est;
    std::vector<std::size_t> ca, cb;
    estimate(a, b, step, nullptr, est, &ca, &cb);
    const double width = (bins.hi - bins.lo) / bins.n_bins;
    t.total = L;
    for (std::size_t i = 0; i < nb; ++i) {
      t.left.push_back(bins.lo + static_cast<double>(i) * width);
      t.right.push_back(bins.lo + static_cast<double>(i + 1) * width);
      t.counts.push_back(std::min(ca[i], cb[i]));
      t.means.push_back(est[i]);
      const double avg = 0.5 * static_cast<double>(ca[i] + cb[i]);
      t.log_density.push_back(avg > 0 ? std::log(avg / (static_cast<double>(L) * width))
                                      : -std::numeric_limits<double>::infinity());
    }
    // paired bootstrap over path indices
    PathRng rng(pc.seed, stream, StreamKind::Bootstrap);
    std::uniform_int_distribution<std::size_t> pick(0, L - 1);
    std::vector<double> sum(nb, 0.0), sum2(nb, 0.0);
    std::vector<std::size_t> n_ok(nb, 0);
    std::vector<std::size_t> resample(L);
    std::vector<double> rep;
    for (int r = 0; r < config.n_bootstrap; ++r) {
      for (auto& p : resample) p = pick(rng.engine());
      estimate(a, b, step, &resample, rep, nullptr, nullptr);
      for (std::size_t i = 0; i < nb; ++i) {
        if (std::isnan(rep[i])) continue;
        sum[i] += rep[i];
        sum2[i] += rep[i] * rep[i];
        ++n_ok[i];
      }
    }
    for (std::size_t i = 0; i < nb; ++i) {
      const auto n = static_cast<double>(n_ok[i]);
      t.ses.push_back(n_ok[i] > 1 ? std::sqrt(std::max(0.0, (sum2[i] - sum[i] * sum[i] / n) /
                                                              (n - 1.0)))
                                  : kNaN);
    }
    t.apply_min_count(bins.min_count);
    return t;
  };

  FdLogDensityResult res;
  res.table = build(plus, minus, config.eps, 0);
  res.table_double = build(plus2, minus2, 2 * config.eps, 1);
  for (std::size_t i = 0; i < nb; ++i) {
    if (res.table.empty(i) || res.table_double.empty(i)) continue;
    const double se = std::hypot(res.table.ses[i], res.table_double.ses[i]);
    if (std::abs(res.table.means[i] - res.table_double.means[i]) > 3.0 * se)
      res.locally_linear = false;
  }
  return res;
}

OuMarginal ou_analytic(double t, double m0, double v0, double gamma, double sigma) {
  if (!(v0 > 0.0 || sigma > 0.0)) throw ConfigError("ou_analytic: need v0 > 0 or sigma > 0");
  OuMarginal o{t, m0, v0, gamma, sigma, 0.0, 0.0};
  const double e1 = std::exp(-t), e2 = std::exp(-2.0 * t);
  o.mean = gamma + (m0 - gamma) * e1;
  o.var = v0 * e2 + sigma * sigma * (1.0 - e2) / 2.0;
  return o;
}

double OuMarginal::pdf(double x) const {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * M_PI * var);
}

double OuMarginal::dlog_drift(double x) const {
  return (1.0 - std::exp(-t)) * (x - mean) / var;
}

double OuMarginal::dlog_sigma(double x) const {
  const double dv = sigma * (1.0 - std::exp(-2.0 * t));
  return dv * ((x - mean) * (x - mean) / var - 1.0) / (2.0 * var);
}

double bin_average(const std::function<double(double)>& f,
                   const std::function<double(double)>& pdf, double l, double r) {
  const double mass = simpson(pdf, l, r, 400);
  const double moment = simpson([&](double x) { return f(x) * pdf(x); }, l, r, 400);
  return moment / mass;
}

namespace {

class LikelihoodRatioHook final : public PathHook {
 public:
  LikelihoodRatioHook(std::size_t n_dirs, bool allow_sigma)
      : n_dirs_(n_dirs), allow_sigma_(allow_sigma) {}

  void step(PathState& s, const DerivativeBundle& b, const Vec& dB, double dt) override {
    const auto m = static_cast<double>(dB.size());
    for (std::size_t k = 0; k < n_dirs_; ++k) {
      const auto& d = b.delta[k];
      if (d.delta_sigma != 0.0 && !allow_sigma_)
        throw ModelError(
            "likelihood-ratio response needs a parameter-independent diffusion (d sigma = 0)");
      // grad log k(dB) = -dB / dt
      s.acc[k] += -m * d.delta_sigma / b.sigma +
                  dB.dot(d.delta_sigma * dB + d.delta_drift * dt) / (b.sigma * dt);
    }
  }

 private:
  std::size_t n_dirs_;
  bool allow_sigma_;
};

}  // namespace

HookFactory likelihood_ratio_hooks(const PathConfig& config, bool allow_sigma_perturbation) {
  return [n = config.directions.size(), allow_sigma_perturbation] {
    return std::make_unique<LikelihoodRatioHook>(n, allow_sigma_perturbation);
  };
}

PathEnsemble run_likelihood_ratio(const ModelInstance& model, const PathConfig& config,
                                  bool allow_sigma_perturbation) {
  return simulate_ensemble(model, config,
                           likelihood_ratio_hooks(config, allow_sigma_perturbation));
}

FdErgodicResult fd_ergodic_response(const ModelInstance& model, const ErgodicConfig& c,
                                    double eps) {
  c.validate();
  if (!(eps > 0.0)) throw ConfigError("fd_ergodic_response: eps must be positive");
  const auto plus = model.with_gamma(offset_gamma(model, c.direction, eps));
  const auto minus = model.with_gamma(offset_gamma(model, c.direction, -eps));
  const auto n_burn = static_cast<std::size_t>(std::llround(c.burn_in / c.dt));
  const auto n = static_cast<std::size_t>(std::llround(c.horizon / c.dt));

  auto orbit_average = [&](const ModelInstance& m, std::size_t o) {
    PathRng init_rng(c.seed, o, StreamKind::Initial);
    PathRng inc_rng(c.seed, o, StreamKind::Increments);
    Vec x(m.dim()), dB(m.dim()), f(m.dim());
    m.init.sample(init_rng, x);
    const double sd = std::sqrt(c.dt);
    double sum = 0.0;
    for (std::size_t step = 0; step < n_burn + n; ++step) {
      for (Eigen::Index i = 0; i < dB.size(); ++i) dB[i] = sd * inc_rng.normal();
      if (step >= n_burn) sum += c.observable.value(x);
      x = em_step(x, static_cast<double>(step) * c.dt, dB, c.dt, m);
    }
    return sum / static_cast<double>(n);
  };

  const auto n_orbits = static_cast<std::size_t>(c.n_orbits);
  std::vector<double> phi_p(n_orbits), phi_m(n_orbits);
  parallel_for(n_orbits, c.workers, [&](std::size_t b, std::size_t e) {
    for (std::size_t o = b; o < e; ++o) {
      phi_p[o] = orbit_average(plus, o);
      phi_m[o] = orbit_average(minus, o);
    }
  });

  FdErgodicResult r;
  for (std::size_t o = 0; o < n_orbits; ++o)
    r.orbit_response.push_back((phi_p[o] - phi_m[o]) / (2.0 * eps));
  const auto ms = mean_se(r.orbit_response);
  r.response = ms.mean;
  r.se = ms.se;
  r.phi_plus = mean_se(phi_p).mean;
  r.phi_minus = mean_se(phi_m).mean;
  return r;
}

}  // namespace divker
