#include "divker/oracle.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace divker;
using divker::testing::em_ou_marginal;
using divker::testing::z_score;

namespace {

double normal_pdf(double x, double m, double v) {
  return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2.0 * M_PI * v);
}

// x_1 = a x_0 + c s + sig b, x_0 ~ N(m, v): x_1 ~ N(a m + c s, a^2 v + sig^2 kv).
OneStepSystem linear_system(double a, double c, double sig, double m, double v, double kv) {
  OneStepSystem sys;
  sys.map = [=](double x, double s) { return a * x + c * s; };
  sys.sigma = [=](double, double) { return sig; };
  sys.h0_pdf = [=](double x, double) { return normal_pdf(x, m, v); };
  sys.h0_mean = m;
  sys.h0_sd = std::sqrt(v);
  sys.kernel_var = kv;
  return sys;
}

PathConfig paths(std::size_t L, int n, double dt, std::uint64_t seed) {
  PathConfig pc;
  pc.n_paths = L;
  pc.n_steps = n;
  pc.dt = dt;
  pc.seed = seed;
  return pc;
}

}  // namespace

TEST_CASE("quadrature reproduces the gaussian one-step marginal") {
  const double a = 0.9, c = 0.7, sig = 0.4, m = 0.3, v = 1.5, kv = 0.01;
  const auto sys = linear_system(a, c, sig, m, v, kv);
  const double mean = a * m, var = a * a * v + sig * sig * kv;
  std::vector<double> grid;
  for (double x = -3.0; x <= 3.0; x += 0.25) grid.push_back(x);
  const auto h = quadrature_one_step(sys, 0.0, grid);
  const auto d = quadrature_delta_log_h1(sys, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CAPTURE(grid[i]);
    CHECK(std::abs(h[i] - normal_pdf(grid[i], mean, var)) < 1e-6);
    CHECK(std::abs(d[i] - c * (grid[i] - mean) / var) < 1e-6);
  }
  const BinSpec bins{-2.0, 2.0, 8, 0};
  const auto t = quadrature_binned_response(sys, bins);
  for (std::size_t b = 0; b < t.size(); ++b) {
    const double expect = bin_average([&](double x) { return c * (x - mean) / var; },
                                      [&](double x) { return normal_pdf(x, mean, var); },
                                      t.left[b], t.right[b]);
    CHECK(std::abs(t.means[b] - expect) < 1e-6);
  }
}

TEST_CASE("quadrature refuses a truncated initial density") {
  auto sys = linear_system(1.0, 1.0, 1.0, 0.0, 1.0, 0.01);
  QuadratureOptions opt;
  opt.half_width_sd = 3.0;
  CHECK_THROWS_AS(quadrature_one_step(sys, 0.0, {0.0}, opt), NumericalError);
}

TEST_CASE("one_step_system follows the model") {
  const auto m = get_model("mult1d", {{0.2}, 1});
  const auto sys = one_step_system(m, 0.01, {1.0});
  CHECK(sys.kernel_var == doctest::Approx(0.01));
  Vec x(1), f(1);
  x << 0.5;
  m.drift(0.0, x, f);
  CHECK(sys.map(0.5, 0.0) == doctest::Approx(0.5 + 0.01 * f[0]));
  CHECK(sys.sigma(0.5, 0.0) == doctest::Approx(m.sigma(0.0, x)));
  const auto shifted = m.with_gamma({0.2 + 1e-3});
  CHECK(sys.sigma(0.5, 1e-3) == doctest::Approx(shifted.sigma(0.0, x)));
  CHECK_THROWS_AS(one_step_system(get_model("ou", {{0.0, 0.0}, 2}), 0.01, {1.0, 0.0}),
                  ModelError);
}

TEST_CASE("ou closed form") {
  const auto o = ou_analytic(0.7, 0.2, 1.3, 0.5, 0.8);
  const auto em = em_ou_marginal(70000, 1e-5, 0.2, 1.3, 0.5, 0.8);
  CHECK(o.mean == doctest::Approx(em.mean).epsilon(1e-4));
  CHECK(o.var == doctest::Approx(em.var).epsilon(1e-4));
  const double h = 1e-5;
  for (double x : {-1.0, 0.4, 2.0}) {
    const auto gp = ou_analytic(0.7, 0.2, 1.3, 0.5 + h, 0.8);
    const auto gm = ou_analytic(0.7, 0.2, 1.3, 0.5 - h, 0.8);
    CHECK(o.dlog_drift(x) ==
          doctest::Approx((std::log(gp.pdf(x)) - std::log(gm.pdf(x))) / (2 * h)).epsilon(1e-6));
    const auto sp = ou_analytic(0.7, 0.2, 1.3, 0.5, 0.8 + h);
    const auto sm = ou_analytic(0.7, 0.2, 1.3, 0.5, 0.8 - h);
    CHECK(o.dlog_sigma(x) ==
          doctest::Approx((std::log(sp.pdf(x)) - std::log(sm.pdf(x))) / (2 * h)).epsilon(1e-6));
    CHECK(o.score(x) == doctest::Approx(-(x - o.mean) / o.var));
  }
  CHECK_THROWS_AS(ou_analytic(1.0, 0.0, 0.0, 0.0, 0.0), ConfigError);
}

TEST_CASE("bin_average") {
  const auto one = [](double) { return 1.0; };
  CHECK(bin_average([](double x) { return x; }, one, 1.0, 3.0) == doctest::Approx(2.0));
  const auto pdf = [](double x) { return normal_pdf(x, 0.0, 1.0); };
  // E[x | 0 < x < 1] = (phi(0) - phi(1)) / (Phi(1) - 1/2)
  const double expect = (pdf(0.0) - pdf(1.0)) / (0.5 * std::erf(1.0 / std::sqrt(2.0)));
  CHECK(bin_average([](double x) { return x; }, pdf, 0.0, 1.0) ==
        doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("fd_log_density agrees with the ou closed form") {
  const auto m = get_model("ou", {{0.0, 0.0}, 1});
  FdLogDensityConfig cfg;
  cfg.eps = 0.1;
  cfg.bins = {-2.0, 2.0, 8, 500};
  cfg.paths = paths(100000, 50, 0.01, 2);
  cfg.n_bootstrap = 100;
  const auto r = fd_log_density(m, {1.0, 0.0}, cfg);
  const auto o = ou_analytic(0.5, 0.0, 1.0, 0.0, 1.0);
  int checked = 0;
  for (std::size_t b = 0; b < r.table.size(); ++b) {
    if (r.table.empty(b)) continue;
    CAPTURE(b);
    const double expect = bin_average([&](double x) { return o.dlog_drift(x); },
                                      [&](double x) { return o.pdf(x); }, r.table.left[b],
                                      r.table.right[b]);
    // Time-discretization bias of the simulated marginal is O(dt).
    CHECK(std::abs(r.table.means[b] - expect) < 4.0 * r.table.ses[b] + 0.01 + 0.01 * std::abs(expect));
    ++checked;
  }
  CHECK(checked == 8);
  CHECK(r.locally_linear);
  CHECK(r.table_double.size() == r.table.size());
  cfg.eps = 0.0;
  CHECK_THROWS_AS(fd_log_density(m, {1.0, 0.0}, cfg), ConfigError);
}

TEST_CASE("likelihood ratio agrees with the divergence kernel") {
  const auto m = get_model("ou", {{0.3, 0.0}, 1});
  auto pc = paths(40000, 50, 0.01, 6);
  pc.directions = {{1.0, 0.0}};
  const auto lr = run_likelihood_ratio(m, pc);
  const auto dk = run_divergence_kernel(m, pc, {});
  CHECK(lr.x == dk.x);
  const BinSpec bins{-2.0, 2.5, 9, 500};
  const auto a = estimate_linear_response(lr, bins);
  const auto b = estimate_linear_response(dk, bins);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.empty(i)) continue;
    CAPTURE(i);
    CHECK(z_score(a.means[i], a.ses[i], b.means[i], b.ses[i]) < 4.0);
  }
  const auto ms = mean_response(lr);
  CHECK(std::abs(ms.mean) < 4.0 * ms.se);
  pc.directions = {{0.0, 1.0}};
  CHECK_THROWS_AS(run_likelihood_ratio(m, pc), ModelError);
  CHECK_NOTHROW(run_likelihood_ratio(m, pc, true));
}

TEST_CASE("likelihood ratio with a sigma perturbation matches quadrature after one step") {
  const auto m = get_model("mult1d", {{0.0}, 1});
  auto pc = paths(200000, 1, 0.01, 9);
  pc.directions = {{1.0}};
  const auto lr = run_likelihood_ratio(m, pc, true);
  const BinSpec bins{-2.0, 2.0, 8, 1000};
  const auto est = estimate_linear_response(lr, bins);
  const auto ref = quadrature_binned_response(one_step_system(m, 0.01, {1.0}), bins);
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (est.empty(i)) continue;
    CAPTURE(i);
    CHECK(std::abs(est.means[i] - ref.means[i]) < 4.0 * est.ses[i]);
  }
}

TEST_CASE("fd ergodic response of the ou mean") {
  const auto m = get_model("ou", {{0.0, 0.0}, 1});
  ErgodicConfig c;
  c.observable = observable_by_name("mean");
  c.direction = {1.0, 0.0};
  c.horizon = 200.0;
  c.window = 1.0;
  c.dt = 0.01;
  c.n_orbits = 4;
  const auto r = fd_ergodic_response(m, c, 0.1);
  // With shared noise the two orbits differ by 2 eps (1 - (1 - dt)^n), which
  // has converged after the burn-in.
  CHECK(r.response == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(r.phi_plus - r.phi_minus == doctest::Approx(0.2).epsilon(1e-3));
  CHECK(r.orbit_response.size() == 4);
  CHECK_THROWS_AS(fd_ergodic_response(m, c, 0.0), ConfigError);
}
