#include "divker/linresp.hpp"
#include "divker/score.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace divker;
using divker::testing::em_ou_marginal;

namespace {

DerivativeBundle one_dim_bundle(double jac, double gdiv, double s, double gs, double hs) {
  DerivativeBundle b(1, 0);
  b.drift.setZero();
  b.jac_drift(0, 0) = jac;
  b.div_drift = jac;
  b.grad_div_drift[0] = gdiv;
  b.sigma = s;
  b.grad_sigma[0] = gs;
  b.hess_sigma(0, 0) = hs;
  b.lap_sigma = hs;
  return b;
}

Vec vec1(double v) { return Vec::Constant(1, v); }

PathConfig ou_config(std::size_t L, int n, double dt, double alpha, std::uint64_t seed) {
  PathConfig pc;
  pc.n_paths = L;
  pc.n_steps = n;
  pc.dt = dt;
  pc.alpha = alpha;
  pc.seed = seed;
  return pc;
}

}  // namespace

TEST_CASE("init_nu is the gaussian score") {
  const auto init = gaussian_initial_density(2, 0.5, 2.0);
  Vec x(2);
  x << 1.5, -0.5;
  const Vec nu = init_nu(x, init);
  CHECK(nu[0] == doctest::Approx(-0.5));
  CHECK(nu[1] == doctest::Approx(0.5));
}

TEST_CASE("continuous step matches the formula in one dimension") {
  const double jac = -1.3, gdiv = 0.4, s = 0.9, gs = 0.25, hs = -0.6, dt = 0.01, a = 7.0;
  const auto b = one_dim_bundle(jac, gdiv, s, gs, hs);
  const double nu0 = 0.8, db = 0.07;
  Vec nu = vec1(nu0);
  step_nu_continuous(nu, b, vec1(db), dt, a);
  const double drift = (gs * gs - jac - a) * nu0 - gdiv + hs * gs + gs * hs;
  const double noise = (gs * nu0 + hs + a / s) * db;
  CHECK(nu[0] == doctest::Approx(nu0 + drift * dt - noise).epsilon(1e-14));
}

TEST_CASE("discrete step matches the formula in one dimension") {
  const auto b = one_dim_bundle(-1.3, 0.0, 0.9, 0.25, 0.0);
  const double dt = 0.01, db = 0.07, w = 0.1, nu0 = 0.8, dg = 0.3;
  const auto jac = step_jacobian(b, vec1(db), dt);
  const double g = 1.0 - 1.3 * dt + db * 0.25;
  CHECK(jac.g(0, 0) == doctest::Approx(g));
  CHECK(jac.log_abs_det == doctest::Approx(std::log(g)));
  CHECK_FALSE(jac.singular);
  Vec nu = vec1(nu0);
  CHECK(step_nu_discrete(nu, jac, vec1(dg), vec1(db), 0.9, dt, w));
  CHECK(nu[0] == doctest::Approx((1 - w) * (nu0 - dg) / g - w * db / (0.9 * dt)));
}

TEST_CASE("step jacobian in several dimensions") {
  DerivativeBundle b(3, 0);
  b.jac_drift << 1, 2, 0, 0, -1, 3, 4, 0, 1;
  b.grad_sigma << 0.1, -0.2, 0.3;
  Vec db(3);
  db << 0.05, -0.1, 0.02;
  const auto j = step_jacobian(b, db, 0.01);
  const Mat g = Mat::Identity(3, 3) + 0.01 * b.jac_drift + db * b.grad_sigma.transpose();
  CHECK((j.g - g).norm() < 1e-15);
  CHECK(j.log_abs_det == doctest::Approx(std::log(std::abs(g.determinant()))));
}

TEST_CASE("singular step jacobian stops the discrete step") {
  const auto b = one_dim_bundle(0.0, 0.0, 1.0, 1.0, 0.0);
  const auto j = step_jacobian(b, vec1(-1.0), 0.01);
  CHECK(j.singular);
  Vec nu = vec1(1.0);
  CHECK_FALSE(step_nu_discrete(nu, j, vec1(0.0), vec1(-1.0), 1.0, 0.01, 0.1));
  CHECK(nu[0] == 1.0);
}

TEST_CASE("div_g in one dimension") {
  // mult1d has F'' = 0, so d log|g| / dx = sigma'' dB / g.
  const auto m = get_model("mult1d", {{0.3}, 1});
  const double dt = 0.01;
  for (double x0 : {-1.0, 0.2, 0.9}) {
    for (double db : {-0.1, 0.03}) {
      CAPTURE(x0);
      CAPTURE(db);
      const Vec x = vec1(x0);
      const auto b = eval_bundle(m, 0.4, x, Direction{1.0});
      const double g = 1.0 + b.jac_drift(0, 0) * dt + db * b.grad_sigma[0];
      const double hs = b.hess_sigma(0, 0);
      const Vec exact = div_g(m, 0.4, x, b, vec1(db), dt, DivergenceMode::ExactFD);
      CHECK(exact[0] == doctest::Approx(hs * db / g).epsilon(1e-6));
      const Vec approx = div_g(m, 0.4, x, b, vec1(db), dt, DivergenceMode::Approximate);
      CHECK(approx[0] == doctest::Approx(hs * (db - b.grad_sigma[0] * dt)).epsilon(1e-12));
    }
  }
}

TEST_CASE("ou score matches the exact discrete marginal") {
  const double g = 0.5, dt = 0.01;
  const int n = 50;
  const auto m = get_model("ou", {{g, 0.0}, 1});
  const auto em = em_ou_marginal(n, dt, 0.0, 1.0, g, 1.0);
  const BinSpec spec{-2.0, 3.0, 10, 500};
  for (auto mode : {StepMode::Continuous, StepMode::Discrete}) {
    for (double alpha : {5.0, 10.0}) {
      CAPTURE(int(mode));
      CAPTURE(alpha);
      EstimatorOptions opt;
      opt.mode = mode;
      opt.alpha = alpha;
      const auto e = run_divergence_kernel(m, ou_config(40000, n, dt, alpha, 21), opt);
      const auto t = estimate_score(e, spec);
      std::vector<double> xs(e.x.col(0).data(), e.x.col(0).data() + e.x.rows());
      std::vector<double> exact(xs.size());
      for (std::size_t i = 0; i < xs.size(); ++i) exact[i] = -(xs[i] - em.mean) / em.var;
      const auto ref = bin_1d(xs, exact, spec.lo, spec.hi, spec.n_bins);
      int checked = 0;
      for (std::size_t b = 0; b < t.size(); ++b) {
        if (t.empty(b)) continue;
        CAPTURE(b);
        // The continuous recursion carries an O(dt) bias on top of the noise.
        const double slack = mode == StepMode::Continuous ? 0.02 * std::abs(ref.means[b]) : 0.0;
        CHECK(std::abs(t.means[b] - ref.means[b]) < 4.0 * t.ses[b] + slack);
        ++checked;
      }
      CHECK(checked >= 6);
    }
  }
}

TEST_CASE("terminal covector has mean zero") {
  const auto m = get_model("mult1d", {{0.0}, 1});
  for (auto mode : {StepMode::Continuous, StepMode::Discrete}) {
    EstimatorOptions opt;
    opt.mode = mode;
    const auto e = run_divergence_kernel(m, ou_config(20000, 30, 0.01, 10.0, 5), opt);
    const auto ms = mean_nu(e);
    CHECK(std::abs(ms.mean) < 4.0 * ms.se);
  }
}

TEST_CASE("discrete and continuous covectors approach each other") {
  const auto m = get_model("mult1d", {{0.0}, 1});
  double rms[2];
  int i = 0;
  for (double dt : {0.01, 0.0025}) {
    const int n = static_cast<int>(std::lround(0.3 / dt));
    EstimatorOptions c, d;
    d.mode = StepMode::Discrete;
    const auto pc = ou_config(2000, n, dt, 10.0, 17);
    const auto ec = run_divergence_kernel(m, pc, c);
    const auto ed = run_divergence_kernel(m, pc, d);
    CHECK(ec.x == ed.x);
    rms[i++] = std::sqrt((ec.nu - ed.nu).squaredNorm() / 2000.0);
  }
  CHECK(rms[1] < 0.75 * rms[0]);
}
