#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "ggpm/numerics.hpp"
#include "oracles.hpp"

using namespace ggpm;

TEST_CASE("gauss-hermite nodes reproduce standard normal moments") {
  for (int order : {3, 7, 21, 61}) {
    const QuadNodes& q = gauss_hermite(order);
    double m0 = 0, m2 = 0, m4 = 0;
    for (int i = 0; i < order; ++i) {
      m0 += q.w[i];
      m2 += q.w[i] * q.x[i] * q.x[i];
      m4 += q.w[i] * std::pow(q.x[i], 4);
    }
    CHECK(m0 == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(m2 == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(m4 == doctest::Approx(3.0).epsilon(1e-10));
  }
}

TEST_CASE("gaussian_expect closed-form identities") {
  GaussianExpectationPlan plan;
  CHECK(gaussian_expect([](double e) { return e * e; }, 0.0, 1.0, plan) ==
        doctest::Approx(1.0).epsilon(1e-12));
  const double m = 0.4, v = 0.7;
  CHECK(gaussian_expect([](double e) { return std::exp(e); }, m, v, plan) ==
        doctest::Approx(std::exp(m + 0.5 * v)).epsilon(1e-10));
}

TEST_CASE("gaussian_expect of a Poisson log-likelihood matches the trapezoid oracle") {
  auto poisson_ll = [](double eta) { return 3.0 * eta - std::exp(eta) - std::lgamma(4.0); };
  const double ref = oracles::gauss_expect_bf(poisson_ll, 1.0, 0.5, 1000001, 10.0);
  GaussianExpectationPlan plan{31, true, 1e-11, 2049};
  CHECK(gaussian_expect(poisson_ll, 1.0, 0.5, plan) == doctest::Approx(ref).epsilon(1e-8));
}

TEST_CASE("gaussian_expect error paths") {
  CHECK_THROWS_AS(gaussian_expect([](double) { return std::nan(""); }, 0.0, 1.0, {}),
                  NonFiniteError);
  GaussianExpectationPlan tight{3, true, 1e-14, 7};
  CHECK_THROWS_AS(
      gaussian_expect([](double e) { return std::cos(40.0 * e * e); }, 0.0, 1.0, tight),
      ConvergenceError);
}

TEST_CASE("discrete_expect over a Poisson pmf") {
  const double lambda = 2.0;
  auto logw = [&](double n) { return n * std::log(lambda) - lambda - std::lgamma(n + 1.0); };
  CHECK(discrete_expect([](double) { return 1.0; }, logw, lambda, std::sqrt(lambda)) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(discrete_expect([](double n) { return n; }, logw, lambda, std::sqrt(lambda)) ==
        doctest::Approx(lambda).epsilon(1e-12));
}

TEST_CASE("polygamma identities and inverse digamma round trip") {
  CHECK(polygamma(0, 1.0) == doctest::Approx(-0.57721566490153286).epsilon(1e-12));
  CHECK(polygamma(1, 1.0) == doctest::Approx(M_PI * M_PI / 6.0).epsilon(1e-12));
  CHECK(polygamma(0, 0.5) == doctest::Approx(-1.9635100260214235).epsilon(1e-12));
  CHECK(inverse_digamma(polygamma(0, 3.7)) == doctest::Approx(3.7).epsilon(1e-10));
  CHECK(inverse_digamma(polygamma(0, 0.08)) == doctest::Approx(0.08).epsilon(1e-9));
  CHECK_THROWS_AS(polygamma(0, -1.0), DomainError);
  const double h = 1e-5;
  const double fd = (polygamma(1, 2.3 + h) - polygamma(1, 2.3 - h)) / (2 * h);
  CHECK(polygamma(2, 2.3) == doctest::Approx(fd).epsilon(1e-8));
}

TEST_CASE("norm_logcdf tails") {
  CHECK(norm_logcdf(0.0) == doctest::Approx(std::log(0.5)).epsilon(1e-14));
  // asymptotic branch agrees with direct erfc where both are representable
  const double direct = std::log(0.5 * std::erfc(10.5 / std::sqrt(2.0)));
  CHECK(norm_logcdf(-10.5) == doctest::Approx(direct).epsilon(1e-8));
  CHECK(norm_logcdf(-40.0) < norm_logcdf(-39.0));
  CHECK(std::isfinite(norm_logcdf(-100.0)));
  CHECK(norm_hazard(-30.0) == doctest::Approx(30.0 + 1.0 / 30.0).epsilon(1e-3));
}

TEST_CASE("psd_solve and psd_logdet") {
  SUBCASE("identity") {
    Mat a = Mat::Identity(4, 4);
    Vec b = Vec::LinSpaced(4, 1.0, 4.0);
    CHECK((psd_solve(a, b) - b).norm() == doctest::Approx(0.0).epsilon(1e-14));
  }
  SUBCASE("1x1") {
    Mat a(1, 1);
    a << 2.0;
    Vec b(1);
    b << 4.0;
    CHECK(psd_solve(a, b)[0] == doctest::Approx(2.0));
    CHECK(psd_logdet(a) == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("random SPD vs dense inverse oracle") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd;
    Mat g(10, 10);
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 10; ++j) g(i, j) = nd(rng);
    Mat a = g * g.transpose() + 0.5 * Mat::Identity(10, 10);
    Vec b(10);
    for (int i = 0; i < 10; ++i) b[i] = nd(rng);
    const Vec x = psd_solve(a, b);
    const Vec x_ref = a.inverse() * b;
    CHECK((x - x_ref).norm() / x_ref.norm() < 1e-10);
    CHECK((a * x - b).norm() / b.norm() < 1e-8);
    CHECK(psd_logdet(a) == doctest::Approx(std::log(a.determinant())).epsilon(1e-10));
  }
  SUBCASE("not PSD after escalation") {
    Mat a = -Mat::Identity(3, 3);
    CHECK_THROWS_AS(psd_factor(a), NotPsdError);
  }
}

TEST_CASE("minimize: quadratic bowl") {
  Vec target(3);
  target << 1.0, -2.0, 0.5;
  auto obj = [&](const Vec& x, Vec* g) {
    if (g) *g = 2.0 * (x - target);
    return (x - target).squaredNorm();
  };
  const MinimizeResult r = minimize(obj, Vec::Zero(3));
  CHECK(r.status == MinimizeStatus::Converged);
  CHECK((r.x - target).norm() < 1e-6);
  for (size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1] + 1e-15);
}

TEST_CASE("minimize: Rosenbrock") {
  auto obj = [](const Vec& x, Vec* g) {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    if (g) {
      (*g)[0] = -2.0 * a - 400.0 * x[0] * b;
      (*g)[1] = 200.0 * b;
    }
    return a * a + 100.0 * b * b;
  };
  Vec x0(2);
  x0 << -1.2, 1.0;
  MinimizeOpts opts;
  opts.max_iter = 5000;
  opts.gtol = 1e-7;
  const MinimizeResult r = minimize(obj, x0, opts);
  CHECK(r.status == MinimizeStatus::Converged);
  CHECK(std::abs(r.x[0] - 1.0) < 1e-4);
  CHECK(std::abs(r.x[1] - 1.0) < 1e-4);
}

TEST_CASE("check_gradient flags a corrupted gradient and passes a clean one") {
  auto clean = [](const Vec& x, Vec* g) {
    if (g) *g = 2.0 * x;
    return x.squaredNorm();
  };
  CHECK(check_gradient(clean, Vec::Ones(4)).max_rel_error < 1e-9);
  auto corrupted = [](const Vec& x, Vec* g) {
    if (g) {
      *g = 2.0 * x;
      (*g)[2] *= 1.05;
    }
    return x.squaredNorm();
  };
  CHECK(check_gradient(corrupted, Vec::Ones(4)).max_rel_error > 1e-2);
}
