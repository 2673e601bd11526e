#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "culab/errors.hpp"
#include "culab/linalg.hpp"
#include "culab/rng.hpp"
#include "culab/stats.hpp"
#include "testing.hpp"

using namespace culab;
using namespace culab::stats;

namespace {

// Independent refinement oracle: composite Simpson for
// int_0^40 exp(-z cosh t) cosh(nu t) dt with 10^6 panels.
double bessel_k_simpson_oracle(double nu, double z) {
  const std::size_t panels = 1'000'000;
  const double a = 0.0, b = 40.0;
  const double h = (b - a) / static_cast<double>(panels);
  auto f = [&](double t) { return std::exp(-z * std::cosh(t)) * std::cosh(nu * t); };
  double s = f(a) + f(b);
  for (std::size_t i = 1; i < panels; ++i) {
    s += f(a + h * static_cast<double>(i)) * (i % 2 == 1 ? 4.0 : 2.0);
  }
  return s * h / 3.0;
}

double sample_covariance_entry(const std::vector<double>& flat, std::size_t n, std::size_t m,
                               std::size_t i, std::size_t j) {
  double mi = 0.0, mj = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    mi += flat[r * m + i];
    mj += flat[r * m + j];
  }
  mi /= static_cast<double>(n);
  mj /= static_cast<double>(n);
  double s = 0.0;
  for (std::size_t r = 0; r < n; ++r) s += (flat[r * m + i] - mi) * (flat[r * m + j] - mj);
  return s / static_cast<double>(n - 1);
}

}  // namespace

TEST_CASE("bessel_k half-integer closed form") {
  double expected = std::sqrt(std::numbers::pi / 2.0) * std::exp(-1.0);
  CHECK(bessel_k(0.5, 1.0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("bessel_k matches the Simpson refinement oracle") {
  double k1 = bessel_k(1.0, 1.0);
  double oracle1 = bessel_k_simpson_oracle(1.0, 1.0);
  CHECK(std::abs(k1 - oracle1) / oracle1 < 1e-8);

  double k0 = bessel_k(0.0, 5.0);
  double oracle0 = bessel_k_simpson_oracle(0.0, 5.0);
  CHECK(std::abs(k0 - oracle0) / oracle0 < 1e-8);
}

TEST_CASE("bessel_k recurrence on a grid") {
  // K_{nu+1}(z) = K_{nu-1}(z) + (2 nu / z) K_nu(z)
  for (double nu : {1.0, 1.5, 2.5, 4.0, 9.0}) {
    for (double z : {0.01, 0.1, 1.0, 5.0, 20.0, 50.0}) {
      double lhs = bessel_k(nu + 1.0, z);
      double rhs = bessel_k(nu - 1.0, z) + (2.0 * nu / z) * bessel_k(nu, z);
      CHECK(std::abs(lhs - rhs) / rhs < 1e-6);
    }
  }
}

TEST_CASE("bessel_k domain errors") {
  CHECK_THROWS_AS(bessel_k(1.0, 0.0), DomainError);
  CHECK_THROWS_AS(bessel_k(1.0, -2.0), DomainError);
  CHECK_THROWS_AS(bessel_k(-0.2, 1.0), DomainError);
}

TEST_CASE("BesselKTable agrees with direct quadrature") {
  for (double nu : {0.0, 1.0}) {
    BesselKTable table(nu);
    Rng rng(31 + static_cast<std::uint64_t>(nu));
    for (int i = 0; i < 200; ++i) {
      double z = std::exp(std::log(1e-5) + rng.next_double() * (std::log(300.0) - std::log(1e-5)));
      CHECK(std::abs(table.log_k(z) - log_bessel_k(nu, z)) < 1e-8);
    }
  }
}

TEST_CASE("mvn_sample law of large numbers") {
  MvnParams p({3.0, -1.0}, {1, 0, 0, 1});
  Rng rng(100);
  const std::size_t n = 100'000;
  auto s = mvn_sample(p, rng, n);
  double m0 = 0.0, m1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m0 += s[2 * i];
    m1 += s[2 * i + 1];
  }
  m0 /= n;
  m1 /= n;
  CHECK(std::abs(m0 - 3.0) < 0.02);
  CHECK(std::abs(m1 + 1.0) < 0.02);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double c = sample_covariance_entry(s, n, 2, i, j);
      CHECK(std::abs(c - (i == j ? 1.0 : 0.0)) < 0.05);
    }
}

TEST_CASE("mvn_sample edge cases") {
  MvnParams p({0.0}, {1.0});
  Rng rng(1);
  CHECK(mvn_sample(p, rng, 0).empty());
  CHECK_THROWS_AS(MvnParams({0.0, 0.0}, {1, 2, 2, 1}), DefinitenessError);
  CHECK_THROWS_AS(MvnParams({0.0, 0.0}, {1, 0.5, 0.2, 1}), DefinitenessError);  // asymmetric
}

TEST_CASE("exp_sample") {
  Rng rng(7);
  auto s = exp_sample(2.0, rng, 100'000);
  double mean = 0.0;
  bool all_positive = true;
  for (double x : s) {
    mean += x;
    all_positive = all_positive && x > 0.0;
  }
  mean /= static_cast<double>(s.size());
  CHECK(all_positive);
  CHECK(mean > 1.97);
  CHECK(mean < 2.03);

  CHECK(exp_sample_from_uniform(1.0, std::exp(-1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(exp_sample(0.0, rng, 1), DomainError);
  CHECK_THROWS_AS(exp_sample(-1.0, rng, 1), DomainError);
}

TEST_CASE("mvlaplace_sample covariance converges to lambda * gamma") {
  SUBCASE("gamma = I4, lambda = 1") {
    std::vector<double> eye4(16, 0.0);
    for (int i = 0; i < 4; ++i) eye4[i * 4 + i] = 1.0;
    MvLaplaceParams p(std::vector<double>(4, 0.0), eye4, 1.0);
    Rng rng(11);
    const std::size_t n = 200'000;
    auto s = mvlaplace_sample(p, rng, n);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double c = sample_covariance_entry(s, n, 4, i, j);
        CHECK(std::abs(c - (i == j ? 1.0 : 0.0)) < 0.1);
      }
  }
  SUBCASE("lambda = 2, gamma = I2") {
    MvLaplaceParams p({0.0, 0.0}, {1, 0, 0, 1}, 2.0);
    Rng rng(12);
    const std::size_t n = 200'000;
    auto s = mvlaplace_sample(p, rng, n);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double c = sample_covariance_entry(s, n, 2, i, j);
        CHECK(std::abs(c - (i == j ? 2.0 : 0.0)) < 0.1);
      }
  }
  SUBCASE("mean recovered") {
    MvLaplaceParams p({7.0, 7.0}, {1, 0, 0, 1}, 1.0);
    Rng rng(13);
    const std::size_t n = 200'000;
    auto s = mvlaplace_sample(p, rng, n);
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m0 += s[2 * i];
      m1 += s[2 * i + 1];
    }
    CHECK(std::abs(m0 / n - 7.0) < 0.05);
    CHECK(std::abs(m1 / n - 7.0) < 0.05);
  }
}

TEST_CASE("samplers are deterministic in the seed") {
  MvLaplaceParams p({0.0, 0.0}, {1, 0.3, 0.3, 1}, 1.5);
  Rng a(99), b(99);
  CHECK(mvlaplace_sample(p, a, 1000) == mvlaplace_sample(p, b, 1000));
  Rng c(99), d(100);
  CHECK(mvlaplace_sample(p, c, 10) != mvlaplace_sample(p, d, 10));
}

TEST_CASE("mvlaplace_logpdf m=1 reduces to the univariate Laplace") {
  // For m=1 the density is (1/(2b)) exp(-|x - mu|/b) with b = sqrt(lambda*gamma/2).
  double gamma = 1.0, lambda = 2.0;
  MvLaplaceParams p({0.0}, {gamma}, lambda);
  double b = std::sqrt(lambda * gamma / 2.0);
  for (double x : {-3.0, -0.7, 0.4, 1.0, 5.0}) {
    double expected = -std::log(2.0 * b) - std::abs(x) / b;
    CHECK(mvlaplace_logpdf(p, {x}) == doctest::Approx(expected).epsilon(1e-8));
  }
  // Numeric normalization oracle: trapezoid over [-50, 50].
  const std::size_t steps = 100'000;
  const double h = 100.0 / static_cast<double>(steps);
  double integral = 0.0;
  for (std::size_t i = 0; i <= steps; ++i) {
    double x = -50.0 + h * static_cast<double>(i);
    double w = (i == 0 || i == steps) ? 0.5 : 1.0;
    integral += w * std::exp(-std::log(2.0 * b) - std::abs(x) / b);
  }
  integral *= h;
  CHECK(std::abs(integral - 1.0) < 1e-6);
}

TEST_CASE("mvlaplace_logpdf m=2 normalization by tensor-product quadrature") {
  MvLaplaceParams p({0.0, 0.0}, {1, 0, 0, 1}, 1.0);
  MvLaplaceDensity dens(p);

  // The evaluator must agree with the direct quadrature path.
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x = {4.0 * rng.next_double() - 2.0, 4.0 * rng.next_double() - 2.0};
    CHECK(dens.logpdf(x) == doctest::Approx(mvlaplace_logpdf(p, x)).epsilon(1e-9));
  }

  // Tensor-product Simpson in polar coordinates (the density is isotropic
  // for gamma = I, so the angular factor is exact).
  const std::size_t nr = 8000, nth = 16;
  const double rmax = 20.0;
  const double hr = rmax / static_cast<double>(nr);
  const double hth = 2.0 * std::numbers::pi / static_cast<double>(nth);
  double integral = 0.0;
  for (std::size_t i = 0; i <= nr; ++i) {
    double r = hr * static_cast<double>(i);
    double wr = (i == 0 || i == nr) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    double inner = 0.0;
    for (std::size_t j = 0; j <= nth; ++j) {
      double th = hth * static_cast<double>(j);
      double wth = (j == 0 || j == nth) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
      double pdf = r == 0.0 ? 0.0 : std::exp(dens.logpdf({r * std::cos(th), r * std::sin(th)}));
      inner += wth * pdf * r;
    }
    integral += wr * inner * hth / 3.0;
  }
  integral *= hr / 3.0;
  CHECK(std::abs(integral - 1.0) < 1e-4);
}

TEST_CASE("mvlaplace_logpdf symmetry and mean singularity") {
  MvLaplaceParams p({1.0, -2.0}, {1.2, 0.4, 0.4, 0.9}, 1.7);
  std::vector<double> d = {0.31, -0.83};
  std::vector<double> plus = {p.mean[0] + d[0], p.mean[1] + d[1]};
  std::vector<double> minus = {p.mean[0] - d[0], p.mean[1] - d[1]};
  CHECK(mvlaplace_logpdf(p, plus) == mvlaplace_logpdf(p, minus));  // exact

  // Exactly at the mean the quadratic form is clamped; value stays finite.
  CHECK(std::isfinite(mvlaplace_logpdf(p, p.mean)));
}

TEST_CASE("mvn_logpdf basics") {
  MvnParams p1({0.0}, {1.0});
  CHECK(mvn_logpdf(p1, {0.0}) ==
        doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));

  MvnParams p2({0.0, 0.0}, {1, 0, 0, 1});
  CHECK(mvn_logpdf(p2, {1.0, 1.0}) ==
        doctest::Approx(-std::log(2.0 * std::numbers::pi) - 1.0).epsilon(1e-12));
}

TEST_CASE("mvn_logpdf matches determinant-and-solve oracle in 3-D") {
  Rng rng(21);
  auto cov = culab::testing::random_spd(rng, 3, 0.4);
  std::vector<double> mean = {0.3, -1.2, 0.8};
  MvnParams p(mean, cov);
  auto inv = linalg::spd_inverse(cov, 3);
  // det via cofactor expansion (explicit, independent of Cholesky)
  auto d3 = [&](const std::vector<double>& a) {
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
           a[2] * (a[3] * a[7] - a[4] * a[6]);
  };
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x = culab::testing::random_vector(rng, 3, -2, 2);
    double q = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        q += (x[i] - mean[i]) * inv[i * 3 + j] * (x[j] - mean[j]);
    double expected =
        -0.5 * (3.0 * std::log(2.0 * std::numbers::pi) + std::log(d3(cov)) + q);
    CHECK(mvn_logpdf(p, x) == doctest::Approx(expected).epsilon(1e-10));
  }
}
