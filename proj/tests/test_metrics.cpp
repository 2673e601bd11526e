#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "culab/errors.hpp"
#include "culab/metrics.hpp"
#include "culab/rng.hpp"
#include "culab/stats.hpp"
#include "testing.hpp"

using namespace culab;
using namespace culab::metrics;
using culab::stats::MvLaplaceParams;
using culab::stats::MvnParams;
using culab::testing::random_spd;
using culab::testing::random_vector;

TEST_CASE("toy_metrics on exact estimates and uniform offsets") {
  const std::size_t m = 4, horizon = 10;
  Rng rng(1);
  auto mu = random_vector(rng, m * horizon, -5, 5);
  auto sigma = random_spd(rng, m, 0.5);

  auto zero = toy_metrics(mu, sigma, mu, sigma, m, horizon);
  CHECK(zero.l2_mu == 0.0);
  CHECK(zero.l1_sigma == 0.0);
  CHECK(zero.l1_sigma_inv == 0.0);

  // Sigma-hat = Sigma + 0.1 * ones -> entry-mean l1 error is exactly 0.1.
  auto bumped = sigma;
  for (double& v : bumped) v += 0.1;
  auto rep = toy_metrics(mu, bumped, mu, sigma, m, horizon);
  CHECK(rep.l1_sigma == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("kl_gaussian closed form") {
  MvnParams std1({0.0}, {1.0});
  CHECK(kl_gaussian(std1, std1) == 0.0);
  MvnParams shifted({1.0}, {1.0});
  CHECK(kl_gaussian(std1, shifted) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("kl_gaussian matches a Monte-Carlo estimate in 3-D") {
  Rng rng(2);
  MvnParams pg(random_vector(rng, 3, -1, 1), random_spd(rng, 3, 0.5));
  MvnParams pe(random_vector(rng, 3, -1, 1), random_spd(rng, 3, 0.5));
  double closed = kl_gaussian(pg, pe);

  const std::size_t n = 1'000'000;
  Rng sample_rng(3);
  auto samples = stats::mvn_sample(pg, sample_rng, n);
  double sum = 0.0, sumsq = 0.0;
  std::vector<double> x(3);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(samples.begin() + i * 3, samples.begin() + (i + 1) * 3, x.begin());
    double r = stats::mvn_logpdf(pg, x) - stats::mvn_logpdf(pe, x);
    sum += r;
    sumsq += r * r;
  }
  double mc = sum / n;
  double se = std::sqrt((sumsq - sum * sum / n) / (n - 1.0) / n);
  CHECK(std::abs(mc - closed) < 3.0 * se);
  CHECK(closed >= 0.0);
}

TEST_CASE("kl_laplace_mc basics") {
  MvLaplaceParams p({0.0, 0.0}, {1, 0.3, 0.3, 1}, 1.2);
  Rng rng(4);
  auto self = kl_laplace_mc(p, p, 5000, rng);
  CHECK(std::abs(self.value) <= 3.0 * self.stderr + 1e-12);

  // Gibbs: KL >= 0 within Monte-Carlo noise on random pairs.
  Rng prng(5);
  for (int trial = 0; trial < 5; ++trial) {
    MvLaplaceParams pg(random_vector(prng, 2, -0.5, 0.5), random_spd(prng, 2, 0.5),
                       0.5 + prng.next_double());
    MvLaplaceParams pe(random_vector(prng, 2, -0.5, 0.5), random_spd(prng, 2, 0.5),
                       0.5 + prng.next_double());
    auto est = kl_laplace_mc(pg, pe, 4000, prng);
    CHECK(est.value > -3.0 * est.stderr);
  }

  CHECK_THROWS_AS(kl_laplace_mc(p, p, 10, rng), ContractError);
}

TEST_CASE("kl_laplace_mc m=1 matches the numeric-integration oracle") {
  // Both densities univariate Laplace: KL computable by trapezoid on [-50, 50].
  MvLaplaceParams pg({0.0}, {1.0}, 2.0);
  MvLaplaceParams pe({0.5}, {1.5}, 1.0);
  auto bg = std::sqrt(pg.lambda * pg.gamma[0] / 2.0);
  auto be = std::sqrt(pe.lambda * pe.gamma[0] / 2.0);
  auto logpdf = [](double x, double mean, double b) {
    return -std::log(2.0 * b) - std::abs(x - mean) / b;
  };
  const std::size_t steps = 200'000;
  const double h = 100.0 / steps;
  double integral = 0.0;
  for (std::size_t i = 0; i <= steps; ++i) {
    double x = -50.0 + h * i;
    double w = (i == 0 || i == steps) ? 0.5 : 1.0;
    double lg = logpdf(x, 0.0, bg);
    integral += w * std::exp(lg) * (lg - logpdf(x, 0.5, be));
  }
  integral *= h;

  Rng rng(6);
  auto est = kl_laplace_mc(pg, pe, 200'000, rng);
  CHECK(std::abs(est.value - integral) < 3.0 * est.stderr);
}

TEST_CASE("kl_laplace_mc stderr scales like 1/sqrt(n)") {
  MvLaplaceParams pg({0.0, 0.0}, {1, 0, 0, 1}, 1.0);
  MvLaplaceParams pe({0.3, -0.2}, {1.2, 0.2, 0.2, 0.8}, 1.5);
  Rng r1(7), r2(8);
  auto small = kl_laplace_mc(pg, pe, 10'000, r1);
  auto large = kl_laplace_mc(pg, pe, 40'000, r2);
  CHECK(std::abs(large.stderr - 0.5 * small.stderr) < 0.3 * 0.5 * small.stderr);
}

TEST_CASE("forecast_metrics hand cases") {
  const std::size_t m = 1, horizon = 4;  // 2 timesteps
  std::vector<double> y = {0, 0, 1, 0};

  SUBCASE("perfect prediction in every mode") {
    std::vector<std::vector<double>> modes = {y, y};
    auto rep = forecast_metrics(modes, y, y, m, horizon,
                                std::vector<double>{0.75, 0.25});
    CHECK(rep.ade == 0.0);
    CHECK(rep.fde == 0.0);
    CHECK(rep.ade1 == 0.0);
    CHECK(rep.fdek == 0.0);
    // Brier keeps the confidence penalty (1-p)^2 of the best-FDE mode.
    CHECK(rep.brier_fdek == doctest::Approx(0.0625));
  }

  SUBCASE("straight vs offset mode, selection picks the offset one") {
    std::vector<double> offset = {0, 1, 1, 1};  // shifted by 1 in y
    std::vector<std::vector<double>> modes = {y, offset};
    auto rep = forecast_metrics(modes, offset, y, m, horizon, std::nullopt);
    CHECK(rep.adek == 0.0);
    CHECK(rep.fdek == 0.0);
    CHECK(rep.fde1 == doctest::Approx(1.0));
    CHECK(rep.ade1 == doctest::Approx(1.0));
  }

  SUBCASE("K = 1 collapses the mode metrics") {
    std::vector<double> pred = {0, 0.5, 1, 0.5};
    auto rep = forecast_metrics({pred}, pred, y, m, horizon, std::nullopt);
    CHECK(rep.ade == rep.ade1);
    CHECK(rep.ade == rep.adek);
    CHECK(rep.fde == rep.fde1);
  }

  SUBCASE("bad probabilities") {
    std::vector<std::vector<double>> modes = {y, y};
    CHECK_THROWS_AS(
        forecast_metrics(modes, y, y, m, horizon, std::vector<double>{0.9, 0.9}),
        ContractError);
    CHECK_THROWS_AS(
        forecast_metrics(modes, y, y, m, horizon, std::vector<double>{1.5, -0.5}),
        ContractError);
  }
}

TEST_CASE("forecast_metrics invariants on random instances") {
  Rng rng(9);
  const std::size_t m = 3, horizon = 8, kmodes = 4;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> modes;
    for (std::size_t k = 0; k < kmodes; ++k)
      modes.push_back(random_vector(rng, m * horizon, -3, 3));
    auto y = random_vector(rng, m * horizon, -3, 3);
    auto& selected = modes[rng.next_u64() % kmodes];
    std::vector<double> probs = {0.1, 0.2, 0.3, 0.4};
    auto rep = forecast_metrics(modes, selected, y, m, horizon, probs);
    CHECK(rep.adek <= rep.ade1 + 1e-12);
    CHECK(rep.fdek <= rep.fde1 + 1e-12);
    CHECK(rep.fdek <= rep.brier_fdek + 1e-12);
  }
}

TEST_CASE("stochasticity") {
  CHECK(stochasticity({{1, 2, 3}, {1, 2, 3}}) == 0.0);
  CHECK(stochasticity({{0, 0}, {2, 2}}) == doctest::Approx(2.0));

  // Random case against a two-pass oracle.
  Rng rng(10);
  std::vector<std::vector<double>> modes;
  for (int k = 0; k < 5; ++k) modes.push_back(random_vector(rng, 12, -2, 2));
  double oracle = 0.0;
  for (std::size_t e = 0; e < 12; ++e) {
    double mean = 0.0;
    for (const auto& mo : modes) mean += mo[e];
    mean /= 5.0;
    double var = 0.0;
    for (const auto& mo : modes) var += (mo[e] - mean) * (mo[e] - mean);
    oracle += var / 4.0;
  }
  oracle /= 12.0;
  CHECK(stochasticity(modes) == doctest::Approx(oracle).epsilon(1e-12));

  // Invariant under mode permutation.
  auto permuted = modes;
  std::swap(permuted[0], permuted[3]);
  std::swap(permuted[1], permuted[4]);
  CHECK(stochasticity(permuted) == doctest::Approx(stochasticity(modes)).epsilon(1e-15));

  CHECK_THROWS_AS(stochasticity({{1, 2}}), ContractError);
}

TEST_CASE("stochasticity-uncertainty curve") {
  SUBCASE("uncertainty == stochasticity gives Spearman 1") {
    Rng rng(11);
    auto sto = random_vector(rng, 500, 0, 5);
    auto rep = stochasticity_uncertainty_curve(sto, sto);
    CHECK(rep.spearman == doctest::Approx(1.0));
    CHECK(rep.bins.size() == 10);
    std::size_t total = 0;
    for (const auto& b : rep.bins) total += b.count;
    CHECK(total == 500);
    for (std::size_t b = 1; b < rep.bins.size(); ++b) {
      CHECK(rep.bins[b].stochasticity_mean >= rep.bins[b - 1].stochasticity_mean);
    }
  }

  SUBCASE("independent pairs give |Spearman| < 0.1 at n = 1000") {
    Rng rng(12);
    auto a = random_vector(rng, 1000, 0, 1);
    auto b = random_vector(rng, 1000, 0, 1);
    auto rep = stochasticity_uncertainty_curve(a, b);
    CHECK(std::abs(rep.spearman) < 0.1);
  }

  SUBCASE("constant uncertainty reports 0 with a flag") {
    Rng rng(13);
    auto a = random_vector(rng, 100, 0, 1);
    std::vector<double> b(100, 3.14);
    auto rep = stochasticity_uncertainty_curve(a, b);
    CHECK(rep.spearman == 0.0);
    CHECK_FALSE(rep.spearman_defined);
  }
}
