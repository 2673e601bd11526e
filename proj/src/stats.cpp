#include "culab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "culab/errors.hpp"
#include "culab/linalg.hpp"

namespace culab::stats {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double log_cosh(double x) {
  double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

// Exponent of the Bessel integrand: g(t) = log cosh(nu t) - z cosh t.
double integrand_exponent(double nu, double z, double t) {
  return log_cosh(nu * t) - z * std::cosh(t);
}

struct AdaptiveSimpson {
  double nu, z, gmax;

  double f(double t) const { return std::exp(integrand_exponent(nu, z, t) - gmax); }

  double recurse(double a, double b, double fa, double fm, double fb, double whole,
                 double tol, int depth) {
    if (depth > 40) {
      throw NumericError("bessel_k: adaptive quadrature failed to converge (nu=" +
                         std::to_string(nu) + ", z=" + std::to_string(z) + ")");
    }
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (std::abs(left + right - whole) <= 15.0 * tol) {
      return left + right + (left + right - whole) / 15.0;
    }
    return recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1) +
           recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1);
  }

  double integrate(double a, double b, double tol) {
    double m = 0.5 * (a + b);
    double fa = f(a), fm = f(m), fb = f(b);
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return recurse(a, b, fa, fm, fb, whole, tol, 0);
  }
};

}  // namespace

double log_bessel_k(double nu, double z) {
  if (z <= 0.0) throw DomainError("bessel_k: z must be positive");
  if (nu < 0.0) throw DomainError("bessel_k: order must be non-negative");
  if (nu == 0.5) {
    return 0.5 * std::log(std::numbers::pi / (2.0 * z)) - z;
  }
  // Peak of the exponent, then an upper limit where the integrand has
  // dropped ~e^{-60} below it.
  double tpeak = nu > 0.0 ? std::asinh(nu / z) : 0.0;
  double gmax = integrand_exponent(nu, z, tpeak);
  double hi = std::max(tpeak + 1.0, 1.0);
  while (integrand_exponent(nu, z, hi) - gmax > -60.0) hi += 1.0;

  AdaptiveSimpson quad{nu, z, gmax};
  double integral = quad.integrate(0.0, hi, 1e-12);
  if (!(integral > 0.0) || !std::isfinite(integral)) {
    throw NumericError("bessel_k: quadrature produced a non-positive integral");
  }
  return gmax + std::log(integral);
}

double bessel_k(double nu, double z) { return std::exp(log_bessel_k(nu, z)); }

BesselKTable::BesselKTable(double nu, double z_lo, double z_hi, std::size_t nodes)
    : nu_(nu), u_lo_(std::log(z_lo)), u_hi_(std::log(z_hi)) {
  if (nodes < 8) throw ContractError("BesselKTable: too few nodes");
  step_ = (u_hi_ - u_lo_) / static_cast<double>(nodes - 1);
  values_.resize(nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    values_[i] = log_bessel_k(nu, std::exp(u_lo_ + step_ * static_cast<double>(i)));
  }
  // Fourth-order finite-difference slopes for local Hermite cubics.
  slopes_.resize(nodes);
  auto v = [&](std::ptrdiff_t i) {
    i = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(nodes) - 1);
    return values_[static_cast<std::size_t>(i)];
  };
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(nodes); ++i) {
    if (i >= 2 && i + 2 < static_cast<std::ptrdiff_t>(nodes)) {
      slopes_[i] = (v(i - 2) - 8.0 * v(i - 1) + 8.0 * v(i + 1) - v(i + 2)) / (12.0 * step_);
    } else if (i == 0) {
      slopes_[i] = (v(1) - v(0)) / step_;
    } else if (i + 1 == static_cast<std::ptrdiff_t>(nodes)) {
      slopes_[i] = (v(i) - v(i - 1)) / step_;
    } else {
      slopes_[i] = (v(i + 1) - v(i - 1)) / (2.0 * step_);
    }
  }
}

double BesselKTable::log_k(double z) const {
  if (z <= 0.0) throw DomainError("BesselKTable: z must be positive");
  double u = std::log(z);
  if (u < u_lo_ + 2.0 * step_ || u > u_hi_ - 2.0 * step_) {
    return log_bessel_k(nu_, z);  // outside the well-interpolated interior
  }
  auto idx = static_cast<std::size_t>((u - u_lo_) / step_);
  idx = std::min(idx, values_.size() - 2);
  double t = (u - (u_lo_ + step_ * static_cast<double>(idx))) / step_;
  double y0 = values_[idx], y1 = values_[idx + 1];
  double m0 = slopes_[idx] * step_, m1 = slopes_[idx + 1] * step_;
  double t2 = t * t, t3 = t2 * t;
  return (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 +
         (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1;
}

// ----- params ------------------------------------------------------------------

MvnParams::MvnParams(std::vector<double> mean_, std::vector<double> covariance_)
    : mean(std::move(mean_)), covariance(std::move(covariance_)) {
  if (covariance.size() != mean.size() * mean.size()) {
    throw DimensionError("MvnParams: covariance extents do not match mean length");
  }
  linalg::require_spd(covariance, mean.size());
}

MvLaplaceParams::MvLaplaceParams(std::vector<double> mean_, std::vector<double> gamma_,
                                 double lambda_)
    : mean(std::move(mean_)), gamma(std::move(gamma_)), lambda(lambda_) {
  if (gamma.size() != mean.size() * mean.size()) {
    throw DimensionError("MvLaplaceParams: gamma extents do not match mean length");
  }
  if (!(lambda > 0.0)) throw DomainError("MvLaplaceParams: lambda must be positive");
  linalg::require_spd(gamma, mean.size());
}

// ----- sampling -----------------------------------------------------------------

std::vector<double> mvn_sample(const MvnParams& params, Rng& rng, std::size_t n) {
  const std::size_t m = params.dim();
  auto l = linalg::cholesky(params.covariance, m);
  std::vector<double> out(n * m);
  std::vector<double> zvec(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m; ++k) zvec[k] = rng.next_normal();
    for (std::size_t r = 0; r < m; ++r) {
      double s = params.mean[r];
      for (std::size_t k = 0; k <= r; ++k) s += l[r * m + k] * zvec[k];
      out[i * m + r] = s;
    }
  }
  return out;
}

double exp_sample_from_uniform(double lambda, double u) {
  if (!(lambda > 0.0)) throw DomainError("exp_sample: lambda must be positive");
  if (!(u > 0.0) || u > 1.0) throw DomainError("exp_sample: u must lie in (0, 1]");
  return -lambda * std::log(u);
}

std::vector<double> exp_sample(double lambda, Rng& rng, std::size_t n) {
  if (!(lambda > 0.0)) throw DomainError("exp_sample: lambda must be positive");
  std::vector<double> out(n);
  for (auto& x : out) x = -lambda * std::log(rng.next_open());
  return out;
}

std::vector<double> mvlaplace_sample(const MvLaplaceParams& params, Rng& rng, std::size_t n) {
  const std::size_t m = params.dim();
  auto l = linalg::cholesky(params.gamma, m);
  std::vector<double> out(n * m);
  std::vector<double> zvec(m);
  for (std::size_t i = 0; i < n; ++i) {
    double phi = -params.lambda * std::log(rng.next_open());
    double sphi = std::sqrt(phi);
    for (std::size_t k = 0; k < m; ++k) zvec[k] = rng.next_normal();
    for (std::size_t r = 0; r < m; ++r) {
      double g = 0.0;
      for (std::size_t k = 0; k <= r; ++k) g += l[r * m + k] * zvec[k];
      out[i * m + r] = params.mean[r] + sphi * g;
    }
  }
  return out;
}

// ----- densities -----------------------------------------------------------------

namespace {

// Quadratic form (x-mean)^T A^{-1} (x-mean) given the Cholesky factor of A:
// solve L w = r, return |w|^2.
double quad_form_chol(const std::vector<double>& l, std::size_t m,
                      const std::vector<double>& mean, const std::vector<double>& x) {
  std::vector<double> w(m);
  double q = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double s = x[i] - mean[i];
    for (std::size_t k = 0; k < i; ++k) s -= l[i * m + k] * w[k];
    w[i] = s / l[i * m + i];
    q += w[i] * w[i];
  }
  return q;
}

// Exact-mean inputs make the Bessel argument vanish; the clamp keeps the
// density finite there (only synthetic tests ever hit it).
constexpr double kQuadClamp = 1e-12;

}  // namespace

double mvn_logpdf(const MvnParams& params, const std::vector<double>& x) {
  const std::size_t m = params.dim();
  if (x.size() != m) throw DimensionError("mvn_logpdf: x length does not match dimension");
  auto l = linalg::cholesky(params.covariance, m);
  double q = quad_form_chol(l, m, params.mean, x);
  return -0.5 * (static_cast<double>(m) * std::log(kTwoPi) + linalg::cholesky_logdet(l, m) + q);
}

double mvlaplace_logpdf(const MvLaplaceParams& params, const std::vector<double>& x) {
  const std::size_t m = params.dim();
  if (x.size() != m) throw DimensionError("mvlaplace_logpdf: x length mismatch");
  auto l = linalg::cholesky(params.gamma, m);
  double md = static_cast<double>(m);
  double q = std::max(quad_form_chol(l, m, params.mean, x), kQuadClamp);
  double order = std::abs(md / 2.0 - 1.0);
  double arg = std::sqrt(2.0 * q / params.lambda);
  return std::numbers::ln2 - 0.5 * md * std::log(kTwoPi) -
         0.5 * linalg::cholesky_logdet(l, m) - std::log(params.lambda) +
         (2.0 - md) / 4.0 * std::log(q * params.lambda / 2.0) + log_bessel_k(order, arg);
}

std::shared_ptr<const BesselKTable> MvLaplaceDensity::make_table(std::size_t dim) {
  double order = std::abs(static_cast<double>(dim) / 2.0 - 1.0);
  return std::make_shared<const BesselKTable>(order);
}

MvLaplaceDensity::MvLaplaceDensity(MvLaplaceParams params)
    : MvLaplaceDensity(std::move(params), nullptr) {}

MvLaplaceDensity::MvLaplaceDensity(MvLaplaceParams params,
                                   std::shared_ptr<const BesselKTable> table)
    : params_(std::move(params)),
      chol_(linalg::cholesky(params_.gamma, params_.dim())),
      logdet_gamma_(linalg::cholesky_logdet(chol_, params_.dim())),
      order_(std::abs(static_cast<double>(params_.dim()) / 2.0 - 1.0)),
      const_term_(0.0),
      table_(std::move(table)) {
  if (!table_) {
    table_ = make_table(params_.dim());
  } else if (table_->order() != order_) {
    throw ContractError("MvLaplaceDensity: shared table order does not match dimension");
  }
  double md = static_cast<double>(params_.dim());
  const_term_ = std::numbers::ln2 - 0.5 * md * std::log(kTwoPi) - 0.5 * logdet_gamma_ -
                std::log(params_.lambda);
}

double MvLaplaceDensity::logpdf(const std::vector<double>& x) const {
  const std::size_t m = params_.dim();
  if (x.size() != m) throw DimensionError("MvLaplaceDensity: x length mismatch");
  double md = static_cast<double>(m);
  double q = std::max(quad_form_chol(chol_, m, params_.mean, x), kQuadClamp);
  double arg = std::sqrt(2.0 * q / params_.lambda);
  return const_term_ + (2.0 - md) / 4.0 * std::log(q * params_.lambda / 2.0) +
         table_->log_k(arg);
}

}  // namespace culab::stats
