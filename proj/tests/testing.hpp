#pragma once

// Shared helpers for the unit and acceptance suites.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "culab/rng.hpp"
#include "culab/tensor.hpp"

namespace culab::testing {

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = lo + (hi - lo) * rng.next_double();
  return v;
}

// Random symmetric positive definite matrix F F^T + jitter I.
inline std::vector<double> random_spd(Rng& rng, std::size_t m, double jitter = 0.05) {
  std::vector<double> f = random_vector(rng, m * m, -1.0, 1.0);
  std::vector<double> a(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += f[i * m + k] * f[j * m + k];
      a[i * m + j] = s;
    }
  for (std::size_t i = 0; i < m; ++i) a[i * m + i] += jitter;
  return a;
}

// Central finite-difference check of d(loss)/d(leaf) for a scalar-valued
// graph builder. Returns the worst relative error over all leaf entries,
// where the error is normalized by max(|analytic|, |numeric|, floor).
inline double finite_diff_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& build,
    std::vector<Tensor>& leaves, double h = 1e-5, double floor = 1e-6) {
  Tensor loss = build(leaves);
  zero_grads(leaves);
  backward(loss);
  double worst = 0.0;
  for (Tensor& leaf : leaves) {
    const auto analytic = leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.size(), 0.0);
    auto& vals = leaf.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + h;
      const double up = build(leaves).value();
      vals[i] = saved - h;
      const double dn = build(leaves).value();
      vals[i] = saved;
      const double numeric = (up - dn) / (2.0 * h);
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
    }
  }
  return worst;
}

}  // namespace culab::testing
