#include "culab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "culab/errors.hpp"

namespace culab::linalg {

std::vector<double> cholesky(const std::vector<double>& a, std::size_t m) {
  std::vector<double> l(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * m + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * m + k] * l[j * m + k];
      if (i == j) {
        if (s <= 0.0 || !std::isfinite(s)) {
          throw DefinitenessError("cholesky: matrix is not positive definite (pivot " +
                                  std::to_string(i) + ")");
        }
        l[i * m + i] = std::sqrt(s);
      } else {
        l[i * m + j] = s / l[j * m + j];
      }
    }
  }
  return l;
}

std::vector<double> cholesky_solve(const std::vector<double>& l, std::size_t m,
                                   const std::vector<double>& b) {
  std::vector<double> y(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l[i * m + k] * y[k];
    y[i] = s / l[i * m + i];
  }
  std::vector<double> x(m);
  for (std::size_t ii = m; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < m; ++k) s -= l[k * m + ii] * x[k];
    x[ii] = s / l[ii * m + ii];
  }
  return x;
}

double cholesky_logdet(const std::vector<double>& l, std::size_t m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) s += std::log(l[i * m + i]);
  return 2.0 * s;
}

std::vector<double> spd_inverse(const std::vector<double>& a, std::size_t m) {
  auto l = cholesky(a, m);
  std::vector<double> inv(m * m);
  std::vector<double> e(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    e[j] = 1.0;
    auto col = cholesky_solve(l, m, e);
    for (std::size_t i = 0; i < m; ++i) inv[i * m + j] = col[i];
    e[j] = 0.0;
  }
  // Symmetrize away the last-bit asymmetry from the two triangular solves.
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      double v = 0.5 * (inv[i * m + j] + inv[j * m + i]);
      inv[i * m + j] = inv[j * m + i] = v;
    }
  return inv;
}

std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t m) {
  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j) off += a[i * m + j] * a[i * m + j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        double apq = a[p * m + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = a[p * m + p], aqq = a[q * m + q];
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < m; ++k) {
          double akp = a[k * m + p], akq = a[k * m + q];
          a[k * m + p] = c * akp - s * akq;
          a[k * m + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < m; ++k) {
          double apk = a[p * m + k], aqk = a[q * m + k];
          a[p * m + k] = c * apk - s * aqk;
          a[q * m + k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(m);
  for (std::size_t i = 0; i < m; ++i) eig[i] = a[i * m + i];
  std::sort(eig.begin(), eig.end());
  return eig;
}

double asymmetry(const std::vector<double>& a, std::size_t m) {
  double worst = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      worst = std::max(worst, std::abs(a[i * m + j] - a[j * m + i]));
  return worst;
}

void require_spd(const std::vector<double>& a, std::size_t m, double sym_tol) {
  if (a.size() != m * m) throw DimensionError("require_spd: flat size does not match m*m");
  if (asymmetry(a, m) >= sym_tol)
    throw DefinitenessError("require_spd: matrix is not symmetric");
  cholesky(a, m);  // throws if not positive definite
}

}  // namespace culab::linalg
