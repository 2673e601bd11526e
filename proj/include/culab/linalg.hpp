#pragma once

#include <cstddef>
#include <vector>

namespace culab::linalg {

// Dense symmetric helpers for the small (m <= ~10) agent-coupling matrices.
// All matrices are row-major m x m in flat std::vector<double> form.

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
// Throws DefinitenessError if the factorization breaks down.
std::vector<double> cholesky(const std::vector<double>& a, std::size_t m);

// Solves L L^T x = b given the Cholesky factor L.
std::vector<double> cholesky_solve(const std::vector<double>& l, std::size_t m,
                                   const std::vector<double>& b);

// log det(A) from the Cholesky factor of A.
double cholesky_logdet(const std::vector<double>& l, std::size_t m);

// Inverse of a symmetric positive definite matrix via Cholesky.
std::vector<double> spd_inverse(const std::vector<double>& a, std::size_t m);

// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, ascending.
std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t m);

// max_{ij} |A_ij - A_ji|
double asymmetry(const std::vector<double>& a, std::size_t m);

// Throws DefinitenessError unless A is symmetric (within tol) and its
// Cholesky factorization succeeds.
void require_spd(const std::vector<double>& a, std::size_t m, double sym_tol = 1e-10);

}  // namespace culab::linalg
