#pragma once

#include <cstddef>
#include <vector>

namespace nabi::linalg {

// Dense row-major kernels sized for this project (n <= a few hundred).

// C(m,n) += A(m,k) * B(k,n)
void gemm_nn(int m, int n, int k, const double* A, const double* B, double* C);
// C(m,n) += A(m,k) * B(n,k)^T   (dot-product form, both rows contiguous)
void gemm_nt(int m, int n, int k, const double* A, const double* B, double* C);
// C(m,n) += A(k,m)^T * B(k,n)
void gemm_tn(int m, int n, int k, const double* A, const double* B, double* C);

// In-place lower Cholesky of a symmetric positive definite matrix.
// Returns false if a non-positive pivot is hit; upper triangle is left stale.
bool cholesky(double* a, int n);

// Solve L y = b in place (L lower from cholesky()).
void forward_sub(const double* L, int n, double* b);
// Solve L^T x = y in place.
void backward_sub_t(const double* L, int n, double* y);

double chol_logdet(const double* L, int n);

// Full inverse of the SPD matrix from its Cholesky factor: out = L^-T L^-1.
void spd_inverse_from_chol(const double* L, int n, double* out);

// LU determinant + inverse with partial pivoting; used by test oracles and
// kept deliberately naive. Returns false if singular.
bool lu_invert(std::vector<double> a, int n, std::vector<double>& inv,
               double& logabsdet, double& sign);

}  // namespace nabi::linalg
