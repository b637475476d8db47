#include "nabi/linalg.hpp"

#include <cmath>
#include <cstring>

namespace nabi::linalg {

void gemm_nn(int m, int n, int k, const double* A, const double* B, double* C) {
  for (int i = 0; i < m; ++i) {
    const double* __restrict a = A + static_cast<size_t>(i) * k;
    double* __restrict c = C + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = a[p];
      const double* __restrict b = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

void gemm_nt(int m, int n, int k, const double* A, const double* B, double* C) {
  for (int i = 0; i < m; ++i) {
    const double* __restrict a = A + static_cast<size_t>(i) * k;
    double* __restrict c = C + static_cast<size_t>(i) * n;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* __restrict b0 = B + static_cast<size_t>(j) * k;
      const double* __restrict b1 = b0 + k;
      const double* __restrict b2 = b1 + k;
      const double* __restrict b3 = b2 + k;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (int p = 0; p < k; ++p) {
        double av = a[p];
        s0 += av * b0[p];
        s1 += av * b1[p];
        s2 += av * b2[p];
        s3 += av * b3[p];
      }
      c[j] += s0;
      c[j + 1] += s1;
      c[j + 2] += s2;
      c[j + 3] += s3;
    }
    for (; j < n; ++j) {
      const double* __restrict b = B + static_cast<size_t>(j) * k;
      double s = 0;
      for (int p = 0; p < k; ++p) s += a[p] * b[p];
      c[j] += s;
    }
  }
}

void gemm_tn(int m, int n, int k, const double* A, const double* B, double* C) {
  for (int p = 0; p < k; ++p) {
    const double* __restrict a = A + static_cast<size_t>(p) * m;
    const double* __restrict b = B + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      double av = a[i];
      double* __restrict c = C + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

bool cholesky(double* a, int n) {
  for (int j = 0; j < n; ++j) {
    double* __restrict rowj = a + static_cast<size_t>(j) * n;
    double d = rowj[j];
    for (int p = 0; p < j; ++p) d -= rowj[p] * rowj[p];
    if (!(d > 0.0)) return false;
    d = std::sqrt(d);
    rowj[j] = d;
    double inv = 1.0 / d;
    for (int i = j + 1; i < n; ++i) {
      double* __restrict rowi = a + static_cast<size_t>(i) * n;
      double s = rowi[j];
      for (int p = 0; p < j; ++p) s -= rowi[p] * rowj[p];
      rowi[j] = s * inv;
    }
  }
  return true;
}

void forward_sub(const double* L, int n, double* b) {
  for (int i = 0; i < n; ++i) {
    const double* __restrict row = L + static_cast<size_t>(i) * n;
    double s = b[i];
    for (int p = 0; p < i; ++p) s -= row[p] * b[p];
    b[i] = s / row[i];
  }
}

void backward_sub_t(const double* L, int n, double* y) {
  for (int i = n - 1; i >= 0; --i) {
    double s = y[i];
    for (int p = i + 1; p < n; ++p) s -= L[static_cast<size_t>(p) * n + i] * y[p];
    y[i] = s / L[static_cast<size_t>(i) * n + i];
  }
}

double chol_logdet(const double* L, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::log(L[static_cast<size_t>(i) * n + i]);
  return 2.0 * s;
}

void spd_inverse_from_chol(const double* L, int n, double* out) {
  // Invert L in a scratch lower triangle, then form L^-T L^-1.
  std::vector<double> li(static_cast<size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    li[static_cast<size_t>(j) * n + j] = 1.0 / L[static_cast<size_t>(j) * n + j];
    for (int i = j + 1; i < n; ++i) {
      double s = 0.0;
      const double* __restrict rowi = L + static_cast<size_t>(i) * n;
      for (int p = j; p < i; ++p) s -= rowi[p] * li[static_cast<size_t>(p) * n + j];
      li[static_cast<size_t>(i) * n + j] = s / rowi[i];
    }
  }
  // out(i,j) = sum_p li(p,i) * li(p,j), p >= max(i,j)
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = 0.0;
      for (int p = i; p < n; ++p)
        s += li[static_cast<size_t>(p) * n + i] * li[static_cast<size_t>(p) * n + j];
      out[static_cast<size_t>(i) * n + j] = s;
      out[static_cast<size_t>(j) * n + i] = s;
    }
  }
}

bool lu_invert(std::vector<double> a, int n, std::vector<double>& inv,
               double& logabsdet, double& sign) {
  std::vector<int> piv(n);
  sign = 1.0;
  logabsdet = 0.0;
  for (int i = 0; i < n; ++i) piv[i] = i;
  for (int col = 0; col < n; ++col) {
    int best = col;
    double bv = std::abs(a[static_cast<size_t>(col) * n + col]);
    for (int r = col + 1; r < n; ++r) {
      double v = std::abs(a[static_cast<size_t>(r) * n + col]);
      if (v > bv) {
        bv = v;
        best = r;
      }
    }
    if (bv == 0.0) return false;
    if (best != col) {
      for (int j = 0; j < n; ++j)
        std::swap(a[static_cast<size_t>(best) * n + j], a[static_cast<size_t>(col) * n + j]);
      std::swap(piv[best], piv[col]);
      sign = -sign;
    }
    double pivot = a[static_cast<size_t>(col) * n + col];
    logabsdet += std::log(std::abs(pivot));
    if (pivot < 0) sign = -sign;
    for (int r = col + 1; r < n; ++r) {
      double f = a[static_cast<size_t>(r) * n + col] / pivot;
      a[static_cast<size_t>(r) * n + col] = f;
      for (int j = col + 1; j < n; ++j)
        a[static_cast<size_t>(r) * n + j] -= f * a[static_cast<size_t>(col) * n + j];
    }
  }
  inv.assign(static_cast<size_t>(n) * n, 0.0);
  std::vector<double> e(n);
  for (int c = 0; c < n; ++c) {
    std::fill(e.begin(), e.end(), 0.0);
    for (int i = 0; i < n; ++i)
      if (piv[i] == c) e[i] = 1.0;
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < i; ++p) e[i] -= a[static_cast<size_t>(i) * n + p] * e[p];
    for (int i = n - 1; i >= 0; --i) {
      for (int p = i + 1; p < n; ++p) e[i] -= a[static_cast<size_t>(i) * n + p] * e[p];
      e[i] /= a[static_cast<size_t>(i) * n + i];
    }
    for (int i = 0; i < n; ++i) inv[static_cast<size_t>(i) * n + c] = e[i];
  }
  return true;
}

}  // namespace nabi::linalg
