// Built with -mavx2 -mfma. Only reached through the dispatcher after a CPU
// feature check.

#include <immintrin.h>

#include <vector>

#include "hiertab/kernels.hpp"

namespace hiertab::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double sum = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

namespace {

// C[m x n] += A[m x k] * B[k x n] with explicit row strides. Register tiles
// of 4 x 8 outputs stay in ymm accumulators for the whole k loop.
void gemm_nn_strided(const double* a, std::size_t lda, const double* b, std::size_t ldb,
                     double* c, std::size_t ldc, std::size_t m, std::size_t k,
                     std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * lda;
    const double* a1 = a0 + lda;
    const double* a2 = a1 + lda;
    const double* a3 = a2 + lda;
    double* c0 = c + i * ldc;
    double* c1 = c0 + ldc;
    double* c2 = c1 + ldc;
    double* c3 = c2 + ldc;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d x00 = _mm256_loadu_pd(c0 + j), x01 = _mm256_loadu_pd(c0 + j + 4);
      __m256d x10 = _mm256_loadu_pd(c1 + j), x11 = _mm256_loadu_pd(c1 + j + 4);
      __m256d x20 = _mm256_loadu_pd(c2 + j), x21 = _mm256_loadu_pd(c2 + j + 4);
      __m256d x30 = _mm256_loadu_pd(c3 + j), x31 = _mm256_loadu_pd(c3 + j + 4);
      const double* bp = b + j;
      for (std::size_t p = 0; p < k; ++p, bp += ldb) {
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        __m256d av = _mm256_broadcast_sd(a0 + p);
        x00 = _mm256_fmadd_pd(av, b0, x00);
        x01 = _mm256_fmadd_pd(av, b1, x01);
        av = _mm256_broadcast_sd(a1 + p);
        x10 = _mm256_fmadd_pd(av, b0, x10);
        x11 = _mm256_fmadd_pd(av, b1, x11);
        av = _mm256_broadcast_sd(a2 + p);
        x20 = _mm256_fmadd_pd(av, b0, x20);
        x21 = _mm256_fmadd_pd(av, b1, x21);
        av = _mm256_broadcast_sd(a3 + p);
        x30 = _mm256_fmadd_pd(av, b0, x30);
        x31 = _mm256_fmadd_pd(av, b1, x31);
      }
      _mm256_storeu_pd(c0 + j, x00), _mm256_storeu_pd(c0 + j + 4, x01);
      _mm256_storeu_pd(c1 + j, x10), _mm256_storeu_pd(c1 + j + 4, x11);
      _mm256_storeu_pd(c2 + j, x20), _mm256_storeu_pd(c2 + j + 4, x21);
      _mm256_storeu_pd(c3 + j, x30), _mm256_storeu_pd(c3 + j + 4, x31);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d x0 = _mm256_loadu_pd(c0 + j), x1 = _mm256_loadu_pd(c1 + j);
      __m256d x2 = _mm256_loadu_pd(c2 + j), x3 = _mm256_loadu_pd(c3 + j);
      const double* bp = b + j;
      for (std::size_t p = 0; p < k; ++p, bp += ldb) {
        const __m256d b0 = _mm256_loadu_pd(bp);
        x0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + p), b0, x0);
        x1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + p), b0, x1);
        x2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + p), b0, x2);
        x3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + p), b0, x3);
      }
      _mm256_storeu_pd(c0 + j, x0), _mm256_storeu_pd(c1 + j, x1);
      _mm256_storeu_pd(c2 + j, x2), _mm256_storeu_pd(c3 + j, x3);
    }
    for (; j < n; ++j) {
      double s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      const double* bp = b + j;
      for (std::size_t p = 0; p < k; ++p, bp += ldb) {
        s0 += a0[p] * *bp;
        s1 += a1[p] * *bp;
        s2 += a2[p] * *bp;
        s3 += a3[p] * *bp;
      }
      c0[j] = s0, c1[j] = s1, c2[j] = s2, c3[j] = s3;
    }
  }
  for (; i < m; ++i) {
    const double* ar = a + i * lda;
    double* cr = c + i * ldc;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256d x0 = _mm256_loadu_pd(cr + j), x1 = _mm256_loadu_pd(cr + j + 4);
      __m256d x2 = _mm256_loadu_pd(cr + j + 8), x3 = _mm256_loadu_pd(cr + j + 12);
      const double* bp = b + j;
      for (std::size_t p = 0; p < k; ++p, bp += ldb) {
        const __m256d av = _mm256_broadcast_sd(ar + p);
        x0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp), x0);
        x1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 4), x1);
        x2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 8), x2);
        x3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 12), x3);
      }
      _mm256_storeu_pd(cr + j, x0), _mm256_storeu_pd(cr + j + 4, x1);
      _mm256_storeu_pd(cr + j + 8, x2), _mm256_storeu_pd(cr + j + 12, x3);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d x0 = _mm256_loadu_pd(cr + j);
      const double* bp = b + j;
      for (std::size_t p = 0; p < k; ++p, bp += ldb) {
        x0 = _mm256_fmadd_pd(_mm256_broadcast_sd(ar + p), _mm256_loadu_pd(bp), x0);
      }
      _mm256_storeu_pd(cr + j, x0);
    }
    for (; j < n; ++j) {
      double sum = cr[j];
      const double* bp = b + j;
      for (std::size_t p = 0; p < k; ++p, bp += ldb) sum += ar[p] * *bp;
      cr[j] = sum;
    }
  }
}

// Row-major rows x cols into cols x rows.
std::vector<double>& transposed(const double* x, std::size_t rows, std::size_t cols) {
  thread_local std::vector<double> buf;
  buf.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t q = 0; q < cols; ++q) buf[q * rows + r] = x[r * cols + q];
  }
  return buf;
}

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  gemm_nn_strided(a, k, b, n, c, n, m, k, n);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  // Tiles of 4 rows of A against 2 rows of B; each output is a dot product
  // kept in its own accumulator and reduced at the end.
  const std::size_t k4 = k & ~std::size_t{3};
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    std::size_t j = 0;
    for (; j + 2 <= n; j += 2) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      __m256d x00 = _mm256_setzero_pd(), x01 = _mm256_setzero_pd();
      __m256d x10 = _mm256_setzero_pd(), x11 = _mm256_setzero_pd();
      __m256d x20 = _mm256_setzero_pd(), x21 = _mm256_setzero_pd();
      __m256d x30 = _mm256_setzero_pd(), x31 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k4; p += 4) {
        const __m256d v0 = _mm256_loadu_pd(b0 + p);
        const __m256d v1 = _mm256_loadu_pd(b1 + p);
        __m256d u = _mm256_loadu_pd(a0 + p);
        x00 = _mm256_fmadd_pd(u, v0, x00);
        x01 = _mm256_fmadd_pd(u, v1, x01);
        u = _mm256_loadu_pd(a1 + p);
        x10 = _mm256_fmadd_pd(u, v0, x10);
        x11 = _mm256_fmadd_pd(u, v1, x11);
        u = _mm256_loadu_pd(a2 + p);
        x20 = _mm256_fmadd_pd(u, v0, x20);
        x21 = _mm256_fmadd_pd(u, v1, x21);
        u = _mm256_loadu_pd(a3 + p);
        x30 = _mm256_fmadd_pd(u, v0, x30);
        x31 = _mm256_fmadd_pd(u, v1, x31);
      }
      double s[8] = {hsum(x00), hsum(x01), hsum(x10), hsum(x11),
                     hsum(x20), hsum(x21), hsum(x30), hsum(x31)};
      for (std::size_t p = k4; p < k; ++p) {
        s[0] += a0[p] * b0[p], s[1] += a0[p] * b1[p];
        s[2] += a1[p] * b0[p], s[3] += a1[p] * b1[p];
        s[4] += a2[p] * b0[p], s[5] += a2[p] * b1[p];
        s[6] += a3[p] * b0[p], s[7] += a3[p] * b1[p];
      }
      for (std::size_t r = 0; r < 4; ++r) {
        c[(i + r) * n + j] += s[2 * r];
        c[(i + r) * n + j + 1] += s[2 * r + 1];
      }
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < 4; ++r) c[(i + r) * n + j] += dot(a + (i + r) * k, b + j * k, k);
    }
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  if (m == 1) {
    for (std::size_t p = 0; p < k; ++p) {
      if (a[p] != 0.0) axpy(a[p], b, c + p * n, n);
    }
    return;
  }
  const std::vector<double>& at = transposed(a, m, k);
  gemm_nn_strided(at.data(), m, b, n, c, n, k, m, n);
}

}  // namespace hiertab::kernels::avx2
