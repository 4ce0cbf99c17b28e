// Equivalence of the SIMD kernels with the scalar reference.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "hiertab/kernels.hpp"
#include "hiertab/rng.hpp"

namespace hiertab::kernels {
namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i], b[i], 1e-12 * (1.0 + std::abs(a[i]))) << "index " << i;
  }
}

// Odd sizes exercise the vector tails.
const std::size_t kSizes[] = {1, 3, 4, 5, 7, 8, 9, 16, 17, 33, 64, 130};

TEST(KernelsTest, DispatcherReportsABackend) {
  const Backend b = active_backend();
  if (!avx2_available()) {
    EXPECT_EQ(b, Backend::kScalar);
    EXPECT_THROW(set_backend(Backend::kAvx2), std::invalid_argument);
  }
  EXPECT_FALSE(backend_name(b).empty());
}

TEST(KernelsTest, DotAndAxpyMatchScalar) {
  if (!avx2_available()) GTEST_SKIP() << "no AVX2 on this CPU";
  Rng rng(1);
  for (std::size_t n : kSizes) {
    const auto a = random_vector(rng, n);
    const auto b = random_vector(rng, n);
    EXPECT_NEAR(avx2::dot(a.data(), b.data(), n), scalar::dot(a.data(), b.data(), n),
                1e-12 * static_cast<double>(n));
    auto y1 = random_vector(rng, n);
    auto y2 = y1;
    scalar::axpy(0.37, a.data(), y1.data(), n);
    avx2::axpy(0.37, a.data(), y2.data(), n);
    expect_close(y1, y2);
  }
}

TEST(KernelsTest, GemmVariantsMatchScalar) {
  if (!avx2_available()) GTEST_SKIP() << "no AVX2 on this CPU";
  Rng rng(2);
  for (std::size_t m : {1u, 3u, 4u, 6u, 9u}) {
    for (std::size_t k : kSizes) {
      for (std::size_t n : {1u, 5u, 12u, 20u, 33u}) {
        const auto a = random_vector(rng, m * k);
        const auto b_nn = random_vector(rng, k * n);
        const auto b_nt = random_vector(rng, n * k);
        const auto b_tn = random_vector(rng, m * n);
        const auto c0 = random_vector(rng, m * n);
        const auto c0_tn = random_vector(rng, k * n);

        auto c1 = c0, c2 = c0;
        scalar::gemm_nn(a.data(), b_nn.data(), c1.data(), m, k, n);
        avx2::gemm_nn(a.data(), b_nn.data(), c2.data(), m, k, n);
        expect_close(c1, c2);

        c1 = c0, c2 = c0;
        scalar::gemm_nt(a.data(), b_nt.data(), c1.data(), m, k, n);
        avx2::gemm_nt(a.data(), b_nt.data(), c2.data(), m, k, n);
        expect_close(c1, c2);

        c1 = c0_tn, c2 = c0_tn;
        scalar::gemm_tn(a.data(), b_tn.data(), c1.data(), m, k, n);
        avx2::gemm_tn(a.data(), b_tn.data(), c2.data(), m, k, n);
        expect_close(c1, c2);
      }
    }
  }
}

TEST(KernelsTest, GemmAgreesWithNaiveTripleLoop) {
  Rng rng(3);
  const std::size_t m = 4, k = 6, n = 5;
  const auto a = random_vector(rng, m * k);
  const auto b = random_vector(rng, k * n);
  std::vector<double> expected(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) expected[i * n + j] += a[i * k + p] * b[p * n + j];
  std::vector<double> c(m * n, 0.0);
  gemm_nn(a.data(), b.data(), c.data(), m, k, n);
  expect_close(expected, c);
}

TEST(KernelsTest, BackendSwitchIsObservable) {
  const Backend original = active_backend();
  set_backend(Backend::kScalar);
  EXPECT_EQ(active_backend(), Backend::kScalar);
  set_backend(original);
}

}  // namespace
}  // namespace hiertab::kernels
