#include <atomic>
#include <stdexcept>
#include <string>

#include "hiertab/kernels.hpp"

namespace hiertab::kernels {

namespace {

bool detect_avx2() {
#if defined(HIERTAB_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{detect_avx2() ? Backend::kAvx2
                                                 : Backend::kScalar};
  return slot;
}

}  // namespace

#if !defined(HIERTAB_HAVE_AVX2)
namespace avx2 {
// Never selected: avx2_available() is false in this build.
double dot(const double* a, const double* b, std::size_t n) {
  return scalar::dot(a, b, n);
}
void axpy(double alpha, const double* x, double* y, std::size_t n) {
  scalar::axpy(alpha, x, y, n);
}
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  scalar::gemm_nn(a, b, c, m, k, n);
}
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  scalar::gemm_nt(a, b, c, m, k, n);
}
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  scalar::gemm_tn(a, b, c, m, k, n);
}
}  // namespace avx2
#endif

std::string_view backend_name(Backend backend) {
  return backend == Backend::kAvx2 ? "avx2" : "scalar";
}

bool avx2_available() {
  static const bool available = detect_avx2();
  return available;
}

Backend active_backend() { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
  if (backend == Backend::kAvx2 && !avx2_available()) {
    throw std::invalid_argument("kernel backend 'avx2' is not available on this CPU");
  }
  backend_slot().store(backend, std::memory_order_relaxed);
}

double dot(const double* a, const double* b, std::size_t n) {
  return active_backend() == Backend::kAvx2 ? avx2::dot(a, b, n)
                                            : scalar::dot(a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  if (active_backend() == Backend::kAvx2) {
    avx2::axpy(alpha, x, y, n);
  } else {
    scalar::axpy(alpha, x, y, n);
  }
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  if (active_backend() == Backend::kAvx2) {
    avx2::gemm_nn(a, b, c, m, k, n);
  } else {
    scalar::gemm_nn(a, b, c, m, k, n);
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  if (active_backend() == Backend::kAvx2) {
    avx2::gemm_nt(a, b, c, m, k, n);
  } else {
    scalar::gemm_nt(a, b, c, m, k, n);
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  if (active_backend() == Backend::kAvx2) {
    avx2::gemm_tn(a, b, c, m, k, n);
  } else {
    scalar::gemm_tn(a, b, c, m, k, n);
  }
}

}  // namespace hiertab::kernels
