#include "boxrec/kernels.hpp"

#include <omp.h>

#include <atomic>

namespace boxrec::kernels {

namespace {
std::atomic<int> g_max_threads{0};

template <typename T>
inline void matmul_row(const T* a_row, const T* b, T* c_row, std::size_t k, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) c_row[j] = T(0);
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T a_ik = a_row[kk];
    const T* b_row = b + kk * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += a_ik * b_row[j];
  }
}
}  // namespace

void set_max_threads(int n) { g_max_threads.store(n < 0 ? 0 : n); }
int max_threads() { return g_max_threads.load(); }

int effective_threads() {
  const int cap = g_max_threads.load();
  const int avail = omp_get_max_threads();
  return (cap > 0 && cap < avail) ? cap : avail;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const int threads = effective_threads();
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (long long i = 0; i < static_cast<long long>(n); ++i) fn(static_cast<std::size_t>(i));
}

template <typename T>
void matmul_reference(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a + i * k, b, c + i * n, k, n);
}

template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  const int threads = effective_threads();
  // Small products are not worth a parallel region.
  if (threads <= 1 || m < 2 || m * k * n < 65536) {
    matmul_reference(a, b, c, m, k, n);
    return;
  }
#pragma omp parallel for schedule(static) num_threads(threads)
  for (long long i = 0; i < static_cast<long long>(m); ++i)
    matmul_row(a + static_cast<std::size_t>(i) * k, b, c + static_cast<std::size_t>(i) * n, k, n);
}

template void matmul_reference<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void matmul_reference<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
template void matmul<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void matmul<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);

}  // namespace boxrec::kernels
