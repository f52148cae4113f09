#pragma once

#include <cstddef>
#include <functional>

namespace boxrec::kernels {

// Global worker cap (CLI --threads). 0 means "use the OpenMP default".
void set_max_threads(int n);
int max_threads();

// Effective number of workers a parallel region will use.
int effective_threads();

// Runs fn(i) for i in [0, n). Iterations must be independent; any reduction
// over their results has to be done by the caller in a fixed order, which is
// what keeps thread count out of the numerics.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// C[m x n] = A[m x k] * B[k x n].
//
// The parallel kernel splits over output rows; each row is computed with the
// same loop order as the serial reference, so both produce bit-identical
// results for any thread count. The reference is kept as the test oracle and
// for the benchmark comparison.
template <typename T>
void matmul_reference(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

extern template void matmul_reference<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
extern template void matmul_reference<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
extern template void matmul<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
extern template void matmul<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);

}  // namespace boxrec::kernels
