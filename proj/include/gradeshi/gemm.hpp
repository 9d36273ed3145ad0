#ifndef GRADESHI_GEMM_HPP
#define GRADESHI_GEMM_HPP

#include <concepts>
#include <cstddef>

namespace gradeshi {

// Row-major C(m x n) = A(m x k) * B(k x n), or C += A * B when accumulate is
// set. Every C element is reduced over k in ascending order by one worker,
// so the result is independent of the worker count and of m.
template <std::floating_point T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
          T* c, std::size_t ldc, bool accumulate = false);

// Out-of-place transpose of a row-major (rows x cols) matrix.
template <std::floating_point T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst);

} // namespace gradeshi

#endif
