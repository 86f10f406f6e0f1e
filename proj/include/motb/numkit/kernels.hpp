#pragma once

// Dense kernels used by the autograd tape. Two implementations are kept:
//  - motb::kernels::serial   plain loops, the reference the tests compare against
//  - motb::kernels           OpenMP row-parallel versions used everywhere else
//
// Every parallel kernel assigns each output row to exactly one thread and
// accumulates in a fixed order, so results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace motb::kernels {

namespace serial {

// c[m x n] = a[m x k] * b[k x n], naive triple loop (i, j, inner k).
template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n);

// c[m x n] = a[m x k] * b[n x k]^T
template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n);

// c[m x n] = a[k x m]^T * b[k x n]
template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n);

// In-place row softmax. Throws DegenerateRowError on a row with no finite entry.
template <typename T>
void softmax_rows(std::span<T> x, std::size_t m, std::size_t n);

}  // namespace serial

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n);

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n);

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n);

template <typename T>
void softmax_rows(std::span<T> x, std::size_t m, std::size_t n);

// Number of threads the parallel kernels will use.
int max_threads();

}  // namespace motb::kernels
