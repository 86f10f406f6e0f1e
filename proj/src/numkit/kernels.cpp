#include "motb/numkit/kernels.hpp"

#include <cmath>
#include <limits>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "motb/errors.hpp"

namespace motb::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

template <typename T>
bool softmax_row(T* row, std::size_t n) {
  T max_v = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (row[j] > max_v) max_v = row[j];
  }
  if (!std::isfinite(max_v)) return false;
  T sum = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const T e = std::exp(row[j] - max_v);
    row[j] = e;
    sum += e;
  }
  const T inv = T{1} / sum;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  return true;
}

[[noreturn]] void throw_degenerate(std::size_t row) {
  throw DegenerateRowError("softmax row " + std::to_string(row) + " has no finite entry");
}

}  // namespace

namespace serial {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void softmax_rows(std::span<T> x, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    if (n > 0 && !softmax_row(x.data() + i * n, n)) throw_degenerate(i);
  }
}

template void matmul<float>(std::span<const float>, std::span<const float>, std::span<float>,
                            std::size_t, std::size_t, std::size_t);
template void matmul<double>(std::span<const double>, std::span<const double>,
                             std::span<double>, std::size_t, std::size_t, std::size_t);
template void matmul_nt<float>(std::span<const float>, std::span<const float>,
                               std::span<float>, std::size_t, std::size_t, std::size_t);
template void matmul_nt<double>(std::span<const double>, std::span<const double>,
                                std::span<double>, std::size_t, std::size_t, std::size_t);
template void matmul_tn<float>(std::span<const float>, std::span<const float>,
                               std::span<float>, std::size_t, std::size_t, std::size_t);
template void matmul_tn<double>(std::span<const double>, std::span<const double>,
                                std::span<double>, std::size_t, std::size_t, std::size_t);
template void softmax_rows<float>(std::span<float>, std::size_t, std::size_t);
template void softmax_rows<double>(std::span<double>, std::size_t, std::size_t);

}  // namespace serial

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n) {
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    T* crow = pc + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0;
    const T* arow = pa + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n) {
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    const T* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = pb + j * k;
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      pc[i * n + j] = acc;
    }
  }
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n) {
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    T* crow = pc + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[p * m + i];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void softmax_rows(std::span<T> x, std::size_t m, std::size_t n) {
  if (n == 0) return;
  T* px = x.data();
  const long rows = static_cast<long>(m);
  long first_bad = rows;
#pragma omp parallel for schedule(static) reduction(min : first_bad) if (m * n > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    if (!softmax_row(px + i * n, n) && i < first_bad) first_bad = i;
  }
  if (first_bad < rows) throw_degenerate(static_cast<std::size_t>(first_bad));
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template void matmul<float>(std::span<const float>, std::span<const float>, std::span<float>,
                            std::size_t, std::size_t, std::size_t);
template void matmul<double>(std::span<const double>, std::span<const double>,
                             std::span<double>, std::size_t, std::size_t, std::size_t);
template void matmul_nt<float>(std::span<const float>, std::span<const float>,
                               std::span<float>, std::size_t, std::size_t, std::size_t);
template void matmul_nt<double>(std::span<const double>, std::span<const double>,
                                std::span<double>, std::size_t, std::size_t, std::size_t);
template void matmul_tn<float>(std::span<const float>, std::span<const float>,
                               std::span<float>, std::size_t, std::size_t, std::size_t);
template void matmul_tn<double>(std::span<const double>, std::span<const double>,
                                std::span<double>, std::size_t, std::size_t, std::size_t);
template void softmax_rows<float>(std::span<float>, std::size_t, std::size_t);
template void softmax_rows<double>(std::span<double>, std::size_t, std::size_t);

}  // namespace motb::kernels
