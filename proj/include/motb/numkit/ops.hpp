#pragma once

// Value-level entry points over Tensor. Each one runs the same code path as
// the corresponding tape operation on a gradient-free tape.

#include <cstdint>
#include <functional>
#include <vector>

#include "motb/numkit/autograd.hpp"
#include "motb/numkit/tensor.hpp"

namespace motb {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

// Unit-L2 rescaling of a vector; throws ZeroVectorError when the norm is
// not above eps.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& v, T eps = T(1e-12));

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                    T eps = T(1e-5));

// Scalar objective over a set of parameter leaves on a fresh tape.
using Objective = std::function<ad::Var(ad::Tape<double>&, const std::vector<ad::Var>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // 2: central difference; 4: five-point stencil, O(step^4) truncation, which
  // allows a larger step and keeps round-off low on tiny gradients.
  int order = 2;
  // Number of coordinates probed; 0 probes every coordinate.
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Finite-difference check of reverse-mode gradients in 64-bit precision.
// Relative error per coordinate is |a - c| / (|a| + |c| + 1e-8).
GradCheckResult grad_check(const Objective& f, const std::vector<Tensor<double>>& params,
                           const GradCheckOptions& opts = {});

}  // namespace motb
