#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape records every operation as a node holding its forward value and a
// backward closure. backward() walks the nodes in reverse recording order and
// accumulates gradients into parents, so two replays on identical inputs
// produce bit-identical gradients. A tape belongs to one thread.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "motb/numkit/tensor.hpp"

namespace motb::ad {

struct Var {
  std::size_t id = 0;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  // With grad disabled no closures are stored; useful for inference.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var leaf(Tensor<T> value, bool requires_grad = false);
  Var record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor<T> value, std::span<const Var> parents, BackwardFn fn);

  const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient at v after backward(); zeros when nothing flowed into v.
  Tensor<T> grad(Var v) const;
  bool has_grad(Var v) const { return nodes_[v.id].has_grad; }

  // Accumulator for a parent inside a backward closure. Only valid when
  // requires_grad(v) holds.
  Tensor<T>& grad_buffer(Var v);

  // Seeds d(root)/d(root) = 1; root must hold exactly one element.
  void backward(Var root);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// Differentiable operations. Shapes are explicit; the only broadcast is the
// row-wise bias of add_row.
template <typename T> Var matmul(Tape<T>& t, Var a, Var b);
template <typename T> Var matmul_nt(Tape<T>& t, Var a, Var b);  // a * b^T
template <typename T> Var add(Tape<T>& t, Var a, Var b);
template <typename T> Var sub(Tape<T>& t, Var a, Var b);
template <typename T> Var add_row(Tape<T>& t, Var a, Var bias);
template <typename T> Var add_const(Tape<T>& t, Var a, const Tensor<T>& c);
template <typename T> Var scale(Tape<T>& t, Var a, T s);
template <typename T> Var gelu(Tape<T>& t, Var a);
template <typename T> Var layernorm(Tape<T>& t, Var x, Var gain, Var bias, T eps = T(1e-5));
template <typename T> Var softmax_rows(Tape<T>& t, Var a);
template <typename T> Var row_slice(Tape<T>& t, Var a, std::size_t first, std::size_t count);
template <typename T> Var col_slice(Tape<T>& t, Var a, std::size_t first, std::size_t count);
template <typename T> Var concat_rows(Tape<T>& t, std::span<const Var> parts);
template <typename T> Var concat_cols(Tape<T>& t, std::span<const Var> parts);
// Rows of `table` selected by ids (embedding lookup).
template <typename T> Var gather_rows(Tape<T>& t, Var table, std::span<const std::size_t> ids);
template <typename T> Var l2_normalize_rows(Tape<T>& t, Var a, T eps = T(1e-12));
// n x m -> n x 1 row means.
template <typename T> Var row_mean(Tape<T>& t, Var a);
// Mean squared error against a constant target; 1 x 1 result.
template <typename T> Var mse(Tape<T>& t, Var a, const Tensor<T>& target);
template <typename T> Var sum_squares(Tape<T>& t, Var a);
// mean_i [ max(0, lo_i - s_i)^2 + max(0, s_i - hi_i)^2 ] for s of n x 1.
template <typename T>
Var band_penalty(Tape<T>& t, Var s, std::span<const T> lo, std::span<const T> hi);

}  // namespace motb::ad
