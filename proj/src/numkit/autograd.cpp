#include "motb/numkit/autograd.hpp"

#include <cmath>
#include <string>

#include "motb/numkit/kernels.hpp"

namespace motb::ad {

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(fn));
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, std::span<const Var> parents, BackwardFn fn) {
  bool needs = false;
  if (grad_enabled_) {
    for (Var p : parents) needs = needs || nodes_[p.id].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.has_grad) return n.grad;
  return Tensor<T>(n.value.shape());
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var root) {
  if (nodes_[root.id].value.size() != 1) {
    throw DimensionError("backward root must be a single element, got " +
                         shape_string(nodes_[root.id].value.shape()));
  }
  if (!nodes_[root.id].requires_grad) return;
  grad_buffer(root)[0] = T{1};
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

namespace {

template <typename T>
void require_matrix(const Tensor<T>& x, const char* op) {
  if (x.rank() != 2 && x.rank() != 1) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(x.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

template <typename T>
void accumulate(Tape<T>& t, Var v, const Tensor<T>& g) {
  if (!t.requires_grad(v)) return;
  auto& buf = t.grad_buffer(v);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

template <typename T>
T gelu_value(T x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  return T(0.5) * x * (T(1) + std::tanh(c * (x + a * x * x * x)));
}

template <typename T>
T gelu_slope(T x) {
  constexpr T c = T(0.7978845608028654);
  constexpr T a = T(0.044715);
  const T th = std::tanh(c * (x + a * x * x * x));
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3) * a * x * x);
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: inner extents differ " + shape_string(av.shape()) + " * " +
                         shape_string(bv.shape()));
  }
  Tensor<T> out({m, n});
  kernels::matmul<T>(av.data(), bv.data(), out.data(), m, k, n);
  return t.record(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(a)) {
      Tensor<T> da({m, k});
      kernels::matmul_nt<T>(g.data(), tp.value(b).data(), da.data(), m, n, k);
      accumulate(tp, a, da);
    }
    if (tp.requires_grad(b)) {
      Tensor<T> db({k, n});
      kernels::matmul_tn<T>(tp.value(a).data(), g.data(), db.data(), k, m, n);
      accumulate(tp, b, db);
    }
  });
}

template <typename T>
Var matmul_nt(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k) {
    throw DimensionError("matmul_nt: inner extents differ " + shape_string(av.shape()) +
                         " * " + shape_string(bv.shape()) + "^T");
  }
  Tensor<T> out({m, n});
  kernels::matmul_nt<T>(av.data(), bv.data(), out.data(), m, k, n);
  return t.record(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(a)) {
      Tensor<T> da({m, k});
      kernels::matmul<T>(g.data(), tp.value(b).data(), da.data(), m, n, k);
      accumulate(tp, a, da);
    }
    if (tp.requires_grad(b)) {
      Tensor<T> db({n, k});
      kernels::matmul_tn<T>(g.data(), tp.value(a).data(), db.data(), n, m, k);
      accumulate(tp, b, db);
    }
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require_same_shape(av, bv, "add");
  Tensor<T> out = av;
  out.requires_grad = false;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    accumulate(tp, a, g);
    accumulate(tp, b, g);
  });
}

template <typename T>
Var sub(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require_same_shape(av, bv, "sub");
  Tensor<T> out = av;
  out.requires_grad = false;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    accumulate(tp, a, g);
    if (tp.requires_grad(b)) {
      auto& buf = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] -= g[i];
    }
  });
}

template <typename T>
Var add_row(Tape<T>& t, Var a, Var bias) {
  const auto& av = t.value(a);
  const auto& bv = t.value(bias);
  const std::size_t m = av.rows(), n = av.cols();
  if (bv.size() != n) {
    throw DimensionError("add_row: bias length " + std::to_string(bv.size()) +
                         " does not match width " + std::to_string(n));
  }
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = av(i, j) + bv[j];
  return t.record(std::move(out), {a, bias},
                  [a, bias, m, n](Tape<T>& tp, const Tensor<T>& g) {
                    accumulate(tp, a, g);
                    if (tp.requires_grad(bias)) {
                      auto& buf = tp.grad_buffer(bias);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) buf[j] += g[i * n + j];
                    }
                  });
}

template <typename T>
Var add_const(Tape<T>& t, Var a, const Tensor<T>& c) {
  const auto& av = t.value(a);
  if (av.size() != c.size() || av.rows() != c.rows()) {
    throw DimensionError("add_const: shape mismatch " + shape_string(av.shape()) + " vs " +
                         shape_string(c.shape()));
  }
  Tensor<T> out({av.rows(), av.cols()});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c[i];
  return t.record(std::move(out), {a},
                  [a](Tape<T>& tp, const Tensor<T>& g) { accumulate(tp, a, g); });
}

template <typename T>
Var scale(Tape<T>& t, Var a, T s) {
  Tensor<T> out = t.value(a);
  out.requires_grad = false;
  for (auto& v : out.storage()) v *= s;
  return t.record(std::move(out), {a}, [a, s](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(a)) return;
    auto& buf = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += s * g[i];
  });
}

template <typename T>
Var gelu(Tape<T>& t, Var a) {
  const auto& av = t.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = gelu_value(av[i]);
  return t.record(std::move(out), {a}, [a](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(a)) return;
    const auto& x = tp.value(a);
    auto& buf = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * gelu_slope(x[i]);
  });
}

template <typename T>
Var layernorm(Tape<T>& t, Var x, Var gain, Var bias, T eps) {
  const auto& xv = t.value(x);
  const auto& gv = t.value(gain);
  const auto& bv = t.value(bias);
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gv.size() != n || bv.size() != n) {
    throw DimensionError("layernorm: affine parameters must have length " + std::to_string(n));
  }
  Tensor<T> xhat({m, n});
  std::vector<T> inv_std(m);
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const T d = xv(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<T>(n);
    inv_std[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
      out(i, j) = xhat(i, j) * gv[j] + bv[j];
    }
  }
  return t.record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& tp, const Tensor<T>& g) {
        const auto& gv = tp.value(gain);
        if (tp.requires_grad(gain)) {
          auto& buf = tp.grad_buffer(gain);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) buf[j] += g(i, j) * xhat(i, j);
        }
        if (tp.requires_grad(bias)) {
          auto& buf = tp.grad_buffer(bias);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) buf[j] += g(i, j);
        }
        if (tp.requires_grad(x)) {
          auto& buf = tp.grad_buffer(x);
          const T inv_n = T{1} / static_cast<T>(n);
          for (std::size_t i = 0; i < m; ++i) {
            T sum_d = 0, sum_dx = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g(i, j) * gv[j];
              sum_d += d;
              sum_dx += d * xhat(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g(i, j) * gv[j];
              buf(i, j) += inv_std[i] * (d - inv_n * sum_d - xhat(i, j) * inv_n * sum_dx);
            }
          }
        }
      });
}

template <typename T>
Var softmax_rows(Tape<T>& t, Var a) {
  const auto& av = t.value(a);
  const std::size_t m = av.rows(), n = av.cols();
  Tensor<T> out({m, n}, std::vector<T>(av.storage()));
  kernels::softmax_rows<T>(out.data(), m, n);
  const Var self{t.size()};
  return t.record(std::move(out), {a}, [a, self, m, n](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(a)) return;
    const auto& p = tp.value(self);
    auto& buf = tp.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g(i, j) * p(i, j);
      for (std::size_t j = 0; j < n; ++j) buf(i, j) += p(i, j) * (g(i, j) - dot);
    }
  });
}

template <typename T>
Var row_slice(Tape<T>& t, Var a, std::size_t first, std::size_t count) {
  const auto& av = t.value(a);
  const std::size_t n = av.cols();
  if (first + count > av.rows()) {
    throw DimensionError("row_slice: rows [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") out of " +
                         std::to_string(av.rows()));
  }
  Tensor<T> out({count, n});
  std::copy_n(av.storage().begin() + static_cast<std::ptrdiff_t>(first * n), count * n,
              out.storage().begin());
  return t.record(std::move(out), {a}, [a, first, count, n](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(a)) return;
    auto& buf = tp.grad_buffer(a);
    for (std::size_t i = 0; i < count * n; ++i) buf[first * n + i] += g[i];
  });
}

template <typename T>
Var col_slice(Tape<T>& t, Var a, std::size_t first, std::size_t count) {
  const auto& av = t.value(a);
  const std::size_t m = av.rows(), n = av.cols();
  if (first + count > n) {
    throw DimensionError("col_slice: columns out of range");
  }
  Tensor<T> out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, first + j);
  return t.record(std::move(out), {a},
                  [a, first, count, m, n](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.requires_grad(a)) return;
                    auto& buf = tp.grad_buffer(a);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < count; ++j)
                        buf[i * n + first + j] += g[i * count + j];
                  });
}

template <typename T>
Var concat_rows(Tape<T>& t, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = t.value(parts[0]).cols();
  std::size_t m = 0;
  for (Var p : parts) {
    if (t.value(p).cols() != n) throw DimensionError("concat_rows: width mismatch");
    m += t.value(p).rows();
  }
  Tensor<T> out({m, n});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var p : parts) {
    const auto& pv = t.value(p);
    std::copy(pv.storage().begin(), pv.storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(off * n));
    offsets.push_back(off);
    off += pv.rows();
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  return t.record(std::move(out), parts,
                  [owned, offsets, n](Tape<T>& tp, const Tensor<T>& g) {
                    for (std::size_t k = 0; k < owned.size(); ++k) {
                      if (!tp.requires_grad(owned[k])) continue;
                      auto& buf = tp.grad_buffer(owned[k]);
                      for (std::size_t i = 0; i < buf.size(); ++i)
                        buf[i] += g[offsets[k] * n + i];
                    }
                  });
}

template <typename T>
Var concat_cols(Tape<T>& t, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = t.value(parts[0]).rows();
  std::size_t n = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != m) throw DimensionError("concat_cols: height mismatch");
    n += t.value(p).cols();
  }
  Tensor<T> out({m, n});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var p : parts) {
    const auto& pv = t.value(p);
    const std::size_t w = pv.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out(i, off + j) = pv(i, j);
    offsets.push_back(off);
    off += w;
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  return t.record(std::move(out), parts,
                  [owned, offsets, m, n](Tape<T>& tp, const Tensor<T>& g) {
                    for (std::size_t k = 0; k < owned.size(); ++k) {
                      if (!tp.requires_grad(owned[k])) continue;
                      auto& buf = tp.grad_buffer(owned[k]);
                      const std::size_t w = buf.cols();
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j)
                          buf[i * w + j] += g[i * n + offsets[k] + j];
                    }
                  });
}

template <typename T>
Var gather_rows(Tape<T>& t, Var table, std::span<const std::size_t> ids) {
  const auto& tv = t.value(table);
  const std::size_t n = tv.cols();
  Tensor<T> out({ids.size(), n});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " out of " +
                           std::to_string(tv.rows()) + " rows");
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) = tv(ids[i], j);
  }
  std::vector<std::size_t> owned(ids.begin(), ids.end());
  return t.record(std::move(out), {table}, [table, owned, n](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(table)) return;
    auto& buf = tp.grad_buffer(table);
    for (std::size_t i = 0; i < owned.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) buf[owned[i] * n + j] += g[i * n + j];
  });
}

template <typename T>
Var l2_normalize_rows(Tape<T>& t, Var a, T eps) {
  const auto& av = t.value(a);
  const std::size_t m = av.rows(), n = av.cols();
  Tensor<T> out({m, n});
  std::vector<T> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    T sq = 0;
    for (std::size_t j = 0; j < n; ++j) sq += av(i, j) * av(i, j);
    norms[i] = std::sqrt(sq);
    if (!(norms[i] > eps)) {
      throw ZeroVectorError("l2 normalization: row " + std::to_string(i) +
                            " has norm below " + std::to_string(eps));
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) = av(i, j) / norms[i];
  }
  const Var self{t.size()};
  return t.record(std::move(out), {a},
                  [a, self, m, n, norms = std::move(norms)](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.requires_grad(a)) return;
                    const auto& y = tp.value(self);
                    auto& buf = tp.grad_buffer(a);
                    for (std::size_t i = 0; i < m; ++i) {
                      T dot = 0;
                      for (std::size_t j = 0; j < n; ++j) dot += y(i, j) * g(i, j);
                      for (std::size_t j = 0; j < n; ++j)
                        buf(i, j) += (g(i, j) - y(i, j) * dot) / norms[i];
                    }
                  });
}

template <typename T>
Var row_mean(Tape<T>& t, Var a) {
  const auto& av = t.value(a);
  const std::size_t m = av.rows(), n = av.cols();
  if (n == 0) throw DimensionError("row_mean: zero columns");
  Tensor<T> out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += av(i, j);
    out(i, 0) = s / static_cast<T>(n);
  }
  return t.record(std::move(out), {a}, [a, m, n](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(a)) return;
    auto& buf = tp.grad_buffer(a);
    const T inv = T{1} / static_cast<T>(n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) buf(i, j) += g[i] * inv;
  });
}

template <typename T>
Var mse(Tape<T>& t, Var a, const Tensor<T>& target) {
  const auto& av = t.value(a);
  if (av.size() != target.size()) {
    throw DimensionError("mse: shape mismatch " + shape_string(av.shape()) + " vs " +
                         shape_string(target.shape()));
  }
  if (av.size() == 0) throw DimensionError("mse: empty input");
  T s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - target[i];
    s += d * d;
  }
  const T inv = T{1} / static_cast<T>(av.size());
  Tensor<T> out({1, 1}, std::vector<T>{s * inv});
  return t.record(std::move(out), {a}, [a, target, inv](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(a)) return;
    const auto& x = tp.value(a);
    auto& buf = tp.grad_buffer(a);
    for (std::size_t i = 0; i < x.size(); ++i) buf[i] += g[0] * T{2} * (x[i] - target[i]) * inv;
  });
}

template <typename T>
Var sum_squares(Tape<T>& t, Var a) {
  const auto& av = t.value(a);
  T s = 0;
  for (T v : av.storage()) s += v * v;
  Tensor<T> out({1, 1}, std::vector<T>{s});
  return t.record(std::move(out), {a}, [a](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(a)) return;
    const auto& x = tp.value(a);
    auto& buf = tp.grad_buffer(a);
    for (std::size_t i = 0; i < x.size(); ++i) buf[i] += g[0] * T{2} * x[i];
  });
}

template <typename T>
Var band_penalty(Tape<T>& t, Var s, std::span<const T> lo, std::span<const T> hi) {
  const auto& sv = t.value(s);
  const std::size_t n = sv.size();
  if (lo.size() != n || hi.size() != n) throw DimensionError("band_penalty: bound length");
  if (n == 0) throw DimensionError("band_penalty: empty input");
  std::vector<T> slope(n, T{0});
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sv[i] < lo[i]) {
      const T d = lo[i] - sv[i];
      total += d * d;
      slope[i] = -T{2} * d;
    } else if (sv[i] > hi[i]) {
      const T d = sv[i] - hi[i];
      total += d * d;
      slope[i] = T{2} * d;
    }
  }
  const T inv = T{1} / static_cast<T>(n);
  Tensor<T> out({1, 1}, std::vector<T>{total * inv});
  return t.record(std::move(out), {s},
                  [s, slope = std::move(slope), inv](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.requires_grad(s)) return;
                    auto& buf = tp.grad_buffer(s);
                    for (std::size_t i = 0; i < slope.size(); ++i) buf[i] += g[0] * slope[i] * inv;
                  });
}

#define MOTB_INSTANTIATE(T)                                                                  \
  template class Tape<T>;                                                                    \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                \
  template Var matmul_nt<T>(Tape<T>&, Var, Var);                                             \
  template Var add<T>(Tape<T>&, Var, Var);                                                   \
  template Var sub<T>(Tape<T>&, Var, Var);                                                   \
  template Var add_row<T>(Tape<T>&, Var, Var);                                               \
  template Var add_const<T>(Tape<T>&, Var, const Tensor<T>&);                                \
  template Var scale<T>(Tape<T>&, Var, T);                                                   \
  template Var gelu<T>(Tape<T>&, Var);                                                       \
  template Var layernorm<T>(Tape<T>&, Var, Var, Var, T);                                     \
  template Var softmax_rows<T>(Tape<T>&, Var);                                               \
  template Var row_slice<T>(Tape<T>&, Var, std::size_t, std::size_t);                        \
  template Var col_slice<T>(Tape<T>&, Var, std::size_t, std::size_t);                        \
  template Var concat_rows<T>(Tape<T>&, std::span<const Var>);                               \
  template Var concat_cols<T>(Tape<T>&, std::span<const Var>);                               \
  template Var gather_rows<T>(Tape<T>&, Var, std::span<const std::size_t>);                  \
  template Var l2_normalize_rows<T>(Tape<T>&, Var, T);                                       \
  template Var row_mean<T>(Tape<T>&, Var);                                                   \
  template Var mse<T>(Tape<T>&, Var, const Tensor<T>&);                                      \
  template Var sum_squares<T>(Tape<T>&, Var);                                                \
  template Var band_penalty<T>(Tape<T>&, Var, std::span<const T>, std::span<const T>);

MOTB_INSTANTIATE(float)
MOTB_INSTANTIATE(double)

#undef MOTB_INSTANTIATE

}  // namespace motb::ad
