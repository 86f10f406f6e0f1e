#include "motb/numkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace motb {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  ad::Tape<T> tape(false);
  const auto va = tape.leaf(a);
  const auto vb = tape.leaf(b);
  return tape.value(ad::matmul(tape, va, vb));
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  ad::Tape<T> tape(false);
  return tape.value(ad::softmax_rows(tape, tape.leaf(x)));
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& v, T eps) {
  ad::Tape<T> tape(false);
  const auto row = tape.leaf(Tensor<T>({1, v.size()}, std::vector<T>(v.storage())));
  Tensor<T> out = tape.value(ad::l2_normalize_rows(tape, row, eps));
  return Tensor<T>(v.shape(), std::move(out.storage()));
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  ad::Tape<T> tape(false);
  const auto vx = tape.leaf(x);
  const auto vg = tape.leaf(gain);
  const auto vb = tape.leaf(bias);
  return tape.value(ad::layernorm(tape, vx, vg, vb, eps));
}

template Tensor<float> matmul(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> matmul(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> softmax_rows(const Tensor<float>&);
template Tensor<double> softmax_rows(const Tensor<double>&);
template Tensor<float> l2_normalize(const Tensor<float>&, float);
template Tensor<double> l2_normalize(const Tensor<double>&, double);
template Tensor<float> layernorm(const Tensor<float>&, const Tensor<float>&,
                                 const Tensor<float>&, float);
template Tensor<double> layernorm(const Tensor<double>&, const Tensor<double>&,
                                  const Tensor<double>&, double);

namespace {

double evaluate(const Objective& f, const std::vector<Tensor<double>>& params) {
  ad::Tape<double> tape(false);
  std::vector<ad::Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  const double v = tape.value(f(tape, leaves))[0];
  if (!std::isfinite(v)) throw EvaluationError("objective is not finite at a probe point");
  return v;
}

}  // namespace

GradCheckResult grad_check(const Objective& f, const std::vector<Tensor<double>>& params,
                           const GradCheckOptions& opts) {
  ad::Tape<double> tape(true);
  std::vector<ad::Var> leaves;
  for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
  const ad::Var root = f(tape, leaves);
  if (!std::isfinite(tape.value(root)[0])) {
    throw EvaluationError("objective is not finite at the base point");
  }
  if (opts.order != 2 && opts.order != 4) throw PreconditionError("grad_check order must be 2 or 4");
  tape.backward(root);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].size(); ++i) coords.emplace_back(p, i);
  if (opts.samples > 0 && opts.samples < coords.size()) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opts.samples);
  }

  GradCheckResult result;
  std::vector<Tensor<double>> probe = params;
  for (const auto& [p, i] : coords) {
    const double analytic = tape.grad(leaves[p])[i];
    const double base = probe[p][i];
    auto at = [&](double offset) {
      probe[p][i] = base + offset;
      const double v = evaluate(f, probe);
      probe[p][i] = base;
      return v;
    };
    const double h = opts.step;
    const double numeric = opts.order == 4
                               ? (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12.0 * h)
                               : (at(h) - at(-h)) / (2.0 * h);
    const double rel =
        std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-8);
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.coordinates;
  }
  return result;
}

}  // namespace motb
