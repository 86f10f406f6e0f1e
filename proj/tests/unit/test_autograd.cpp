#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "motb/numkit/ops.hpp"

namespace {

using motb::Tensor;
using motb::ad::Tape;
using motb::ad::Var;

Tensor<double> randn(std::vector<std::size_t> shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = n(rng);
  return t;
}

void expect_grad_ok(const motb::Objective& f, const std::vector<Tensor<double>>& params) {
  const auto r = motb::grad_check(f, params, {.step = 1e-5, .samples = 0, .seed = 0});
  EXPECT_GT(r.coordinates, 0u);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Tape, LinearGradientIsExact) {
  Tape<double> t;
  const Var a = t.leaf(Tensor<double>::matrix(1, 2, {1, 2}), true);
  const Var b = t.leaf(Tensor<double>::matrix(2, 1, {3, 4}), false);
  const Var y = motb::ad::matmul(t, a, b);
  EXPECT_EQ(t.value(y)[0], 11.0);
  t.backward(y);
  EXPECT_EQ(t.grad(a), Tensor<double>::matrix(1, 2, {3, 4}));
  EXPECT_FALSE(t.has_grad(b));
}

TEST(Tape, BackwardRequiresScalarRoot) {
  Tape<double> t;
  const Var a = t.leaf(Tensor<double>::matrix(1, 2, {1, 2}), true);
  EXPECT_THROW(t.backward(a), motb::Error);
}

TEST(Tape, SharedInputAccumulates) {
  Tape<double> t;
  const Var a = t.leaf(Tensor<double>::matrix(1, 1, {3}), true);
  const Var y = motb::ad::add(t, a, a);
  t.backward(y);
  EXPECT_EQ(t.grad(a)[0], 2.0);
}

TEST(GradCheck, MatmulSoftmaxChain) {
  expect_grad_ok(
      [](Tape<double>& t, const std::vector<Var>& p) {
        const Var s = motb::ad::softmax_rows(t, motb::ad::matmul_nt(t, p[0], p[1]));
        return motb::ad::sum_squares(t, motb::ad::matmul(t, s, p[1]));
      },
      {randn({3, 4}, 1), randn({5, 4}, 2)});
}

TEST(GradCheck, LayernormGelu) {
  expect_grad_ok(
      [](Tape<double>& t, const std::vector<Var>& p) {
        const Var h = motb::ad::layernorm(t, p[0], p[1], p[2]);
        return motb::ad::mse(t, motb::ad::gelu(t, h), Tensor<double>({2, 6}, 0.25));
      },
      {randn({2, 6}, 3), randn({6}, 4), randn({6}, 5)});
}

TEST(GradCheck, RelevancePath) {
  // normalize -> similarity -> row mean -> band penalty, the alignment path.
  expect_grad_ok(
      [](Tape<double>& t, const std::vector<Var>& p) {
        const Var v = motb::ad::l2_normalize_rows(t, p[0]);
        const Var w = motb::ad::l2_normalize_rows(t, p[1]);
        const Var s = motb::ad::row_mean(t, motb::ad::matmul_nt(t, v, w));
        static const std::vector<double> lo{0.5, -1.0, -1.0, 0.9}, hi{1.0, 0.1, 0.1, 1.0};
        return motb::ad::band_penalty<double>(t, s, lo, hi);
      },
      {randn({4, 5}, 6), randn({3, 5}, 7)});
}

TEST(GradCheck, SlicesConcatGatherBias) {
  expect_grad_ok(
      [](Tape<double>& t, const std::vector<Var>& p) {
        static const std::vector<std::size_t> ids{2, 0, 2, 1};
        const Var e = motb::ad::gather_rows<double>(t, p[0], ids);
        const Var parts[] = {motb::ad::row_slice(t, e, 0, 2), motb::ad::row_slice(t, e, 2, 2)};
        const Var r = motb::ad::concat_rows<double>(t, parts);
        const Var cols[] = {motb::ad::col_slice(t, r, 1, 2), motb::ad::col_slice(t, r, 0, 1)};
        const Var c = motb::ad::concat_cols<double>(t, cols);
        const Var b = motb::ad::add_row(t, c, p[1]);
        return motb::ad::sum_squares(t, motb::ad::scale(t, motb::ad::sub(t, b, motb::ad::scale(t, c, 3.0)), 0.5));
      },
      {randn({3, 3}, 8), randn({3}, 9)});
}

TEST(GradCheck, SampledCoordinatesAreCounted) {
  const auto r = motb::grad_check(
      [](Tape<double>& t, const std::vector<Var>& p) { return motb::ad::sum_squares(t, p[0]); },
      {randn({10, 10}, 10)}, {.step = 1e-5, .samples = 17, .seed = 3});
  EXPECT_EQ(r.coordinates, 17u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, FivePointStencil) {
  const auto r = motb::grad_check(
      [](Tape<double>& t, const std::vector<Var>& p) {
        return motb::ad::sum_squares(t, motb::ad::gelu(t, motb::ad::matmul(t, p[0], p[1])));
      },
      {randn({3, 4}, 11), randn({4, 2}, 12)}, {.step = 1e-3, .order = 4});
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_THROW(motb::grad_check([](Tape<double>& t, const std::vector<Var>& p) { return motb::ad::sum_squares(t, p[0]); },
                                {randn({1, 1}, 1)}, {.order = 3}),
               motb::PreconditionError);
}

TEST(GradCheck, NonFiniteObjectiveThrows) {
  EXPECT_THROW(motb::grad_check(
                   [](Tape<double>& t, const std::vector<Var>& p) {
                     return motb::ad::scale(t, motb::ad::sum_squares(t, p[0]),
                                            std::numeric_limits<double>::infinity());
                   },
                   {randn({2, 2}, 1)}),
               motb::EvaluationError);
}

}  // namespace
