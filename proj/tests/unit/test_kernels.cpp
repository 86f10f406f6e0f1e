#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "motb/numkit/kernels.hpp"
#include "motb/numkit/ops.hpp"

namespace {

using motb::Tensor;

Tensor<double> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor<double> t({r, c});
  for (auto& v : t.storage()) v = n(rng);
  return t;
}

TEST(Matmul, IdentityTimesIdentity) {
  const auto i2 = Tensor<double>::identity(2);
  EXPECT_EQ(motb::matmul(i2, i2), i2);
}

TEST(Matmul, ForcedArithmetic) {
  const auto a = Tensor<double>::matrix(2, 2, {1, 2, 3, 4});
  const auto b = Tensor<double>::matrix(2, 1, {1, 1});
  EXPECT_EQ(motb::matmul(a, b), Tensor<double>::matrix(2, 1, {3, 7}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(11);
  const auto a = random_matrix(5, 4, rng);
  const auto b = random_matrix(4, 3, rng);
  const auto c = motb::matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-12);
    }
}

TEST(Matmul, TimesIdentityIsBitExact) {
  std::mt19937_64 rng(3);
  const auto a = random_matrix(7, 6, rng);
  EXPECT_EQ(motb::matmul(a, Tensor<double>::identity(6)), a);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(motb::matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), motb::DimensionError);
}

TEST(Kernels, ParallelMatchesSerialBitExact) {
  std::mt19937_64 rng(5);
  const std::size_t m = 33, k = 17, n = 29;
  const auto a = random_matrix(m, k, rng), b = random_matrix(k, n, rng), bt = random_matrix(n, k, rng);
  const auto at = random_matrix(k, m, rng);
  std::vector<double> x(m * n), y(m * n);
  motb::kernels::matmul<double>(a.data(), b.data(), x, m, k, n);
  motb::kernels::serial::matmul<double>(a.data(), b.data(), y, m, k, n);
  EXPECT_EQ(x, y);
  motb::kernels::matmul_nt<double>(a.data(), bt.data(), x, m, k, n);
  motb::kernels::serial::matmul_nt<double>(a.data(), bt.data(), y, m, k, n);
  EXPECT_EQ(x, y);
  motb::kernels::matmul_tn<double>(at.data(), b.data(), x, m, k, n);
  motb::kernels::serial::matmul_tn<double>(at.data(), b.data(), y, m, k, n);
  EXPECT_EQ(x, y);
  auto s1 = random_matrix(m, n, rng).storage();
  auto s2 = s1;
  motb::kernels::softmax_rows<double>(s1, m, n);
  motb::kernels::serial::softmax_rows<double>(s2, m, n);
  EXPECT_EQ(s1, s2);
}

TEST(Softmax, SymmetricRow) {
  const auto s = motb::softmax_rows(Tensor<double>::matrix(1, 2, {0, 0}));
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(Softmax, NegativeInfinityMapsToExactZero) {
  const double inf = std::numeric_limits<double>::infinity();
  const auto s = motb::softmax_rows(Tensor<double>::matrix(1, 2, {1, -inf}));
  EXPECT_EQ(s[0], 1.0);
  EXPECT_EQ(s[1], 0.0);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = motb::softmax_rows(random_matrix(3, 4, rng));
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_GE(s(r, c), 0.0);
        sum += s(r, c);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, AllMaskedRowIsDegenerate) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_THROW(motb::softmax_rows(Tensor<double>::matrix(1, 2, {-inf, -inf})), motb::DegenerateRowError);
}

TEST(L2Normalize, ForcedArithmetic) {
  const auto v = motb::l2_normalize(Tensor<double>::vector({3, 4}));
  EXPECT_NEAR(v[0], 0.6, 1e-15);
  EXPECT_NEAR(v[1], 0.8, 1e-15);
  EXPECT_EQ(motb::l2_normalize(Tensor<double>::vector({0, 0, 1})), Tensor<double>::vector({0, 0, 1}));
}

TEST(L2Normalize, ZeroVectorThrows) {
  EXPECT_THROW(motb::l2_normalize(Tensor<double>::vector({0, 0})), motb::ZeroVectorError);
}

TEST(L2Normalize, UnitNormAndIdempotent) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = motb::l2_normalize(random_matrix(1, 8, rng));
    double n = 0.0;
    for (double x : v.storage()) n += x * x;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
    const auto w = motb::l2_normalize(v);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], w[i], 1e-6);
  }
}

TEST(Layernorm, ConstantRowGoesToZero) {
  const auto y = motb::layernorm(Tensor<double>::matrix(1, 3, {2, 2, 2}), Tensor<double>::vector({1, 1, 1}),
                                 Tensor<double>::vector({0, 0, 0}));
  for (double v : y.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Layernorm, AlreadyNormalized) {
  const auto y = motb::layernorm(Tensor<double>::matrix(1, 2, {1, -1}), Tensor<double>::vector({1, 1}),
                                 Tensor<double>::vector({0, 0}));
  EXPECT_NEAR(y[0], 1.0, 1e-5);
  EXPECT_NEAR(y[1], -1.0, 1e-5);
}

TEST(Layernorm, MomentsBeforeAffine) {
  std::mt19937_64 rng(2);
  const auto x = random_matrix(4, 16, rng);
  const auto y = motb::layernorm(x, Tensor<double>({16}, 1.0), Tensor<double>({16}, 0.0));
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 16; ++c) mean += y(r, c) / 16.0;
    for (std::size_t c = 0; c < 16; ++c) var += (y(r, c) - mean) * (y(r, c) - mean) / 16.0;
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-4);  // eps = 1e-5 in the denominator
  }
}

}  // namespace
