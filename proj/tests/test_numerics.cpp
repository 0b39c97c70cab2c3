#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "headline/numerics.hpp"

using namespace headline;

TEST(Softmax, UniformForEqualLogits) {
  const auto p = softmax(std::vector<double>{0, 0, 0});
  for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, HandCase) {
  const auto p = softmax(std::vector<double>{std::log(2.0), 0.0});
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, SingleElement) { EXPECT_EQ(softmax(std::vector<double>{5})[0], 1.0); }

TEST(Softmax, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(softmax(std::vector<double>{}), ContractError);
  EXPECT_THROW(softmax(std::vector<double>{1.0, NAN}), NumericError);
  EXPECT_THROW(softmax(std::vector<double>{INFINITY, 0.0}), NumericError);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + trial % 17);
    for (auto& x : v) x = u(rng);
    const auto p = softmax(v);
    double s = 0;
    for (double x : p) s += x;
    EXPECT_NEAR(s, 1.0, 1e-6);
    const double shift = u(rng);
    auto w = v;
    for (auto& x : w) x += shift;
    const auto q = softmax(w);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-6);
  }
}

TEST(Softmax, FloatStaysStableForLargeLogits) {
  const auto p = softmax(std::vector<float>{1000.f, 999.f});
  EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
  EXPECT_NEAR(p[0] + p[1], 1.0f, 1e-6f);
}

TEST(CrossEntropy, Cases) {
  EXPECT_EQ(cross_entropy(std::vector<double>{1, 0}, 0), 0.0);
  EXPECT_NEAR(cross_entropy(std::vector<double>{0.5, 0.5}, 1), std::log(2.0), 1e-15);
  const std::vector<double> uniform(40000, 1.0 / 40000);
  EXPECT_NEAR(cross_entropy(uniform, 123), 10.5966, 1e-4);
}

TEST(CrossEntropy, FlooredAndRangeChecked) {
  EXPECT_NEAR(cross_entropy(std::vector<double>{1, 0}, 1), -std::log(1e-12), 1e-9);
  EXPECT_THROW(cross_entropy(std::vector<double>{1, 0}, 2), ContractError);
}

TEST(CrossEntropy, MatchesLogSumExpIdentity) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(8);
    for (auto& x : v) x = u(rng);
    const std::size_t t = trial % 8;
    EXPECT_NEAR(cross_entropy(softmax(v), t), logsumexp<double>(v) - v[t], 1e-5);
  }
}

TEST(Argmax, FirstMaximumWins) { EXPECT_EQ(argmax(std::vector<double>{1, 3, 3, 2}), 1u); }

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), ContractError);
  Tensor<double> t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.at(1, 2), 6);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Kernels, GemvAndTranspose) {
  Tensor<double> w({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  std::vector<double> x{1, 0, -1}, y{10, 20};
  gemv_acc<double>(w, x, y);
  EXPECT_EQ(y, (std::vector<double>{8, 18}));
  std::vector<double> dx(3, 0);
  gemv_t_acc<double>(w, std::vector<double>{1, 1}, dx);
  EXPECT_EQ(dx, (std::vector<double>{5, 7, 9}));
  Tensor<double> dw({2, 3});
  ger_acc<double>(dw, std::vector<double>{1, 2}, x);
  EXPECT_EQ(dw.storage(), (std::vector<double>{1, 0, -1, 2, 0, -2}));
}

namespace {

GradCheckReport check_scalar(double w0, double (*f)(double), double claimed_gradient) {
  Tensor<double> w({1}, std::vector<double>{w0});
  std::vector<Tensor<double>*> params{&w};
  auto loss = [&] { return f(w[0]); };
  auto grad = [&] {
    return std::vector<Tensor<double>>{Tensor<double>({1}, std::vector<double>{claimed_gradient})};
  };
  return check_gradient(loss, grad, std::span<Tensor<double>* const>(params));
}

}  // namespace

TEST(GradCheck, QuadraticPasses) {
  const auto r = check_scalar(3.0, [](double w) { return w * w; }, 6.0);
  EXPECT_LT(r.max_relative_error, 1e-8);
  EXPECT_EQ(r.num_checked, 1u);
}

TEST(GradCheck, DoubledGradientIsCaught) {
  const auto r = check_scalar(3.0, [](double w) { return w * w; }, 12.0);
  EXPECT_NEAR(r.max_relative_error, 1.0 / 3.0, 1e-6);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
  const auto r = check_scalar(3.0, [](double) { return 7.0; }, 0.0);
  EXPECT_EQ(r.max_relative_error, 0.0);
}

TEST(GradCheck, NondeterministicLossIsAnOracleViolation) {
  Tensor<double> w({1}, std::vector<double>{1});
  std::vector<Tensor<double>*> params{&w};
  int calls = 0;
  auto loss = [&] { return double(++calls); };
  auto grad = [&] { return std::vector<Tensor<double>>{Tensor<double>({1})}; };
  EXPECT_THROW(check_gradient(loss, grad, std::span<Tensor<double>* const>(params)), OracleViolation);
}

TEST(GradCheck, SampledCoordinatesAreDistinctAndCounted) {
  Tensor<double> w({10}, 1.0);
  std::vector<Tensor<double>*> params{&w};
  auto loss = [&] {
    double s = 0;
    for (double v : w.values()) s += v * v;
    return s;
  };
  auto grad = [&] {
    Tensor<double> g({10});
    for (std::size_t i = 0; i < 10; ++i) g[i] = 2 * w[i];
    return std::vector<Tensor<double>>{g};
  };
  const auto r = check_gradient(loss, grad, std::span<Tensor<double>* const>(params), 1e-5, 4, 9);
  EXPECT_EQ(r.num_checked, 4u);
  EXPECT_LT(r.max_relative_error, 1e-8);
  for (double v : w.values()) EXPECT_EQ(v, 1.0);  // restored exactly
}
