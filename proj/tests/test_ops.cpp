#include <gtest/gtest.h>

#include <cmath>

#include "ducseg/ops/activation.hpp"
#include "ducseg/ops/batchnorm.hpp"
#include "ducseg/ops/conv.hpp"
#include "ducseg/ops/loss.hpp"
#include "ducseg/ops/resize.hpp"
#include "support/oracles.hpp"

using namespace ducseg;

namespace {

Tensor4<double> rnd(Shape4 s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return seeded_fill<double>(s, seed, Uniform{lo, hi});
}

ConvParams<double> random_conv(const ConvSpec& spec, SplitMix64& rng) {
  auto p = init_conv_params<double>(spec, rng);
  for (auto& b : p.bias) b = rng.uniform(-0.5, 0.5);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution

TEST(Conv2d, OutputExtentFormula) {
  const ConvSpec s{3, 2, 2, 1, 1, 1};
  EXPECT_EQ(s.output_extent(11), (11 + 2 - 2 * 2 - 1) / 2 + 1);
}

TEST(Conv2d, IdentityKernel) {
  const auto x = rnd({2, 1, 5, 4}, 1);
  ConvParams<double> p{Tensor4<double>({1, 1, 1, 1}, 1.0), {0.0}};
  EXPECT_EQ(conv2d_forward(x, pointwise(1, 1), p), x);
  const auto g = rnd(x.shape(), 2);
  EXPECT_EQ(conv2d_backward(x, pointwise(1, 1), p, g).grad_x, g);
}

TEST(Conv2d, Dilation24On49IsSinglePixel) {
  const ConvSpec s{3, 1, 24, 0, 1, 1};
  SplitMix64 rng(3);
  const auto p = random_conv(s, rng);
  EXPECT_EQ(conv2d_forward(rnd({1, 1, 49, 49}, 4), s, p).shape(), (Shape4{1, 1, 1, 1}));
  EXPECT_THROW(conv2d_forward(rnd({1, 1, 48, 48}, 4), s, p), ShapeError);
}

TEST(Conv2d, RejectsChannelMismatch) {
  SplitMix64 rng(1);
  const auto p = random_conv(conv3x3(3, 2), rng);
  EXPECT_THROW(conv2d_forward(rnd({1, 2, 5, 5}, 1), conv3x3(3, 2), p), ShapeError);
}

TEST(Conv2d, MatchesNaiveOracle) {
  SplitMix64 rng(11);
  for (int t = 0; t < 60; ++t) {
    const int k = 1 + 2 * static_cast<int>(rng.below(3));
    const ConvSpec s{k, 1 + static_cast<int>(rng.below(3)), 1 + static_cast<int>(rng.below(3)),
                     static_cast<int>(rng.below(4)), 1 + static_cast<int>(rng.below(4)),
                     1 + static_cast<int>(rng.below(4))};
    const int size = s.effective_extent() + static_cast<int>(rng.below(8));
    const auto x = rnd({1 + static_cast<int>(rng.below(2)), s.in_channels, size, size + 1}, rng.next());
    const auto p = random_conv(s, rng);
    const auto fast = conv2d_forward(x, s, p);
    const auto slow = oracle::conv2d(x, s, p);
    ASSERT_EQ(fast.shape(), slow.shape());
    EXPECT_LE(max_abs_diff(fast, slow), 1e-12);
  }
}

TEST(Conv2d, BitIdenticalToOracleAtUnitDilation) {
  SplitMix64 rng(12);
  for (int t = 0; t < 10; ++t) {
    const ConvSpec s = conv3x3(3, 4);
    const auto x = rnd({2, 3, 9, 7}, rng.next());
    const auto p = random_conv(s, rng);
    EXPECT_EQ(conv2d_forward(x, s, p), oracle::conv2d(x, s, p));
  }
}

TEST(Conv2d, ZeroGradOutGivesZeroGrads) {
  SplitMix64 rng(5);
  const ConvSpec s = conv3x3(2, 3, 2);
  const auto x = rnd({1, 2, 6, 6}, 1);
  const auto p = random_conv(s, rng);
  const auto g = conv2d_backward(x, s, p, Tensor4<double>({1, 3, 3, 3}));
  for (double v : g.grad_x.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.params.weight.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.params.bias) EXPECT_EQ(v, 0.0);
}

// ---------------------------------------------------------------------------
// ReLU

TEST(Relu, Definition) {
  const Tensor4<double> x({1, 1, 1, 3}, std::vector<double>{-1.0, 0.0, 2.0});
  EXPECT_EQ(relu_forward(x).storage(), (std::vector<double>{0.0, 0.0, 2.0}));
  const auto pos = rnd({1, 2, 3, 3}, 1, 0.0, 1.0);
  EXPECT_EQ(relu_forward(pos), pos);
  const Tensor4<double> g({1, 1, 1, 3}, 1.0);
  EXPECT_EQ(relu_backward(x, g).storage(), (std::vector<double>{0.0, 0.0, 1.0}));
}

// ---------------------------------------------------------------------------
// Batch norm

TEST(BatchNorm, ConstantChannelNormalizesToZero) {
  auto st = make_batchnorm<double>(2);
  const Tensor4<double> x({2, 2, 3, 3}, 4.5);
  const auto y = batchnorm_forward(x, st, Mode::train);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  auto st = make_batchnorm<double>(2);
  st.gamma = {0.0, 0.0};
  st.beta = {0.25, -1.5};
  const auto y = batchnorm_forward(rnd({2, 2, 3, 3}, 1), st, Mode::train);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 9; ++i) {
      EXPECT_EQ(y.plane(n, 0)[i], 0.25);
      EXPECT_EQ(y.plane(n, 1)[i], -1.5);
    }
}

TEST(BatchNorm, TrainModeMatchesTwoPassOracle) {
  const auto x = rnd({3, 2, 4, 5}, 9, -2.0, 3.0);
  auto st = make_batchnorm<double>(2);
  st.gamma = {1.5, -0.5};
  st.beta = {0.1, 0.2};
  const auto y = batchnorm_forward(x, st, Mode::train);
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 20; ++i) mean += x.plane(n, c)[i];
    mean /= 60.0;
    double var = 0.0;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 20; ++i) var += (x.plane(n, c)[i] - mean) * (x.plane(n, c)[i] - mean);
    var /= 60.0;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 20; ++i) {
        const double want = st.gamma[c] * (x.plane(n, c)[i] - mean) / std::sqrt(var + 1e-5) +
                            st.beta[c];
        EXPECT_NEAR(y.plane(n, c)[i], want, 1e-12);
      }
    EXPECT_NEAR(st.running_mean[c], 0.1 * mean, 1e-12);
    EXPECT_NEAR(st.running_var[c], 0.9 + 0.1 * var, 1e-12);
  }
}

TEST(BatchNorm, EvalModeUsesRunningStatsAndLeavesThem) {
  auto st = make_batchnorm<double>(1);
  st.running_mean = {2.0};
  st.running_var = {4.0};
  const Tensor4<double> x({1, 1, 1, 2}, std::vector<double>{2.0, 4.0});
  const auto y = batchnorm_forward(x, st, Mode::eval);
  EXPECT_NEAR(y[0], 0.0, 1e-12);
  EXPECT_NEAR(y[1], 2.0 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_EQ(st.running_mean[0], 2.0);
  EXPECT_EQ(st.running_var[0], 4.0);
}

// ---------------------------------------------------------------------------
// Bilinear resize

TEST(BilinearResize, SameSizeIsIdentity) {
  const auto x = rnd({2, 3, 5, 7}, 1);
  EXPECT_EQ(bilinear_resize_forward(x, 5, 7), x);
}

TEST(BilinearResize, SinglePixelBroadcasts) {
  const Tensor4<double> x({1, 1, 1, 1}, 0.75);
  const auto y = bilinear_resize_forward(x, 6, 3);
  for (double v : y.data()) EXPECT_EQ(v, 0.75);
}

TEST(BilinearResize, MatchesPointwiseCoordinateFormula) {
  const Tensor4<double> x({1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
  const auto y = bilinear_resize_forward(x, 4, 4);
  auto coord = [](int i) { return std::clamp((i + 0.5) * 2.0 / 4.0 - 0.5, 0.0, 1.0); };
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double sy = coord(i), sx = coord(j);
      // f(y, x) = 2y + x is bilinear, so interpolation reproduces it exactly.
      EXPECT_NEAR(y(0, 0, i, j), 2.0 * sy + sx, 1e-15);
    }
  EXPECT_EQ(y(0, 0, 0, 0), 0.0);
  EXPECT_EQ(y(0, 0, 3, 3), 3.0);
  EXPECT_EQ(y(0, 0, 1, 1), 0.75);
}

TEST(BilinearResize, ConstantRoundTrip) {
  const Tensor4<double> x({1, 2, 5, 3}, -1.25);
  const auto back = bilinear_resize_forward(bilinear_resize_forward(x, 13, 11), 5, 3);
  EXPECT_LE(max_abs_diff(back, x), 1e-6);
}

// ---------------------------------------------------------------------------
// Cross-entropy

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  const Tensor4<double> z({2, 5, 3, 3}, 0.3);
  LabelMap y(2, 3, 3, 4);
  EXPECT_NEAR(softmax_cross_entropy(z, y).loss, std::log(5.0), 1e-12);
}

TEST(CrossEntropy, SaturatedLogitGivesNearZero) {
  Tensor4<double> z({1, 3, 2, 2});
  LabelMap y(1, 2, 2, 1);
  for (int i = 0; i < 4; ++i) z.plane(0, 1)[i] = 50.0;
  EXPECT_LT(softmax_cross_entropy(z, y).loss, 1e-9);
}

TEST(CrossEntropy, LargeLogitsStayFinite) {
  Tensor4<double> z({1, 2, 1, 1}, std::vector<double>{1000.0, -1000.0});
  LabelMap y(1, 1, 1, 1);
  const auto l = softmax_cross_entropy(z, y);
  EXPECT_NEAR(l.loss, 2000.0, 1e-9);
  EXPECT_TRUE(l.grad.all_finite());
}

TEST(CrossEntropy, Errors) {
  const Tensor4<double> z({1, 3, 2, 2});
  EXPECT_THROW(softmax_cross_entropy(z, LabelMap(1, 2, 2, 3)), ShapeError);
  EXPECT_THROW(softmax_cross_entropy(z, LabelMap(1, 2, 2, kDefaultIgnoreIndex)), NumericalError);
  EXPECT_THROW(softmax_cross_entropy(z, LabelMap(1, 2, 3, 0)), ShapeError);
}

TEST(CrossEntropy, GradientRowsSumToZeroAndIgnoredPixelsAreZero) {
  const auto z = rnd({2, 4, 3, 3}, 3, -3.0, 3.0);
  LabelMap y(2, 3, 3, 0);
  SplitMix64 rng(3);
  for (auto& v : y.data) v = rng.coin(0.2) ? kDefaultIgnoreIndex : static_cast<int>(rng.below(4));
  y.data[0] = 2;
  const auto l = softmax_cross_entropy(z, y);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 9; ++i) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += l.grad.plane(n, k)[i];
      EXPECT_NEAR(s, 0.0, 1e-15);
      if (y.data[static_cast<std::size_t>(n) * 9 + i] == kDefaultIgnoreIndex) {
        for (int k = 0; k < 4; ++k) EXPECT_EQ(l.grad.plane(n, k)[i], 0.0);
      }
    }
}

TEST(Argmax, FirstMaximumWins) {
  const Tensor4<double> s({1, 3, 1, 2}, std::vector<double>{1, 0, 2, 5, 2, 5});
  const auto a = argmax_channels(s);
  EXPECT_EQ(a.data, (std::vector<std::int32_t>{1, 1}));
}
