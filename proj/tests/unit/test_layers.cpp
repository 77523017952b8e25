#include <gtest/gtest.h>

#include <cmath>
#include <tuple>

#include "dbpn/layers.hpp"
#include "dbpn/ops.hpp"
#include "dbpn/parallel.hpp"
#include "support/oracles.hpp"

using namespace dbpn;
using namespace dbpn::testing;

namespace {

void expect_close(const Tensor<double>& a, const Tensor<double>& b, double rtol) {
  ASSERT_EQ(a.shape(), b.shape());
  double scale = 0.0;
  for (double v : b.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_NEAR(a[i], b[i], rtol * std::max(std::abs(b[i]), scale * 1e-3)) << "at " << i;
  }
}

Var<double> cvar(Tensor<double> t) { return Var<double>::constant(std::move(t)); }

const ConvGeometry kGeometries[] = {{1, 1, 0}, {3, 1, 1}, {3, 2, 1}, {6, 2, 2}, {8, 4, 2}, {12, 8, 2}, {5, 1, 0}, {4, 2, 1}};

}  // namespace

TEST(Conv2d, OnesKernelCountsOverlap) {
  auto x = cvar(Tensor<double>({1, 1, 4, 4}, 1.0));
  auto w = cvar(Tensor<double>({1, 1, 3, 3}, 1.0));
  const auto& y = conv2d(x, w, Var<double>(), {3, 1, 1}).value();
  const double expected[4][4] = {{4, 6, 6, 4}, {6, 9, 9, 6}, {6, 9, 9, 6}, {4, 6, 6, 4}};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y.at(0, 0, i, j), expected[i][j]);
}

TEST(Conv2d, ScaleTwoHalvesSize) {
  auto x = Var<float>::constant(Tensor<float>({1, 64, 32, 32}));
  auto w = Var<float>::constant(Tensor<float>({18, 64, 6, 6}));
  EXPECT_EQ(conv2d(x, w, Var<float>(), ScaleConfig::for_scale(2).geometry).shape(), (Shape{1, 18, 16, 16}));
}

TEST(Conv2d, IdentityKernel) {
  Pcg32 rng(1);
  auto x = cvar(random_tensor({2, 1, 5, 7}, rng));
  auto w = cvar(Tensor<double>({1, 1, 1, 1}, 1.0));
  EXPECT_EQ(conv2d(x, w, Var<double>(), {1, 1, 0}).value(), x.value());
}

TEST(Conv2d, ChannelMismatchThrows) {
  auto x = cvar(Tensor<double>({1, 2, 4, 4}));
  auto w = cvar(Tensor<double>({1, 3, 3, 3}));
  EXPECT_THROW(conv2d(x, w, Var<double>(), {3, 1, 1}), ShapeError);
}

TEST(Conv2d, NonIntegralOutputThrows) {
  auto x = cvar(Tensor<double>({1, 1, 5, 5}));
  auto w = cvar(Tensor<double>({1, 1, 6, 6}));
  EXPECT_THROW(conv2d(x, w, Var<double>(), {6, 2, 2}), ShapeError);
}

TEST(Deconv2d, ScaleConfigSizes) {
  for (auto [s, in] : {std::pair{2, 16}, {4, 8}, {8, 4}}) {
    auto x = Var<float>::constant(Tensor<float>({1, 3, static_cast<std::size_t>(in), static_cast<std::size_t>(in)}));
    const ConvGeometry g = ScaleConfig::for_scale(s).geometry;
    auto w = Var<float>::constant(Tensor<float>({3, 5, g.kernel, g.kernel}));
    EXPECT_EQ(deconv2d(x, w, Var<float>(), g).shape(), (Shape{1, 5, 32, 32})) << "scale " << s;
  }
}

TEST(Deconv2d, ChannelMismatchThrows) {
  auto x = cvar(Tensor<double>({1, 2, 4, 4}));
  auto w = cvar(Tensor<double>({3, 1, 6, 6}));
  EXPECT_THROW(deconv2d(x, w, Var<double>(), {6, 2, 2}), ShapeError);
}

TEST(ScaleConfig, Table) {
  EXPECT_EQ(ScaleConfig::for_scale(2).geometry, (ConvGeometry{6, 2, 2}));
  EXPECT_EQ(ScaleConfig::for_scale(4).geometry, (ConvGeometry{8, 4, 2}));
  EXPECT_EQ(ScaleConfig::for_scale(8).geometry, (ConvGeometry{12, 8, 2}));
  EXPECT_THROW(ScaleConfig::for_scale(3), ConfigError);
}

TEST(ScaleConfig, RoundTripShapeLaw) {
  for (int s : {2, 4, 8}) {
    const ConvGeometry g = ScaleConfig::for_scale(s).geometry;
    for (std::size_t h = 1; h <= 64; ++h) {
      const std::size_t up = g.deconv_out(h);
      EXPECT_EQ(up, static_cast<std::size_t>(s) * h);
      EXPECT_EQ(g.conv_out(up), h);
    }
  }
}

TEST(ConvOracle, RandomCasesMatchNaiveLoops) {
  Pcg32 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const ConvGeometry g = kGeometries[rng.below(std::size(kGeometries))];
    const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(4), cout = 1 + rng.below(4);
    std::size_t h = 1 + rng.below(9), w = 1 + rng.below(9);
    // Conv needs an integral output: choose the input as a deconv output of some size.
    h = g.deconv_out(h);
    w = g.deconv_out(w);
    auto x = random_tensor({n, cin, h, w}, rng);
    auto wt = random_tensor({cout, cin, g.kernel, g.kernel}, rng);
    auto b = random_tensor({1, cout, 1, 1}, rng);
    const auto fast = conv2d(cvar(x), cvar(wt), cvar(b), g).value();
    expect_close(fast, naive_conv(x, wt, &b, g), 1e-6);

    auto xd = random_tensor({n, cin, 1 + rng.below(7), 1 + rng.below(7)}, rng);
    auto wd = random_tensor({cin, cout, g.kernel, g.kernel}, rng);
    const auto fast_d = deconv2d(cvar(xd), cvar(wd), cvar(b), g).value();
    expect_close(fast_d, naive_deconv(xd, wd, &b, g), 1e-6);
  }
}

TEST(ConvOracle, AdjointIdentity) {
  Pcg32 rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const ConvGeometry g = kGeometries[rng.below(std::size(kGeometries))];
    const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(4), cout = 1 + rng.below(4);
    const std::size_t lh = 1 + rng.below(8), lw = 1 + rng.below(8);
    auto x = random_tensor({n, cin, g.deconv_out(lh), g.deconv_out(lw)}, rng);
    auto y = random_tensor({n, cout, lh, lw}, rng);
    auto w = random_tensor({cout, cin, g.kernel, g.kernel}, rng);
    // conv weight (out, in, k, k) doubles as the transposed weight mapping out -> in.
    const double lhs = dot(conv2d(cvar(x), cvar(w), Var<double>(), g).value(), y);
    const double rhs = dot(x, deconv2d(cvar(y), cvar(w), Var<double>(), g).value());
    EXPECT_NEAR(lhs, rhs, 1e-5 * std::abs(lhs) + 1e-12) << "trial " << trial;
  }
}

TEST(ConvOracle, Linearity) {
  Pcg32 rng(5);
  const ConvGeometry g{6, 2, 2};
  auto x = random_tensor({2, 3, 8, 8}, rng);
  auto y = random_tensor({2, 3, 8, 8}, rng);
  auto w = cvar(random_tensor({4, 3, 6, 6}, rng));
  const double alpha = 0.7, beta = -1.3;
  Tensor<double> mix(x.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * x[i] + beta * y[i];
  const auto lhs = conv2d(cvar(mix), w, Var<double>(), g).value();
  const auto cx = conv2d(cvar(x), w, Var<double>(), g).value();
  const auto cy = conv2d(cvar(y), w, Var<double>(), g).value();
  Tensor<double> rhs(lhs.shape());
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = alpha * cx[i] + beta * cy[i];
  expect_close(lhs, rhs, 1e-6);
}

TEST(ConvOracle, ThreadCountDoesNotChangeResults) {
  Pcg32 rng(9);
  auto x = Var<float>::parameter(random_tensor({6, 4, 16, 16}, rng).cast<float>());
  auto w = Var<float>::parameter(random_tensor({5, 4, 6, 6}, rng).cast<float>());
  auto run = [&] {
    x.zero_grad();
    w.zero_grad();
    auto y = conv2d(x, w, Var<float>(), {6, 2, 2});
    backward(sum(y));
    return std::tuple{y.value(), x.grad(), w.grad()};
  };
  set_thread_count(1);
  const auto one = run();
  set_thread_count(3);
  const auto three = run();
  set_thread_count(0);
  EXPECT_EQ(std::get<0>(one), std::get<0>(three));
  EXPECT_EQ(std::get<1>(one), std::get<1>(three));
  // Weight gradients are summed per chunk, so only agreement to rounding is expected.
  for (std::size_t i = 0; i < std::get<2>(one).size(); ++i) {
    EXPECT_NEAR(std::get<2>(one)[i], std::get<2>(three)[i], 1e-3f);
  }
}

TEST(Prelu, Examples) {
  auto x = Var<double>::parameter(Tensor<double>({1, 1, 1, 2}, std::vector<double>{3.0, -2.0}));
  auto a = Var<double>::parameter(Tensor<double>({1, 1, 1, 1}, 0.25));
  auto y = prelu(x, a);
  EXPECT_EQ(y.value()[0], 3.0);
  EXPECT_EQ(y.value()[1], -0.5);
  backward(sum(y));
  EXPECT_EQ(a.grad()[0], -2.0);
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 0.25);
}

TEST(Prelu, PerChannelSlopes) {
  auto x = Var<double>::constant(Tensor<double>({1, 2, 1, 1}, -4.0));
  auto a = Var<double>::constant(Tensor<double>({1, 2, 1, 1}, std::vector<double>{0.5, 0.1}));
  const auto& y = prelu(x, a).value();
  EXPECT_EQ(y[0], -2.0);
  EXPECT_NEAR(y[1], -0.4, 1e-15);
}

TEST(Prelu, SlopeMismatchThrows) {
  auto x = Var<double>::constant(Tensor<double>({1, 3, 2, 2}));
  auto a = Var<double>::constant(Tensor<double>({1, 2, 1, 1}));
  EXPECT_THROW(prelu(x, a), ShapeError);
}

TEST(HeInit, StdFormula) {
  EXPECT_NEAR(he_std(3, 8), std::sqrt(2.0 / 72.0), 1e-15);
  EXPECT_NEAR(he_std(1, 2), 1.0, 1e-15);
  EXPECT_NEAR(he_std(8, 64), std::sqrt(2.0 / 4096.0), 1e-12);
  EXPECT_NEAR(he_std(8, 64), 0.0221, 1e-4);
}

TEST(HeInit, EmpiricalStd) {
  // 8 x 1390 x 3 x 3 = 100080 weights with target std for f=3, n=8.
  ConvLayer<double> layer(ConvSpec{1390, 8, {3, 1, 1}, false, true});
  Pcg32 rng(11);
  he_init(layer, rng);
  const auto w = layer.weight().value().data();
  ASSERT_GE(w.size(), 100000u);
  double mean = 0.0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(w.size()));
  EXPECT_NEAR(sd / he_std(3, 8), 1.0, 0.02);
  EXPECT_NEAR(mean, 0.0, 0.005);
  for (double v : layer.bias().value().data()) EXPECT_EQ(v, 0.0);
  for (double v : layer.slopes().value().data()) EXPECT_EQ(v, 0.25);
}

TEST(ParamCount, OneByOneLayer) {
  EXPECT_EQ((ConvSpec{32, 1, {1, 1, 0}, false, false}.param_count()), 33u);
  EXPECT_EQ((ConvSpec{32, 1, {1, 1, 0}, false, true}.param_count()), 34u);
  EXPECT_EQ(ConvLayer<float>(ConvSpec{32, 1, {1, 1, 0}, false, false}).slopes().defined(), false);
}

TEST(ConvLayer, WeightLayouts) {
  EXPECT_EQ((ConvSpec{3, 5, {6, 2, 2}, false, true}.weight_shape()), (Shape{5, 3, 6, 6}));
  EXPECT_EQ((ConvSpec{3, 5, {6, 2, 2}, true, true}.weight_shape()), (Shape{3, 5, 6, 6}));
}
