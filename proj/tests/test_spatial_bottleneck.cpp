#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sbnet/gradcheck.hpp"
#include "sbnet/spatial_bottleneck.hpp"

using namespace sbnet;

namespace {

Tensor4 gaussian(Shape4 s, Rng& rng) { return fill_random(s, rng, Gaussian{0.0, 1.0}); }

SBModule linear_module(const SamplingPattern& p, int d1, int dmid, int d2, Rng& rng,
                       DownsampleMode mode = DownsampleMode::strided_conv) {
  return SBModule::make(p, d1, dmid, d2, InnerNonlinearity::none, mode, rng);
}

// Gradcheck over (X, conv, deconv[, gamma, beta]) of a module.
double sb_gradcheck(const SBModule& base, const Tensor4& x) {
  std::vector<Tensor4> in{x, base.conv.weights, base.deconv.weights};
  if (base.inner == InnerNonlinearity::bn_relu) {
    in.push_back(base.inner_bn.gamma);
    in.push_back(base.inner_bn.beta);
  }
  return gradcheck(
             [&base](std::span<const Tensor4> t) {
               SBModule m = base;
               m.conv.weights = t[1];
               m.deconv.weights = t[2];
               if (t.size() == 5) {
                 m.inner_bn.gamma = t[3];
                 m.inner_bn.beta = t[4];
               }
               return sb_forward(t[0], m, Mode::train);
             },
             std::move(in))
      .max_rel_error();
}

}  // namespace

TEST(Pattern, NamedPatterns) {
  EXPECT_EQ(make_pattern("1/4").offsets(), (std::vector<Offset>{{0, 0}}));
  EXPECT_EQ(make_pattern("2/4").offsets(), (std::vector<Offset>{{0, 0}, {1, 1}}));
  EXPECT_EQ(make_pattern("3/4").offsets(), (std::vector<Offset>{{0, 0}, {0, 1}, {1, 1}}));
  EXPECT_EQ(make_pattern("full").offsets(), (std::vector<Offset>{{0, 0}, {0, 1}, {1, 0}, {1, 1}}));
  EXPECT_DOUBLE_EQ(make_pattern("1/4").density(), 0.25);
  EXPECT_DOUBLE_EQ(make_pattern("3/4").density(), 0.75);
  EXPECT_EQ(make_pattern("2/4").name(), "2/4");
  EXPECT_THROW(make_pattern("5/4"), std::invalid_argument);
  EXPECT_THROW(SamplingPattern(2, {}), std::invalid_argument);
  EXPECT_THROW(SamplingPattern(2, {{0, 0}, {0, 0}}), std::invalid_argument);
  EXPECT_THROW(SamplingPattern(2, {{2, 0}}), std::invalid_argument);
}

TEST(SB, OutputKeepsSpatialSize) {
  Rng rng(1);
  SBModule m = linear_module(make_pattern("2/4"), 3, 4, 5, rng);
  const Tensor4 z = sb_forward(gaussian({2, 3, 7, 6}, rng), m).value;
  EXPECT_EQ(z.shape(), (Shape4{2, 5, 7, 6}));
}

TEST(SB, LinearWithoutInnerNonlinearity) {
  Rng rng(2);
  for (const char* name : {"1/4", "2/4", "3/4", "full"}) {
    SBModule m = linear_module(make_pattern(name), 2, 3, 2, rng);
    const Tensor4 x1 = gaussian({2, 2, 8, 7}, rng), x2 = gaussian({2, 2, 8, 7}, rng);
    const Tensor4 lhs = sb_forward(axpy_map(1.7, x1, -0.4, x2), m).value;
    const Tensor4 rhs = axpy_map(1.7, sb_forward(x1, m).value, -0.4, sb_forward(x2, m).value);
    EXPECT_LT(max_abs_diff(lhs, rhs) / max_abs(rhs), 1e-12) << name;
  }
}

TEST(SB, FullPatternEqualsDenseConvThenDenseAdjoint) {
  Rng rng(3);
  SBModule m = linear_module(make_pattern("full"), 2, 3, 2, rng);
  const Shape4 in{1, 2, 6, 6};
  const oracle::Matrix a = oracle::conv_matrix(in, m.conv.weights, 1, 0, 0);
  const oracle::Matrix b = oracle::conv_matrix(in, m.deconv.weights, 1, 0, 0);
  const oracle::Matrix op = oracle::multiply(oracle::transpose(b), a);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor4 x = gaussian(in, rng);
    const auto want = oracle::apply(op, oracle::flat(x));
    const auto got = oracle::flat(sb_forward(x, m).value);
    EXPECT_LT(oracle::max_abs_diff(got, want) / oracle::max_abs(want), 1e-12);
  }
}

TEST(SB, ChessboardIgnoresOffParityPositions) {
  Rng rng(4);
  SBModule m = linear_module(make_pattern("2/4"), 2, 3, 2, rng);
  const Tensor4 x = gaussian({1, 2, 6, 7}, rng);
  const Shape4 mid{1, 3, 6, 7};
  Tensor4 ydense = oracle::conv(x, m.conv.weights, 1, 0, 0);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 6; ++r)
      for (int q = 0; q < 7; ++q)
        if ((r + q) % 2 == 1) ydense(0, c, r, q) = 0.0;
  const oracle::Matrix b = oracle::conv_matrix({1, 2, 6, 7}, m.deconv.weights, 1, 0, 0);
  const auto want = oracle::apply(oracle::transpose(b), oracle::flat(ydense));
  const auto got = oracle::flat(sb_forward(x, m).value);
  EXPECT_EQ(ydense.shape(), mid);
  EXPECT_LT(oracle::max_abs_diff(got, want) / oracle::max_abs(want), 1e-12);
}

TEST(SB, AddingAnOffsetOnlyAddsItsContribution) {
  Rng rng(5);
  SBModule m = linear_module(make_pattern("1/4"), 3, 2, 3, rng);
  const Tensor4 x = gaussian({2, 3, 9, 8}, rng);
  for (Offset extra : {Offset{1, 1}, Offset{0, 1}, Offset{1, 0}}) {
    const Tensor4 before = sb_forward(x, m).value;
    SBModule bigger = m;
    bigger.pattern = m.pattern.with_offset(extra);
    const Tensor4 after = sb_forward(x, bigger).value;
    EXPECT_TRUE(bitwise_equal(after, before + sb_contribution(x, m, extra)));
    m = bigger;
  }
}

TEST(SB, SingleOffsetGradsMatchComposition) {
  Rng rng(6);
  SBModule m = linear_module(make_pattern("1/4"), 2, 3, 2, rng);
  const Tensor4 x = gaussian({2, 2, 6, 5}, rng);
  const Tensor4 dz = gaussian({2, 2, 6, 5}, rng);
  const SBGrads g = sb_backward(x, m, dz);
  const ConvSpec cs = m.conv_spec({0, 0});
  const ConvSpec ds = m.deconv_spec({0, 0});
  const Tensor4 y = conv2d_forward(x, m.conv, cs);
  const ConvGrads dd = deconv2d_backward(y, m.deconv, ds, dz);
  const ConvGrads dc = conv2d_backward(x, m.conv, cs, dd.input);
  EXPECT_TRUE(bitwise_equal(g.input, dc.input));
  EXPECT_TRUE(bitwise_equal(g.conv, dc.weights));
  EXPECT_TRUE(bitwise_equal(g.deconv, dd.weights));
  EXPECT_FALSE(g.gamma.has_value());
}

TEST(SB, ZeroCotangentGivesZeroGrads) {
  Rng rng(7);
  const SBModule m = SBModule::make(make_pattern("2/4"), 2, 2, 2, InnerNonlinearity::bn_relu,
                                    DownsampleMode::strided_conv, rng);
  const SBGrads g = sb_backward(gaussian({2, 2, 6, 6}, rng), m, zeros({2, 2, 6, 6}));
  EXPECT_EQ(max_abs(g.input), 0.0);
  EXPECT_EQ(max_abs(g.conv), 0.0);
  EXPECT_EQ(max_abs(g.deconv), 0.0);
  EXPECT_EQ(max_abs(*g.gamma), 0.0);
  EXPECT_EQ(max_abs(*g.beta), 0.0);
}

TEST(SB, GradcheckChessboard) {
  Rng rng(8);
  const Tensor4 x = gaussian({2, 2, 6, 7}, rng);
  EXPECT_LT(sb_gradcheck(linear_module(make_pattern("2/4"), 2, 3, 2, rng), x), 1e-5);
  const SBModule bn = SBModule::make(make_pattern("2/4"), 2, 3, 2, InnerNonlinearity::bn_relu,
                                     DownsampleMode::strided_conv, rng);
  EXPECT_LT(sb_gradcheck(bn, x), 1e-5);
}

TEST(SB, GradcheckAvgPoolVariant) {
  Rng rng(9);
  const Tensor4 x = gaussian({2, 2, 7, 6}, rng);
  const SBModule m = linear_module(make_pattern("3/4"), 2, 2, 3, rng, DownsampleMode::avgpool_conv);
  EXPECT_LT(sb_gradcheck(m, x), 1e-5);
}

TEST(SB, AvgPoolVariantAddsNoParameters) {
  Rng rng(10);
  const SBModule pooled =
      linear_module(make_pattern("2/4"), 8, 4, 8, rng, DownsampleMode::avgpool_conv);
  const SBModule strided = linear_module(make_pattern("2/4"), 8, 4, 8, rng);
  EXPECT_EQ(pooled.param_count(), strided.param_count());
  EXPECT_EQ(pooled.param_count(), 2u * 8u * 4u * 9u);
}

TEST(SB, AvgPoolVariantRequiresMode) {
  Rng rng(11);
  SBModule m = linear_module(make_pattern("2/4"), 2, 2, 2, rng);
  EXPECT_THROW(sb_avgpool_variant_forward(zeros({1, 2, 4, 4}), m), std::invalid_argument);
}

TEST(SB, ExecutedMacsMatchModel) {
  Rng rng(12);
  for (const char* name : {"1/4", "2/4", "3/4", "full"}) {
    SBModule m = linear_module(make_pattern(name), 4, 3, 5, rng);
    const Tensor4 x = gaussian({1, 4, 8, 8}, rng);
    MacCounter counter;
    (void)sb_forward(x, m);
    EXPECT_EQ(counter.count(), m.macs(8, 8)) << name;
  }
  SBModule one = linear_module(make_pattern("1/4"), 4, 3, 5, rng);
  SBModule two = linear_module(make_pattern("2/4"), 4, 3, 5, rng);
  EXPECT_EQ(two.macs(16, 16), 2 * one.macs(16, 16));
  EXPECT_EQ(one.macs(16, 16), 8u * 8u * (4u * 3u * 9u + 3u * 5u * 9u));
}

TEST(SB, Errors) {
  Rng rng(13);
  SBModule m = linear_module(make_pattern("2/4"), 2, 2, 2, rng);
  EXPECT_THROW(sb_forward(zeros({1, 3, 4, 4}), m), ShapeError);
  SBModule bn = SBModule::make(make_pattern("2/4"), 2, 2, 2, InnerNonlinearity::bn_relu,
                               DownsampleMode::strided_conv, rng);
  EXPECT_THROW(sb_contribution(zeros({1, 2, 4, 4}), bn, {0, 0}), std::invalid_argument);
}
