#pragma once

// Randomized invariant suites run by `sbnet_lab properties`.

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sbnet/analysis.hpp"
#include "sbnet/conv.hpp"
#include "sbnet/data.hpp"
#include "sbnet/gradcheck.hpp"
#include "sbnet/network.hpp"
#include "sbnet/spatial_bottleneck.hpp"
#include "sbnet/training.hpp"

namespace sbnet {

struct PropertyResult {
  std::string name;
  bool passed = false;
  double metric = 0.0;  // worst observed error, or 0/1 for exact checks
  int cases = 0;
  std::string detail;
  std::uint64_t counterexample_seed = 0;  // seed of the first failing case, if any
};

// Rows a (mod stride) and columns b (mod stride) of x.
inline Tensor4 subsample(const Tensor4& x, int stride, int a, int b) {
  const std::int64_t ho = x.h() > a ? (x.h() - a + stride - 1) / stride : 0;
  const std::int64_t wo = x.w() > b ? (x.w() - b + stride - 1) / stride : 0;
  Tensor4 out({x.n(), x.c(), ho, wo});
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t c = 0; c < x.c(); ++c)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) out(n, c, i, j) = x(n, c, a + i * stride, b + j * stride);
  return out;
}

namespace detail {

struct RandomConv {
  Tensor4 x;
  ConvKernel k;
  ConvSpec spec;
};

inline RandomConv random_conv(Rng& rng, int max_hw = 9) {
  const int stride = 2 + static_cast<int>(rng.below(2));
  ConvSpec spec = ConvSpec::strided(1 + static_cast<int>(rng.below(3)), 1 + static_cast<int>(rng.below(3)),
                                    rng.below(2) == 0 ? 3 : 1 + 2 * static_cast<int>(rng.below(3)), stride,
                                    static_cast<int>(rng.below(static_cast<std::uint64_t>(stride))),
                                    static_cast<int>(rng.below(static_cast<std::uint64_t>(stride))));
  const auto h = static_cast<std::int64_t>(stride + rng.below(static_cast<std::uint64_t>(max_hw - stride + 1)));
  const auto w = static_cast<std::int64_t>(stride + rng.below(static_cast<std::uint64_t>(max_hw - stride + 1)));
  const auto n = static_cast<std::int64_t>(1 + rng.below(2));
  return {fill_random({n, spec.in_channels, h, w}, rng, Gaussian{}), ConvKernel::he_init(spec, rng), spec};
}

template <class F>
PropertyResult run_cases(std::string name, int cases, std::uint64_t seed, double tol, F&& one) {
  PropertyResult r{std::move(name), true, 0.0, cases, {}, 0};
  for (int i = 0; i < cases; ++i) {
    const std::uint64_t case_seed = seed * 1000003ull + static_cast<std::uint64_t>(i);
    Rng rng(case_seed);
    const double err = one(rng);
    r.metric = std::max(r.metric, err);
    if (!(err <= tol) && r.passed) {
      r.passed = false;
      r.counterexample_seed = case_seed;
    }
  }
  std::ostringstream os;
  os << "max error " << r.metric << " (tolerance " << tol << ")";
  r.detail = os.str();
  return r;
}

}  // namespace detail

/// Strided-offset conv against the dense conv subsampled at the same offset.
inline PropertyResult property_equivalence(int cases, std::uint64_t seed) {
  auto r = detail::run_cases("strided conv == subsampled dense conv", cases, seed, 0.0, [](Rng& rng) {
    const auto c = detail::random_conv(rng);
    ConvSpec dense = c.spec;
    dense.stride = 1;
    dense.offset_h = dense.offset_w = 0;
    const Tensor4 want = subsample(conv2d_forward(c.x, c.k, dense), c.spec.stride, c.spec.offset_h, c.spec.offset_w);
    return bitwise_equal(conv2d_forward(c.x, c.k, c.spec), want) ? 0.0 : 1.0;
  });
  r.detail = std::string("bit-exact: ") + (r.passed ? "true" : "false");
  return r;
}

/// <conv(x), y> == <x, deconv(y)>.
inline PropertyResult property_adjoint(int cases, std::uint64_t seed) {
  return detail::run_cases("conv/deconv adjoint identity", cases, seed, 1e-12, [](Rng& rng) {
    const auto c = detail::random_conv(rng);
    const Tensor4 z = conv2d_forward(c.x, c.k, c.spec);
    const Tensor4 y = fill_random(z.shape(), rng, Gaussian{});
    const double lhs = dot(z, y);
    const double rhs = dot(c.x, deconv2d_forward(y, c.k, c.spec, c.x.h(), c.x.w()));
    const double scale = std::max({std::abs(lhs), std::abs(rhs), 1e-300});
    return std::abs(lhs - rhs) / scale;
  });
}

namespace detail {

inline SBModule random_sb(Rng& rng, InnerNonlinearity inner) {
  static const char* patterns[] = {"1/4", "2/4", "3/4", "full"};
  return SBModule::make(make_pattern(patterns[rng.below(4)]), 1 + static_cast<int>(rng.below(3)),
                        1 + static_cast<int>(rng.below(3)), 1 + static_cast<int>(rng.below(3)), inner,
                        rng.below(3) == 0 ? DownsampleMode::avgpool_conv : DownsampleMode::strided_conv, rng);
}

}  // namespace detail

/// SB(alpha x + beta y) == alpha SB(x) + beta SB(y) without an inner nonlinearity.
inline PropertyResult property_sb_linearity(int cases, std::uint64_t seed) {
  return detail::run_cases("linear SB superposition", cases, seed, 1e-12, [](Rng& rng) {
    SBModule m = detail::random_sb(rng, InnerNonlinearity::none);
    const Shape4 s{2, m.in_channels, static_cast<std::int64_t>(3 + rng.below(6)),
                   static_cast<std::int64_t>(3 + rng.below(6))};
    const Tensor4 x = fill_random(s, rng, Gaussian{});
    const Tensor4 y = fill_random(s, rng, Gaussian{});
    const double alpha = rng.gaussian();
    const double beta = rng.gaussian();
    const Tensor4 lhs = sb_forward(axpy_map(alpha, x, beta, y), m, Mode::eval).value;
    const Tensor4 rhs = axpy_map(alpha, sb_forward(x, m, Mode::eval).value, beta, sb_forward(y, m, Mode::eval).value);
    return max_abs_diff(lhs, rhs) / std::max(max_abs(rhs), 1e-300);
  });
}

/// A linear SB output is the sum of its per-offset contributions.
inline PropertyResult property_sb_decomposition(int cases, std::uint64_t seed) {
  return detail::run_cases("SB output == sum of offset contributions", cases, seed, 1e-12, [](Rng& rng) {
    SBModule m = detail::random_sb(rng, InnerNonlinearity::none);
    const Tensor4 x = fill_random({1, m.in_channels, static_cast<std::int64_t>(3 + rng.below(6)),
                                   static_cast<std::int64_t>(3 + rng.below(6))},
                                  rng, Gaussian{});
    const Tensor4 z = sb_forward(x, m, Mode::eval).value;
    Tensor4 sum(z.shape());
    for (const Offset& o : m.pattern.offsets()) sum += sb_contribution(x, m, o);
    return max_abs_diff(z, sum) / std::max(max_abs(z), 1e-300);
  });
}

/// Central-difference checks of every primitive and of SB modules.
inline PropertyResult property_gradients(int cases, std::uint64_t seed) {
  return detail::run_cases("gradients match central differences", cases, seed, 1e-5, [](Rng& rng) {
    double worst = 0.0;
    const auto c = detail::random_conv(rng, 7);
    worst = std::max(worst, gradcheck(
                                [spec = c.spec](std::span<const Tensor4> t) {
                                  return conv2d(t[0], ConvKernel{t[1]}, spec);
                                },
                                {c.x, c.k.weights})
                                .max_rel_error());
    const Tensor4 y = fill_random(conv2d_forward(c.x, c.k, c.spec).shape(), rng, Gaussian{});
    worst = std::max(worst, gradcheck(
                                [spec = c.spec, h = c.x.h(), w = c.x.w()](std::span<const Tensor4> t) {
                                  return deconv2d(t[0], ConvKernel{t[1]}, spec, h, w);
                                },
                                {y, c.k.weights})
                                .max_rel_error());
    const Tensor4 x = fill_random({3, 2, 5, 4}, rng, Gaussian{});
    worst = std::max(worst, gradcheck(
                                [](std::span<const Tensor4> t) {
                                  BatchNormState st(t[0].c());
                                  st.gamma = t[1];
                                  st.beta = t[2];
                                  return batchnorm(t[0], st, Mode::train);
                                },
                                {x, fill_random({1, 2, 1, 1}, rng, Uniform{0.5, 1.5}),
                                 fill_random({1, 2, 1, 1}, rng, Gaussian{})})
                                .max_rel_error());
    worst = std::max(worst, gradcheck([](std::span<const Tensor4> t) { return relu(t[0]); }, {x}).max_rel_error());
    worst = std::max(worst,
                     gradcheck([](std::span<const Tensor4> t) { return avgpool2d(t[0], 2, 1, 0); }, {x}).max_rel_error());
    for (InnerNonlinearity inner : {InnerNonlinearity::none, InnerNonlinearity::bn_relu}) {
      const SBModule base = detail::random_sb(rng, inner);
      const Tensor4 xs = fill_random({2, base.in_channels, 5, 6}, rng, Gaussian{});
      std::vector<Tensor4> in{xs, base.conv.weights, base.deconv.weights};
      if (inner == InnerNonlinearity::bn_relu) {
        in.push_back(base.inner_bn.gamma);
        in.push_back(base.inner_bn.beta);
      }
      worst = std::max(worst, gradcheck(
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
                                  .max_rel_error());
    }
    return worst;
  });
}

/// Executed multiply-accumulates equal the cost model for random blocks.
inline PropertyResult property_mac_model(int cases, std::uint64_t seed) {
  return detail::run_cases("executed MACs == cost model", cases, seed, 0.0, [](Rng& rng) {
    static const char* patterns[] = {"1/4", "2/4", "3/4", "full"};
    BlockSpec b;
    b.kind = rng.below(2) == 0 ? BlockKind::rRB : BlockKind::cRB;
    b.bottleneck = 2;
    b.in_channels = b.channels = 4 * static_cast<int>(1 + rng.below(3));
    if (rng.below(3) > 0) b = to_sb(b, make_pattern(patterns[rng.below(4)]));
    const auto hw = static_cast<std::int64_t>(4 + rng.below(6));
    ResidualBlock blk = Network::make_block("b", b, rng);
    const Tensor4 x = fill_random({1, b.in_channels, hw, hw}, rng, Gaussian{});
    MacCounter counter;
    (void)blk.forward(x, Mode::eval);
    return counter.count() == block_costs(b, hw, hw).total_macs() ? 0.0 : 1.0;
  });
}

inline PropertyResult property_normalization(int cases, std::uint64_t seed) {
  return detail::run_cases("normalization round trip", cases, seed, 1e-12, [](Rng& rng) {
    const Tensor4 raw = fill_random({4, 3, 5, 5}, rng, Uniform{0.0, 1.0});
    const Normalization nz = Normalization::fit(raw);
    Tensor4 t = raw;
    nz.apply(t);
    nz.invert(t);
    return max_abs_diff(t, raw);
  });
}

inline PropertyResult property_augmentation(int cases, std::uint64_t seed) {
  return detail::run_cases("augmentation crop/flip identities", cases, seed, 0.0, [](Rng& rng) {
    const Tensor4 x = fill_random({2, 3, 8, 8}, rng, Gaussian{});
    const Tensor4 padded = reflect_pad(x, 4);
    Tensor4 centre(x.shape());
    for (std::int64_t n = 0; n < x.n(); ++n) crop_into(padded, n, 4, 4, false, centre, n);
    bool ok = bitwise_equal(centre, x) && bitwise_equal(hflip(hflip(x)), x);
    for (std::int64_t c = 0; c < x.c(); ++c)
      for (std::int64_t h = 0; h < x.h(); ++h) ok = ok && padded(0, c, h + 4, 3) == x(0, c, h, 1);
    return ok ? 0.0 : 1.0;
  });
}

inline std::vector<PropertyResult> run_properties(std::uint64_t seed, int cases) {
  const int light = std::max(1, cases / 10);
  return {property_equivalence(cases, seed),     property_adjoint(cases, seed),
          property_sb_linearity(cases, seed),    property_sb_decomposition(cases, seed),
          property_gradients(light, seed),       property_mac_model(light, seed),
          property_normalization(light, seed),   property_augmentation(light, seed)};
}

}  // namespace sbnet
