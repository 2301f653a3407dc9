#pragma once

// Spatial bottleneck modules: a stride-K offset convolution that shrinks the
// map, an optional BN+ReLU, and the stride-K deconvolution that restores it.
// Several offsets may be sampled; they share one conv and one deconv kernel
// and their restored maps are summed.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sbnet/conv.hpp"
#include "sbnet/grad.hpp"
#include "sbnet/layers.hpp"
#include "sbnet/tensor.hpp"

namespace sbnet {

struct Offset {
  int a = 0;  // row residue
  int b = 0;  // column residue
  friend bool operator==(const Offset&, const Offset&) = default;
};

/// Stride K plus an ordered list of distinct offsets in [0, K)^2.
class SamplingPattern {
 public:
  SamplingPattern() : SamplingPattern(2, {{0, 0}}) {}
  SamplingPattern(int stride, std::vector<Offset> offsets)
      : stride_(stride), offsets_(std::move(offsets)) {
    if (stride_ < 1) throw std::invalid_argument("pattern: stride must be >= 1");
    if (offsets_.empty()) throw std::invalid_argument("pattern: empty subset set");
    for (std::size_t i = 0; i < offsets_.size(); ++i) {
      const Offset o = offsets_[i];
      if (o.a < 0 || o.a >= stride_ || o.b < 0 || o.b >= stride_)
        throw std::invalid_argument("pattern: offset (" + std::to_string(o.a) + "," +
                                    std::to_string(o.b) + ") outside [0," +
                                    std::to_string(stride_) + ")");
      for (std::size_t j = 0; j < i; ++j)
        if (offsets_[j] == o) throw std::invalid_argument("pattern: duplicate offset");
    }
  }

  [[nodiscard]] int stride() const { return stride_; }
  [[nodiscard]] const std::vector<Offset>& offsets() const { return offsets_; }
  [[nodiscard]] std::size_t size() const { return offsets_.size(); }
  [[nodiscard]] double density() const {
    return static_cast<double>(offsets_.size()) / static_cast<double>(stride_ * stride_);
  }

  /// The same pattern with one more offset appended.
  [[nodiscard]] SamplingPattern with_offset(Offset o) const {
    std::vector<Offset> more = offsets_;
    more.push_back(o);
    return {stride_, std::move(more)};
  }

  /// "1/4", "2/4", "3/4" or "full" when the pattern is one of the named ones,
  /// otherwise a listing such as "K2:(0,0)(1,0)".
  [[nodiscard]] std::string name() const;

  friend bool operator==(const SamplingPattern&, const SamplingPattern&) = default;

 private:
  int stride_;
  std::vector<Offset> offsets_;
};

/// Named sampling patterns. For K = 2: "1/4" {(0,0)}, "2/4" {(0,0),(1,1)},
/// "3/4" {(0,0),(0,1),(1,1)}, "full" all four in row-major order. For other
/// strides only "full" and "1/4" (the single offset (0,0)) are defined.
inline SamplingPattern make_pattern(std::string_view name, int stride = 2) {
  if (stride < 1) throw std::invalid_argument("pattern: stride must be >= 1");
  if (name == "full") {
    std::vector<Offset> all;
    for (int a = 0; a < stride; ++a)
      for (int b = 0; b < stride; ++b) all.push_back({a, b});
    return {stride, std::move(all)};
  }
  if (name == "1/4" || name == "single") return {stride, {{0, 0}}};
  if (stride == 2) {
    if (name == "2/4" || name == "chessboard") return {2, {{0, 0}, {1, 1}}};
    if (name == "3/4") return {2, {{0, 0}, {0, 1}, {1, 1}}};
  }
  throw std::invalid_argument("unknown sampling pattern '" + std::string(name) + "' for stride " +
                              std::to_string(stride));
}

inline std::string SamplingPattern::name() const {
  for (const char* n : {"1/4", "2/4", "3/4", "full"}) {
    try {
      if (make_pattern(n, stride_) == *this) return n;
    } catch (const std::invalid_argument&) {
    }
  }
  std::string s = "K" + std::to_string(stride_) + ":";
  for (const Offset& o : offsets_) s += "(" + std::to_string(o.a) + "," + std::to_string(o.b) + ")";
  return s;
}

enum class InnerNonlinearity { none, bn_relu };
enum class DownsampleMode { strided_conv, avgpool_conv };

inline std::string to_string(DownsampleMode m) {
  return m == DownsampleMode::strided_conv ? "strided_conv" : "avgpool_conv";
}
inline DownsampleMode parse_downsample_mode(std::string_view s) {
  if (s == "strided_conv") return DownsampleMode::strided_conv;
  if (s == "avgpool_conv") return DownsampleMode::avgpool_conv;
  throw std::invalid_argument("unknown downsample_mode '" + std::string(s) + "'");
}

struct SBModule {
  SamplingPattern pattern;
  int kernel = 3;
  int in_channels = 1;   // D1
  int mid_channels = 1;  // width of the reduced map
  int out_channels = 1;  // D2
  InnerNonlinearity inner = InnerNonlinearity::none;
  DownsampleMode downsample = DownsampleMode::strided_conv;
  ConvKernel conv;    // (mid, in, S, S)
  ConvKernel deconv;  // conv-view weights (mid, out, S, S)
  BatchNormState inner_bn{1};

  /// He-initialised module; the deconv's fan-in is taken on its conv view.
  static SBModule make(SamplingPattern pattern, int in_channels, int mid_channels,
                       int out_channels, InnerNonlinearity inner, DownsampleMode downsample,
                       Rng& rng, int kernel = 3) {
    SBModule m;
    m.pattern = std::move(pattern);
    m.kernel = kernel;
    m.in_channels = in_channels;
    m.mid_channels = mid_channels;
    m.out_channels = out_channels;
    m.inner = inner;
    m.downsample = downsample;
    m.conv = ConvKernel::he_init(m.conv_spec({0, 0}), rng);
    m.deconv = ConvKernel::he_init(m.deconv_spec({0, 0}), rng);
    m.inner_bn = BatchNormState(mid_channels);
    return m;
  }

  /// The reducing convolution for one offset. In avgpool mode it runs densely
  /// on the pooled map.
  [[nodiscard]] ConvSpec conv_spec(Offset o) const {
    if (downsample == DownsampleMode::avgpool_conv)
      return ConvSpec::dense(in_channels, mid_channels, kernel);
    return ConvSpec::strided(in_channels, mid_channels, kernel, pattern.stride(), o.a, o.b);
  }
  /// The restoring deconvolution, described by the convolution it is the adjoint of.
  [[nodiscard]] ConvSpec deconv_spec(Offset o) const {
    return ConvSpec::strided(out_channels, mid_channels, kernel, pattern.stride(), o.a, o.b);
  }

  [[nodiscard]] std::uint64_t param_count() const {
    std::uint64_t p = conv.weights.size() + deconv.weights.size();
    if (inner == InnerNonlinearity::bn_relu) p += 2 * static_cast<std::uint64_t>(mid_channels);
    return p;
  }

  /// Multiply-accumulates of one forward pass on an h x w map (per image).
  [[nodiscard]] std::uint64_t macs(std::int64_t h, std::int64_t w) const {
    std::uint64_t total = 0;
    for (const Offset& o : pattern.offsets()) {
      const ConvSpec d = deconv_spec(o);
      const std::uint64_t positions = static_cast<std::uint64_t>(d.out_h(h) * d.out_w(w));
      total += positions * static_cast<std::uint64_t>(in_channels * mid_channels) * kernel * kernel;
      total += d.macs(h, w);
    }
    return total;
  }

  void validate() const {
    if (kernel < 1 || in_channels < 1 || mid_channels < 1 || out_channels < 1)
      throw std::invalid_argument("sb: bad module geometry");
    if (conv.weights.shape() != Shape4{mid_channels, in_channels, kernel, kernel})
      throw ShapeError("sb: conv kernel " + conv.weights.shape().str() + " does not match module");
    if (deconv.weights.shape() != Shape4{mid_channels, out_channels, kernel, kernel})
      throw ShapeError("sb: deconv kernel " + deconv.weights.shape().str() +
                       " does not match module");
    if (inner == InnerNonlinearity::bn_relu && inner_bn.channels() != mid_channels)
      throw ShapeError("sb: inner batchnorm width does not match module");
  }
};

struct SBGrads {
  Tensor4 input;
  Tensor4 conv;
  Tensor4 deconv;
  std::optional<Tensor4> gamma;
  std::optional<Tensor4> beta;
};

namespace detail {

// The reduced map of one offset, with the pullback back to X and the conv weights.
inline GradPair sb_reduce(const Tensor4& x, const SBModule& m, Offset o) {
  if (m.downsample == DownsampleMode::strided_conv) return conv2d(x, m.conv, m.conv_spec(o));
  GradPair pooled = avgpool2d(x, m.pattern.stride(), o.a, o.b);
  GradPair y = conv2d(pooled.value, m.conv, m.conv_spec(o));
  GradPair out{std::move(y.value), {}};
  out.pullback = [pool_pb = std::move(pooled.pullback), conv_pb = std::move(y.pullback)](
                     const Tensor4& dy) {
    Cotangents c = conv_pb(dy);
    c.input = pool_pb(c.input).input;
    return c;
  };
  return out;
}

}  // namespace detail

/// Z = sum over offsets of deconv(inner(conv(X))), summed in pattern order.
/// Pullback params = {d conv, d deconv} followed by {d gamma, d beta} when the
/// module has an inner BN+ReLU. The inner batch statistics are taken jointly
/// over every sampled offset.
inline GradPair sb_forward(const Tensor4& x, SBModule& m, Mode mode = Mode::train) {
  m.validate();
  if (x.c() != m.in_channels)
    throw ShapeError("sb: input has " + std::to_string(x.c()) + " channels, module expects " +
                     std::to_string(m.in_channels));
  const auto& offsets = m.pattern.offsets();
  const std::size_t count = offsets.size();
  const std::int64_t h = x.h();
  const std::int64_t w = x.w();

  std::vector<Pullback> reduce_pb;
  std::vector<Tensor4> reduced;
  std::vector<Shape4> shapes;
  for (const Offset& o : offsets) {
    GradPair r = detail::sb_reduce(x, m, o);
    shapes.push_back(r.value.shape());
    reduced.push_back(std::move(r.value));
    reduce_pb.push_back(std::move(r.pullback));
  }

  Pullback bn_pb;
  Pullback relu_pb;
  if (m.inner == InnerNonlinearity::bn_relu) {
    GradPair b = batchnorm(concat_spatial(reduced), m.inner_bn, mode);
    GradPair r = relu(b.value);
    reduced = split_spatial(r.value, shapes);
    bn_pb = std::move(b.pullback);
    relu_pb = std::move(r.pullback);
  }

  Tensor4 z({x.n(), m.out_channels, h, w});
  std::vector<Pullback> restore_pb;
  for (std::size_t s = 0; s < count; ++s) {
    GradPair d = deconv2d(reduced[s], m.deconv, m.deconv_spec(offsets[s]), h, w);
    z += d.value;
    restore_pb.push_back(std::move(d.pullback));
  }

  GradPair out{std::move(z), {}};
  out.pullback = [reduce_pb = std::move(reduce_pb), restore_pb = std::move(restore_pb),
                  bn_pb = std::move(bn_pb), relu_pb = std::move(relu_pb), shapes,
                  in_shape = x.shape(), conv_shape = m.conv.weights.shape(),
                  deconv_shape = m.deconv.weights.shape()](const Tensor4& dz) {
    if (dz.shape().n != in_shape.n || dz.h() != in_shape.h || dz.w() != in_shape.w ||
        dz.c() != deconv_shape.c)
      throw ShapeError("sb backward: cotangent " + dz.shape().str() + " does not match output");
    Tensor4 dconv(conv_shape);
    Tensor4 ddeconv(deconv_shape);
    std::vector<Tensor4> dmid;
    for (const Pullback& pb : restore_pb) {
      Cotangents c = pb(dz);
      ddeconv += c.params[0];
      dmid.push_back(std::move(c.input));
    }
    std::vector<Tensor4> params;
    if (bn_pb) {
      Cotangents r = relu_pb(concat_spatial(dmid));
      Cotangents b = bn_pb(r.input);
      dmid = split_spatial(b.input, shapes);
      params = std::move(b.params);
    }
    Tensor4 dx(in_shape);
    for (std::size_t s = 0; s < reduce_pb.size(); ++s) {
      Cotangents c = reduce_pb[s](dmid[s]);
      dx += c.input;
      dconv += c.params[0];
    }
    params.insert(params.begin(), {std::move(dconv), std::move(ddeconv)});
    return Cotangents{std::move(dx), std::move(params)};
  };
  return out;
}

/// Reverse-mode cotangents of sb_forward at X. The module is not modified.
inline SBGrads sb_backward(const Tensor4& x, const SBModule& m, const Tensor4& dz,
                           Mode mode = Mode::train) {
  SBModule scratch = m;
  Cotangents c = sb_forward(x, scratch, mode).pullback(dz);
  SBGrads g{std::move(c.input), std::move(c.params[0]), std::move(c.params[1]), {}, {}};
  if (c.params.size() == 4) {
    g.gamma = std::move(c.params[2]);
    g.beta = std::move(c.params[3]);
  }
  return g;
}

/// The average-pool downsampling form: per offset a K x K average pool
/// anchored at the offset, a stride-1 convolution, then the strided deconv.
inline GradPair sb_avgpool_variant_forward(const Tensor4& x, SBModule& m, Mode mode = Mode::train) {
  if (m.downsample != DownsampleMode::avgpool_conv)
    throw std::invalid_argument("sb: module is not in avgpool_conv mode");
  return sb_forward(x, m, mode);
}

/// The restored map of a single offset, deconv(conv(X)). Only defined for
/// modules without an inner nonlinearity, where the module output is exactly
/// the sum of these terms.
inline Tensor4 sb_contribution(const Tensor4& x, const SBModule& m, Offset o) {
  m.validate();
  if (m.inner != InnerNonlinearity::none)
    throw std::invalid_argument("sb: per-offset contribution needs a linear module");
  const Tensor4 y = detail::sb_reduce(x, m, o).value;
  return deconv2d_forward(y, m.deconv, m.deconv_spec(o), x.h(), x.w());
}

}  // namespace sbnet
