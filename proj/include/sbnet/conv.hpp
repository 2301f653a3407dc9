#pragma once

// Offset-strided convolution and its adjoint (the strided deconvolution).
//
// Both operators live on the dense, zero-padded coordinate frame of the
// full-resolution map. A strided convolution with stride K and offset (a, b)
// evaluates the dense S x S convolution only at rows a, a+K, ... and columns
// b, b+K, ..., storing the results compactly. The deconvolution is defined as
// the exact adjoint of that map: every compact entry scatters a weighted
// S x S patch back onto the dense frame, overlaps add, and anything landing in
// the padding is cropped.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sbnet/gemm.hpp"
#include "sbnet/grad.hpp"
#include "sbnet/tensor.hpp"

namespace sbnet {

struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  int offset_h = 0;  // a: rows a (mod stride) are evaluated
  int offset_w = 0;  // b: columns b (mod stride) are evaluated
  int in_channels = 1;
  int out_channels = 1;
  int padding = -1;  // < 0 means kernel / 2

  [[nodiscard]] int pad() const { return padding < 0 ? kernel / 2 : padding; }

  void validate() const {
    if (kernel < 1) throw std::invalid_argument("conv: kernel size must be >= 1");
    if (stride < 1) throw std::invalid_argument("conv: stride must be >= 1");
    if (offset_h < 0 || offset_h >= stride || offset_w < 0 || offset_w >= stride)
      throw std::invalid_argument("conv: offset (" + std::to_string(offset_h) + "," +
                                  std::to_string(offset_w) + ") outside [0," +
                                  std::to_string(stride) + ")");
    if (in_channels < 1 || out_channels < 1)
      throw std::invalid_argument("conv: channel counts must be >= 1");
  }

  // Number of evaluated positions along an axis of the given dense extent.
  [[nodiscard]] std::int64_t out_extent(std::int64_t extent, int offset) const {
    return extent > offset ? (extent - offset + stride - 1) / stride : 0;
  }
  [[nodiscard]] std::int64_t out_h(std::int64_t h) const { return out_extent(h, offset_h); }
  [[nodiscard]] std::int64_t out_w(std::int64_t w) const { return out_extent(w, offset_w); }

  [[nodiscard]] std::int64_t taps() const {
    return static_cast<std::int64_t>(in_channels) * kernel * kernel;
  }
  [[nodiscard]] Shape4 weight_shape() const { return {out_channels, in_channels, kernel, kernel}; }

  // Multiply-accumulates of one forward pass over an h x w dense input (per image).
  [[nodiscard]] std::uint64_t macs(std::int64_t h, std::int64_t w) const {
    return static_cast<std::uint64_t>(out_h(h) * out_w(w) * taps() * out_channels);
  }

  [[nodiscard]] ConvSpec with_offset(int a, int b) const {
    ConvSpec s = *this;
    s.offset_h = a;
    s.offset_w = b;
    return s;
  }

  static ConvSpec dense(int in, int out, int kernel) {
    return ConvSpec{kernel, 1, 0, 0, in, out, -1};
  }
  static ConvSpec strided(int in, int out, int kernel, int stride, int a = 0, int b = 0) {
    return ConvSpec{kernel, stride, a, b, in, out, -1};
  }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Weights of shape (out_channels, in_channels, S, S). No bias: every
/// convolution in the networks built here is followed by batch normalization.
struct ConvKernel {
  Tensor4 weights;

  /// He (fan-in) gaussian initialisation.
  static ConvKernel he_init(const ConvSpec& spec, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(spec.taps()));
    return ConvKernel{fill_random(spec.weight_shape(), rng, Gaussian{0.0, std})};
  }
};

struct ConvGrads {
  Tensor4 input;
  Tensor4 weights;
};

namespace detail {

inline void check_kernel(const ConvKernel& k, const ConvSpec& spec) {
  spec.validate();
  if (k.weights.shape() != spec.weight_shape())
    throw ShapeError("conv: weights " + k.weights.shape().str() + " do not match spec " +
                     spec.weight_shape().str());
}

inline void check_extent(const ConvSpec& spec, std::int64_t h, std::int64_t w) {
  if (spec.stride > 1 && (spec.stride > h || spec.stride > w))
    throw ShapeError("conv: stride " + std::to_string(spec.stride) + " exceeds spatial extent " +
                     std::to_string(h) + "x" + std::to_string(w));
}

// col[(ci*S + ky)*S + kx][i*wo + j] = x[ci][a + i*K - P + ky][b + j*K - P + kx] (0 outside).
inline void im2col(const double* x, std::int64_t channels, std::int64_t h, std::int64_t w,
                   const ConvSpec& spec, std::int64_t ho, std::int64_t wo, double* col) {
  const int s = spec.kernel;
  const int k = spec.stride;
  const int p = spec.pad();
  const std::int64_t npos = ho * wo;
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    const double* xc = x + ci * h * w;
    for (int ky = 0; ky < s; ++ky)
      for (int kx = 0; kx < s; ++kx) {
        double* row = col + ((ci * s + ky) * s + kx) * npos;
        for (std::int64_t i = 0; i < ho; ++i) {
          const std::int64_t r = spec.offset_h + i * k - p + ky;
          double* dst = row + i * wo;
          if (r < 0 || r >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = xc + r * w;
          for (std::int64_t j = 0; j < wo; ++j) {
            const std::int64_t c = spec.offset_w + j * k - p + kx;
            dst[j] = (c >= 0 && c < w) ? src[c] : 0.0;
          }
        }
      }
  }
}

// Adjoint of im2col: scatter-add columns back onto the dense frame.
inline void col2im_add(const double* col, std::int64_t channels, std::int64_t h, std::int64_t w,
                       const ConvSpec& spec, std::int64_t ho, std::int64_t wo, double* x) {
  const int s = spec.kernel;
  const int k = spec.stride;
  const int p = spec.pad();
  const std::int64_t npos = ho * wo;
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    double* xc = x + ci * h * w;
    for (int ky = 0; ky < s; ++ky)
      for (int kx = 0; kx < s; ++kx) {
        const double* row = col + ((ci * s + ky) * s + kx) * npos;
        for (std::int64_t i = 0; i < ho; ++i) {
          const std::int64_t r = spec.offset_h + i * k - p + ky;
          if (r < 0 || r >= h) continue;
          double* dst = xc + r * w;
          const double* src = row + i * wo;
          for (std::int64_t j = 0; j < wo; ++j) {
            const std::int64_t c = spec.offset_w + j * k - p + kx;
            if (c >= 0 && c < w) dst[c] += src[j];
          }
        }
      }
  }
}

// dW += dz_n[out x npos] * col^T, accumulated over the batch.
inline Tensor4 conv_weight_grad(const Tensor4& x, const Tensor4& dz, const ConvSpec& spec) {
  const std::int64_t ho = dz.h();
  const std::int64_t wo = dz.w();
  const std::int64_t npos = ho * wo;
  const std::int64_t taps = spec.taps();
  Tensor4 dw(spec.weight_shape());
  std::vector<double> col(static_cast<std::size_t>(taps * npos));
  std::vector<double> col_t(col.size());
  for (std::int64_t n = 0; n < x.n(); ++n) {
    im2col(x.plane(n, 0), x.c(), x.h(), x.w(), spec, ho, wo, col.data());
    for (std::int64_t t = 0; t < taps; ++t)
      for (std::int64_t q = 0; q < npos; ++q) col_t[q * taps + t] = col[t * npos + q];
    gemm_accumulate(spec.out_channels, taps, npos, MatView{dz.plane(n, 0), npos, 1}, col_t.data(),
                    taps, dw.ptr(), taps);
  }
  return dw;
}

}  // namespace detail

/// Strided-offset convolution. Output shape (n, D2, ceil((H-a)/K), ceil((W-b)/K)).
inline Tensor4 conv2d_forward(const Tensor4& x, const ConvKernel& k, const ConvSpec& spec) {
  detail::check_kernel(k, spec);
  if (x.c() != spec.in_channels)
    throw ShapeError("conv: input has " + std::to_string(x.c()) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  detail::check_extent(spec, x.h(), x.w());
  const std::int64_t ho = spec.out_h(x.h());
  const std::int64_t wo = spec.out_w(x.w());
  const std::int64_t npos = ho * wo;
  const std::int64_t taps = spec.taps();
  Tensor4 out({x.n(), spec.out_channels, ho, wo});
  std::vector<double> col(static_cast<std::size_t>(taps * npos));
  for (std::int64_t n = 0; n < x.n(); ++n) {
    detail::im2col(x.plane(n, 0), x.c(), x.h(), x.w(), spec, ho, wo, col.data());
    detail::gemm_accumulate(spec.out_channels, npos, taps, detail::MatView{k.weights.ptr(), taps, 1},
                            col.data(), npos, out.plane(n, 0), npos);
  }
  return out;
}

/// Adjoint of conv2d_forward(., k, spec) for a dense output of out_h x out_w.
/// y carries spec.out_channels channels in the compact layout; the result
/// carries spec.in_channels.
inline Tensor4 deconv2d_forward(const Tensor4& y, const ConvKernel& k, const ConvSpec& spec,
                                std::int64_t out_h, std::int64_t out_w) {
  detail::check_kernel(k, spec);
  if (out_h < 1 || out_w < 1) throw ShapeError("deconv: output extent must be >= 1");
  if (y.c() != spec.out_channels)
    throw ShapeError("deconv: input has " + std::to_string(y.c()) + " channels, spec expects " +
                     std::to_string(spec.out_channels));
  detail::check_extent(spec, out_h, out_w);
  const std::int64_t ho = spec.out_h(out_h);
  const std::int64_t wo = spec.out_w(out_w);
  if (y.h() != ho || y.w() != wo)
    throw ShapeError("deconv: compact input " + std::to_string(y.h()) + "x" +
                     std::to_string(y.w()) + " inconsistent with output " + std::to_string(out_h) +
                     "x" + std::to_string(out_w) + " (expected " + std::to_string(ho) + "x" +
                     std::to_string(wo) + ")");
  const std::int64_t npos = ho * wo;
  const std::int64_t taps = spec.taps();
  Tensor4 out({y.n(), spec.in_channels, out_h, out_w});
  std::vector<double> col(static_cast<std::size_t>(taps * npos));
  for (std::int64_t n = 0; n < y.n(); ++n) {
    std::fill(col.begin(), col.end(), 0.0);
    // col = W^T y_n
    detail::gemm_accumulate(taps, npos, spec.out_channels, detail::MatView{k.weights.ptr(), 1, taps},
                            y.plane(n, 0), npos, col.data(), npos);
    detail::col2im_add(col.data(), spec.in_channels, out_h, out_w, spec, ho, wo, out.plane(n, 0));
  }
  return out;
}

/// Reverse-mode cotangents of conv2d_forward. The input cotangent is computed
/// by deconv2d_forward itself.
inline ConvGrads conv2d_backward(const Tensor4& x, const ConvKernel& k, const ConvSpec& spec,
                                 const Tensor4& dz) {
  detail::check_kernel(k, spec);
  const Shape4 expect{x.n(), spec.out_channels, spec.out_h(x.h()), spec.out_w(x.w())};
  if (dz.shape() != expect)
    throw ShapeError("conv backward: cotangent " + dz.shape().str() + " expected " + expect.str());
  return ConvGrads{deconv2d_forward(dz, k, spec, x.h(), x.w()), detail::conv_weight_grad(x, dz, spec)};
}

/// Reverse-mode cotangents of deconv2d_forward: the input cotangent is the
/// strided convolution of the output cotangent.
inline ConvGrads deconv2d_backward(const Tensor4& y, const ConvKernel& k, const ConvSpec& spec,
                                   const Tensor4& dout) {
  detail::check_kernel(k, spec);
  if (dout.n() != y.n() || dout.c() != spec.in_channels || spec.out_h(dout.h()) != y.h() ||
      spec.out_w(dout.w()) != y.w())
    throw ShapeError("deconv backward: cotangent " + dout.shape().str() +
                     " inconsistent with input " + y.shape().str());
  return ConvGrads{conv2d_forward(dout, k, spec), detail::conv_weight_grad(dout, y, spec)};
}

/// Differentiable wrapper; pullback params = {dW}.
inline GradPair conv2d(const Tensor4& x, const ConvKernel& k, const ConvSpec& spec) {
  GradPair g{conv2d_forward(x, k, spec), {}};
  g.pullback = [x, k, spec](const Tensor4& dz) {
    ConvGrads r = conv2d_backward(x, k, spec, dz);
    return Cotangents{std::move(r.input), {std::move(r.weights)}};
  };
  return g;
}

/// Differentiable wrapper; pullback params = {dW}.
inline GradPair deconv2d(const Tensor4& y, const ConvKernel& k, const ConvSpec& spec,
                         std::int64_t out_h, std::int64_t out_w) {
  GradPair g{deconv2d_forward(y, k, spec, out_h, out_w), {}};
  g.pullback = [y, k, spec](const Tensor4& dout) {
    ConvGrads r = deconv2d_backward(y, k, spec, dout);
    return Cotangents{std::move(r.input), {std::move(r.weights)}};
  };
  return g;
}

}  // namespace sbnet
