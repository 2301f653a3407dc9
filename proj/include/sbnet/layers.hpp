#pragma once

// Non-convolutional layer primitives with their pullbacks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sbnet/gemm.hpp"
#include "sbnet/grad.hpp"
#include "sbnet/tensor.hpp"

namespace sbnet {

// ---- batch normalization ---------------------------------------------------

struct BatchNormState {
  Tensor4 gamma;  // (1, C, 1, 1)
  Tensor4 beta;   // (1, C, 1, 1)
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;

  BatchNormState() : BatchNormState(1) {}
  explicit BatchNormState(std::int64_t channels)
      : gamma(filled({1, channels, 1, 1}, 1.0)),
        beta({1, channels, 1, 1}),
        running_mean(static_cast<std::size_t>(channels), 0.0),
        running_var(static_cast<std::size_t>(channels), 1.0) {}

  [[nodiscard]] std::int64_t channels() const { return gamma.c(); }
};

/// Training mode normalizes with batch statistics (biased variance) and
/// updates the running estimates with the unbiased variance; eval mode uses
/// the running estimates. Pullback params = {d gamma, d beta}.
inline GradPair batchnorm(const Tensor4& x, BatchNormState& st, Mode mode) {
  const std::int64_t channels = st.channels();
  if (x.c() != channels)
    throw ShapeError("batchnorm: input has " + std::to_string(x.c()) + " channels, state has " +
                     std::to_string(channels));
  if (!(st.epsilon > 0.0)) throw std::invalid_argument("batchnorm: epsilon must be positive");
  const std::int64_t plane = x.h() * x.w();
  const double count = static_cast<double>(x.n() * plane);
  std::vector<double> mean(static_cast<std::size_t>(channels));
  std::vector<double> inv_std(static_cast<std::size_t>(channels));

  if (mode == Mode::train) {
    for (std::int64_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::int64_t n = 0; n < x.n(); ++n) {
        const double* p = x.plane(n, c);
        for (std::int64_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / count;
      double ss = 0.0;
      for (std::int64_t n = 0; n < x.n(); ++n) {
        const double* p = x.plane(n, c);
        for (std::int64_t i = 0; i < plane; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / count;
      const auto ci = static_cast<std::size_t>(c);
      mean[ci] = mu;
      inv_std[ci] = 1.0 / std::sqrt(var + st.epsilon);
      const double unbiased = count > 1.0 ? ss / (count - 1.0) : var;
      st.running_mean[ci] = (1.0 - st.momentum) * st.running_mean[ci] + st.momentum * mu;
      st.running_var[ci] = (1.0 - st.momentum) * st.running_var[ci] + st.momentum * unbiased;
    }
  } else {
    for (std::int64_t c = 0; c < channels; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      mean[ci] = st.running_mean[ci];
      inv_std[ci] = 1.0 / std::sqrt(st.running_var[ci] + st.epsilon);
    }
  }

  Tensor4 xhat(x.shape());
  Tensor4 y(x.shape());
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t c = 0; c < channels; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      const double* p = x.plane(n, c);
      double* q = xhat.plane(n, c);
      double* o = y.plane(n, c);
      const double g = st.gamma[ci];
      const double b = st.beta[ci];
      for (std::int64_t i = 0; i < plane; ++i) {
        q[i] = (p[i] - mean[ci]) * inv_std[ci];
        o[i] = g * q[i] + b;
      }
    }

  GradPair out{std::move(y), {}};
  out.pullback = [xhat = std::move(xhat), inv_std, gamma = st.gamma, mode,
                  count](const Tensor4& dy) {
    if (dy.shape() != xhat.shape()) throw ShapeError("batchnorm backward: shape mismatch");
    const std::int64_t channels = xhat.c();
    const std::int64_t plane = xhat.h() * xhat.w();
    Tensor4 dgamma({1, channels, 1, 1});
    Tensor4 dbeta({1, channels, 1, 1});
    Tensor4 dx(xhat.shape());
    for (std::int64_t c = 0; c < channels; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      double sb = 0.0;
      double sg = 0.0;
      for (std::int64_t n = 0; n < xhat.n(); ++n) {
        const double* d = dy.plane(n, c);
        const double* q = xhat.plane(n, c);
        for (std::int64_t i = 0; i < plane; ++i) {
          sb += d[i];
          sg += d[i] * q[i];
        }
      }
      dbeta[ci] = sb;
      dgamma[ci] = sg;
      const double scale = gamma[ci] * inv_std[ci];
      for (std::int64_t n = 0; n < xhat.n(); ++n) {
        const double* d = dy.plane(n, c);
        const double* q = xhat.plane(n, c);
        double* o = dx.plane(n, c);
        if (mode == Mode::train) {
          for (std::int64_t i = 0; i < plane; ++i)
            o[i] = scale * (d[i] - sb / count - q[i] * sg / count);
        } else {
          for (std::int64_t i = 0; i < plane; ++i) o[i] = scale * d[i];
        }
      }
    }
    return Cotangents{std::move(dx), {std::move(dgamma), std::move(dbeta)}};
  };
  return out;
}

// ---- activations -----------------------------------------------------------

inline GradPair relu(const Tensor4& x) {
  Tensor4 y = axpy_map(1.0, x, 0.0, x, [](double v) { return v > 0.0 ? v : 0.0; });
  GradPair out{std::move(y), {}};
  out.pullback = [x](const Tensor4& dy) {
    if (dy.shape() != x.shape()) throw ShapeError("relu backward: shape mismatch");
    Tensor4 dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
    return Cotangents{std::move(dx), {}};
  };
  return out;
}

// ---- pooling ---------------------------------------------------------------

/// Stride-K, K x K average pooling anchored at (a, b): output (i, j) averages
/// rows a+iK .. a+iK+K-1 and columns b+jK .. b+jK+K-1 that lie inside the map
/// (windows clipped at the border divide by their in-bounds count).
inline GradPair avgpool2d(const Tensor4& x, int stride, int a = 0, int b = 0) {
  if (stride < 1) throw std::invalid_argument("avgpool: stride must be >= 1");
  if (a < 0 || a >= stride || b < 0 || b >= stride)
    throw std::invalid_argument("avgpool: offset outside [0, stride)");
  if (stride > x.h() || stride > x.w()) throw ShapeError("avgpool: stride exceeds spatial extent");
  const std::int64_t ho = (x.h() - a + stride - 1) / stride;
  const std::int64_t wo = (x.w() - b + stride - 1) / stride;
  Tensor4 y({x.n(), x.c(), ho, wo});
  auto window = [stride](std::int64_t start, std::int64_t extent) {
    return std::min<std::int64_t>(start + stride, extent);
  };
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t c = 0; c < x.c(); ++c)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
          const std::int64_t r0 = a + i * stride;
          const std::int64_t c0 = b + j * stride;
          const std::int64_t r1 = window(r0, x.h());
          const std::int64_t c1 = window(c0, x.w());
          double s = 0.0;
          for (std::int64_t r = r0; r < r1; ++r)
            for (std::int64_t q = c0; q < c1; ++q) s += x(n, c, r, q);
          y(n, c, i, j) = s / static_cast<double>((r1 - r0) * (c1 - c0));
        }
  GradPair out{std::move(y), {}};
  out.pullback = [shape = x.shape(), stride, a, b, ho, wo](const Tensor4& dy) {
    if (dy.shape() != Shape4{shape.n, shape.c, ho, wo})
      throw ShapeError("avgpool backward: shape mismatch");
    Tensor4 dx(shape);
    for (std::int64_t n = 0; n < shape.n; ++n)
      for (std::int64_t c = 0; c < shape.c; ++c)
        for (std::int64_t i = 0; i < ho; ++i)
          for (std::int64_t j = 0; j < wo; ++j) {
            const std::int64_t r0 = a + i * stride;
            const std::int64_t c0 = b + j * stride;
            const std::int64_t r1 = std::min<std::int64_t>(r0 + stride, shape.h);
            const std::int64_t c1 = std::min<std::int64_t>(c0 + stride, shape.w);
            const double g = dy(n, c, i, j) / static_cast<double>((r1 - r0) * (c1 - c0));
            for (std::int64_t r = r0; r < r1; ++r)
              for (std::int64_t q = c0; q < c1; ++q) dx(n, c, r, q) += g;
          }
    return Cotangents{std::move(dx), {}};
  };
  return out;
}

/// S x S max pooling evaluated at dense positions 0, K, 2K, ... with the window
/// centred there (the ImageNet stem uses S=3, K=2). Ties go to the first maximum.
inline GradPair maxpool2d(const Tensor4& x, int kernel, int stride) {
  if (kernel < 1 || stride < 1) throw std::invalid_argument("maxpool: bad geometry");
  const int p = kernel / 2;
  const std::int64_t ho = (x.h() + stride - 1) / stride;
  const std::int64_t wo = (x.w() + stride - 1) / stride;
  Tensor4 y({x.n(), x.c(), ho, wo});
  std::vector<std::size_t> argmax(y.size());
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t c = 0; c < x.c(); ++c)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t where = 0;
          for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) {
              const std::int64_t r = i * stride - p + ky;
              const std::int64_t q = j * stride - p + kx;
              if (r < 0 || r >= x.h() || q < 0 || q >= x.w()) continue;
              if (x(n, c, r, q) > best) {
                best = x(n, c, r, q);
                where = x.index(n, c, r, q);
              }
            }
          y(n, c, i, j) = best;
          argmax[y.index(n, c, i, j)] = where;
        }
  GradPair out{std::move(y), {}};
  out.pullback = [shape = x.shape(), argmax = std::move(argmax)](const Tensor4& dy) {
    if (dy.size() != argmax.size()) throw ShapeError("maxpool backward: shape mismatch");
    Tensor4 dx(shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += dy[i];
    return Cotangents{std::move(dx), {}};
  };
  return out;
}

inline GradPair global_avgpool(const Tensor4& x) {
  GradPair out{reduce(x, Reduction::mean, axis::hw), {}};
  out.pullback = [shape = x.shape()](const Tensor4& dy) {
    if (dy.shape() != Shape4{shape.n, shape.c, 1, 1})
      throw ShapeError("global_avgpool backward: shape mismatch");
    Tensor4 dx(shape);
    const double inv = 1.0 / static_cast<double>(shape.h * shape.w);
    for (std::int64_t n = 0; n < shape.n; ++n)
      for (std::int64_t c = 0; c < shape.c; ++c) {
        double* p = dx.plane(n, c);
        std::fill(p, p + shape.h * shape.w, dy(n, c, 0, 0) * inv);
      }
    return Cotangents{std::move(dx), {}};
  };
  return out;
}

// ---- fully connected -------------------------------------------------------

/// y(n, o) = sum_i W(o, i) x(n, i) with x flattened per sample; weights have
/// shape (D_out, D_in, 1, 1). No bias. Pullback params = {dW}.
inline GradPair linear(const Tensor4& x, const Tensor4& weights) {
  const std::int64_t din = x.c() * x.h() * x.w();
  const std::int64_t dout = weights.n();
  if (weights.c() * weights.h() * weights.w() != din)
    throw ShapeError("linear: weights " + weights.shape().str() + " do not accept input " +
                     x.shape().str());
  Tensor4 y({x.n(), dout, 1, 1});
  // y^T (dout x n) = W (dout x din) * x^T (din x n)
  std::vector<double> xt(static_cast<std::size_t>(din * x.n()));
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t i = 0; i < din; ++i) xt[i * x.n() + n] = x[n * din + i];
  std::vector<double> yt(static_cast<std::size_t>(dout * x.n()), 0.0);
  detail::gemm_accumulate(dout, x.n(), din, detail::MatView{weights.ptr(), din, 1}, xt.data(),
                          x.n(), yt.data(), x.n());
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t o = 0; o < dout; ++o) y[n * dout + o] = yt[o * x.n() + n];
  GradPair out{std::move(y), {}};
  out.pullback = [x, weights, din, dout](const Tensor4& dy) {
    if (dy.shape() != Shape4{x.n(), dout, 1, 1}) throw ShapeError("linear backward: shape mismatch");
    Tensor4 dx(x.shape());
    Tensor4 dw(weights.shape());
    for (std::int64_t n = 0; n < x.n(); ++n)
      for (std::int64_t o = 0; o < dout; ++o) {
        const double g = dy[n * dout + o];
        if (g == 0.0) continue;
        const double* wrow = weights.ptr() + o * din;
        const double* xrow = x.ptr() + n * din;
        double* dxrow = dx.ptr() + n * din;
        double* dwrow = dw.ptr() + o * din;
        for (std::int64_t i = 0; i < din; ++i) {
          dxrow[i] += g * wrow[i];
          dwrow[i] += g * xrow[i];
        }
      }
    return Cotangents{std::move(dx), {std::move(dw)}};
  };
  return out;
}

// ---- loss ------------------------------------------------------------------

struct XentResult {
  double loss = 0.0;  // mean over the batch
  Tensor4 dlogits;    // gradient of the mean loss
};

inline XentResult softmax_xent(const Tensor4& logits, std::span<const int> labels) {
  const std::int64_t batch = logits.n();
  const std::int64_t classes = logits.c() * logits.h() * logits.w();
  if (labels.empty()) throw std::invalid_argument("softmax_xent: empty batch");
  if (static_cast<std::int64_t>(labels.size()) != batch)
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  XentResult r{0.0, Tensor4(logits.shape())};
  for (std::int64_t n = 0; n < batch; ++n) {
    const int label = labels[static_cast<std::size_t>(n)];
    if (label < 0 || label >= classes)
      throw std::out_of_range("softmax_xent: label " + std::to_string(label) + " outside [0," +
                              std::to_string(classes) + ")");
    const double* z = logits.ptr() + n * classes;
    double* g = r.dlogits.ptr() + n * classes;
    const double zmax = *std::max_element(z, z + classes);
    double denom = 0.0;
    for (std::int64_t k = 0; k < classes; ++k) denom += std::exp(z[k] - zmax);
    const double log_denom = std::log(denom);
    r.loss += -(z[label] - zmax - log_denom);
    for (std::int64_t k = 0; k < classes; ++k)
      g[k] = (std::exp(z[k] - zmax - log_denom) - (k == label ? 1.0 : 0.0)) /
             static_cast<double>(batch);
  }
  r.loss /= static_cast<double>(batch);
  return r;
}

// ---- spatial regrouping ----------------------------------------------------

/// Lays several (n, c, h_i, w_i) tensors side by side as one (n, c, 1, sum h_i*w_i)
/// tensor; per-channel statistics are unchanged by the regrouping.
inline Tensor4 concat_spatial(std::span<const Tensor4> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_spatial: nothing to concatenate");
  const std::int64_t n = parts[0].n();
  const std::int64_t c = parts[0].c();
  std::int64_t total = 0;
  for (const Tensor4& p : parts) {
    if (p.n() != n || p.c() != c) throw ShapeError("concat_spatial: batch/channel mismatch");
    total += p.h() * p.w();
  }
  Tensor4 out({n, c, 1, total});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double* dst = out.plane(b, ch);
      for (const Tensor4& p : parts) {
        const double* src = p.plane(b, ch);
        dst = std::copy(src, src + p.h() * p.w(), dst);
      }
    }
  return out;
}

inline std::vector<Tensor4> split_spatial(const Tensor4& joined, std::span<const Shape4> shapes) {
  std::vector<Tensor4> parts;
  parts.reserve(shapes.size());
  for (const Shape4& s : shapes) parts.emplace_back(s);
  std::int64_t total = 0;
  for (const Shape4& s : shapes) total += s.h * s.w;
  if (joined.h() * joined.w() != total) throw ShapeError("split_spatial: extent mismatch");
  for (std::int64_t b = 0; b < joined.n(); ++b)
    for (std::int64_t ch = 0; ch < joined.c(); ++ch) {
      const double* src = joined.plane(b, ch);
      for (Tensor4& p : parts) {
        const std::int64_t len = p.h() * p.w();
        std::copy(src, src + len, p.plane(b, ch));
        src += len;
      }
    }
  return parts;
}

}  // namespace sbnet
