#pragma once

// Runnable residual networks built from a NetworkConfig.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "sbnet/config.hpp"
#include "sbnet/conv.hpp"
#include "sbnet/gradcheck.hpp"
#include "sbnet/layers.hpp"
#include "sbnet/spatial_bottleneck.hpp"

namespace sbnet {

struct ConvLayer {
  std::string name;
  ConvSpec spec;
  ConvKernel kernel;
  Tensor4 grad;
};

struct BNLayer {
  std::string name;
  BatchNormState state;
  Tensor4 dgamma;
  Tensor4 dbeta;
};

struct ReluLayer {
  std::string name;
};

struct SBLayer {
  std::string name;
  SBModule module;
  Tensor4 dconv;
  Tensor4 ddeconv;
  Tensor4 dgamma;
  Tensor4 dbeta;
};

struct MaxPoolLayer {
  std::string name;
  int kernel = 3;
  int stride = 2;
};

struct GlobalPoolLayer {
  std::string name;
};

struct LinearLayer {
  std::string name;
  Tensor4 weights;  // (classes, features, 1, 1)
  Tensor4 grad;
};

using Layer =
    std::variant<ConvLayer, BNLayer, ReluLayer, SBLayer, MaxPoolLayer, GlobalPoolLayer, LinearLayer>;

/// A trainable tensor and the gradient slot the backward pass fills.
struct ParamRef {
  std::string name;
  Tensor4* value;
  Tensor4* grad;
};

/// Non-trainable state (batch-norm running statistics).
struct BufferRef {
  std::string name;
  std::vector<double>* values;
};

namespace detail {

template <class... F>
struct overloaded : F... {
  using F::operator()...;
};
template <class... F>
overloaded(F...) -> overloaded<F...>;

inline GradPair layer_forward(Layer& layer, const Tensor4& x, Mode mode) {
  return std::visit(
      overloaded{
          [&](ConvLayer& l) { return conv2d(x, l.kernel, l.spec); },
          [&](BNLayer& l) { return batchnorm(x, l.state, mode); },
          [&](ReluLayer&) { return relu(x); },
          [&](SBLayer& l) { return sb_forward(x, l.module, mode); },
          [&](MaxPoolLayer& l) { return maxpool2d(x, l.kernel, l.stride); },
          [&](GlobalPoolLayer&) { return global_avgpool(x); },
          [&](LinearLayer& l) { return linear(x, l.weights); },
      },
      layer);
}

inline void layer_accumulate(Layer& layer, const Cotangents& c) {
  std::visit(overloaded{
                 [&](ConvLayer& l) { l.grad += c.params.at(0); },
                 [&](BNLayer& l) {
                   l.dgamma += c.params.at(0);
                   l.dbeta += c.params.at(1);
                 },
                 [&](SBLayer& l) {
                   l.dconv += c.params.at(0);
                   l.ddeconv += c.params.at(1);
                   if (c.params.size() == 4) {
                     l.dgamma += c.params[2];
                     l.dbeta += c.params[3];
                   }
                 },
                 [&](LinearLayer& l) { l.grad += c.params.at(0); },
                 [](auto&) {},
             },
             layer);
}

inline void layer_params(Layer& layer, std::vector<ParamRef>& out) {
  std::visit(overloaded{
                 [&](ConvLayer& l) { out.push_back({l.name + ".weight", &l.kernel.weights, &l.grad}); },
                 [&](BNLayer& l) {
                   out.push_back({l.name + ".gamma", &l.state.gamma, &l.dgamma});
                   out.push_back({l.name + ".beta", &l.state.beta, &l.dbeta});
                 },
                 [&](SBLayer& l) {
                   out.push_back({l.name + ".conv", &l.module.conv.weights, &l.dconv});
                   out.push_back({l.name + ".deconv", &l.module.deconv.weights, &l.ddeconv});
                   if (l.module.inner == InnerNonlinearity::bn_relu) {
                     out.push_back({l.name + ".inner_bn.gamma", &l.module.inner_bn.gamma, &l.dgamma});
                     out.push_back({l.name + ".inner_bn.beta", &l.module.inner_bn.beta, &l.dbeta});
                   }
                 },
                 [&](LinearLayer& l) { out.push_back({l.name + ".weight", &l.weights, &l.grad}); },
                 [](auto&) {},
             },
             layer);
}

inline void layer_buffers(Layer& layer, std::vector<BufferRef>& out) {
  auto add = [&](const std::string& name, BatchNormState& st) {
    out.push_back({name + ".running_mean", &st.running_mean});
    out.push_back({name + ".running_var", &st.running_var});
  };
  std::visit(overloaded{
                 [&](BNLayer& l) { add(l.name, l.state); },
                 [&](SBLayer& l) {
                   if (l.module.inner == InnerNonlinearity::bn_relu) add(l.name + ".inner_bn", l.module.inner_bn);
                 },
                 [](auto&) {},
             },
             layer);
}

inline ConvLayer make_conv(std::string name, const ConvSpec& spec, Rng& rng) {
  ConvKernel k = ConvKernel::he_init(spec, rng);
  return ConvLayer{std::move(name), spec, std::move(k), Tensor4(spec.weight_shape())};
}

inline BNLayer make_bn(std::string name, int channels) {
  return BNLayer{std::move(name), BatchNormState(channels), Tensor4({1, channels, 1, 1}),
                 Tensor4({1, channels, 1, 1})};
}

inline SBLayer make_sb(std::string name, SBModule m) {
  const Shape4 g{1, m.mid_channels, 1, 1};
  SBLayer l{std::move(name), std::move(m), {}, {}, Tensor4(g), Tensor4(g)};
  l.dconv = Tensor4(l.module.conv.weights.shape());
  l.ddeconv = Tensor4(l.module.deconv.weights.shape());
  return l;
}

/// Identity shortcut that subsamples by `stride` and appends zero channels.
inline GradPair zero_pad_shortcut(const Tensor4& x, int out_channels, int stride) {
  const std::int64_t ho = (x.h() + stride - 1) / stride;
  const std::int64_t wo = (x.w() + stride - 1) / stride;
  Tensor4 y({x.n(), out_channels, ho, wo});
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t c = 0; c < x.c(); ++c)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) y(n, c, i, j) = x(n, c, i * stride, j * stride);
  GradPair out{std::move(y), {}};
  out.pullback = [shape = x.shape(), stride, ho, wo](const Tensor4& dy) {
    Tensor4 dx(shape);
    for (std::int64_t n = 0; n < shape.n; ++n)
      for (std::int64_t c = 0; c < shape.c; ++c)
        for (std::int64_t i = 0; i < ho; ++i)
          for (std::int64_t j = 0; j < wo; ++j) dx(n, c, i * stride, j * stride) = dy(n, c, i, j);
    return Cotangents{std::move(dx), {}};
  };
  return out;
}

}  // namespace detail

/// An ordered chain of layers. The pullback of forward() accumulates parameter
/// gradients into the layers themselves.
struct Sequence {
  std::vector<Layer> layers;

  GradPair forward(const Tensor4& x, Mode mode) {
    std::vector<Pullback> tape;
    tape.reserve(layers.size());
    Tensor4 cur = x;
    for (Layer& l : layers) {
      GradPair g = detail::layer_forward(l, cur, mode);
      cur = std::move(g.value);
      tape.push_back(std::move(g.pullback));
    }
    GradPair out{std::move(cur), {}};
    out.pullback = [base = layers.data(), tape = std::move(tape)](const Tensor4& dy) {
      Tensor4 d = dy;
      for (std::size_t i = tape.size(); i-- > 0;) {
        Cotangents c = tape[i](d);
        detail::layer_accumulate(base[i], c);
        d = std::move(c.input);
      }
      return Cotangents{std::move(d), {}};
    };
    return out;
  }
};

struct ResidualBlock {
  std::string name;
  BlockSpec spec;
  Sequence main;
  std::vector<Layer> projection;  // one ConvLayer for projection shortcuts

  GradPair forward(const Tensor4& x, Mode mode) {
    GradPair m = main.forward(x, mode);
    GradPair s;
    switch (spec.shortcut) {
      case Shortcut::identity:
        s = GradPair{x, [](const Tensor4& dy) { return Cotangents{dy, {}}; }};
        break;
      case Shortcut::zero_pad_identity:
        s = detail::zero_pad_shortcut(x, spec.channels, spec.stride);
        break;
      case Shortcut::projection: {
        GradPair p = detail::layer_forward(projection.at(0), x, mode);
        s = GradPair{std::move(p.value), [base = projection.data(), pb = std::move(p.pullback)](
                                             const Tensor4& dy) {
                       Cotangents c = pb(dy);
                       detail::layer_accumulate(base[0], c);
                       return Cotangents{std::move(c.input), {}};
                     }};
        break;
      }
    }
    GradPair out{m.value + s.value, {}};
    out.pullback = [mpb = std::move(m.pullback), spb = std::move(s.pullback)](const Tensor4& dy) {
      Cotangents a = mpb(dy);
      a.input += spb(dy).input;
      return a;
    };
    return out;
  }
};

class Network {
 public:
  static Network build(const NetworkConfig& config, Rng& rng) {
    Network net;
    net.plan_ = sbnet::plan(config);
    const NetworkPlan& p = net.plan_;
    const StemSpec& st = p.stem;
    net.stem_.layers.push_back(detail::make_conv(
        "stem.conv", ConvSpec::strided(st.in_channels, st.out_channels, st.kernel, st.stride), rng));
    if (st.maxpool) {
      net.stem_.layers.push_back(detail::make_bn("stem.bn", st.out_channels));
      net.stem_.layers.push_back(ReluLayer{"stem.relu"});
      net.stem_.layers.push_back(MaxPoolLayer{"stem.pool", 3, 2});
    }
    int index_in_stage = 0;
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
      if (i > 0 && p.stage_of_block[i] != p.stage_of_block[i - 1]) index_in_stage = 0;
      const std::string name =
          "s" + std::to_string(p.stage_of_block[i]) + ".b" + std::to_string(index_in_stage++);
      net.blocks_.push_back(make_block(name, p.blocks[i], rng));
    }
    net.head_.layers.push_back(detail::make_bn("head.bn", p.head_channels));
    net.head_.layers.push_back(ReluLayer{"head.relu"});
    net.head_.layers.push_back(GlobalPoolLayer{"head.pool"});
    const int classes = config.num_classes;
    const double std = std::sqrt(1.0 / static_cast<double>(p.head_channels));
    net.head_.layers.push_back(
        LinearLayer{"head.fc", fill_random({classes, p.head_channels, 1, 1}, rng, Gaussian{0.0, std}),
                    Tensor4({classes, p.head_channels, 1, 1})});
    return net;
  }

  static ResidualBlock make_block(const std::string& name, const BlockSpec& b, Rng& rng) {
    b.validate();
    ResidualBlock blk{name, b, {}, {}};
    auto& L = blk.main.layers;
    const std::string n = name + ".";
    switch (b.kind) {
      case BlockKind::rRB:
        L.push_back(detail::make_bn(n + "bn1", b.in_channels));
        L.push_back(ReluLayer{n + "relu1"});
        L.push_back(detail::make_conv(n + "conv1", ConvSpec::strided(b.in_channels, b.channels, 3, b.stride), rng));
        L.push_back(detail::make_bn(n + "bn2", b.channels));
        L.push_back(ReluLayer{n + "relu2"});
        L.push_back(detail::make_conv(n + "conv2", ConvSpec::dense(b.channels, b.channels, 3), rng));
        break;
      case BlockKind::rSB:
        L.push_back(detail::make_bn(n + "bn1", b.in_channels));
        L.push_back(ReluLayer{n + "relu1"});
        L.push_back(detail::make_sb(
            n + "sb", SBModule::make(b.pattern, b.in_channels, b.channels, b.channels,
                                     InnerNonlinearity::bn_relu, b.downsample, rng)));
        break;
      case BlockKind::cRB:
      case BlockKind::cSB: {
        const int inner = b.inner_width();
        L.push_back(detail::make_bn(n + "bn1", b.in_channels));
        L.push_back(ReluLayer{n + "relu1"});
        L.push_back(detail::make_conv(n + "conv1", ConvSpec::strided(b.in_channels, inner, 1, b.stride), rng));
        L.push_back(detail::make_bn(n + "bn2", inner));
        L.push_back(ReluLayer{n + "relu2"});
        if (b.kind == BlockKind::cRB)
          L.push_back(detail::make_conv(n + "conv2", ConvSpec::dense(inner, inner, 3), rng));
        else
          L.push_back(detail::make_sb(
              n + "sb", SBModule::make(b.pattern, inner, b.sb_mid_width(), inner,
                                       InnerNonlinearity::none, b.downsample, rng)));
        L.push_back(detail::make_bn(n + "bn3", inner));
        L.push_back(ReluLayer{n + "relu3"});
        L.push_back(detail::make_conv(n + "conv3", ConvSpec::dense(inner, b.channels, 1), rng));
        break;
      }
    }
    if (b.shortcut == Shortcut::projection)
      blk.projection.push_back(
          detail::make_conv(n + "proj", ConvSpec::strided(b.in_channels, b.channels, 1, b.stride), rng));
    return blk;
  }

  [[nodiscard]] const NetworkPlan& plan() const { return plan_; }
  [[nodiscard]] const NetworkConfig& config() const { return plan_.config; }
  [[nodiscard]] const std::vector<ResidualBlock>& blocks() const { return blocks_; }
  [[nodiscard]] Shape4 input_shape(std::int64_t batch) const {
    const int hw = plan_.config.resolved_input_hw();
    return {batch, plan_.stem.in_channels, hw, hw};
  }

  /// Logits (n, classes, 1, 1). Records the tape consumed by backward().
  Tensor4 forward(const Tensor4& x, Mode mode) {
    const Shape4 want = input_shape(x.n());
    if (x.shape() != want)
      throw ShapeError("network: input " + x.shape().str() + ", expected " + want.str());
    std::vector<Pullback> tape;
    GradPair g = stem_.forward(x, mode);
    tape.push_back(std::move(g.pullback));
    Tensor4 cur = std::move(g.value);
    for (ResidualBlock& b : blocks_) {
      GradPair r = b.forward(cur, mode);
      cur = std::move(r.value);
      tape.push_back(std::move(r.pullback));
    }
    GradPair h = head_.forward(cur, mode);
    tape.push_back(std::move(h.pullback));
    logits_shape_ = h.value.shape();
    tape_ = std::move(tape);
    return std::move(h.value);
  }

  /// Sets every parameter gradient to d(loss)/d(param) for the cotangent of
  /// the last forward()'s logits; returns the input cotangent.
  Tensor4 backward(const Tensor4& dlogits) {
    if (tape_.empty()) throw std::logic_error("network: backward() without forward()");
    if (dlogits.shape() != logits_shape_)
      throw ShapeError("network: logit cotangent " + dlogits.shape().str() + ", expected " +
                       logits_shape_.str());
    zero_grad();
    Tensor4 d = dlogits;
    for (std::size_t i = tape_.size(); i-- > 0;) d = tape_[i](d).input;
    tape_.clear();
    return d;
  }

  void zero_grad() {
    for (ParamRef& p : parameters()) *p.grad = Tensor4(p.grad->shape());
  }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    for_each_layer([&](Layer& l) { detail::layer_params(l, out); });
    return out;
  }

  std::vector<BufferRef> buffers() {
    std::vector<BufferRef> out;
    for_each_layer([&](Layer& l) { detail::layer_buffers(l, out); });
    return out;
  }

  [[nodiscard]] std::uint64_t param_count() const {
    std::uint64_t total = 0;
    for (ParamRef& p : const_cast<Network*>(this)->parameters()) total += p.value->size();
    return total;
  }

  /// Writes every parameter and running statistic as SBT4 files plus manifest.json.
  void save(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["config"] = to_json(plan_.config);
    manifest["tensors"] = nlohmann::json::array();
    auto put = [&](const std::string& name, const Tensor4& t, const char* kind) {
      const std::string file = name + ".sbt4";
      save_tensor(dir / file, t);
      manifest["tensors"].push_back({{"name", name}, {"file", file}, {"kind", kind}});
    };
    for (const ParamRef& p : parameters()) put(p.name, *p.value, "param");
    for (const BufferRef& b : buffers()) {
      const auto c = static_cast<std::int64_t>(b.values->size());
      put(b.name, Tensor4({1, c, 1, 1}, *b.values), "buffer");
    }
    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw FormatError("checkpoint: cannot write manifest in " + dir.string());
  }

  static Network load(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw FormatError("checkpoint: no manifest.json in " + dir.string());
    nlohmann::json manifest;
    try {
      is >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("checkpoint manifest: ") + e.what());
    }
    Rng rng(0);
    Network net = build(config_from_json(manifest.at("config")), rng);
    std::map<std::string, std::string> files;
    for (const auto& t : manifest.at("tensors"))
      files[t.at("name").get<std::string>()] = t.at("file").get<std::string>();
    auto fetch = [&](const std::string& name, Shape4 shape) {
      const auto it = files.find(name);
      if (it == files.end()) throw FormatError("checkpoint: missing tensor " + name);
      Tensor4 t = load_tensor(dir / it->second);
      if (t.shape() != shape)
        throw FormatError("checkpoint: tensor " + name + " has shape " + t.shape().str() +
                          ", expected " + shape.str());
      return t;
    };
    for (ParamRef& p : net.parameters()) *p.value = fetch(p.name, p.value->shape());
    for (BufferRef& b : net.buffers()) {
      const Tensor4 t = fetch(b.name, {1, static_cast<std::int64_t>(b.values->size()), 1, 1});
      b.values->assign(t.data().begin(), t.data().end());
    }
    return net;
  }

 private:
  template <class F>
  void for_each_layer(F&& f) {
    for (Layer& l : stem_.layers) f(l);
    for (ResidualBlock& b : blocks_) {
      for (Layer& l : b.main.layers) f(l);
      for (Layer& l : b.projection) f(l);
    }
    for (Layer& l : head_.layers) f(l);
  }

  NetworkPlan plan_;
  Sequence stem_;
  std::vector<ResidualBlock> blocks_;
  Sequence head_;
  std::vector<Pullback> tape_;
  Shape4 logits_shape_;
};

/// Checks the network's parameter gradients of the mean cross-entropy loss
/// against central differences. Training-mode batch norm is used so every
/// parameter influences the loss; running statistics are restored afterwards.
inline GradcheckReport gradcheck_network(Network& net, const Tensor4& x, std::span<const int> labels,
                                         const GradcheckOptions& opts = {}) {
  std::vector<std::vector<double>> saved;
  for (BufferRef& b : net.buffers()) saved.push_back(*b.values);
  const Tensor4 logits = net.forward(x, Mode::train);
  (void)net.backward(softmax_xent(logits, labels).dlogits);
  auto loss = [&] { return softmax_xent(net.forward(x, Mode::train), labels).loss; };
  Rng rng(opts.seed);
  GradcheckReport report;
  for (ParamRef& p : net.parameters()) {
    const auto coords = sample_coords(p.value->size(), opts.max_coords, rng);
    std::vector<double> a;
    std::vector<double> num;
    for (std::size_t i : coords) {
      a.push_back((*p.grad)[i]);
      num.push_back(central_difference((*p.value)[i], loss, opts.step));
    }
    report.entries.push_back({p.name, relative_error(a, num), coords.size()});
  }
  std::size_t k = 0;
  for (BufferRef& b : net.buffers()) *b.values = saved[k++];
  return report;
}

}  // namespace sbnet
