#pragma once

// SGD with Nesterov momentum, step schedule, augmentation, train/evaluate loop.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sbnet/data.hpp"
#include "sbnet/network.hpp"

namespace sbnet {

struct OptimSpec {
  double lr = 0.1;
  std::vector<int> boundaries;  // epochs (1-based) after which lr is divided
  double decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 64;
  int epochs = 20;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("optim: lr must be a finite value >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("optim: momentum must be in [0,1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("optim: weight decay must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("optim: batch size must be positive");
    if (epochs < 0) throw std::invalid_argument("optim: epochs must be >= 0");
    for (std::size_t i = 1; i < boundaries.size(); ++i)
      if (boundaries[i] <= boundaries[i - 1])
        throw std::invalid_argument("optim: lr boundaries must be strictly increasing");
  }

  // Learning rate used during the given 1-based epoch.
  [[nodiscard]] double lr_at(int epoch) const {
    double r = lr;
    for (int b : boundaries)
      if (epoch > b) r *= decay;
    return r;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"lr", lr},           {"boundaries", boundaries}, {"decay", decay},
            {"momentum", momentum}, {"weight_decay", weight_decay}, {"batch_size", batch_size},
            {"epochs", epochs},   {"nesterov", true}};
  }
};

struct SgdState {
  std::vector<Tensor4> velocity;
};

/// Nesterov update, per element with u = g + wd*w:
///   v <- mu*v - lr*u
///   w <- w + mu*v - lr*u      (v already updated)
inline void sgd_step(std::span<const ParamRef> params, SgdState& state, double lr, double momentum,
                     double weight_decay) {
  if (state.velocity.empty())
    for (const ParamRef& p : params) state.velocity.emplace_back(p.value->shape());
  if (state.velocity.size() != params.size()) throw std::invalid_argument("sgd_step: state/parameter mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor4& w = *params[i].value;
    const Tensor4& g = *params[i].grad;
    Tensor4& v = state.velocity[i];
    if (w.shape() != g.shape() || w.shape() != v.shape())
      throw ShapeError("sgd_step: shape mismatch for " + params[i].name);
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double u = g[k] + weight_decay * w[k];
      v[k] = momentum * v[k] - lr * u;
      w[k] = w[k] + momentum * v[k] - lr * u;
    }
  }
}

// ---- augmentation ----------------------------------------------------------

struct AugmentSpec {
  bool enabled = true;
  int pad = 4;
  double flip_probability = 0.5;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"enabled", enabled}, {"pad", pad}, {"flip_probability", flip_probability}, {"fill", "reflect"}};
  }
};

// Mirror index without repeating the edge: -k -> k, n-1+k -> n-1-k.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

inline Tensor4 reflect_pad(const Tensor4& x, int pad) {
  Tensor4 out({x.n(), x.c(), x.h() + 2 * pad, x.w() + 2 * pad});
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t c = 0; c < x.c(); ++c)
      for (std::int64_t h = 0; h < out.h(); ++h)
        for (std::int64_t w = 0; w < out.w(); ++w)
          out(n, c, h, w) = x(n, c, reflect_index(h - pad, x.h()), reflect_index(w - pad, x.w()));
  return out;
}

// Copies image `src_n` of x cropped at (top, left), optionally flipped, into row dst_n of out.
inline void crop_into(const Tensor4& x, std::int64_t src_n, std::int64_t top, std::int64_t left, bool flip,
                      Tensor4& out, std::int64_t dst_n) {
  if (top < 0 || left < 0 || top + out.h() > x.h() || left + out.w() > x.w())
    throw std::out_of_range("crop: window outside the image");
  for (std::int64_t c = 0; c < x.c(); ++c)
    for (std::int64_t h = 0; h < out.h(); ++h)
      for (std::int64_t w = 0; w < out.w(); ++w)
        out(dst_n, c, h, w) = x(src_n, c, top + h, left + (flip ? out.w() - 1 - w : w));
}

inline Tensor4 hflip(const Tensor4& x) {
  Tensor4 out(x.shape());
  for (std::int64_t n = 0; n < x.n(); ++n) crop_into(x, n, 0, 0, true, out, n);
  return out;
}

/// Reflect-pads, takes a random crop of the original size and flips with the
/// given probability. Draws exactly three numbers per image.
inline Tensor4 augment(const Tensor4& x, const AugmentSpec& spec, Rng& rng) {
  if (!spec.enabled) return x;
  const Tensor4 padded = reflect_pad(x, spec.pad);
  Tensor4 out(x.shape());
  const auto span = static_cast<std::uint64_t>(2 * spec.pad + 1);
  for (std::int64_t n = 0; n < x.n(); ++n) {
    const auto top = static_cast<std::int64_t>(rng.below(span));
    const auto left = static_cast<std::int64_t>(rng.below(span));
    const bool flip = rng.uniform() < spec.flip_probability;
    crop_into(padded, n, top, left, flip, out, n);
  }
  return out;
}

// ---- evaluation ------------------------------------------------------------

// Fraction of rows whose label is not among the k largest logits (ties count against).
inline double topk_error(const Tensor4& logits, std::span<const int> labels, int k) {
  const std::int64_t classes = logits.c() * logits.h() * logits.w();
  if (static_cast<std::int64_t>(labels.size()) != logits.n()) throw ShapeError("topk_error: label count");
  if (k < 1) throw std::invalid_argument("topk_error: k must be positive");
  std::int64_t wrong = 0;
  for (std::int64_t n = 0; n < logits.n(); ++n) {
    const double* z = logits.ptr() + n * classes;
    const double target = z[labels[static_cast<std::size_t>(n)]];
    std::int64_t above = 0;
    for (std::int64_t j = 0; j < classes; ++j)
      if (j != labels[static_cast<std::size_t>(n)] && z[j] >= target) ++above;
    if (above >= k) ++wrong;
  }
  return logits.n() == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(logits.n());
}

struct EvalResult {
  double loss = 0.0;
  std::vector<int> ks;
  std::vector<double> errors;  // one per k

  [[nodiscard]] double top1() const { return errors.at(0); }
};

/// Eval-mode pass over the data without augmentation.
inline EvalResult evaluate(Network& net, const LabeledBatch& data, int batch_size = 128,
                           std::vector<int> ks = {1}) {
  EvalResult r{0.0, ks, std::vector<double>(ks.size(), 0.0)};
  if (ks.empty() || ks.front() != 1) throw std::invalid_argument("evaluate: ks must start with 1");
  for (std::int64_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> rows(static_cast<std::size_t>(std::min<std::int64_t>(batch_size, data.size() - start)));
    std::iota(rows.begin(), rows.end(), static_cast<std::size_t>(start));
    const LabeledBatch b = data.gather(rows);
    const Tensor4 logits = net.forward(b.images, Mode::eval);
    const double weight = static_cast<double>(b.size());
    r.loss += softmax_xent(logits, b.labels).loss * weight;
    for (std::size_t i = 0; i < ks.size(); ++i) r.errors[i] += topk_error(logits, b.labels, ks[i]) * weight;
  }
  const double total = static_cast<double>(std::max<std::int64_t>(data.size(), 1));
  r.loss /= total;
  for (double& e : r.errors) e /= total;
  return r;
}

// ---- training loop ---------------------------------------------------------

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_err = 0.0;  // on augmented training batches, training-mode forward
  double test_err = 0.0;
  double seconds = 0.0;
};

struct RunManifest {
  nlohmann::json network;
  std::string dataset;
  nlohmann::json normalization;
  nlohmann::json optim;
  nlohmann::json augment;
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> epochs;
  std::vector<std::string> checkpoints;
  std::string status = "running";

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : epochs)
      rows.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"train_loss", e.train_loss},
                      {"train_err", e.train_err},
                      {"test_err", e.test_err},
                      {"seconds", e.seconds}});
    return {{"network", network},  {"dataset", dataset}, {"normalization", normalization},
            {"optim", optim},      {"augment", augment}, {"seed", seed},
            {"epochs", rows},      {"checkpoints", checkpoints}, {"status", status}};
  }
};

inline std::string csv_header() { return "epoch,lr,train_loss,train_err,test_err,seconds"; }

inline std::string csv_row(const EpochMetrics& e) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%d,%.6g,%.9g,%.6f,%.6f,%.3f", e.epoch, e.lr, e.train_loss, e.train_err,
                e.test_err, e.seconds);
  return buf;
}

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, RunManifest manifest)
      : std::runtime_error(what), manifest_(std::move(manifest)) {}
  [[nodiscard]] const RunManifest& manifest() const { return manifest_; }

 private:
  RunManifest manifest_;
};

struct TrainOptions {
  OptimSpec optim;
  AugmentSpec augment;
  std::uint64_t seed = 0;  // data order and augmentation; initialization is the caller's
  std::filesystem::path out_dir;  // empty: nothing written
  std::optional<double> stop_at_train_accuracy;
  int eval_batch_size = 128;
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<bool(const EpochMetrics&)> stop_when;  // checked after each epoch
};

/// Trains in place. Order and augmentation streams derive from opts.seed only,
/// so two networks trained with the same seed see identical batches.
inline RunManifest train(Network& net, const Dataset& data, const TrainOptions& opts) {
  opts.optim.validate();
  RunManifest m;
  m.network = to_json(net.config());
  m.dataset = data.spec.name();
  m.normalization = data.normalization.to_json();
  m.optim = opts.optim.to_json();
  m.augment = opts.augment.to_json();
  m.seed = opts.seed;

  std::ofstream csv;
  auto write_manifest = [&] {
    if (opts.out_dir.empty()) return;
    std::ofstream(opts.out_dir / "manifest.json") << m.to_json().dump(2) << "\n";
  };
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    csv.open(opts.out_dir / "metrics.csv");
    csv << csv_header() << "\n";
  }

  Rng order_rng(opts.seed * 2 + 1);
  Rng augment_rng(opts.seed * 2 + 2);
  SgdState sgd;
  const std::vector<ParamRef> params = net.parameters();
  std::vector<std::size_t> order(static_cast<std::size_t>(data.train.size()));

  for (int epoch = 1; epoch <= opts.optim.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = opts.optim.lr_at(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    double wrong = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.optim.batch_size)) {
      const std::size_t len = std::min(order.size() - start, static_cast<std::size_t>(opts.optim.batch_size));
      LabeledBatch b = data.train.gather(std::span<const std::size_t>(order).subspan(start, len));
      b.images = augment(b.images, opts.augment, augment_rng);
      const Tensor4 logits = net.forward(b.images, Mode::train);
      const XentResult x = softmax_xent(logits, b.labels);
      if (!std::isfinite(x.loss)) {
        m.status = "diverged";
        write_manifest();
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(start / static_cast<std::size_t>(opts.optim.batch_size)) +
                                  " (loss " + std::to_string(x.loss) + ")",
                              m);
      }
      (void)net.backward(x.dlogits);
      sgd_step(params, sgd, lr, opts.optim.momentum, opts.optim.weight_decay);
      loss_sum += x.loss * static_cast<double>(len);
      wrong += topk_error(logits, b.labels, 1) * static_cast<double>(len);
    }
    EpochMetrics e;
    e.epoch = epoch;
    e.lr = lr;
    const double n = static_cast<double>(std::max<std::size_t>(order.size(), 1));
    e.train_loss = loss_sum / n;
    e.train_err = wrong / n;
    e.test_err = data.test.size() > 0 ? evaluate(net, data.test, opts.eval_batch_size).top1() : 0.0;
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    m.epochs.push_back(e);
    if (csv.is_open()) csv << csv_row(e) << std::endl;
    if (opts.on_epoch) opts.on_epoch(e);
    if (opts.stop_at_train_accuracy && 1.0 - e.train_err > *opts.stop_at_train_accuracy) break;
    if (opts.stop_when && opts.stop_when(e)) break;
  }
  m.status = "completed";
  if (!opts.out_dir.empty()) {
    const auto ckpt = opts.out_dir / "checkpoint";
    net.save(ckpt);
    m.checkpoints.push_back(ckpt.string());
  }
  write_manifest();
  return m;
}

}  // namespace sbnet
