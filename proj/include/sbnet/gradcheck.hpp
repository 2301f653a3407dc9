#pragma once

// Central-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sbnet/grad.hpp"
#include "sbnet/tensor.hpp"

namespace sbnet {

struct GradcheckOptions {
  double step = 1e-5;
  // Coordinates checked per tensor; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  [[nodiscard]] double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  [[nodiscard]] bool passed(double tolerance) const {
    return std::isfinite(max_rel_error()) && max_rel_error() < tolerance;
  }
};

/// Relative error of a gradient tensor: the largest absolute deviation scaled
/// by the largest magnitude on either side.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  if (scale == 0.0) return 0.0;
  return diff / scale;
}

inline std::vector<std::size_t> sample_coords(std::size_t size, std::size_t max_coords, Rng& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_coords == 0 || max_coords >= size) return idx;
  rng.shuffle(idx);
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// (loss(x + h) - loss(x - h)) / 2h, perturbing x in place and restoring it.
template <class Loss>
double central_difference(double& x, Loss&& loss, double step) {
  const double x0 = x;
  x = x0 + step;
  const double plus = loss();
  x = x0 - step;
  const double minus = loss();
  x = x0;
  return (plus - minus) / (2.0 * step);
}

using DiffOp = std::function<GradPair(std::span<const Tensor4>)>;

/// Checks an op's pullback against central differences of the scalar
/// <op(inputs), R> for a seeded gaussian R. inputs[0] is the op's input and
/// inputs[1..] its parameters, in the order the pullback returns them.
inline GradcheckReport gradcheck(const DiffOp& op, std::vector<Tensor4> inputs,
                                 const GradcheckOptions& opts = {},
                                 std::vector<std::string> names = {}) {
  if (inputs.empty()) throw std::invalid_argument("gradcheck: no inputs");
  Rng rng(opts.seed);
  GradPair at = op(inputs);
  const Tensor4 probe = fill_random(at.value.shape(), rng, Gaussian{0.0, 1.0});
  Cotangents ct = at.pullback(probe);
  if (ct.params.size() + 1 != inputs.size())
    throw std::invalid_argument("gradcheck: pullback returned " + std::to_string(ct.params.size()) +
                                " parameter cotangents for " + std::to_string(inputs.size() - 1) +
                                " parameters");
  auto loss = [&] { return dot(op(inputs).value, probe); };

  GradcheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const Tensor4& analytic = t == 0 ? ct.input : ct.params[t - 1];
    if (analytic.shape() != inputs[t].shape())
      throw ShapeError("gradcheck: cotangent shape mismatch for tensor " + std::to_string(t));
    const auto coords = sample_coords(inputs[t].size(), opts.max_coords, rng);
    std::vector<double> a;
    std::vector<double> num;
    for (std::size_t i : coords) {
      a.push_back(analytic[i]);
      num.push_back(central_difference(inputs[t][i], loss, opts.step));
    }
    const std::string name =
        t < names.size() ? names[t] : (t == 0 ? "input" : "param" + std::to_string(t - 1));
    report.entries.push_back({name, relative_error(a, num), coords.size()});
  }
  return report;
}

}  // namespace sbnet
