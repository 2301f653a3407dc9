#pragma once

#include <functional>
#include <vector>

#include "sbnet/tensor.hpp"

namespace sbnet {

enum class Mode { train, eval };

/// Reverse-mode cotangents of one differentiable op: with respect to its
/// input, and with respect to each of its parameter tensors in the op's
/// documented order.
struct Cotangents {
  Tensor4 input;
  std::vector<Tensor4> params;
};

using Pullback = std::function<Cotangents(const Tensor4&)>;

/// Forward value plus the linear map from output cotangent to cotangents.
struct GradPair {
  Tensor4 value;
  Pullback pullback;
};

}  // namespace sbnet
