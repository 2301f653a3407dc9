#pragma once

#include "sbnet/analysis.hpp"
#include "sbnet/bench.hpp"
#include "sbnet/config.hpp"
#include "sbnet/conv.hpp"
#include "sbnet/data.hpp"
#include "sbnet/gradcheck.hpp"
#include "sbnet/layers.hpp"
#include "sbnet/network.hpp"
#include "sbnet/properties.hpp"
#include "sbnet/spatial_bottleneck.hpp"
#include "sbnet/tensor.hpp"
#include "sbnet/training.hpp"
