#pragma once

#include <random>

#include "pinncast/tensor.hpp"

namespace pinncast {

/// Normal(0, std) samples redrawn until they fall within two standard deviations.
Tensor trunc_normal(Shape shape, double std, std::mt19937_64& rng);

/// Leaf parameter filled with a constant.
Tensor parameter(Shape shape, double fill);

}  // namespace pinncast
