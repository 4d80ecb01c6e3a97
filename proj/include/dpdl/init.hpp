#pragma once

#include <random>

#include "dpdl/tensor.hpp"

namespace dpdl::train {

/// Zero-mean normal draws with variance 2 / ((1 + slope^2) * fan_in), the
/// He scheme for leaky-ReLU networks.
Tensor<float> he_init(const Shape& shape, std::size_t fan_in, double slope, std::mt19937_64& rng);

}  // namespace dpdl::train
