#include "dpdl/init.hpp"

#include <cmath>

#include "dpdl/errors.hpp"

namespace dpdl::train {

Tensor<float> he_init(const Shape& shape, std::size_t fan_in, double slope, std::mt19937_64& rng) {
    if (fan_in < 1) throw ConfigError("he_init: fan_in must be at least 1");
    const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<float> t(shape);
    for (auto& v : t.data()) v = static_cast<float>(dist(rng));
    return t;
}

}  // namespace dpdl::train
