#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dpdl/graph.hpp"

namespace dpdl {

struct GradCheckReport {
    // coordinate with the largest error
    std::size_t tensor = 0;  // index into the checked parameter list (0 for grad_check)
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double error = 0.0;
    std::size_t checked = 0;
    // coordinates whose step had to be shrunk, and those left out as non-smooth
    std::size_t refined = 0;
    std::size_t skipped = 0;
};

struct GradCheckOptions {
    double h = 1e-5;
    // Check at most this many coordinates per tensor (0 = all), chosen by `seed`.
    std::size_t max_coords = 0;
    std::uint64_t seed = 0;
    // Piecewise-linear ops (leaky ReLU, max pooling) make f non-differentiable
    // on a measure-zero set; a probe interval that straddles such a point does
    // not estimate the derivative. When set, each coordinate's difference at h
    // is compared with the one at h/2; on disagreement the step shrinks 10x (up
    // to 3 times), and a coordinate that never settles is skipped and counted.
    bool refine_kinks = false;
    GradCheckReport* report = nullptr;
};

/// Scalar-valued function of one input, evaluated in 64-bit.
using ScalarFn = std::function<Var<double>(Graph<double>&, Var<double>)>;

/// Max over checked coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
/// numeric being the central difference with step h.
double grad_check(const ScalarFn& f, const Tensor<double>& x, const GradCheckOptions& opts = {});

/// The same check evaluated in x87 extended precision. For losses whose
/// per-coordinate derivatives are many orders below the loss value, where a
/// 64-bit central difference is dominated by rounding in f.
using ExtendedFn = std::function<Var<long double>(Graph<long double>&, Var<long double>)>;
double grad_check(const ExtendedFn& f, const Tensor<long double>& x, const GradCheckOptions& opts = {});

/// Same measure over parameters. `f` must bind every parameter through Graph::param.
double grad_check_params(const std::function<Var<double>(Graph<double>&)>& f,
                         const std::vector<Parameter<double>*>& params, const GradCheckOptions& opts = {});

}  // namespace dpdl
