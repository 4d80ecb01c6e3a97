#pragma once

// Verification harness shared by `dpdl check`, the unit tests and the
// acceptance binary: finite-difference suites over ops, composed modules and
// losses, and the symbolic architecture audit.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dpdl/grad_check.hpp"
#include "dpdl/mccnet.hpp"

namespace dpdl::audit {

struct GradResult {
    std::string name;
    double error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
    bool extended = false;  // evaluated in x87 extended precision
    double seconds = 0.0;
};

struct SuiteOptions {
    double h = 1e-5;
    std::uint64_t seed = 5;
    // Coordinates per tensor for module checks (whole networks use a quarter).
    std::size_t module_coords = 8;
    // Coordinates per tensor for loss checks.
    std::size_t loss_coords = 64;
};

/// Every differentiable primitive on small random inputs, 64-bit.
std::vector<GradResult> op_suite(const SuiteOptions& opts = {});

/// Losses: charbonnier and mix in 64-bit; charbonnier, ssim, ms_ssim and mix
/// also in extended precision.
std::vector<GradResult> loss_suite(const SuiteOptions& opts = {});

// A block under test: maps executor inputs to executor outputs.
template <class Ops>
using BlockFn = std::function<std::vector<typename Ops::Value>(Ops&, const std::vector<typename Ops::Value>&)>;

struct Block {
    std::string name;
    mccnet::NetworkConfig cfg;
    std::vector<Shape> inputs;
    BlockFn<mccnet::TraceOps> trace;
    BlockFn<mccnet::GraphOps<double>> run;
};

/// He-initialized weights and small random (non-zero) biases.
void randomize(ParamStore<float>& store, std::uint64_t seed, double slope = 0.2);

/// Declares a block's parameters by tracing it, with the network's sharing aliases.
ParamStore<float> declare_block(const Block& b);

/// Max relative error over the block's parameters and inputs for the loss
/// sum_i sum(probe_i * out_i), checking at most `max_coords` per tensor.
GradCheckReport block_grad_check(const Block& b, std::uint64_t seed, std::size_t max_coords);

/// Encoder block, MSFE, CC, MSF, decoder block and the whole network, built
/// with `base`'s toggles at width_scale max(base.width_scale, 4).
std::vector<Block> module_blocks(const mccnet::NetworkConfig& base);

std::vector<GradResult> module_suite(const mccnet::NetworkConfig& base, const SuiteOptions& opts = {});

// Published reference figures for the full network.
inline constexpr double kReferenceParams = 5.52e6;
inline constexpr double kReferenceFlops = 978.79e9;
inline constexpr std::size_t kReferenceHeight = 1120;
inline constexpr std::size_t kReferenceWidth = 1680;

struct ArchReport {
    std::size_t params = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    mccnet::FlopEstimate cost;
    double seconds = 0.0;

    double param_ratio() const { return static_cast<double>(params) / kReferenceParams; }
    double mac_ratio() const { return static_cast<double>(cost.macs) / kReferenceFlops; }
    double flop_ratio() const { return static_cast<double>(cost.flops) / kReferenceFlops; }
};

/// Parameter count and traced cost at height x width; no tensors are allocated.
ArchReport architecture(const mccnet::NetworkConfig& cfg, std::size_t height = kReferenceHeight,
                        std::size_t width = kReferenceWidth);

}  // namespace dpdl::audit
