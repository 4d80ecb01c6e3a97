#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "dpdl/graph.hpp"

namespace dpdl::losses {

struct LossConfig {
    double epsilon = 1e-3;
    int msssim_scales = 5;
    // Per-scale exponents, finest first. Only the first `msssim_scales` are
    // used and must sum to 1.
    std::vector<double> msssim_weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    double mix_alpha = 0.5;

    /// Throws ConfigError unless epsilon > 0, weights positive and summing to 1, alpha in [0, 1].
    void validate() const;
};

inline constexpr std::size_t kWindow = 11;
inline constexpr double kSigma = 1.5;
inline constexpr double kK1 = 0.01;
inline constexpr double kK2 = 0.03;

/// Normalized 11-tap Gaussian, sigma 1.5.
const std::vector<double>& gaussian_window();

/// Smallest spatial extent MS-SSIM accepts at the given number of scales.
std::size_t msssim_min_extent(int scales);

/// `cfg` with as many scales as an h x w image supports (at most cfg.msssim_scales),
/// keeping the leading weights renormalized to sum 1.
LossConfig fit_scales(const LossConfig& cfg, std::size_t h, std::size_t w);

/// mean(sqrt((pred - target)^2 + eps^2)).
template <typename T>
Var<T> charbonnier(Var<T> pred, Var<T> target, double epsilon);

/// Multi-scale SSIM on C x H x W images in [0, 1], averaged over channels.
template <typename T>
Var<T> ms_ssim(Var<T> pred, Var<T> target, const LossConfig& cfg);

/// Single-scale SSIM (mean of the SSIM map), averaged over channels.
template <typename T>
Var<T> ssim(Var<T> pred, Var<T> target);

/// alpha (1 - ms_ssim) + (1 - alpha) charbonnier.
template <typename T>
Var<T> mix_loss(Var<T> pred, Var<T> target, const LossConfig& cfg);

}  // namespace dpdl::losses

namespace dpdl::metrics {

struct MetricOptions {
    double peak = 1.0;
    // Round both images to 8-bit levels (after clamping to [0, 1]) first.
    bool quantize_8bit = false;
};

/// 10 log10(peak^2 / MSE); +infinity when MSE is 0.
double psnr(const Tensor<float>& pred, const Tensor<float>& target, const MetricOptions& opts = {});
double ssim(const Tensor<float>& pred, const Tensor<float>& target, const MetricOptions& opts = {});
double ms_ssim(const Tensor<float>& pred, const Tensor<float>& target, const losses::LossConfig& cfg = {},
               const MetricOptions& opts = {});
double mae(const Tensor<float>& pred, const Tensor<float>& target, const MetricOptions& opts = {});

}  // namespace dpdl::metrics
