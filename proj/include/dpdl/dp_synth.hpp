#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpdl/tensor.hpp"

namespace dpdl::synth {

struct SceneSpec {
    Tensor<float> sharp;  // 3 x H x W in [0, 1]
    Tensor<float> depth;  // H x W, arbitrary units
    double focal_depth = 1.0;
    // Blur radius in pixels per unit of (depth - focal_depth).
    double aperture_gain = 8.0;
    int max_radius = 5;
    // Depth layers composited back to front.
    int max_layers = 8;
};

struct DPSample {
    Tensor<float> left;
    Tensor<float> right;
    Tensor<float> gt;
    Tensor<float> disparity;  // H x W signed blur radius used for rendering
};

struct KernelPair {
    Tensor<double> left;   // (2|r|+1) x (2|r|+1)
    Tensor<double> right;
};

/// Normalized disc of radius |r|: pixels with dx^2 + dy^2 <= r^2.
Tensor<double> disc_kernel(int radius);

/// Half-disc kernels of the two dual-pixel views. For r > 0 the left view
/// keeps the dx < 0 half, the right view the dx > 0 half, and the centre
/// column is shared equally; r < 0 swaps the halves. Each sums to 1, and
/// their average is disc_kernel(r). r = 0 gives two 1x1 identities.
KernelPair split_psf(int radius, int max_radius);

/// Signed blur radius of one depth value, rounded to whole pixels.
int blur_radius(double depth, const SceneSpec& scene);

/// 2-D convolution (a point spreads to p + d with weight k(d)) with
/// half-sample symmetric reflection at the borders (-1 -> 0). Flat fields are
/// preserved exactly; the global mean is preserved exactly when the image is
/// constant within the kernel radius of every border, and otherwise changes by
/// at most r (1/H + 1/W) times the value range. Kernel radius must be below
/// both extents.
Tensor<double> blur_reflect(const Tensor<double>& plane, const Tensor<double>& kernel);

/// Renders the two views of `scene`: depth is quantized into layers of equal
/// radius, each layer (premultiplied colour and coverage) is blurred with its
/// split kernels and composited back to front with "over", then divided by
/// the accumulated coverage. Pixels of radius 0 are copied from `sharp`.
DPSample render_dp(const SceneSpec& scene);

struct DatasetOptions {
    double focal_depth = 1.0;
    double aperture_gain = 8.0;
    int max_radius = 4;
    int min_layers = 2;
    int max_layers = 4;
    // Texture grating frequencies, cycles per pixel.
    double min_frequency = 0.02;
    double max_frequency = 0.10;
};

/// Scene of sample `index` in the dataset of `seed`: a textured background
/// plus textured discs and rectangles on 2..4 depth layers, at least one in
/// front of and one behind the focal plane.
SceneSpec make_scene(std::uint64_t seed, std::size_t index, std::size_t size, const DatasetOptions& opts = {});

/// `count` rendered scenes of size x size; deterministic per seed.
std::vector<DPSample> make_dataset(std::uint64_t seed, std::size_t count, std::size_t size,
                                   const DatasetOptions& opts = {});

inline constexpr std::size_t kMinSize = 16;

/// Writes each sample as PPM views plus TNSR tensors and a manifest.json
/// listing the files, seed and scene parameters.
void write_dataset(const std::filesystem::path& dir, const std::vector<DPSample>& samples, std::uint64_t seed,
                   const DatasetOptions& opts);

/// Reads a directory written by write_dataset (the TNSR tensors, bit-exact).
std::vector<DPSample> load_dataset(const std::filesystem::path& dir);

}  // namespace dpdl::synth
