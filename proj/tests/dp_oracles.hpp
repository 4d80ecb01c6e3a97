#pragma once

// Independent dual-pixel rendering oracles: direct per-pixel loops that share
// no code with the library's kernels.

#include <cmath>
#include <cstdlib>

#include "dpdl/dp_synth.hpp"

namespace dpdl::oracle {

// A single-depth scene whose blur radius is exactly `radius`.
inline synth::SceneSpec uniform_scene(const Tensor<float>& sharp, int radius, int max_radius = 5) {
    synth::SceneSpec s;
    s.sharp = sharp;
    s.focal_depth = 1.0;
    s.aperture_gain = 4.0;
    s.max_radius = max_radius;
    s.depth = Tensor<float>({sharp.dim(1), sharp.dim(2)}, static_cast<float>(1.0 + radius / 4.0));
    return s;
}

// Half-sample mirror of an arbitrary index into [0, n).
inline long mirror_index(long i, long n) {
    long j = ((i % (2 * n)) + 2 * n) % (2 * n);
    return j < n ? j : 2 * n - 1 - j;
}

// Direct full-aperture render: each output pixel averages the disc of input
// pixels around it, with the mirror boundary.
inline Tensor<double> full_disc_render(const Tensor<float>& sharp, int radius) {
    const long C = sharp.dim(0), H = sharp.dim(1), W = sharp.dim(2), r = std::abs(radius);
    Tensor<double> out({std::size_t(C), std::size_t(H), std::size_t(W)});
    for (long c = 0; c < C; ++c)
        for (long y = 0; y < H; ++y)
            for (long x = 0; x < W; ++x) {
                double acc = 0.0;
                long count = 0;
                for (long dy = -r; dy <= r; ++dy)
                    for (long dx = -r; dx <= r; ++dx)
                        if (dx * dx + dy * dy <= r * r) {
                            acc += sharp.at(c, mirror_index(y - dy, H), mirror_index(x - dx, W));
                            ++count;
                        }
                out.at(c, y, x) = acc / count;
            }
    return out;
}

inline double centroid_x(const Tensor<float>& img) {
    double m = 0.0, mx = 0.0;
    for (std::size_t y = 0; y < img.dim(1); ++y)
        for (std::size_t x = 0; x < img.dim(2); ++x) {
            m += img.at(0, y, x);
            mx += img.at(0, y, x) * double(x);
        }
    return mx / m;
}

inline Tensor<float> point_scene(std::size_t size) {
    Tensor<float> t({3, size, size});
    for (std::size_t c = 0; c < 3; ++c) t.at(c, size / 2, size / 2) = 1.0f;
    return t;
}

}  // namespace dpdl::oracle
