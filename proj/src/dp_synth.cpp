#include "dpdl/dp_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "dpdl/errors.hpp"
#include "dpdl/tensor_io.hpp"
#include "json.hpp"

namespace dpdl::synth {

namespace {

Tensor<double> half_disc(int r, bool keep_negative_dx) {
    const int n = 2 * r + 1;
    Tensor<double> k({std::size_t(n), std::size_t(n)});
    double total = 0.0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            if (dx * dx + dy * dy > r * r) continue;
            double w = dx == 0 ? 0.5 : ((dx < 0) == keep_negative_dx ? 1.0 : 0.0);
            k[(dy + r) * n + (dx + r)] = w;
            total += w;
        }
    for (auto& v : k.data()) v /= total;
    return k;
}

// Half-sample symmetric reflection: -1 -> 0, n -> n - 1.
std::vector<std::size_t> reflected(std::size_t n, int r) {
    std::vector<std::size_t> idx(n + 2 * r);
    for (int i = -r; i < static_cast<int>(n) + r; ++i) {
        int j = i < 0 ? -i - 1 : i;
        if (j >= static_cast<int>(n)) j = 2 * static_cast<int>(n) - 1 - j;
        idx[i + r] = static_cast<std::size_t>(j);
    }
    return idx;
}

void require_image(const SceneSpec& s) {
    if (s.sharp.rank() != 3 || s.sharp.dim(0) != 3)
        throw ShapeError("render_dp: sharp image must be 3 x H x W, got " + to_string(s.sharp.shape()));
    if (s.depth.shape() != Shape{s.sharp.dim(1), s.sharp.dim(2)})
        throw ShapeError("render_dp: depth " + to_string(s.depth.shape()) + " does not match image " +
                         to_string(s.sharp.shape()));
    if (s.max_radius < 0) throw PreconditionError("render_dp: max_radius must be non-negative");
    if (static_cast<std::size_t>(s.max_radius) >= std::min(s.sharp.dim(1), s.sharp.dim(2)))
        throw PreconditionError("render_dp: max_radius " + std::to_string(s.max_radius) +
                                " must be below both image extents");
    if (s.max_layers < 1) throw PreconditionError("render_dp: max_layers must be positive");
}

struct Layer {
    int radius;
    double depth;  // representative depth, for ordering
    std::vector<std::size_t> pixels;
};

std::vector<Layer> quantize_layers(const SceneSpec& s) {
    const auto& d = s.depth;
    std::map<int, Layer> by_radius;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const int r = blur_radius(d[i], s);
        auto [it, fresh] = by_radius.try_emplace(r, Layer{r, 0.0, {}});
        it->second.depth += d[i];
        it->second.pixels.push_back(i);
    }
    std::vector<Layer> layers;
    if (by_radius.size() <= static_cast<std::size_t>(s.max_layers)) {
        for (auto& [r, l] : by_radius) {
            l.depth /= static_cast<double>(l.pixels.size());
            layers.push_back(std::move(l));
        }
    } else {
        // equal-width depth bins, each rendered at the radius of its mean depth
        const auto [lo, hi] = std::minmax_element(d.data().begin(), d.data().end());
        const double span = std::max(double(*hi) - double(*lo), 1e-12);
        std::vector<Layer> bins(s.max_layers, Layer{0, 0.0, {}});
        for (std::size_t i = 0; i < d.size(); ++i) {
            auto b = static_cast<std::size_t>((d[i] - *lo) / span * s.max_layers);
            b = std::min<std::size_t>(b, s.max_layers - 1);
            bins[b].depth += d[i];
            bins[b].pixels.push_back(i);
        }
        for (auto& l : bins) {
            if (l.pixels.empty()) continue;
            l.depth /= static_cast<double>(l.pixels.size());
            l.radius = blur_radius(l.depth, s);
            layers.push_back(std::move(l));
        }
    }
    // back to front: farthest first
    std::stable_sort(layers.begin(), layers.end(), [](const Layer& a, const Layer& b) { return a.depth > b.depth; });
    return layers;
}

Tensor<double> channel(const Tensor<float>& img, std::size_t c) {
    const std::size_t n = img.dim(1) * img.dim(2);
    Tensor<double> out({img.dim(1), img.dim(2)});
    for (std::size_t i = 0; i < n; ++i) out[i] = img[c * n + i];
    return out;
}

// ---------------------------------------------------------------------------
// Procedural scenes

struct Grating {
    double fx, fy, phase, amp;
    double tint[3];
};

struct Texture {
    double base[3];
    std::vector<Grating> gratings;

    double at(std::size_t c, double y, double x) const {
        double v = base[c];
        for (const auto& g : gratings)
            v += g.amp * g.tint[c] * std::sin(2.0 * std::numbers::pi * (g.fx * x + g.fy * y) + g.phase);
        return std::clamp(v, 0.0, 1.0);
    }
};

Texture random_texture(std::mt19937_64& rng, const DatasetOptions& opts) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Texture t{};
    for (double& b : t.base) b = 0.2 + 0.6 * u(rng);
    const int n = 2 + static_cast<int>(u(rng) * 3);
    for (int i = 0; i < n; ++i) {
        const double f = opts.min_frequency + (opts.max_frequency - opts.min_frequency) * u(rng), theta = std::numbers::pi * u(rng);
        Grating g{f * std::cos(theta), f * std::sin(theta), 2.0 * std::numbers::pi * u(rng), 0.1 + 0.2 * u(rng), {}};
        for (double& c : g.tint) c = 0.5 + 0.5 * u(rng);
        t.gratings.push_back(g);
    }
    return t;
}

struct Shape2D {
    bool disc;
    double cy, cx, ry, rx;
    bool contains(double y, double x) const {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        return disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
    }
};

}  // namespace

Tensor<double> disc_kernel(int radius) {
    const int r = std::abs(radius), n = 2 * r + 1;
    Tensor<double> k({std::size_t(n), std::size_t(n)});
    double total = 0.0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (dx * dx + dy * dy <= r * r) {
                k[(dy + r) * n + (dx + r)] = 1.0;
                total += 1.0;
            }
    for (auto& v : k.data()) v /= total;
    return k;
}

KernelPair split_psf(int radius, int max_radius) {
    if (std::abs(radius) > max_radius)
        throw PreconditionError("split_psf: |radius| " + std::to_string(std::abs(radius)) + " exceeds the cap " +
                                std::to_string(max_radius));
    const int r = std::abs(radius);
    if (r == 0) return {Tensor<double>({1, 1}, 1.0), Tensor<double>({1, 1}, 1.0)};
    auto neg = half_disc(r, true), pos = half_disc(r, false);
    if (radius > 0) return {std::move(neg), std::move(pos)};
    return {std::move(pos), std::move(neg)};
}

int blur_radius(double depth, const SceneSpec& scene) {
    const double r = scene.aperture_gain * (depth - scene.focal_depth);
    return static_cast<int>(std::lround(std::clamp(r, -double(scene.max_radius), double(scene.max_radius))));
}

Tensor<double> blur_reflect(const Tensor<double>& plane, const Tensor<double>& kernel) {
    if (plane.rank() != 2) throw ShapeError("blur_reflect: expected H x W, got " + to_string(plane.shape()));
    const std::size_t kn = kernel.dim(0);
    if (kernel.rank() != 2 || kernel.dim(1) != kn || kn % 2 == 0)
        throw ShapeError("blur_reflect: kernel must be odd and square, got " + to_string(kernel.shape()));
    const std::size_t H = plane.dim(0), W = plane.dim(1);
    const int r = static_cast<int>(kn / 2);
    if (static_cast<std::size_t>(r) >= std::min(H, W))
        throw PreconditionError("blur_reflect: kernel radius " + std::to_string(r) + " must be below both extents");
    if (r == 0) {
        Tensor<double> out = plane;
        for (auto& v : out.data()) v *= kernel[0];
        return out;
    }
    const auto ry = reflected(H, r), rx = reflected(W, r);
    Tensor<double> out({H, W});
    // out(y, x) = sum_d k(d) in(reflect(y - dy, x - dx))
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double k = kernel[(dy + r) * kn + (dx + r)];
            if (k == 0.0) continue;
            for (std::size_t y = 0; y < H; ++y) {
                const double* src = plane.ptr() + ry[y - dy + r] * W;
                double* dst = out.ptr() + y * W;
                for (std::size_t x = 0; x < W; ++x) dst[x] += k * src[rx[x - dx + r]];
            }
        }
    return out;
}

DPSample render_dp(const SceneSpec& scene) {
    require_image(scene);
    const std::size_t H = scene.sharp.dim(1), W = scene.sharp.dim(2), n = H * W;
    const auto layers = quantize_layers(scene);

    std::vector<Tensor<double>> sharp;
    for (std::size_t c = 0; c < 3; ++c) sharp.push_back(channel(scene.sharp, c));

    DPSample out;
    out.gt = scene.sharp;
    out.disparity = Tensor<float>({H, W});
    for (const auto& l : layers)
        for (auto i : l.pixels) out.disparity[i] = static_cast<float>(l.radius);

    auto render_view = [&](bool left) {
        std::vector<Tensor<double>> acc(3, Tensor<double>({H, W}));
        Tensor<double> cover({H, W});
        for (const auto& l : layers) {
            const auto kp = split_psf(l.radius, scene.max_radius);
            const auto& k = left ? kp.left : kp.right;
            Tensor<double> mask({H, W});
            for (auto i : l.pixels) mask[i] = 1.0;
            const auto a = blur_reflect(mask, k);
            for (std::size_t c = 0; c < 3; ++c) {
                Tensor<double> pre({H, W});
                for (auto i : l.pixels) pre[i] = sharp[c][i];
                const auto col = blur_reflect(pre, k);
                for (std::size_t i = 0; i < n; ++i) acc[c][i] = col[i] + (1.0 - a[i]) * acc[c][i];
            }
            for (std::size_t i = 0; i < n; ++i) cover[i] = a[i] + (1.0 - a[i]) * cover[i];
        }
        Tensor<float> img({3, H, W});
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < n; ++i) {
                const double v = cover[i] > 0.0 ? acc[c][i] / cover[i] : sharp[c][i];
                img[c * n + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        // in-focus pixels are the sharp image exactly
        for (std::size_t i = 0; i < n; ++i)
            if (out.disparity[i] == 0.0f)
                for (std::size_t c = 0; c < 3; ++c) img[c * n + i] = scene.sharp[c * n + i];
        return img;
    };
    out.left = render_view(true);
    out.right = render_view(false);
    return out;
}

SceneSpec make_scene(std::uint64_t seed, std::size_t index, std::size_t size, const DatasetOptions& opts) {
    if (size < kMinSize)
        throw PreconditionError("make_dataset: size " + std::to_string(size) + " is below the minimum " +
                                std::to_string(kMinSize));
    if (opts.min_layers < 2 || opts.max_layers < opts.min_layers)
        throw ConfigError("make_dataset: need 2 <= min_layers <= max_layers");
    if (!(opts.min_frequency > 0.0 && opts.max_frequency >= opts.min_frequency && opts.max_frequency <= 0.5))
        throw ConfigError("make_dataset: texture frequencies must satisfy 0 < min <= max <= 0.5");
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(index),
                      std::uint32_t(index >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    const int layers = opts.min_layers + static_cast<int>(u(rng) * (opts.max_layers - opts.min_layers + 1));
    // depth offsets that reach about max_radius at the extremes
    const double reach = opts.aperture_gain > 0.0 ? (opts.max_radius + 0.5) / opts.aperture_gain : 0.5;
    const double f = opts.focal_depth;
    const double background = f + reach * (0.3 + 0.7 * u(rng));
    std::vector<double> depths{f - reach * (0.3 + 0.7 * u(rng))};  // one layer in front of the focal plane
    for (int i = 2; i < layers; ++i) depths.push_back(f - reach + (background - f + reach) * u(rng));
    std::sort(depths.rbegin(), depths.rend());  // painted back to front

    const double S = static_cast<double>(size);
    std::vector<std::pair<Shape2D, Texture>> shapes;
    for (std::size_t i = 0; i < depths.size(); ++i) {
        Shape2D s{u(rng) < 0.5, S * (0.15 + 0.7 * u(rng)), S * (0.15 + 0.7 * u(rng)), S * (0.12 + 0.2 * u(rng)),
                  S * (0.12 + 0.2 * u(rng))};
        shapes.emplace_back(s, random_texture(rng, opts));
    }
    const Texture bg = random_texture(rng, opts);

    SceneSpec scene;
    scene.focal_depth = f;
    scene.aperture_gain = opts.aperture_gain;
    scene.max_radius = opts.max_radius;
    scene.sharp = Tensor<float>({3, size, size});
    scene.depth = Tensor<float>({size, size}, static_cast<float>(background));
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const Texture* tex = &bg;
            for (std::size_t i = 0; i < shapes.size(); ++i)
                if (shapes[i].first.contains(double(y), double(x))) {
                    tex = &shapes[i].second;
                    scene.depth[y * size + x] = static_cast<float>(depths[i]);
                }
            for (std::size_t c = 0; c < 3; ++c) scene.sharp.at(c, y, x) = static_cast<float>(tex->at(c, double(y), double(x)));
        }
    return scene;
}

std::vector<DPSample> make_dataset(std::uint64_t seed, std::size_t count, std::size_t size,
                                   const DatasetOptions& opts) {
    std::vector<DPSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(render_dp(make_scene(seed, i, size, opts)));
    return out;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<DPSample>& samples, std::uint64_t seed,
                   const DatasetOptions& opts) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        char stem[32];
        std::snprintf(stem, sizeof stem, "sample_%05zu", i);
        nlohmann::json e;
        for (auto [name, t] : {std::pair{"left", &s.left}, std::pair{"right", &s.right}, std::pair{"gt", &s.gt}}) {
            const std::string base = std::string(stem) + "_" + name;
            save_tnsr(dir / (base + ".tnsr"), *t);
            save_ppm(dir / (base + ".ppm"), *t);
            e[name] = base + ".tnsr";
            e[std::string(name) + "_ppm"] = base + ".ppm";
        }
        const std::string disp = std::string(stem) + "_disparity.tnsr";
        save_tnsr(dir / disp, s.disparity);
        e["disparity"] = disp;
        std::set<int> radii;
        for (float r : s.disparity.data()) radii.insert(static_cast<int>(r));
        e["layer_radii"] = std::vector<int>(radii.begin(), radii.end());
        entries.push_back(std::move(e));
    }
    const std::size_t size = samples.empty() ? 0 : samples.front().gt.dim(1);
    nlohmann::json m = {{"format", "dpdl-dp-dataset"},
                        {"version", 1},
                        {"seed", seed},
                        {"count", samples.size()},
                        {"size", size},
                        {"scene",
                         {{"focal_depth", opts.focal_depth},
                          {"aperture_gain", opts.aperture_gain},
                          {"max_radius", opts.max_radius},
                          {"min_layers", opts.min_layers},
                          {"min_frequency", opts.min_frequency},
                          {"max_frequency", opts.max_frequency},
                          {"max_layers", opts.max_layers}}},
                        {"samples", entries}};
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
    os << m.dump(2) << "\n";
    if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
}

std::vector<DPSample> load_dataset(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw IoError("no manifest.json in " + dir.string());
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
    }
    if (m.value("format", "") != "dpdl-dp-dataset") throw IoError(dir.string() + " is not a dp dataset");
    std::vector<DPSample> out;
    for (const auto& e : m.at("samples")) {
        DPSample s;
        s.left = load_tnsr(dir / e.at("left").get<std::string>());
        s.right = load_tnsr(dir / e.at("right").get<std::string>());
        s.gt = load_tnsr(dir / e.at("gt").get<std::string>());
        s.disparity = load_tnsr(dir / e.at("disparity").get<std::string>());
        if (s.left.rank() != 3 || s.left.dim(0) != 3 || s.right.shape() != s.left.shape() ||
            s.gt.shape() != s.left.shape())
            throw IoError("sample views in " + dir.string() + " disagree in shape");
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace dpdl::synth
