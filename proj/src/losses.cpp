#include "dpdl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "dpdl/errors.hpp"

namespace dpdl::losses {

void LossConfig::validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("loss epsilon must be positive");
    if (msssim_scales < 1 || static_cast<std::size_t>(msssim_scales) > msssim_weights.size())
        throw ConfigError("msssim_scales must lie in [1, " + std::to_string(msssim_weights.size()) + "]");
    double total = 0.0;
    for (int i = 0; i < msssim_scales; ++i) {
        if (!(msssim_weights[i] > 0.0)) throw ConfigError("msssim weights must be positive");
        total += msssim_weights[i];
    }
    if (std::abs(total - 1.0) > 1e-3) throw ConfigError("msssim weights must sum to 1, got " + std::to_string(total));
    if (!(mix_alpha >= 0.0 && mix_alpha <= 1.0)) throw ConfigError("mix_alpha must lie in [0, 1]");
}

const std::vector<double>& gaussian_window() {
    static const std::vector<double> taps = [] {
        std::vector<double> t(kWindow);
        const double c = (kWindow - 1) / 2.0;
        for (std::size_t i = 0; i < kWindow; ++i) t[i] = std::exp(-(i - c) * (i - c) / (2 * kSigma * kSigma));
        const double s = std::accumulate(t.begin(), t.end(), 0.0);
        for (auto& v : t) v /= s;
        return t;
    }();
    return taps;
}

std::size_t msssim_min_extent(int scales) {
    return (std::size_t(1) << (scales - 1)) * kWindow;
}

LossConfig fit_scales(const LossConfig& cfg, std::size_t h, std::size_t w) {
    LossConfig out = cfg;
    while (out.msssim_scales > 1 && std::min(h, w) < msssim_min_extent(out.msssim_scales)) --out.msssim_scales;
    if (std::min(h, w) < msssim_min_extent(out.msssim_scales))
        throw PreconditionError("images of " + std::to_string(h) + "x" + std::to_string(w) +
                                " are below the SSIM window of " + std::to_string(kWindow));
    if (out.msssim_scales != cfg.msssim_scales) {
        double total = 0.0;
        for (int i = 0; i < out.msssim_scales; ++i) total += cfg.msssim_weights[i];
        out.msssim_weights.assign(cfg.msssim_weights.begin(), cfg.msssim_weights.begin() + out.msssim_scales);
        for (auto& v : out.msssim_weights) v /= total;
    }
    return out;
}

template <typename T>
Var<T> charbonnier(Var<T> pred, Var<T> target, double epsilon) {
    auto d = sub(pred, target);
    return mean(sqrt(add_scalar(square(d), epsilon * epsilon)));
}

namespace {

template <typename T>
struct SsimTerms {
    Var<T> cs;    // per-channel mean contrast-structure
    Var<T> ssim;  // per-channel mean SSIM
};

template <typename T>
SsimTerms<T> ssim_terms(Var<T> x, Var<T> y) {
    const auto& g = gaussian_window();
    const double c1 = kK1 * kK1, c2 = kK2 * kK2;
    auto mx = separable_filter_valid(x, g);
    auto my = separable_filter_valid(y, g);
    auto mxx = mul(mx, mx), myy = mul(my, my), mxy = mul(mx, my);
    auto sxx = sub(separable_filter_valid(mul(x, x), g), mxx);
    auto syy = sub(separable_filter_valid(mul(y, y), g), myy);
    auto sxy = sub(separable_filter_valid(mul(x, y), g), mxy);
    auto lum = div(add_scalar(mul_scalar(mxy, 2.0), c1), add_scalar(add(mxx, myy), c1));
    auto cs = div(add_scalar(mul_scalar(sxy, 2.0), c2), add_scalar(add(sxx, syy), c2));
    return {channel_mean(cs), channel_mean(mul(lum, cs))};
}

template <typename T>
void require_pair(Var<T> pred, Var<T> target, const char* what) {
    if (pred.shape() != target.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(pred.shape()) + " vs " +
                         to_string(target.shape()));
    require_chw(pred.value(), what);
}

// Floor applied before fractional powers: negative or zero similarity terms
// would otherwise give NaN values or infinite gradients.
constexpr double kFloor = 1e-6;

}  // namespace

template <typename T>
Var<T> ms_ssim(Var<T> pred, Var<T> target, const LossConfig& cfg) {
    cfg.validate();
    require_pair(pred, target, "ms_ssim");
    const std::size_t need = msssim_min_extent(cfg.msssim_scales);
    if (pred.shape()[1] < need || pred.shape()[2] < need)
        throw PreconditionError("ms_ssim: " + std::to_string(cfg.msssim_scales) + " scales need extents of at least " +
                                std::to_string(need) + ", got " + to_string(pred.shape()));
    Var<T> x = pred, y = target, prod{};
    for (int s = 0; s < cfg.msssim_scales; ++s) {
        const bool last = s + 1 == cfg.msssim_scales;
        auto t = ssim_terms(x, y);
        auto f = pow_scalar(clamp_min(last ? t.ssim : t.cs, kFloor), cfg.msssim_weights[s]);
        prod = s == 0 ? f : mul(prod, f);
        if (!last) {
            x = avgpool2(x);
            y = avgpool2(y);
        }
    }
    return mean(prod);
}

template <typename T>
Var<T> ssim(Var<T> pred, Var<T> target) {
    require_pair(pred, target, "ssim");
    if (pred.shape()[1] < kWindow || pred.shape()[2] < kWindow)
        throw PreconditionError("ssim: extents must be at least " + std::to_string(kWindow) + ", got " +
                                to_string(pred.shape()));
    return mean(ssim_terms(pred, target).ssim);
}

template <typename T>
Var<T> mix_loss(Var<T> pred, Var<T> target, const LossConfig& cfg) {
    auto c = charbonnier(pred, target, cfg.epsilon);
    if (cfg.mix_alpha == 0.0) return c;
    auto m = mul_scalar(add_scalar(mul_scalar(ms_ssim(pred, target, cfg), -1.0), 1.0), cfg.mix_alpha);
    if (cfg.mix_alpha == 1.0) return m;
    return add(m, mul_scalar(c, 1.0 - cfg.mix_alpha));
}

#define DPDL_INSTANTIATE_LOSSES(T)                                  \
    template Var<T> charbonnier(Var<T>, Var<T>, double);            \
    template Var<T> ms_ssim(Var<T>, Var<T>, const LossConfig&);     \
    template Var<T> ssim(Var<T>, Var<T>);                           \
    template Var<T> mix_loss(Var<T>, Var<T>, const LossConfig&);

DPDL_INSTANTIATE_LOSSES(float)
DPDL_INSTANTIATE_LOSSES(double)
DPDL_INSTANTIATE_LOSSES(long double)

}  // namespace dpdl::losses

namespace dpdl::metrics {

namespace {

Tensor<double> prepare(const Tensor<float>& t, const MetricOptions& opts) {
    Tensor<double> out = t.cast<double>();
    if (opts.quantize_8bit)
        for (auto& v : out.data()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    return out;
}

void require_same(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    if (a.empty()) throw ShapeError(std::string(what) + ": empty images");
}

template <class F>
double on_graph(const Tensor<float>& pred, const Tensor<float>& target, const MetricOptions& opts, F f) {
    Graph<double> g;
    return f(g.input(prepare(pred, opts)), g.input(prepare(target, opts))).value().item();
}

}  // namespace

double psnr(const Tensor<float>& pred, const Tensor<float>& target, const MetricOptions& opts) {
    require_same(pred, target, "psnr");
    if (!(opts.peak > 0.0)) throw PreconditionError("psnr: peak must be positive");
    const auto a = prepare(pred, opts), b = prepare(target, opts);
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
    const double mse = se / static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(opts.peak * opts.peak / mse);
}

double ssim(const Tensor<float>& pred, const Tensor<float>& target, const MetricOptions& opts) {
    require_same(pred, target, "ssim");
    return on_graph(pred, target, opts, [](auto p, auto t) { return losses::ssim(p, t); });
}

double ms_ssim(const Tensor<float>& pred, const Tensor<float>& target, const losses::LossConfig& cfg,
               const MetricOptions& opts) {
    require_same(pred, target, "ms_ssim");
    return on_graph(pred, target, opts, [&](auto p, auto t) { return losses::ms_ssim(p, t, cfg); });
}

double mae(const Tensor<float>& pred, const Tensor<float>& target, const MetricOptions& opts) {
    require_same(pred, target, "mae");
    const auto a = prepare(pred, opts), b = prepare(target, opts);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

}  // namespace dpdl::metrics
