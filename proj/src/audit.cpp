#include "dpdl/audit.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include "dpdl/init.hpp"
#include "dpdl/losses.hpp"

namespace dpdl::audit {

namespace {

using mccnet::GraphOps;
using mccnet::NetworkConfig;
using mccnet::TraceOps;
using mccnet::TraceValue;

template <typename T = double>
Tensor<T> uniform(const Shape& shape, std::uint64_t seed, double lo, double hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(u(rng));
    return t;
}

// sum(w * y) with fixed weights in [0.5, 1.5]: every output coordinate gets a
// distinct, non-degenerate gradient.
template <typename T>
Var<T> probe(Graph<T>& g, Var<T> y, std::uint64_t seed = 99) {
    return sum(mul(y, g.input(uniform<T>(y.shape(), seed, 0.5, 1.5))));
}

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

using Unary = std::function<Var<double>(Var<double>)>;
using Binary = std::function<Var<double>(Var<double>, Var<double>)>;

GradCheckOptions base_options(const SuiteOptions& opts) {
    GradCheckOptions o;
    o.h = opts.h;
    o.seed = opts.seed;
    return o;
}

GradResult unary_case(const std::string& name, const Shape& shape, const Unary& op, const SuiteOptions& opts,
                      std::uint64_t seed, double lo = -1.0, double hi = 1.0, bool kinked = false) {
    Timer t;
    GradCheckReport rep;
    auto o = base_options(opts);
    o.refine_kinks = kinked;
    o.report = &rep;
    const auto x = uniform(shape, seed, lo, hi);
    const double e = grad_check([&](Graph<double>& g, Var<double> v) { return probe(g, op(v)); }, x, o);
    return {name, e, rep.checked, rep.skipped, false, t.seconds()};
}

GradResult binary_case(const std::string& name, const Shape& sa, const Shape& sb, const Binary& op,
                       const SuiteOptions& opts, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Timer t;
    GradResult r{name, 0.0, 0, 0, false, 0.0};
    const auto a = uniform(sa, seed, lo, hi), b = uniform(sb, seed + 1, lo, hi);
    for (int side = 0; side < 2; ++side) {
        GradCheckReport rep;
        auto o = base_options(opts);
        o.report = &rep;
        const double e =
            side == 0 ? grad_check([&](Graph<double>& g, Var<double> v) { return probe(g, op(v, g.input(b))); }, a, o)
                      : grad_check([&](Graph<double>& g, Var<double> v) { return probe(g, op(g.input(a), v)); }, b, o);
        r.error = std::max(r.error, e);
        r.checked += rep.checked;
        r.skipped += rep.skipped;
    }
    r.seconds = t.seconds();
    return r;
}

GradResult conv_case(const std::string& name, std::size_t k, int stride, int padding, const SuiteOptions& opts) {
    Timer t;
    GradResult r{name, 0.0, 0, 0, false, 0.0};
    const auto x = uniform({2, 6, 5}, 21, -1, 1), w = uniform({3, 2, k, k}, 22, -1, 1), b = uniform({3}, 23, -1, 1);
    auto conv = [&](Var<double> xv, Var<double> wv, Var<double> bv) { return conv2d(xv, wv, bv, stride, padding); };
    const std::function<Var<double>(Graph<double>&, Var<double>)> fs[3] = {
        [&](Graph<double>& g, Var<double> v) { return probe(g, conv(v, g.input(w), g.input(b))); },
        [&](Graph<double>& g, Var<double> v) { return probe(g, conv(g.input(x), v, g.input(b))); },
        [&](Graph<double>& g, Var<double> v) { return probe(g, conv(g.input(x), g.input(w), v)); }};
    const Tensor<double>* args[3] = {&x, &w, &b};
    for (int i = 0; i < 3; ++i) {
        GradCheckReport rep;
        auto o = base_options(opts);
        o.report = &rep;
        r.error = std::max(r.error, grad_check(fs[i], *args[i], o));
        r.checked += rep.checked;
    }
    r.seconds = t.seconds();
    return r;
}

}  // namespace

std::vector<GradResult> op_suite(const SuiteOptions& opts) {
    std::vector<GradResult> out;
    out.push_back(conv_case("conv2d 3x3", 3, 1, -1, opts));
    out.push_back(conv_case("conv2d 3x3 stride 2 unpadded", 3, 2, 0, opts));
    out.push_back(conv_case("conv2d 1x1", 1, 1, -1, opts));
    out.push_back(conv_case("conv2d 5x5", 5, 1, -1, opts));
    out.push_back(unary_case("leaky_relu", {2, 4, 4}, [](auto v) { return leaky_relu(v, 0.2); }, opts, 30, -1, 1, true));
    out.push_back(unary_case("relu", {2, 4, 4}, [](auto v) { return relu(v); }, opts, 31, -1, 1, true));
    out.push_back(unary_case("sigmoid", {2, 4, 4}, [](auto v) { return sigmoid(v); }, opts, 32, -3, 3));
    out.push_back(unary_case("maxpool2", {2, 4, 6}, [](auto v) { return maxpool2(v); }, opts, 33, -1, 1, true));
    out.push_back(unary_case("avgpool2", {2, 5, 5}, [](auto v) { return avgpool2(v); }, opts, 34));
    out.push_back(unary_case("upsample2", {2, 3, 4}, [](auto v) { return upsample2(v); }, opts, 35));
    out.push_back(binary_case("concat_channels", {2, 3, 4}, {1, 3, 4},
                              [](auto a, auto b) { return concat_channels(std::vector{a, b}); }, opts, 36));
    out.push_back(unary_case("permute3", {2, 3, 4}, [](auto v) { return permute3(v, {2, 0, 1}); }, opts, 38));
    out.push_back(binary_case("batched_matmul", {2, 3, 4}, {2, 4, 5},
                              [](auto a, auto b) { return batched_matmul(a, b); }, opts, 39));
    out.push_back(unary_case("batched_transpose", {2, 4, 4}, [](auto v) { return batched_transpose(v); }, opts, 41));
    out.push_back(unary_case("softmax_lastdim", {2, 3, 5}, [](auto v) { return softmax_lastdim(v); }, opts, 42, -2, 2));
    out.push_back(binary_case("add", {2, 3, 3}, {2, 3, 3}, [](auto a, auto b) { return add(a, b); }, opts, 43));
    out.push_back(binary_case("sub", {2, 3, 3}, {2, 3, 3}, [](auto a, auto b) { return sub(a, b); }, opts, 45));
    out.push_back(binary_case("mul", {2, 3, 3}, {2, 3, 3}, [](auto a, auto b) { return mul(a, b); }, opts, 47));
    out.push_back(binary_case("div", {2, 3, 3}, {2, 3, 3}, [](auto a, auto b) { return div(a, b); }, opts, 49, 0.2, 2));
    out.push_back(unary_case("add_scalar", {2, 3, 3}, [](auto v) { return add_scalar(v, 0.7); }, opts, 51));
    out.push_back(unary_case("mul_scalar", {2, 3, 3}, [](auto v) { return mul_scalar(v, -1.3); }, opts, 52));
    out.push_back(unary_case("square", {2, 3, 3}, [](auto v) { return square(v); }, opts, 53));
    out.push_back(unary_case("sqrt", {2, 3, 3}, [](auto v) { return sqrt(v); }, opts, 54, 0.2, 2));
    out.push_back(unary_case("pow_scalar", {2, 3, 3}, [](auto v) { return pow_scalar(v, 0.3); }, opts, 55, 0.2, 2));
    out.push_back(unary_case("clamp_min", {2, 3, 3}, [](auto v) { return clamp_min(v, 0.9); }, opts, 56, 0.2, 2, true));
    out.push_back(unary_case("mean", {2, 3, 3}, [](auto v) { return mean(v); }, opts, 57));
    out.push_back(unary_case("sum", {2, 3, 3}, [](auto v) { return sum(v); }, opts, 58));
    out.push_back(unary_case("channel_mean", {2, 3, 3}, [](auto v) { return channel_mean(v); }, opts, 59));
    out.push_back(unary_case("separable_filter_valid", {2, 6, 7},
                             [](auto v) { return separable_filter_valid(v, {0.25, 0.5, 0.25}); }, opts, 60));
    return out;
}

std::vector<GradResult> loss_suite(const SuiteOptions& opts) {
    std::vector<GradResult> out;
    const auto cfg = losses::fit_scales({}, 32, 32);
    // a clean image and a correlated noisy copy
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0), n(-0.2, 0.2);
    Tensor<double> x({2, 32, 32}), y({2, 32, 32});
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = u(rng);
        y[i] = std::clamp(x[i] + n(rng), 0.0, 1.0);
    }
    auto o = base_options(opts);
    o.max_coords = opts.loss_coords;

    auto run = [&](const std::string& name, auto loss, auto tag) {
        using T = decltype(tag);
        Timer t;
        GradResult r{name, 0.0, 0, 0, sizeof(T) > sizeof(double), 0.0};
        const auto xt = x.cast<T>(), yt = y.cast<T>();
        const std::function<Var<T>(Graph<T>&, Var<T>)> fs[2] = {
            [&](Graph<T>& g, Var<T> v) { return loss(v, g.input(yt)); },
            [&](Graph<T>& g, Var<T> v) { return loss(g.input(xt), v); }};
        const Tensor<T>* args[2] = {&xt, &yt};
        for (int i = 0; i < 2; ++i) {
            GradCheckReport rep;
            auto oi = o;
            oi.report = &rep;
            r.error = std::max(r.error, grad_check(fs[i], *args[i], oi));
            r.checked += rep.checked;
        }
        r.seconds = t.seconds();
        out.push_back(r);
    };
    auto charb = [](auto a, auto b) { return losses::charbonnier(a, b, 1e-3); };
    auto ssim = [](auto a, auto b) { return losses::ssim(a, b); };
    auto msssim = [&](auto a, auto b) { return losses::ms_ssim(a, b, cfg); };
    auto mix = [&](auto a, auto b) { return losses::mix_loss(a, b, cfg); };
    run("charbonnier", charb, double{});
    run("mix_loss", mix, double{});
    using L = long double;
    run("charbonnier", charb, L{});
    run("ssim", ssim, L{});
    run("ms_ssim", msssim, L{});
    run("mix_loss", mix, L{});
    return out;
}

void randomize(ParamStore<float>& store, std::uint64_t seed, double slope) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (auto& [name, p] : store.entries()) {
        const Shape& s = p->value.shape();
        if (s.size() == 4)
            p->value = train::he_init(s, s[1] * s[2] * s[3], slope, rng);
        else
            for (auto& v : p->value.data()) v = static_cast<float>(u(rng));
    }
}

ParamStore<float> declare_block(const Block& b) {
    ParamStore<float> store;
    mccnet::add_sharing(b.cfg, store);
    TraceOps ops(b.cfg, &store);
    std::vector<TraceValue> xs;
    for (const auto& s : b.inputs) xs.push_back({s});
    b.trace(ops, xs);
    return store;
}

GradCheckReport block_grad_check(const Block& b, std::uint64_t seed, std::size_t max_coords) {
    ParamStore<float> decl = declare_block(b);
    randomize(decl, seed);
    ParamStore<double> params = decl.clone<double>();
    std::vector<Parameter<double>> inputs;
    for (std::size_t i = 0; i < b.inputs.size(); ++i) inputs.emplace_back(uniform(b.inputs[i], seed * 31 + i, -1, 1));
    std::vector<Parameter<double>*> ptrs;
    for (auto& [name, p] : params.entries()) ptrs.push_back(p.get());
    for (auto& in : inputs) ptrs.push_back(&in);

    auto loss = [&](Graph<double>& g) {
        GraphOps<double> ops(g, params, b.cfg);
        std::vector<Var<double>> xs;
        for (auto& in : inputs) xs.push_back(g.param(in));
        auto outs = b.run(ops, xs);
        Var<double> total{};
        for (std::size_t i = 0; i < outs.size(); ++i) {
            auto term = probe(g, outs[i], 7 + i);
            total = i == 0 ? term : add(total, term);
        }
        return total;
    };
    GradCheckReport rep;
    GradCheckOptions opts;
    opts.max_coords = max_coords;
    opts.seed = seed;
    opts.refine_kinks = true;
    opts.report = &rep;
    grad_check_params(loss, ptrs, opts);
    return rep;
}

std::vector<Block> module_blocks(const NetworkConfig& base) {
    std::vector<Block> blocks;
    NetworkConfig cfg = base;
    cfg.width_scale = std::max(base.width_scale, 4.0);
    auto both = [](auto f) { return std::pair{BlockFn<TraceOps>(f), BlockFn<GraphOps<double>>(f)}; };
    {
        auto [t, r] = both([](auto& ops, const auto& x) {
            return std::vector{mccnet::encoder_block(ops, "enc", x[0], 4, true)};
        });
        blocks.push_back({"encoder_block", cfg, {{3, 8, 8}}, t, r});
    }
    {
        auto [t, r] = both([](auto& ops, const auto& x) { return std::vector{mccnet::msfe(ops, "msfe", x[0])}; });
        blocks.push_back({"msfe", cfg, {{3, 6, 6}}, t, r});
    }
    {
        auto [t, r] = both([](auto& ops, const auto& x) {
            auto [l, rr] = mccnet::cross_correlation(ops, "cc1", x[0], x[1]);
            return std::vector{l, rr};
        });
        blocks.push_back({"cross_correlation", cfg, {{3, 4, 5}, {3, 4, 5}}, t, r});
    }
    {
        auto [t, r] = both([](auto& ops, const auto& x) { return mccnet::msf(ops, "msf", x); });
        blocks.push_back({"msf", cfg, {{2, 8, 8}, {3, 4, 4}, {2, 2, 2}}, t, r});
    }
    {
        auto [t, r] = both([](auto& ops, const auto& x) {
            return std::vector{mccnet::decoder_block(ops, "dec", x[0], x[1], 3)};
        });
        blocks.push_back({"decoder_block", cfg, {{4, 3, 3}, {2, 6, 6}}, t, r});
    }
    {
        auto [t, r] = both([](auto& ops, const auto& x) { return std::vector{mccnet::run(ops, x[0], x[1])}; });
        blocks.push_back({"mccnet", cfg, {{3, 16, 16}, {3, 16, 16}}, t, r});
        NetworkConfig no_cc = cfg;
        no_cc.use_cross_correlation = false;
        if (cfg.use_cross_correlation) blocks.push_back({"mccnet no-cc", no_cc, {{3, 16, 16}, {3, 16, 16}}, t, r});
        NetworkConfig other_head = cfg;
        other_head.residual_output = !cfg.residual_output;
        blocks.push_back({other_head.residual_output ? "mccnet residual head" : "mccnet sigmoid head", other_head,
                          {{3, 16, 16}, {3, 16, 16}}, t, r});
    }
    return blocks;
}

std::vector<GradResult> module_suite(const NetworkConfig& base, const SuiteOptions& opts) {
    std::vector<GradResult> out;
    for (const auto& block : module_blocks(base)) {
        Timer t;
        const bool whole = block.name.rfind("mccnet", 0) == 0;
        const auto rep =
            block_grad_check(block, 1, whole ? std::max<std::size_t>(1, opts.module_coords / 4) : opts.module_coords);
        out.push_back({block.name, rep.error, rep.checked, rep.skipped, false, t.seconds()});
    }
    return out;
}

ArchReport architecture(const NetworkConfig& cfg, std::size_t height, std::size_t width) {
    Timer t;
    ArchReport r;
    r.params = mccnet::count_params(mccnet::declare_params(cfg));
    r.height = height;
    r.width = width;
    r.cost = mccnet::estimate_flops(mccnet::trace(cfg, height, width));
    r.seconds = t.seconds();
    return r;
}

}  // namespace dpdl::audit
