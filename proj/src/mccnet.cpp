#include "dpdl/mccnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dpdl/errors.hpp"
#include "dpdl/init.hpp"

namespace dpdl::mccnet {

int NetworkConfig::width(int base) const {
    return std::max(1, static_cast<int>(std::lround(base / width_scale)));
}

void NetworkConfig::validate() const {
    if (!(width_scale > 0.0) || !std::isfinite(width_scale)) throw ConfigError("width_scale must be positive");
    if (stem_channels <= 0) throw ConfigError("stem_channels must be positive");
    for (int c : block_channels)
        if (c <= 0) throw ConfigError("block_channels must be positive");
    for (int c : decoder_channels)
        if (c <= 0) throw ConfigError("decoder_channels must be positive");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in (0, 1)");
    if (cc_memory_cap_bytes == 0) throw ConfigError("cc_memory_cap_bytes must be positive");
}

std::size_t NetworkPlan::count(const std::string& op) const {
    std::size_t n = 0;
    for (const auto& node : nodes)
        if (node.op == op) ++n;
    return n;
}

std::size_t NetworkPlan::count_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& node : nodes)
        if (node.op.compare(0, prefix.size(), prefix) == 0) ++n;
    return n;
}

// ---------------------------------------------------------------------------
// TraceOps

namespace {

std::uint64_t elems(const Shape& s) {
    return static_cast<std::uint64_t>(numel(s));
}

void require_rank3(const Shape& s, const std::string& what) {
    if (s.size() != 3) throw ShapeError(what + ": expected rank-3 extents, got " + to_string(s));
}

}  // namespace

void TraceOps::push(std::string op, std::string name, Shape out, std::uint64_t macs, std::uint64_t flops) {
    plan_.nodes.push_back({std::move(op), std::move(name), std::move(out), macs, flops});
}

TraceValue TraceOps::conv(Value x, const std::string& name, int out_ch, int k) {
    require_rank3(x.shape, name);
    const std::size_t in_ch = x.shape[0];
    const Shape out{static_cast<std::size_t>(out_ch), x.shape[1], x.shape[2]};
    const std::uint64_t macs = static_cast<std::uint64_t>(k) * k * in_ch * elems(out);
    if (store_) {
        store_->declare(name + ".weight", {static_cast<std::size_t>(out_ch), in_ch, std::size_t(k), std::size_t(k)});
        store_->declare(name + ".bias", {static_cast<std::size_t>(out_ch)});
    }
    push("conv2d", name, out, macs, 2 * macs + elems(out));
    return {out};
}

TraceValue TraceOps::lrelu(Value x) {
    push("leaky_relu", "", x.shape, 0, elems(x.shape));
    return x;
}

TraceValue TraceOps::sigmoid(Value x) {
    push("sigmoid", "", x.shape, 0, elems(x.shape));
    return x;
}

TraceValue TraceOps::maxpool(Value x) {
    require_rank3(x.shape, "maxpool2");
    if (x.shape[1] % 2 || x.shape[2] % 2)
        throw PreconditionError("maxpool2: extents must be even, got " + to_string(x.shape));
    const Shape out{x.shape[0], x.shape[1] / 2, x.shape[2] / 2};
    push("maxpool2", "", out, 0, elems(out));
    return {out};
}

TraceValue TraceOps::upsample(Value x) {
    require_rank3(x.shape, "upsample2");
    const Shape out{x.shape[0], x.shape[1] * 2, x.shape[2] * 2};
    push("upsample2", "", out, 0, elems(out));
    return {out};
}

TraceValue TraceOps::concat(const std::vector<Value>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    Shape out = xs.front().shape;
    require_rank3(out, "concat_channels");
    out[0] = 0;
    for (const auto& x : xs) {
        require_rank3(x.shape, "concat_channels");
        if (x.shape[1] != out[1] || x.shape[2] != out[2])
            throw ShapeError("concat_channels: spatial mismatch " + to_string(xs.front().shape) + " vs " +
                             to_string(x.shape));
        out[0] += x.shape[0];
    }
    push("concat", "", out, 0, 0);
    return {out};
}

TraceValue TraceOps::add(Value a, Value b) {
    if (a.shape != b.shape) throw ShapeError("add: shape mismatch " + to_string(a.shape) + " vs " + to_string(b.shape));
    push("add", "", a.shape, 0, elems(a.shape));
    return a;
}

TraceValue TraceOps::permute(Value x, std::array<int, 3> perm) {
    require_rank3(x.shape, "permute3");
    const Shape out{x.shape[perm[0]], x.shape[perm[1]], x.shape[perm[2]]};
    push("permute3", "", out, 0, 0);
    return {out};
}

TraceValue TraceOps::bmm(Value a, Value b) {
    require_rank3(a.shape, "batched_matmul");
    require_rank3(b.shape, "batched_matmul");
    if (a.shape[0] != b.shape[0] || a.shape[2] != b.shape[1])
        throw ShapeError("batched_matmul: extent mismatch " + to_string(a.shape) + " * " + to_string(b.shape));
    const Shape out{a.shape[0], a.shape[1], b.shape[2]};
    const std::uint64_t macs = elems(out) * a.shape[2];
    push("batched_matmul", "", out, macs, 2 * macs);
    return {out};
}

TraceValue TraceOps::transpose(Value s) {
    require_rank3(s.shape, "batched_transpose");
    if (s.shape[1] != s.shape[2]) throw ShapeError("batched_transpose: non-square " + to_string(s.shape));
    push("batched_transpose", "", s.shape, 0, 0);
    return s;
}

TraceValue TraceOps::softmax(Value s) {
    push("softmax_lastdim", "", s.shape, 0, elems(s.shape));
    return s;
}

// The trace never refuses: audits of full-resolution plans must be possible
// even where execution would exceed the cap.
void TraceOps::attention_budget(const std::string&, std::size_t, std::size_t) {}

void TraceOps::mark(const std::string& block, const std::string& name) {
    push(block, name, {}, 0, 0);
}

// ---------------------------------------------------------------------------
// GraphOps

template <typename T>
Var<T> GraphOps<T>::param(const std::string& name) {
    auto& p = params_.get(name);
    if (auto it = bound_.find(&p); it != bound_.end()) return it->second;
    auto v = graph_.param(p);
    bound_.emplace(&p, v);
    return v;
}

template <typename T>
Var<T> GraphOps<T>::conv(Value x, const std::string& name, int out_ch, int k) {
    auto w = param(name + ".weight");
    auto b = param(name + ".bias");
    const Shape& ws = w.shape();
    const std::size_t in_ch = x.shape().at(0);
    if (ws != Shape{static_cast<std::size_t>(out_ch), in_ch, std::size_t(k), std::size_t(k)})
        throw ShapeError(name + ": weight shape " + to_string(ws) + " does not match a " + std::to_string(k) + "x" +
                         std::to_string(k) + " conv " + std::to_string(in_ch) + "->" + std::to_string(out_ch));
    return conv2d(x, w, b, 1, k / 2);
}

template <typename T>
void GraphOps<T>::attention_budget(const std::string& name, std::size_t h, std::size_t w) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(h) * w * w * sizeof(T);
    if (bytes > cfg_.cc_memory_cap_bytes)
        throw ResourceError(name + ": attention scores need " + std::to_string(bytes) + " bytes (H=" +
                            std::to_string(h) + ", W=" + std::to_string(w) + "), above the cap of " +
                            std::to_string(cfg_.cc_memory_cap_bytes));
}

template class GraphOps<float>;
template class GraphOps<double>;

// ---------------------------------------------------------------------------

void add_sharing(const NetworkConfig& cfg, ParamStore<float>& store) {
    store.add_alias("left.encoder.", "encoder.");
    store.add_alias("right.encoder.", "encoder.");
    store.add_alias("left.msf.", "msf.");
    store.add_alias("right.msf.", "msf.");
    if (cfg.tie_qk) {
        store.add_alias("cc1.key.", "cc1.query.");
        store.add_alias("cc2.key.", "cc2.query.");
    }
}

ParamStore<float> declare_params(const NetworkConfig& cfg) {
    cfg.validate();
    ParamStore<float> store;
    add_sharing(cfg, store);
    TraceOps ops(cfg, &store);
    const Shape in{3, kNominalExtent, kNominalExtent};
    run(ops, TraceValue{in}, TraceValue{in});
    return store;
}

Built build(const NetworkConfig& cfg, std::uint64_t seed) {
    ParamStore<float> store = declare_params(cfg);
    std::mt19937_64 rng(seed);
    for (auto& [name, p] : store.entries()) {
        const Shape& s = p->value.shape();
        if (s.size() == 4) p->value = train::he_init(s, s[1] * s[2] * s[3], cfg.leaky_slope, rng);
        // biases stay zero
    }
    return {std::move(store), trace(cfg, kNominalExtent, kNominalExtent)};
}

NetworkPlan trace(const NetworkConfig& cfg, std::size_t height, std::size_t width) {
    cfg.validate();
    check_input_extents({3, height, width}, {3, height, width});
    TraceOps ops(cfg);
    const Shape in{3, height, width};
    run(ops, TraceValue{in}, TraceValue{in});
    return ops.plan();
}

FlopEstimate estimate_flops(const NetworkPlan& plan) {
    FlopEstimate f;
    for (const auto& n : plan.nodes) {
        f.macs += n.macs;
        f.flops += n.flops;
    }
    return f;
}

void check_input_extents(const Shape& left, const Shape& right) {
    if (left.size() != 3 || left[0] != 3) throw ShapeError("expected a 3 x H x W RGB view, got " + to_string(left));
    if (left != right)
        throw ShapeError("left/right views differ in shape: " + to_string(left) + " vs " + to_string(right));
    if (left[1] % 8 || left[2] % 8 || left[1] == 0 || left[2] == 0) {
        const auto pad = [](std::size_t v) { return (8 - v % 8) % 8; };
        throw PreconditionError("input extents " + std::to_string(left[1]) + "x" + std::to_string(left[2]) +
                                " must be multiples of 8; pad by " + std::to_string(pad(left[1])) + " rows and " +
                                std::to_string(pad(left[2])) + " columns");
    }
}

template <typename T>
Var<T> forward(Graph<T>& graph, ParamStore<T>& params, const NetworkConfig& cfg, Var<T> left, Var<T> right) {
    check_input_extents(left.shape(), right.shape());
    GraphOps<T> ops(graph, params, cfg);
    return run(ops, left, right);
}

template Var<float> forward(Graph<float>&, ParamStore<float>&, const NetworkConfig&, Var<float>, Var<float>);
template Var<double> forward(Graph<double>&, ParamStore<double>&, const NetworkConfig&, Var<double>, Var<double>);

Tensor<float> infer(ParamStore<float>& params, const NetworkConfig& cfg, const Tensor<float>& left,
                    const Tensor<float>& right) {
    Graph<float> g;
    auto out = forward(g, params, cfg, g.input(left), g.input(right)).value();
    if (cfg.residual_output)
        for (auto& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

}  // namespace dpdl::mccnet
