#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dpdl/graph.hpp"
#include "dpdl/param_store.hpp"

namespace dpdl::mccnet {

struct NetworkConfig {
    int stem_channels = 16;
    std::array<int, 4> block_channels{32, 64, 64, 128};
    // Output widths of the three decoder blocks (1/4, 1/2 and full resolution).
    std::array<int, 3> decoder_channels{128, 64, 32};
    // Every width is divided by this (rounded, at least 1); 1 is the full network.
    double width_scale = 1.0;
    bool use_cross_correlation = true;
    bool use_multiscale_fusion = true;
    bool use_msfe = true;
    double leaky_slope = 0.2;
    // Alias the key projection of each cross-correlation block to its query projection.
    bool tie_qk = false;
    // Head output is left + conv2(...) instead of sigmoid(conv2(...)).
    bool residual_output = false;
    // Largest score tensor (H x W x W scalars) a cross-correlation block may allocate.
    std::uint64_t cc_memory_cap_bytes = std::uint64_t(2) << 30;

    int width(int base) const;
    /// Throws ConfigError on an invalid channel plan.
    void validate() const;
};

// One executed (or traced) operation. `op` names the primitive; structural
// markers use the "block:" prefix (block:cc, block:msfe, block:msf, ...).
struct PlanNode {
    std::string op;
    std::string name;
    Shape out;
    std::uint64_t macs = 0;
    std::uint64_t flops = 0;
};

struct NetworkPlan {
    std::vector<PlanNode> nodes;
    std::size_t count(const std::string& op) const;
    std::size_t count_prefix(const std::string& prefix) const;
};

struct FlopEstimate {
    // multiply-accumulates of convolutions and attention matmuls
    std::uint64_t macs = 0;
    // 2 per MAC, plus bias adds and one per element of elementwise ops
    std::uint64_t flops = 0;
};

// ---------------------------------------------------------------------------
// Executors. Network code is written once against this interface and run
// either symbolically (TraceOps) or on a Graph (GraphOps).

struct TraceValue {
    Shape shape;
};

class TraceOps {
public:
    using Value = TraceValue;

    explicit TraceOps(const NetworkConfig& cfg, ParamStore<float>* declare_into = nullptr)
        : cfg_(cfg), store_(declare_into) {}

    const NetworkConfig& config() const { return cfg_; }
    const NetworkPlan& plan() const { return plan_; }

    Value conv(Value x, const std::string& name, int out_ch, int k);
    Value lrelu(Value x);
    Value sigmoid(Value x);
    Value maxpool(Value x);
    Value upsample(Value x);
    Value concat(const std::vector<Value>& xs);
    Value add(Value a, Value b);
    Value permute(Value x, std::array<int, 3> perm);
    Value bmm(Value a, Value b);
    Value transpose(Value s);
    Value softmax(Value s);
    void attention_budget(const std::string& name, std::size_t h, std::size_t w);
    void mark(const std::string& block, const std::string& name);

private:
    void push(std::string op, std::string name, Shape out, std::uint64_t macs, std::uint64_t flops);

    const NetworkConfig& cfg_;
    ParamStore<float>* store_;
    NetworkPlan plan_;
};

template <typename T>
class GraphOps {
public:
    using Value = Var<T>;

    GraphOps(Graph<T>& graph, ParamStore<T>& params, const NetworkConfig& cfg)
        : graph_(graph), params_(params), cfg_(cfg) {}

    const NetworkConfig& config() const { return cfg_; }
    Graph<T>& graph() { return graph_; }

    Value conv(Value x, const std::string& name, int out_ch, int k);
    Value lrelu(Value x) { return leaky_relu(x, cfg_.leaky_slope); }
    Value sigmoid(Value x) { return dpdl::sigmoid(x); }
    Value maxpool(Value x) { return maxpool2(x); }
    Value upsample(Value x) { return upsample2(x); }
    Value concat(const std::vector<Value>& xs) { return concat_channels(xs); }
    Value add(Value a, Value b) { return dpdl::add(a, b); }
    Value permute(Value x, std::array<int, 3> perm) { return permute3(x, perm); }
    Value bmm(Value a, Value b) { return batched_matmul(a, b); }
    Value transpose(Value s) { return batched_transpose(s); }
    Value softmax(Value s) { return softmax_lastdim(s); }
    void attention_budget(const std::string& name, std::size_t h, std::size_t w);
    void mark(const std::string&, const std::string&) {}

private:
    Value param(const std::string& name);

    Graph<T>& graph_;
    ParamStore<T>& params_;
    const NetworkConfig& cfg_;
    std::unordered_map<const Parameter<T>*, Var<T>> bound_;
};

template <typename V>
const Shape& shape_of(const V& v) {
    if constexpr (requires { v.shape; })
        return v.shape;
    else
        return v.shape();
}

// ---------------------------------------------------------------------------
// Building blocks. `scope` prefixes parameter names.

/// Conv3x3-LeakyReLU-Conv3x3-LeakyReLU, optionally followed by MSFE.
template <class Ops>
typename Ops::Value encoder_block(Ops& ops, const std::string& scope, typename Ops::Value x, int channels,
                                  bool use_msfe);

/// Parallel 3x3/5x5 convs, a second parallel pair on their concatenation,
/// and a 1x1 merge of all four outputs back to the input width.
template <class Ops>
typename Ops::Value msfe(Ops& ops, const std::string& scope, typename Ops::Value x);

/// Row-constrained cross attention between the two views; returns (left_out, right_out).
template <class Ops>
std::pair<typename Ops::Value, typename Ops::Value> cross_correlation(Ops& ops, const std::string& scope,
                                                                      typename Ops::Value left,
                                                                      typename Ops::Value right);

/// Fuses skips at scales 1, 1/2, 1/4 into three maps of the same shapes.
template <class Ops>
std::vector<typename Ops::Value> msf(Ops& ops, const std::string& scope,
                                     const std::vector<typename Ops::Value>& skips);

/// upsample -> concat(skip) -> 1x1 merge -> Conv5x5-LeakyReLU-Conv3x3-LeakyReLU.
template <class Ops>
typename Ops::Value decoder_block(Ops& ops, const std::string& scope, typename Ops::Value x,
                                  typename Ops::Value skip, int channels);

/// The full network: two RGB views in, one RGB image in [0,1] out.
template <class Ops>
typename Ops::Value run(Ops& ops, typename Ops::Value left, typename Ops::Value right);

// ---------------------------------------------------------------------------

struct Built {
    ParamStore<float> params;
    NetworkPlan plan;  // traced at kNominalExtent x kNominalExtent
};
inline constexpr std::size_t kNominalExtent = 64;

/// Declares every parameter and draws He-initialized weights from `seed`.
Built build(const NetworkConfig& cfg, std::uint64_t seed);

/// Registers the siamese encoder/fusion aliases (and tied query/key when cfg.tie_qk).
void add_sharing(const NetworkConfig& cfg, ParamStore<float>& store);

/// Declares parameters (zero-filled) without initializing them.
ParamStore<float> declare_params(const NetworkConfig& cfg);

/// Symbolic trace at the given input extents; allocates no feature maps.
NetworkPlan trace(const NetworkConfig& cfg, std::size_t height, std::size_t width);

FlopEstimate estimate_flops(const NetworkPlan& plan);

template <typename T>
std::size_t count_params(const ParamStore<T>& params) {
    return params.count();
}

/// Throws PreconditionError naming the padding needed unless both extents are multiples of 8.
void check_input_extents(const Shape& left, const Shape& right);

template <typename T>
Var<T> forward(Graph<T>& graph, ParamStore<T>& params, const NetworkConfig& cfg, Var<T> left, Var<T> right);

/// Inference convenience: runs forward on a throwaway graph. A residual head
/// is clamped to [0, 1] here (the sigmoid head already lies in it).
Tensor<float> infer(ParamStore<float>& params, const NetworkConfig& cfg, const Tensor<float>& left,
                    const Tensor<float>& right);

}  // namespace dpdl::mccnet

#include "dpdl/mccnet_modules.hpp"
