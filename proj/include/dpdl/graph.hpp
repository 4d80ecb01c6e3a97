#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dpdl/tensor.hpp"

namespace dpdl {

/// A trainable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
    Tensor<T> value;
    Tensor<T> grad;

    explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(value.shape()) {}
    void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Graph;

/// Handle to a node recorded on a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
    Graph<T>* graph = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const;
    const Tensor<T>& grad() const;
    const Shape& shape() const { return value().shape(); }
};

/// Tape of executed operations. Nodes are appended in execution order, which is
/// a topological order; backward walks the tape in reverse.
template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t)>;

    struct Node {
        std::string op;
        Tensor<T> value;
        Tensor<T> grad;  // allocated on first accumulation
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter<T>* param = nullptr;
        bool requires_grad = false;
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var<T> input(Tensor<T> value, bool requires_grad = false);
    Var<T> param(Parameter<T>& p);

    // Records an op result. `backward` is dropped when no input requires grad.
    Var<T> record(std::string op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward);

    /// Reverse-mode pass from a scalar loss. Parameter gradients are added to
    /// Parameter::grad, so repeated calls accumulate.
    void backward(Var<T> loss);

    const Node& node(std::size_t id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    // Gradient buffer of node `id`, zero-initialized on first use.
    Tensor<T>& grad_buffer(std::size_t id);
    const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
    const Tensor<T>& grad(std::size_t id) const { return nodes_[id].grad; }

private:
    std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return graph->value(id);
}
template <typename T>
const Tensor<T>& Var<T>::grad() const {
    return graph->grad(id);
}

// ---------------------------------------------------------------------------
// Differentiable operations. Image tensors are C x H x W.

/// 2-D cross-correlation. weight is outC x inC x k x k, bias is outC.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, int stride = 1, int padding = -1);

template <typename T>
Var<T> leaky_relu(Var<T> x, double slope);
template <typename T>
Var<T> relu(Var<T> x);
template <typename T>
Var<T> sigmoid(Var<T> x);

/// 2x2 max pooling with stride 2; ties go to the first element in row-major scan.
template <typename T>
Var<T> maxpool2(Var<T> x);
/// 2x2 average pooling with stride 2; a trailing odd row/column is dropped.
template <typename T>
Var<T> avgpool2(Var<T> x);
/// Bilinear 2x upsampling, half-pixel centers (output i samples input (i + 0.5) / 2 - 0.5).
template <typename T>
Var<T> upsample2(Var<T> x);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs);

/// Rank-3 axis permutation: output axis i is input axis perm[i].
template <typename T>
Var<T> permute3(Var<T> x, std::array<int, 3> perm);

/// Per-batch matmul: [B x M x K] * [B x K x N] -> [B x M x N].
template <typename T>
Var<T> batched_matmul(Var<T> a, Var<T> b);
/// Per-batch transpose of the two trailing (square) extents.
template <typename T>
Var<T> batched_transpose(Var<T> s);
/// Max-subtracted softmax over the last extent.
template <typename T>
Var<T> softmax_lastdim(Var<T> x);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> div(Var<T> a, Var<T> b);
template <typename T>
Var<T> add_scalar(Var<T> x, double c);
template <typename T>
Var<T> mul_scalar(Var<T> x, double c);
template <typename T>
Var<T> square(Var<T> x);
template <typename T>
Var<T> sqrt(Var<T> x);
/// x^p for x > 0 (gradient undefined at 0 for p < 1).
template <typename T>
Var<T> pow_scalar(Var<T> x, double p);

/// max(x, lo) elementwise; the gradient is zero where x < lo.
template <typename T>
Var<T> clamp_min(Var<T> x, double lo);

/// Mean over all elements, accumulated in double; rank-0 result.
template <typename T>
Var<T> mean(Var<T> x);
template <typename T>
Var<T> sum(Var<T> x);

/// Spatial mean of each channel: C x H x W -> [C].
template <typename T>
Var<T> channel_mean(Var<T> x);

/// Per-channel separable filter (taps applied along y then x), valid region only.
template <typename T>
Var<T> separable_filter_valid(Var<T> x, const std::vector<double>& taps);

}  // namespace dpdl
