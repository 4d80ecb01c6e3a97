#include "dpdl/graph.hpp"

#include "dpdl/errors.hpp"

namespace dpdl {

template <typename T>
Var<T> Graph<T>::input(Tensor<T> value, bool requires_grad) {
    Node n;
    n.op = "input";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
    Node n;
    n.op = "param";
    n.value = p.value;
    n.param = &p;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::record(std::string op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    for (auto i : inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
    if (loss.graph != this) throw ContractError("backward: loss belongs to a different graph");
    if (nodes_.at(loss.id).value.size() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + to_string(nodes_[loss.id].value.shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(loss.id)[0] = T(1);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        auto& n = nodes_[id];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, id);
        if (n.param) {
            auto& pg = n.param->grad;
            for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
        }
    }
}

template class Graph<float>;
template class Graph<double>;
template class Graph<long double>;

}  // namespace dpdl
