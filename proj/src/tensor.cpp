#include "dpdl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dpdl/errors.hpp"

namespace dpdl {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + to_string(shape_));
    }
}

template <typename T>
T Tensor<T>::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
}

template <typename T>
void Tensor<T>::fill(T v) {
    std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (T v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
    if (numel(shape) != data_.size())
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return Tensor(std::move(shape), data_);
}

template <typename T>
void require_chw(const Tensor<T>& t, const char* what) {
    if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected CxHxW, got " + to_string(t.shape()));
    for (auto e : t.shape())
        if (e == 0) throw ShapeError(std::string(what) + ": non-positive extent in " + to_string(t.shape()));
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<long double>;
template void require_chw(const Tensor<float>&, const char*);
template void require_chw(const Tensor<double>&, const char*);
template void require_chw(const Tensor<long double>&, const char*);

}  // namespace dpdl
