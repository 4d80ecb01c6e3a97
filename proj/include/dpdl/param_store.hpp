#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dpdl/errors.hpp"
#include "dpdl/graph.hpp"

namespace dpdl {

// Named parameters in declaration order. Shared weights are expressed as
// prefix aliases: with alias("right.encoder.", "encoder."), the name
// "right.encoder.stem.weight" resolves to the tensor "encoder.stem.weight".
template <typename T>
class ParamStore {
public:
    using Entry = std::pair<std::string, std::shared_ptr<Parameter<T>>>;

    ParamStore() = default;
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    void add_alias(std::string from_prefix, std::string to_prefix) {
        aliases_.emplace_back(std::move(from_prefix), std::move(to_prefix));
    }

    std::string resolve(const std::string& name) const {
        std::string n = name;
        // chains are allowed; bounded to catch cycles
        for (std::size_t hop = 0; hop <= aliases_.size(); ++hop) {
            bool changed = false;
            for (const auto& [from, to] : aliases_) {
                if (n.compare(0, from.size(), from) == 0) {
                    n = to + n.substr(from.size());
                    changed = true;
                    break;
                }
            }
            if (!changed) return n;
        }
        throw ConfigError("parameter alias cycle while resolving '" + name + "'");
    }

    /// Returns the parameter `name` resolves to, creating it zero-filled on first use.
    Parameter<T>& declare(const std::string& name, const Shape& shape) {
        const std::string canon = resolve(name);
        if (auto it = index_.find(canon); it != index_.end()) {
            auto& p = *entries_[it->second].second;
            if (p.value.shape() != shape)
                throw ShapeError("parameter '" + canon + "' redeclared with shape " + to_string(shape) +
                                 ", existing " + to_string(p.value.shape()));
            return p;
        }
        index_.emplace(canon, entries_.size());
        entries_.emplace_back(canon, std::make_shared<Parameter<T>>(Tensor<T>(shape)));
        return *entries_.back().second;
    }

    Parameter<T>& get(const std::string& name) {
        const std::string canon = resolve(name);
        auto it = index_.find(canon);
        if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
        return *entries_[it->second].second;
    }
    const Parameter<T>& get(const std::string& name) const { return const_cast<ParamStore*>(this)->get(name); }

    bool contains(const std::string& name) const { return index_.count(resolve(name)) != 0; }

    /// Unique tensors in declaration order.
    const std::vector<Entry>& entries() const { return entries_; }
    const std::vector<std::pair<std::string, std::string>>& aliases() const { return aliases_; }

    /// Scalar count over unique tensors; aliases are not double counted.
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.second->value.size();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.second->zero_grad();
    }

    /// Deep copy (new tensors, same names and aliases), converting the scalar type.
    template <typename U = T>
    ParamStore<U> clone() const {
        ParamStore<U> out;
        for (const auto& [from, to] : aliases_) out.add_alias(from, to);
        for (const auto& [name, p] : entries_) {
            auto& q = out.declare(name, p->value.shape());
            q.value = p->value.template cast<U>();
            q.grad = p->grad.template cast<U>();
        }
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
    std::vector<std::pair<std::string, std::string>> aliases_;
};

}  // namespace dpdl
