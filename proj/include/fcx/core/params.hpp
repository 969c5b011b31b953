#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "fcx/core/arch.hpp"
#include "fcx/core/tensor.hpp"

namespace fcx {

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> value;

    bool operator==(const NamedTensor&) const = default;
};

/// Ordered collection of named parameter tensors.
template <typename T>
class ParamSet {
public:
    ParamSet() = default;

    size_t add(std::string name, Shape shape) {
        if (index_.contains(name)) throw std::invalid_argument("duplicate parameter " + name);
        index_.emplace(name, items_.size());
        items_.push_back({std::move(name), Tensor<T>(std::move(shape))});
        return items_.size() - 1;
    }

    size_t count() const { return items_.size(); }
    NamedTensor<T>& operator[](size_t i) { return items_[i]; }
    const NamedTensor<T>& operator[](size_t i) const { return items_[i]; }
    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    bool contains(const std::string& name) const { return index_.contains(name); }
    size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return it->second;
    }
    Tensor<T>& get(const std::string& name) { return items_[index_of(name)].value; }
    const Tensor<T>& get(const std::string& name) const { return items_[index_of(name)].value; }

    /// Same names and shapes, zero-filled.
    ParamSet zeros_like() const {
        ParamSet out;
        for (const auto& it : items_) out.add(it.name, it.value.shape());
        return out;
    }

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& it : items_) {
            size_t k = out.add(it.name, it.value.shape());
            out[k].value = it.value.template cast<U>();
        }
        return out;
    }

    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& it : items_) n += it.value.size();
        return n;
    }

    bool operator==(const ParamSet& other) const { return items_ == other.items_; }

private:
    std::vector<NamedTensor<T>> items_;
    std::unordered_map<std::string, size_t> index_;
};

/// Parameters of one network together with the descriptor that shaped them.
struct ModelParams {
    ArchConfig arch;
    ParamSet<float> params;

    bool all_finite() const;
    bool operator==(const ModelParams&) const = default;
};

}  // namespace fcx
