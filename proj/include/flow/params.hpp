#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "flow/tensor.hpp"

namespace flow {

// Ordered registry of named learnable tensors. Creation order is the
// serialization order, so a seed plus the build code fully determines both
// the initial values and the checkpoint layout.
template <typename T>
class ParamStoreT {
  public:
    TensorPtrT<T> create(const std::string& name, std::vector<int> shape) {
        if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
        auto t = make_tensor<T>(std::move(shape));
        t->requires_grad = true;
        index_[name] = items_.size();
        items_.push_back({name, t});
        return t;
    }

    const TensorPtrT<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return items_[it->second].second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::pair<std::string, TensorPtrT<T>>>& items() const { return items_; }

    int64_t scalar_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : items_) n += t->numel();
        return n;
    }

    void zero_grads() {
        for (auto& [name, t] : items_) t->zero_grad();
    }

  private:
    std::vector<std::pair<std::string, TensorPtrT<T>>> items_;
    std::unordered_map<std::string, size_t> index_;
};

// Kaiming-normal conv weights, zero biases, unit/zero norm affine.
template <typename T>
void init_conv_kaiming(const TensorPtrT<T>& w, Rng& rng) {
    const int fan_in = w->shape[1] * w->shape[2] * w->shape[3];
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w->data) v = static_cast<T>(rng.normal(0.0, stddev));
}

}  // namespace flow
