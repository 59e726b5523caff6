#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "flow/common.hpp"

namespace flow {

// Dense row-major tensor. Doubles as the node type of the autodiff graph:
// `grad` stays empty until a backward pass touches this tensor, and
// `requires_grad` marks leaves (parameters) and everything derived from them.
//
// T is float in the fast32 profile and double in the test64 profile; both
// instantiations are always available so the profile can be picked at runtime.
template <typename T>
class TensorT {
  public:
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty or same length as data
    bool requires_grad = false;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), T(0));
    }
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            throw ShapeError("tensor data length does not match shape " + shape_str(shape));
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    // Flat accessors for up to 4 indices; hot loops index data directly.
    T& at(int i) { return data[static_cast<size_t>(i)]; }
    T at(int i) const { return data[static_cast<size_t>(i)]; }
    T& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    T at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
    T& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    T at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    T& at(int b, int c, int y, int x) {
        return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    T at(int b, int c, int y, int x) const {
        return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
};

template <typename T>
using TensorPtrT = std::shared_ptr<TensorT<T>>;

template <typename T>
TensorPtrT<T> make_tensor(std::vector<int> shape) {
    return std::make_shared<TensorT<T>>(std::move(shape));
}

template <typename T>
TensorPtrT<T> make_tensor(std::vector<int> shape, std::vector<T> data) {
    return std::make_shared<TensorT<T>>(std::move(shape), std::move(data));
}

template <typename T>
TensorPtrT<T> full_like_shape(std::vector<int> shape, T value) {
    auto t = make_tensor<T>(std::move(shape));
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

template <typename T>
TensorPtrT<T> randn_tensor(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    auto t = make_tensor<T>(std::move(shape));
    for (auto& v : t->data) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
}

template <typename T>
TensorPtrT<T> uniform_tensor(std::vector<int> shape, Rng& rng, double lo, double hi) {
    auto t = make_tensor<T>(std::move(shape));
    for (auto& v : t->data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
bool same_shape(const TensorT<T>& a, const TensorT<T>& b) {
    return a.shape == b.shape;
}

}  // namespace flow
