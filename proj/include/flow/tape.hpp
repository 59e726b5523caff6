#pragma once

#include <functional>
#include <unordered_set>
#include <vector>

#include "flow/tensor.hpp"

namespace flow {

// Ordered record of executed differentiable operations. Ops append an entry
// while a tape is active (see GraphScopeT); backward() replays the record in
// reverse, visiting each entry at most once. Single-writer: one tape must not
// be shared across concurrent graph builds.
template <typename T>
class TapeT {
  public:
    void record(TensorPtrT<T> out, std::vector<TensorPtrT<T>> inputs, std::function<void()> bwd) {
        entries_.push_back({std::move(out), std::move(inputs), std::move(bwd)});
    }

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
    // requires_grad tensor reachable from the loss. Leaf grads accumulate
    // across calls; callers zero them between optimizer steps.
    void backward(const TensorPtrT<T>& loss) {
        if (!loss || loss->numel() != 1)
            throw ContractError("backward: loss must hold exactly one element");
        loss->ensure_grad();
        loss->grad[0] += T(1);
        std::unordered_set<const TensorT<T>*> needed;
        needed.insert(loss.get());
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            if (needed.find(it->out.get()) == needed.end()) continue;
            it->bwd();
            for (const auto& in : it->inputs)
                if (in && in->requires_grad) needed.insert(in.get());
        }
    }

    void clear() { entries_.clear(); }
    size_t size() const { return entries_.size(); }

  private:
    struct Entry {
        TensorPtrT<T> out;
        std::vector<TensorPtrT<T>> inputs;
        std::function<void()> bwd;
    };
    std::vector<Entry> entries_;
};

template <typename T>
TapeT<T>*& active_tape() {
    thread_local TapeT<T>* tape = nullptr;
    return tape;
}

// RAII activation of a tape on the current thread. Ops run outside any scope
// compute values only and record nothing (inference mode).
template <typename T>
class GraphScopeT {
  public:
    explicit GraphScopeT(TapeT<T>& tape) : prev_(active_tape<T>()) { active_tape<T>() = &tape; }
    ~GraphScopeT() { active_tape<T>() = prev_; }
    GraphScopeT(const GraphScopeT&) = delete;
    GraphScopeT& operator=(const GraphScopeT&) = delete;

  private:
    TapeT<T>* prev_;
};

}  // namespace flow
