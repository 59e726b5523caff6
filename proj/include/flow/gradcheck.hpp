#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flow/tensor.hpp"

namespace flow {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int checked = 0;
    bool ok(double tol) const { return checked > 0 && max_rel_err < tol; }
};

// Central finite differences against the analytic gradient already stored in
// `leaf->grad`. `eval` must rebuild the forward pass from current leaf values
// and return the scalar loss value. Checks `n_coords` coordinates of the leaf
// (all of them when n_coords <= 0 or exceeds the tensor size), chosen
// deterministically from `seed`.
//
// rel_err = |analytic - fd| / (|fd| + 1e-8), per the gradient-correctness
// invariant this library is tested under.
template <typename T>
GradCheckReport finite_diff_check(const TensorPtrT<T>& leaf,
                                  const std::function<double()>& eval, int n_coords,
                                  uint64_t seed, double h = 1e-5);

}  // namespace flow
