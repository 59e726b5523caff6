#pragma once

#include <string>
#include <vector>

namespace flow {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// The invariant suite behind `corrflow selftest`: kernel-vs-reference
// agreement, gradient spot checks, the lookup equivalence identity, GRU gate
// contracts, upsampling properties, loss values, I/O round trips and
// determinism. `quick` trims case counts.
std::vector<CheckResult> run_selftest(uint64_t seed, bool quick);

}  // namespace flow
