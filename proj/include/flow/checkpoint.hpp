#pragma once

#include <cstdint>
#include <string>

#include "flow/params.hpp"

namespace flow {

// Versioned binary container: magic "FLCK", version, plain-text config echo,
// step counter, RNG state, then the named tensors (name, dtype, shape,
// little-endian payload) in registry order. The writer is canonical, so
// save -> load -> save is byte-identical.
struct CheckpointMeta {
    std::string config_text;
    uint64_t step = 0;
    std::string rng_state;
    int dtype = 0;  // 0 = f32, 1 = f64
};

CheckpointMeta read_checkpoint_meta(const std::string& path);

template <typename T>
void save_checkpoint(const std::string& path, const ParamStoreT<T>& params,
                     const std::string& config_text, uint64_t step,
                     const std::string& rng_state);

// Fills an existing registry; names and shapes must match exactly. Values
// cast when the stored dtype differs from T.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParamStoreT<T>& params);

}  // namespace flow
