#pragma once

#include <string>
#include <vector>

#include "flow/ops.hpp"

namespace flow {

enum class GridShape { square, diamond };

GridShape grid_shape_from_string(const std::string& s);
std::string to_string(GridShape g);

struct LookupConfig {
    int radius = 4;
    int levels = 4;
    GridShape grid = GridShape::square;
};

// (dy,dx) offsets in row-major order; square is the full (2r+1)^2 grid,
// diamond keeps |dy|+|dx| <= r
std::vector<std::pair<int, int>> lookup_offsets(const LookupConfig& cfg);
int lookup_points_per_level(const LookupConfig& cfg);
inline int lookup_channels(const LookupConfig& cfg) {
    return cfg.levels * lookup_points_per_level(cfg);
}

// image-pixel span of a radius-r grid at pyramid level k (features at 1/8)
inline int lookup_range_px(int radius, int level) { return radius * (1 << level) * 8; }

// Pooled all-pairs volume set. Level k holds one response image per source
// pixel: shape [H1*W1, 1, h2/2^k, w2/2^k]. Levels stay on the tape, so
// gradients reach the input features through the pooling and the matmul.
template <typename T>
struct CorrelationPyramidT {
    std::vector<TensorPtrT<T>> levels;
    int h1 = 0, w1 = 0;    // source (I1) extents
    int h2 = 0, w2 = 0;    // level-0 target extents (padded)
    int64_t footprint_bytes() const {
        int64_t b = 0;
        for (const auto& l : levels) b += l->numel() * static_cast<int64_t>(sizeof(T));
        return b;
    }
};

// The O(N*M) alternative: pooled copies of the target features, correlations
// taken at sample time.
template <typename T>
struct PooledFeaturesT {
    TensorPtrT<T> f1;                      // [D, H1, W1]
    std::vector<TensorPtrT<T>> f2_levels;  // [D, h2/2^k, w2/2^k]
    T scale = T(1);
    int64_t footprint_bytes() const {
        int64_t b = f1 ? f1->numel() * static_cast<int64_t>(sizeof(T)) : 0;
        for (const auto& l : f2_levels) b += l->numel() * static_cast<int64_t>(sizeof(T));
        return b;
    }
};

// vol[i,j,k,l] = scale * sum_h f1[h,i,j] * f2[h,k,l], one matrix product.
// The spec'd op: extents of f1 and f2 must match.
template <typename T>
TensorPtrT<T> build_volume(const TensorPtrT<T>& f1, const TensorPtrT<T>& f2, T scale);

// same computation without the equal-extent requirement (padded f2)
template <typename T>
TensorPtrT<T> build_volume_general(const TensorPtrT<T>& f1, const TensorPtrT<T>& f2, T scale);

// pools the last two dims of the 4D volume with kernels 1,2,4,...,2^(L-1);
// those extents must divide by 2^(L-1)
template <typename T>
CorrelationPyramidT<T> build_pyramid(const TensorPtrT<T>& volume, int levels);

// flow [2,H1,W1] at 1/8 resolution -> [L*npts, H1, W1]; per source pixel x
// the level-k response image is sampled at x'/2^k + offset, x' = x + f(x),
// bilinear with zero padding
template <typename T>
TensorPtrT<T> lookup(const CorrelationPyramidT<T>& pyr, const TensorPtrT<T>& flow,
                     const LookupConfig& cfg);

// identical contract to lookup(); correlations computed on demand against
// the pooled target features
template <typename T>
TensorPtrT<T> lookup_ondemand(const PooledFeaturesT<T>& pooled, const TensorPtrT<T>& flow,
                              const LookupConfig& cfg);

// pipeline helpers: zero-pad f2 so the pyramid divisibility holds, then build
template <typename T>
CorrelationPyramidT<T> make_pyramid(const TensorPtrT<T>& f1, const TensorPtrT<T>& f2, T scale,
                                    int levels);
template <typename T>
PooledFeaturesT<T> make_pooled(const TensorPtrT<T>& f1, const TensorPtrT<T>& f2, T scale,
                               int levels);

}  // namespace flow
