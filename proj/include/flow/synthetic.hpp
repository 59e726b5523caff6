#pragma once

#include <optional>
#include <string>

#include "flow/tensor.hpp"

namespace flow {

enum class MotionKind { constant_translation, affine, smooth_random_field };

MotionKind motion_kind_from_string(const std::string& s);
std::string to_string(MotionKind k);

template <typename T>
struct SyntheticSampleT {
    TensorPtrT<T> image1, image2;  // [3,H,W], values in [-1,1]
    TensorPtrT<T> flow;            // [2,H,W], ground truth, full resolution
    TensorPtrT<T> valid;           // [1,H,W], 1 where x + f(x) stays in frame
};

struct MotionParams {
    double max_mag = 8.0;
    // pins instead of drawing from the seed:
    std::optional<std::pair<double, double>> fixed_translation;
    bool identity_affine = false;
};

// Band-limited analytic texture warped by an analytically invertible (or
// fixed-point inverted) flow field, so image2(x + f(x)) == image1(x) up to
// interpolation error on all valid pixels.
template <typename T>
SyntheticSampleT<T> make_synthetic(uint64_t seed, int h, int w, MotionKind kind,
                                   const MotionParams& params = {});

// Appendix-style augmentation recipe; the default ranges mirror the
// FlyingChairs row, scaled-down erasure rectangles for small frames.
struct AugmentPolicy {
    double color_prob = 0.2;  // probability of per-image independent jitter
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.4;
    double hue = 0.5 / 3.14159265358979323846;
    double spatial_prob = 0.8;
    double min_scale = 0.87055056329612413913;  // 2^-0.2
    double max_scale = 2.0;                     // 2^1.0
    double stretch_prob = 0.8;
    double max_stretch = 0.2;  // log2 units
    double erase_prob = 0.5;
    int erase_max_count = 2;
    int erase_min_size = 6;
    int erase_max_size = 16;

    // jitter is always applied (color_prob only controls per-image
    // independence), so identity zeroes the ranges as well
    static AugmentPolicy identity() {
        AugmentPolicy p;
        p.color_prob = 0.0;
        p.brightness = p.contrast = p.saturation = p.hue = 0.0;
        p.spatial_prob = 0.0;
        p.erase_prob = 0.0;
        return p;
    }
};

// flow and validity transform consistently with every spatial change; flow
// vectors are rescaled by the axis stretch factors
template <typename T>
SyntheticSampleT<T> augment(const SyntheticSampleT<T>& sample, const AugmentPolicy& policy,
                            Rng& rng);

// bilinear warp check: mean |image2(x + f(x)) - image1(x)| over valid pixels
template <typename T>
double photometric_residual(const SyntheticSampleT<T>& sample);

}  // namespace flow
