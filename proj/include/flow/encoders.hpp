#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>

#include "flow/ops.hpp"
#include "flow/params.hpp"

namespace flow {

enum class NormKind { none, instance, batch };
enum class BlockKind { residual, bottleneck };

NormKind norm_kind_from_string(const std::string& s);
BlockKind block_kind_from_string(const std::string& s);
std::string to_string(NormKind k);
std::string to_string(BlockKind k);

// Backbone configuration shared by the feature and context encoders.
// Paper-scale widths are {64,96,128}/D=256; the desk defaults below quarter
// them so the whole pipeline runs on a CPU.
struct EncoderConfig {
    int out_dim = 64;
    int stem_width = 32;
    std::array<int, 3> stage_widths = {32, 48, 64};
    NormKind norm_kind = NormKind::instance;
    BlockKind block_kind = BlockKind::residual;
    // context encoder only: channel split of the output, (hidden, inject)
    std::pair<int, int> context_split = {64, 64};
    // small enough that the normalization is scale-invariant to ~1e-6
    // relative even for low-variance channels
    double norm_eps = 1e-6;
};

template <typename T>
struct ConvLayerT {
    TensorPtrT<T> w, b;
    int stride = 1, pad_y = 0, pad_x = 0;
    TensorPtrT<T> operator()(const TensorPtrT<T>& x) const;
};

template <typename T>
struct NormLayerT {
    NormKind kind = NormKind::none;
    TensorPtrT<T> gamma, beta;  // null when kind == none
    T eps = T(1e-5);
    TensorPtrT<T> operator()(const TensorPtrT<T>& x) const;
};

template <typename T>
struct ResBlockT {
    BlockKind kind = BlockKind::residual;
    ConvLayerT<T> c1, c2, c3;            // c3 used by bottleneck only
    NormLayerT<T> n1, n2, n3;
    std::optional<ConvLayerT<T>> down;   // 1x1 shortcut when stride/width change
    std::optional<NormLayerT<T>> down_norm;
    TensorPtrT<T> operator()(const TensorPtrT<T>& x) const;
};

template <typename T>
struct EncoderNetT {
    EncoderConfig cfg;
    ConvLayerT<T> stem;
    NormLayerT<T> stem_norm;
    std::vector<ResBlockT<T>> blocks;  // 6: two per stage
    ConvLayerT<T> proj;                // final 1x1 to out_dim
};

// Registers all parameters under `prefix` and returns the bound net.
// `effective_norm` downgrades batch normalization to instance statistics:
// the pipeline runs images through the encoder one at a time, and batch
// statistics are undefined at batch size one. The substitution is surfaced
// in the run manifest.
template <typename T>
EncoderNetT<T> build_encoder(ParamStoreT<T>& params, const std::string& prefix,
                             const EncoderConfig& cfg, Rng& rng);

NormKind effective_norm(NormKind requested);

// image [3,H,W] with H,W multiples of 8 and values in [-1,1] -> [D,H/8,W/8]
template <typename T>
TensorPtrT<T> encode_features(const TensorPtrT<T>& image, const EncoderNetT<T>& net);

// context encoder: output split into (tanh(hidden_init), relu(context_feats))
template <typename T>
std::pair<TensorPtrT<T>, TensorPtrT<T>> encode_context(const TensorPtrT<T>& image,
                                                       const EncoderNetT<T>& net);

// reflect-pad [C,H,W] so both spatial extents are multiples of `m`
// (pure value op; inputs are data, not parameters)
template <typename T>
TensorPtrT<T> reflect_pad_to_multiple(const TensorPtrT<T>& image, int m);

// analytic receptive-field radius of the configured stack, in input pixels
int receptive_field_radius(const EncoderConfig& cfg);

}  // namespace flow
