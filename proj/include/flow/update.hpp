#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flow/encoders.hpp"
#include "flow/ops.hpp"

namespace flow {

enum class GruKind { conv3x3, separable_1x5_5x1, plain_conv_stack };
enum class UpsampleKind { convex, bilinear };

GruKind gru_kind_from_string(const std::string& s);
UpsampleKind upsample_kind_from_string(const std::string& s);
std::string to_string(GruKind k);
std::string to_string(UpsampleKind k);

struct UpdateConfig {
    GruKind gru_kind = GruKind::conv3x3;
    UpsampleKind upsample = UpsampleKind::convex;
    int hidden_dim = 64;
    int context_dim = 64;     // 0 disables context injection
    int corr_branch1 = 96;    // motion encoder widths
    int corr_branch2 = 64;
    int flow_branch1 = 64;
    int flow_branch2 = 32;
    int head_width = 128;
    int mask_width = 128;
    bool append_raw_flow = true;
    double mask_temperature = 1.0;  // plain softmax; knob kept at 1
    int corr_channels = 324;        // set from the lookup config at build time
};

// x_t channel count fed to the recurrent unit (motion features + context)
int motion_feature_channels(const UpdateConfig& cfg);

template <typename T>
struct GruCellT {
    ConvLayerT<T> wz, wr, wh;
};

template <typename T>
struct UpdateBlockT {
    UpdateConfig cfg;
    ConvLayerT<T> corr1, corr2, flow1, flow2;       // motion encoder
    std::vector<GruCellT<T>> grus;                  // 1 (3x3) or 2 (separable)
    ConvLayerT<T> plain1, plain2, plain3;           // plain_conv_stack variant
    ConvLayerT<T> head1, head2;                     // flow head
    ConvLayerT<T> mask1, mask2;                     // convex upsampling mask
};

template <typename T>
UpdateBlockT<T> build_update_block(ParamStoreT<T>& params, const std::string& prefix,
                                   const UpdateConfig& cfg, Rng& rng);

// hidden state plus the constant context injection
template <typename T>
struct UpdateStateT {
    TensorPtrT<T> hidden;   // [Ch, H8, W8], entries in (-1,1) for GRU kinds
    TensorPtrT<T> context;  // [Cc, H8, W8] or null
};

// corr features + flow through their conv branches, concatenated (with the
// raw flow appended when configured)
template <typename T>
TensorPtrT<T> motion_features(const UpdateBlockT<T>& blk, const TensorPtrT<T>& corr_feats,
                              const TensorPtrT<T>& flow);

// one recurrent step; x_t = [motion features, context]
template <typename T>
UpdateStateT<T> gru_step(const UpdateBlockT<T>& blk, const UpdateStateT<T>& state,
                         const TensorPtrT<T>& x_t);

template <typename T>
TensorPtrT<T> flow_head(const UpdateBlockT<T>& blk, const TensorPtrT<T>& hidden);

template <typename T>
TensorPtrT<T> mask_head(const UpdateBlockT<T>& blk, const TensorPtrT<T>& hidden);

// coarse [2,h,w] plus mask logits [8*8*9,h,w] -> [2,8h,8w]; per output
// subpixel a softmax over the 9 coarse neighbors (edge-clamped), values x8
template <typename T>
TensorPtrT<T> upsample_convex(const TensorPtrT<T>& flow, const TensorPtrT<T>& mask_logits,
                              double temperature = 1.0);

// x8 bilinear with values scaled by 8; out(y,x) samples coarse (x/8, y/8)
// clamped to the lattice
template <typename T>
TensorPtrT<T> upsample_bilinear(const TensorPtrT<T>& flow);

enum class UpsamplePolicy { none, last, all };

template <typename T>
struct IterateResultT {
    std::vector<TensorPtrT<T>> flows_eighth;  // f_1..f_N
    std::vector<TensorPtrT<T>> flows_full;    // per UpsamplePolicy
    UpdateStateT<T> final_state;
    std::vector<double> step_update_norms;  // mean |df| per step, diagnostics
};

// Runs n_iters update steps from f0. Each step looks up correlation at the
// detached current flow, severs the gradient through the additive base, and
// applies f_{k+1} = detach(f_k) + df. `blocks` holds one entry for tied
// weights or one per step for the untied ablation.
template <typename T>
IterateResultT<T> iterate(const std::vector<UpdateBlockT<T>>& blocks,
                          const std::function<TensorPtrT<T>(const TensorPtrT<T>&)>& lookup_fn,
                          const TensorPtrT<T>& f0, UpdateStateT<T> state, int n_iters,
                          UpsamplePolicy up_policy);

// Forward projection of the previous pair's flow (1/8 resolution): each pixel
// votes its value at round(x + f(x)); collisions keep the smallest-magnitude
// vote, gaps take the nearest filled pixel (ties: row-major order).
template <typename T>
TensorPtrT<T> warm_start(const TensorPtrT<T>& prev_flow);

// full-resolution flow -> 1/8 resolution (extents must divide by 8)
template <typename T>
TensorPtrT<T> downsample_flow_to_eighth(const TensorPtrT<T>& full);

}  // namespace flow
