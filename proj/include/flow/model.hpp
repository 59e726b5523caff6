#pragma once

#include <string>

#include "flow/correlation.hpp"
#include "flow/encoders.hpp"
#include "flow/update.hpp"

namespace flow {

// Every architecture knob in one place. The defaults are the desk-scale
// configuration the acceptance runs use; paper-scale widths are reachable by
// raising the dims.
struct ModelConfig {
    int feature_dim = 64;
    int stem_width = 32;
    std::array<int, 3> stage_widths = {32, 48, 64};
    NormKind feature_norm = NormKind::instance;
    NormKind context_norm = NormKind::batch;
    BlockKind block_kind = BlockKind::residual;

    int hidden_dim = 64;
    int context_dim = 64;
    bool use_context = true;

    int corr_radius = 4;
    int corr_levels = 4;
    GridShape corr_grid = GridShape::square;
    bool corr_scale_inv_sqrt_dim = true;
    bool lookup_on_demand = false;

    GruKind gru_kind = GruKind::conv3x3;
    UpsampleKind upsample = UpsampleKind::convex;
    bool tied_weights = true;
    int iters_train = 12;
    int iters_infer = 32;
    bool append_raw_flow = true;
    double mask_temperature = 1.0;

    int corr_branch1 = 96, corr_branch2 = 64;
    int flow_branch1 = 64, flow_branch2 = 32;
    int head_width = 128, mask_width = 128;

    EncoderConfig feature_encoder_cfg() const;
    EncoderConfig context_encoder_cfg() const;
    UpdateConfig update_cfg() const;
    LookupConfig lookup_cfg() const;

    // key = value lines; the canonical form stored in checkpoints
    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);
    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct ForwardResultT {
    std::vector<TensorPtrT<T>> flows_full;    // cropped to the input extents
    std::vector<TensorPtrT<T>> flows_eighth;  // on the padded 1/8 grid
    std::vector<double> step_update_norms;
    int padded_h = 0, padded_w = 0;
};

template <typename T>
struct ModelT {
    ModelConfig cfg;
    ParamStoreT<T> params;
    EncoderNetT<T> fnet;
    EncoderNetT<T> cnet;  // unused when !cfg.use_context
    std::vector<UpdateBlockT<T>> update;

    static ModelT build(const ModelConfig& cfg, uint64_t seed);

    // images [3,H,W] in [-1,1], equal extents; f0_eighth (optional) must
    // live on the padded 1/8 grid
    ForwardResultT<T> run(const TensorPtrT<T>& img1, const TensorPtrT<T>& img2, int n_iters,
                          UpsamplePolicy policy,
                          const TensorPtrT<T>& f0_eighth = nullptr) const;

    int64_t param_count() const { return params.scalar_count(); }

    // manifest note when batch norm degraded to instance statistics
    bool norm_substituted() const {
        return cfg.use_context && cfg.context_norm == NormKind::batch;
    }
};

}  // namespace flow
