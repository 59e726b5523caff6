#include "flow/model.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "flow/synthetic.hpp"

namespace flow {

EncoderConfig ModelConfig::feature_encoder_cfg() const {
    EncoderConfig e;
    e.out_dim = feature_dim;
    e.stem_width = stem_width;
    e.stage_widths = stage_widths;
    e.norm_kind = feature_norm;
    e.block_kind = block_kind;
    return e;
}

EncoderConfig ModelConfig::context_encoder_cfg() const {
    EncoderConfig e;
    e.out_dim = hidden_dim + context_dim;
    e.stem_width = stem_width;
    e.stage_widths = stage_widths;
    e.norm_kind = context_norm;
    e.block_kind = block_kind;
    e.context_split = {hidden_dim, context_dim};
    return e;
}

UpdateConfig ModelConfig::update_cfg() const {
    UpdateConfig u;
    u.gru_kind = gru_kind;
    u.upsample = upsample;
    u.hidden_dim = hidden_dim;
    u.context_dim = use_context ? context_dim : 0;
    u.corr_branch1 = corr_branch1;
    u.corr_branch2 = corr_branch2;
    u.flow_branch1 = flow_branch1;
    u.flow_branch2 = flow_branch2;
    u.head_width = head_width;
    u.mask_width = mask_width;
    u.append_raw_flow = append_raw_flow;
    u.mask_temperature = mask_temperature;
    u.corr_channels = lookup_channels(lookup_cfg());
    return u;
}

LookupConfig ModelConfig::lookup_cfg() const {
    LookupConfig l;
    l.radius = corr_radius;
    l.levels = corr_levels;
    l.grid = corr_grid;
    return l;
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "feature_dim = " << feature_dim << "\n";
    os << "stem_width = " << stem_width << "\n";
    os << "stage_widths = " << stage_widths[0] << "," << stage_widths[1] << "," << stage_widths[2]
       << "\n";
    os << "feature_norm = " << to_string(feature_norm) << "\n";
    os << "context_norm = " << to_string(context_norm) << "\n";
    os << "block_kind = " << to_string(block_kind) << "\n";
    os << "hidden_dim = " << hidden_dim << "\n";
    os << "context_dim = " << context_dim << "\n";
    os << "use_context = " << (use_context ? 1 : 0) << "\n";
    os << "corr_radius = " << corr_radius << "\n";
    os << "corr_levels = " << corr_levels << "\n";
    os << "corr_grid = " << to_string(corr_grid) << "\n";
    os << "corr_scale_inv_sqrt_dim = " << (corr_scale_inv_sqrt_dim ? 1 : 0) << "\n";
    os << "lookup_on_demand = " << (lookup_on_demand ? 1 : 0) << "\n";
    os << "gru_kind = " << to_string(gru_kind) << "\n";
    os << "upsample = " << to_string(upsample) << "\n";
    os << "tied_weights = " << (tied_weights ? 1 : 0) << "\n";
    os << "iters_train = " << iters_train << "\n";
    os << "iters_infer = " << iters_infer << "\n";
    os << "append_raw_flow = " << (append_raw_flow ? 1 : 0) << "\n";
    os << "mask_temperature = " << mask_temperature << "\n";
    os << "corr_branch1 = " << corr_branch1 << "\n";
    os << "corr_branch2 = " << corr_branch2 << "\n";
    os << "flow_branch1 = " << flow_branch1 << "\n";
    os << "flow_branch2 = " << flow_branch2 << "\n";
    os << "head_width = " << head_width << "\n";
    os << "mask_width = " << mask_width << "\n";
    return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    ModelConfig c;
    auto geti = [&](const char* k, int& dst) {
        if (kv.count(k)) dst = std::stoi(kv[k]);
    };
    auto getb = [&](const char* k, bool& dst) {
        if (kv.count(k)) dst = std::stoi(kv[k]) != 0;
    };
    auto getd = [&](const char* k, double& dst) {
        if (kv.count(k)) dst = std::stod(kv[k]);
    };
    geti("feature_dim", c.feature_dim);
    geti("stem_width", c.stem_width);
    if (kv.count("stage_widths")) {
        std::istringstream ss(kv["stage_widths"]);
        std::string tok;
        for (int i = 0; i < 3 && std::getline(ss, tok, ','); ++i)
            c.stage_widths[static_cast<size_t>(i)] = std::stoi(tok);
    }
    if (kv.count("feature_norm")) c.feature_norm = norm_kind_from_string(kv["feature_norm"]);
    if (kv.count("context_norm")) c.context_norm = norm_kind_from_string(kv["context_norm"]);
    if (kv.count("block_kind")) c.block_kind = block_kind_from_string(kv["block_kind"]);
    geti("hidden_dim", c.hidden_dim);
    geti("context_dim", c.context_dim);
    getb("use_context", c.use_context);
    geti("corr_radius", c.corr_radius);
    geti("corr_levels", c.corr_levels);
    if (kv.count("corr_grid")) c.corr_grid = grid_shape_from_string(kv["corr_grid"]);
    getb("corr_scale_inv_sqrt_dim", c.corr_scale_inv_sqrt_dim);
    getb("lookup_on_demand", c.lookup_on_demand);
    if (kv.count("gru_kind")) c.gru_kind = gru_kind_from_string(kv["gru_kind"]);
    if (kv.count("upsample")) c.upsample = upsample_kind_from_string(kv["upsample"]);
    getb("tied_weights", c.tied_weights);
    geti("iters_train", c.iters_train);
    geti("iters_infer", c.iters_infer);
    getb("append_raw_flow", c.append_raw_flow);
    getd("mask_temperature", c.mask_temperature);
    geti("corr_branch1", c.corr_branch1);
    geti("corr_branch2", c.corr_branch2);
    geti("flow_branch1", c.flow_branch1);
    geti("flow_branch2", c.flow_branch2);
    geti("head_width", c.head_width);
    geti("mask_width", c.mask_width);
    return c;
}

namespace {

template <typename T>
double rms(const TensorPtrT<T>& t) {
    double acc = 0;
    for (auto v : t->data) acc += static_cast<double>(v) * v;
    return std::sqrt(acc / static_cast<double>(t->numel()));
}

// rescales a conv's weights so its output RMS on the probe input hits
// `target`; returns the rescaled output (bias is zero at init, so scaling
// the weights scales the output)
template <typename T>
TensorPtrT<T> calibrate_conv(const ConvLayerT<T>& conv, const TensorPtrT<T>& in, double target) {
    auto out = conv(in);
    const double r = rms(out);
    if (r < 1e-8) return out;
    const double alpha = std::clamp(target / r, 1e-3, 1e3);
    for (auto& v : conv.w->data) v = static_cast<T>(v * alpha);
    for (auto& v : out->data) v = static_cast<T>(v * alpha);
    return out;
}

template <typename T>
void rescale_conv_for(const ConvLayerT<T>& conv, double out_rms, double target) {
    if (out_rms < 1e-8) return;
    const double alpha = std::clamp(target / out_rms, 1e-3, 1e3);
    for (auto& v : conv.w->data) v = static_cast<T>(v * alpha);
}

// Layer-sequential unit-variance initialization over one synthetic probe
// sample. The unnormalized residual sums let the feature variance grow with
// depth, which puts the correlation values in the tens and parks the GRU
// gates deep in saturation; without this pass the recurrent unit barely
// trains at desk-scale sample counts.
template <typename T>
void calibrate_init(ModelT<T>& m) {
    MotionParams mp;
    mp.max_mag = 8.0;
    auto probe = make_synthetic<T>(0x9e3779b97f4a7c15ull, 64, 64,
                                   MotionKind::smooth_random_field, mp);
    const auto& cfg = m.cfg;

    // unit-RMS features out of both encoder projections
    rescale_conv_for(m.fnet.proj, rms(encode_features(probe.image1, m.fnet)), 1.0);
    auto f1 = encode_features(probe.image1, m.fnet);
    auto f2 = encode_features(probe.image2, m.fnet);
    const int h8 = f1->shape[1], w8 = f1->shape[2];

    TensorPtrT<T> h0, ctx;
    if (cfg.use_context) {
        rescale_conv_for(m.cnet.proj, rms(encode_features(probe.image1, m.cnet)), 1.0);
        auto split = encode_context(probe.image1, m.cnet);
        h0 = split.first;
        ctx = split.second;
    } else {
        h0 = make_tensor<T>({cfg.hidden_dim, h8, w8});
    }

    const T scale = cfg.corr_scale_inv_sqrt_dim
                        ? static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.feature_dim)))
                        : T(1);
    const LookupConfig lcfg = cfg.lookup_cfg();
    auto pyr = make_pyramid(f1, f2, scale, lcfg.levels);
    auto corr = lookup(pyr, make_tensor<T>({2, h8, w8}), lcfg);
    auto flow8 = downsample_flow_to_eighth(probe.flow);

    for (auto& blk : m.update) {
        auto ca = relu(calibrate_conv(blk.corr1, corr, 1.0));
        calibrate_conv(blk.corr2, ca, 1.0);
        auto fa = relu(calibrate_conv(blk.flow1, flow8, 1.0));
        calibrate_conv(blk.flow2, fa, 1.0);
        auto mf = motion_features(blk, corr, flow8);
        auto x_t = ctx ? concat_ch<T>({mf, ctx}) : mf;
        if (cfg.gru_kind == GruKind::plain_conv_stack) {
            auto p1 = relu(calibrate_conv(blk.plain1, concat_ch<T>({h0, x_t}), 1.0));
            auto p2 = relu(calibrate_conv(blk.plain2, p1, 1.0));
            calibrate_conv(blk.plain3, p2, 1.0);
        } else {
            // gate pre-activations at unit RMS keep sigmoid/tanh responsive;
            // the candidate input r(.)h shares h's scale, so hx stands in
            auto hx = concat_ch<T>({h0, x_t});
            for (auto& cell : blk.grus) {
                calibrate_conv(cell.wz, hx, 1.0);
                calibrate_conv(cell.wr, hx, 1.0);
                calibrate_conv(cell.wh, hx, 1.0);
            }
        }
        UpdateStateT<T> st;
        st.hidden = h0;
        st.context = ctx;
        auto stepped = gru_step(blk, st, x_t);
        auto ha = relu(calibrate_conv(blk.head1, stepped.hidden, 1.0));
        calibrate_conv(blk.head2, ha, 0.3);  // modest first flow update
        if (cfg.upsample == UpsampleKind::convex) {
            auto ma = relu(calibrate_conv(blk.mask1, stepped.hidden, 1.0));
            calibrate_conv(blk.mask2, ma, 0.5);
        }
    }
}

}  // namespace

template <typename T>
ModelT<T> ModelT<T>::build(const ModelConfig& cfg, uint64_t seed) {
    ModelT<T> m;
    m.cfg = cfg;
    Rng rng(seed);
    m.fnet = build_encoder(m.params, "fnet", cfg.feature_encoder_cfg(), rng);
    if (cfg.use_context)
        m.cnet = build_encoder(m.params, "cnet", cfg.context_encoder_cfg(), rng);
    const int nblocks = cfg.tied_weights ? 1 : cfg.iters_train;
    for (int i = 0; i < nblocks; ++i) {
        const std::string prefix =
            cfg.tied_weights ? std::string("update") : "update.step" + std::to_string(i);
        m.update.push_back(build_update_block(m.params, prefix, cfg.update_cfg(), rng));
    }
    calibrate_init(m);
    return m;
}

template <typename T>
ForwardResultT<T> ModelT<T>::run(const TensorPtrT<T>& img1, const TensorPtrT<T>& img2,
                                 int n_iters, UpsamplePolicy policy,
                                 const TensorPtrT<T>& f0_eighth) const {
    if (img1->shape != img2->shape)
        throw ShapeError("model: image extents differ, " + shape_str(img1->shape) + " vs " +
                         shape_str(img2->shape));
    const int orig_h = img1->shape[1], orig_w = img1->shape[2];
    auto p1 = reflect_pad_to_multiple(img1, 8);
    auto p2 = reflect_pad_to_multiple(img2, 8);
    const int h8 = p1->shape[1] / 8, w8 = p1->shape[2] / 8;

    auto f1 = encode_features(p1, fnet);
    auto f2 = encode_features(p2, fnet);
    const T scale = cfg.corr_scale_inv_sqrt_dim
                        ? static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.feature_dim)))
                        : T(1);
    const LookupConfig lcfg = cfg.lookup_cfg();

    std::function<TensorPtrT<T>(const TensorPtrT<T>&)> lookup_fn;
    CorrelationPyramidT<T> pyr;
    PooledFeaturesT<T> pooled;
    if (cfg.lookup_on_demand) {
        pooled = make_pooled(f1, f2, scale, lcfg.levels);
        lookup_fn = [this, pooled, lcfg](const TensorPtrT<T>& fl) {
            return lookup_ondemand(pooled, fl, lcfg);
        };
    } else {
        pyr = make_pyramid(f1, f2, scale, lcfg.levels);
        lookup_fn = [this, pyr, lcfg](const TensorPtrT<T>& fl) {
            return lookup(pyr, fl, lcfg);
        };
    }

    UpdateStateT<T> state;
    if (cfg.use_context) {
        auto [h0, ctx] = encode_context(p1, cnet);
        state.hidden = h0;
        state.context = ctx;
    } else {
        state.hidden = make_tensor<T>({cfg.hidden_dim, h8, w8});
        state.context = nullptr;
    }

    TensorPtrT<T> f0 = f0_eighth;
    if (!f0) {
        f0 = make_tensor<T>({2, h8, w8});  // zero initialization
    } else if (f0->shape != std::vector<int>{2, h8, w8}) {
        throw ShapeError("model: warm-start flow must be [2," + std::to_string(h8) + "," +
                         std::to_string(w8) + "]");
    }

    auto it = iterate(update, lookup_fn, f0, state, n_iters, policy);

    ForwardResultT<T> res;
    res.flows_eighth = std::move(it.flows_eighth);
    res.step_update_norms = std::move(it.step_update_norms);
    res.padded_h = p1->shape[1];
    res.padded_w = p1->shape[2];
    for (auto& ff : it.flows_full) {
        res.flows_full.push_back(
            (ff->shape[1] == orig_h && ff->shape[2] == orig_w) ? ff
                                                               : crop2d(ff, 0, 0, orig_h, orig_w));
    }
    return res;
}

template struct ModelT<float>;
template struct ModelT<double>;
template struct ForwardResultT<float>;
template struct ForwardResultT<double>;

}  // namespace flow
