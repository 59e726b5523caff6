#include "flow/encoders.hpp"

#include <cmath>

namespace flow {

NormKind norm_kind_from_string(const std::string& s) {
    if (s == "none") return NormKind::none;
    if (s == "instance") return NormKind::instance;
    if (s == "batch") return NormKind::batch;
    throw ContractError("unknown norm kind: " + s);
}

BlockKind block_kind_from_string(const std::string& s) {
    if (s == "residual") return BlockKind::residual;
    if (s == "bottleneck") return BlockKind::bottleneck;
    throw ContractError("unknown block kind: " + s);
}

std::string to_string(NormKind k) {
    switch (k) {
        case NormKind::none: return "none";
        case NormKind::instance: return "instance";
        default: return "batch";
    }
}

std::string to_string(BlockKind k) {
    return k == BlockKind::residual ? "residual" : "bottleneck";
}

NormKind effective_norm(NormKind requested) {
    // batch statistics are undefined at batch size 1; the pipeline encodes
    // per image, so batch norm falls back to instance statistics
    return requested == NormKind::batch ? NormKind::instance : requested;
}

template <typename T>
TensorPtrT<T> ConvLayerT<T>::operator()(const TensorPtrT<T>& x) const {
    return conv2d_chw(x, w, b, stride, pad_y, pad_x);
}

template <typename T>
TensorPtrT<T> NormLayerT<T>::operator()(const TensorPtrT<T>& x) const {
    if (kind == NormKind::none) return x;
    return instance_norm2d(x, gamma, beta, eps);
}

template <typename T>
TensorPtrT<T> ResBlockT<T>::operator()(const TensorPtrT<T>& x) const {
    TensorPtrT<T> y;
    if (kind == BlockKind::residual) {
        y = relu(n1(c1(x)));
        y = relu(n2(c2(y)));
    } else {
        y = relu(n1(c1(x)));
        y = relu(n2(c2(y)));
        y = relu(n3(c3(y)));
    }
    TensorPtrT<T> shortcut = x;
    if (down) shortcut = (*down_norm)((*down)(x));
    return relu(add(shortcut, y));
}

namespace {

template <typename T>
ConvLayerT<T> make_conv(ParamStoreT<T>& ps, const std::string& name, int out_c, int in_c, int kh,
                        int kw, int stride, int pad_y, int pad_x, Rng& rng,
                        bool with_bias = true) {
    ConvLayerT<T> l;
    l.w = ps.create(name + ".w", {out_c, in_c, kh, kw});
    // a bias feeding a normalization layer is a per-channel shift the norm
    // removes again; skip the dead parameter
    if (with_bias) l.b = ps.create(name + ".b", {out_c});
    init_conv_kaiming(l.w, rng);
    l.stride = stride;
    l.pad_y = pad_y;
    l.pad_x = pad_x;
    return l;
}

template <typename T>
NormLayerT<T> make_norm(ParamStoreT<T>& ps, const std::string& name, NormKind kind, int channels,
                        double eps, Rng&) {
    NormLayerT<T> n;
    n.kind = effective_norm(kind);
    n.eps = static_cast<T>(eps);
    if (n.kind != NormKind::none) {
        n.gamma = ps.create(name + ".gamma", {channels});
        n.beta = ps.create(name + ".beta", {channels});
        std::fill(n.gamma->data.begin(), n.gamma->data.end(), T(1));
    }
    return n;
}

template <typename T>
ResBlockT<T> make_block(ParamStoreT<T>& ps, const std::string& name, const EncoderConfig& cfg,
                        int in_c, int out_c, int stride, Rng& rng) {
    ResBlockT<T> blk;
    blk.kind = cfg.block_kind;
    const bool bias = cfg.norm_kind == NormKind::none;
    if (cfg.block_kind == BlockKind::residual) {
        blk.c1 = make_conv(ps, name + ".c1", out_c, in_c, 3, 3, stride, 1, 1, rng, bias);
        blk.n1 = make_norm<T>(ps, name + ".n1", cfg.norm_kind, out_c, cfg.norm_eps, rng);
        blk.c2 = make_conv(ps, name + ".c2", out_c, out_c, 3, 3, 1, 1, 1, rng, bias);
        blk.n2 = make_norm<T>(ps, name + ".n2", cfg.norm_kind, out_c, cfg.norm_eps, rng);
    } else {
        const int mid = std::max(out_c / 4, 8);
        blk.c1 = make_conv(ps, name + ".c1", mid, in_c, 1, 1, 1, 0, 0, rng, bias);
        blk.n1 = make_norm<T>(ps, name + ".n1", cfg.norm_kind, mid, cfg.norm_eps, rng);
        blk.c2 = make_conv(ps, name + ".c2", mid, mid, 3, 3, stride, 1, 1, rng, bias);
        blk.n2 = make_norm<T>(ps, name + ".n2", cfg.norm_kind, mid, cfg.norm_eps, rng);
        blk.c3 = make_conv(ps, name + ".c3", out_c, mid, 1, 1, 1, 0, 0, rng, bias);
        blk.n3 = make_norm<T>(ps, name + ".n3", cfg.norm_kind, out_c, cfg.norm_eps, rng);
    }
    if (stride != 1 || in_c != out_c) {
        blk.down = make_conv(ps, name + ".down", out_c, in_c, 1, 1, stride, 0, 0, rng, bias);
        blk.down_norm = make_norm<T>(ps, name + ".down_norm", cfg.norm_kind, out_c, cfg.norm_eps,
                                     rng);
    }
    return blk;
}

}  // namespace

template <typename T>
EncoderNetT<T> build_encoder(ParamStoreT<T>& ps, const std::string& prefix,
                             const EncoderConfig& cfg, Rng& rng) {
    EncoderNetT<T> net;
    net.cfg = cfg;
    const auto& sw = cfg.stage_widths;
    net.stem = make_conv(ps, prefix + ".stem", cfg.stem_width, 3, 7, 7, 2, 3, 3, rng,
                         cfg.norm_kind == NormKind::none);
    net.stem_norm = make_norm<T>(ps, prefix + ".stem_norm", cfg.norm_kind, cfg.stem_width,
                                 cfg.norm_eps, rng);
    // 6 blocks, two per stage; stage entries carry the stride-2 downsampling
    net.blocks.push_back(make_block(ps, prefix + ".b0", cfg, cfg.stem_width, sw[0], 1, rng));
    net.blocks.push_back(make_block(ps, prefix + ".b1", cfg, sw[0], sw[0], 1, rng));
    net.blocks.push_back(make_block(ps, prefix + ".b2", cfg, sw[0], sw[1], 2, rng));
    net.blocks.push_back(make_block(ps, prefix + ".b3", cfg, sw[1], sw[1], 1, rng));
    net.blocks.push_back(make_block(ps, prefix + ".b4", cfg, sw[1], sw[2], 2, rng));
    net.blocks.push_back(make_block(ps, prefix + ".b5", cfg, sw[2], sw[2], 1, rng));
    net.proj = make_conv(ps, prefix + ".proj", cfg.out_dim, sw[2], 1, 1, 1, 0, 0, rng);
    return net;
}

namespace {

template <typename T>
TensorPtrT<T> run_backbone(const TensorPtrT<T>& image, const EncoderNetT<T>& net) {
    if (image->rank() != 3 || image->shape[0] != 3)
        throw ShapeError("encoder: expected [3,H,W] image, got " + shape_str(image->shape));
    if (image->shape[1] % 8 != 0 || image->shape[2] % 8 != 0)
        throw ShapeError("encoder: extents must be multiples of 8, got " +
                         shape_str(image->shape));
    auto x = relu(net.stem_norm(net.stem(image)));
    for (const auto& blk : net.blocks) x = blk(x);
    return net.proj(x);
}

}  // namespace

template <typename T>
TensorPtrT<T> encode_features(const TensorPtrT<T>& image, const EncoderNetT<T>& net) {
    return run_backbone(image, net);
}

template <typename T>
std::pair<TensorPtrT<T>, TensorPtrT<T>> encode_context(const TensorPtrT<T>& image,
                                                       const EncoderNetT<T>& net) {
    auto out = run_backbone(image, net);
    const auto [h_ch, c_ch] = net.cfg.context_split;
    if (h_ch + c_ch != net.cfg.out_dim)
        throw ShapeError("encode_context: context_split parts must sum to out_dim");
    auto hidden = tanh(slice_ch(out, 0, h_ch));
    auto context = relu(slice_ch(out, h_ch, h_ch + c_ch));
    return {hidden, context};
}

template <typename T>
TensorPtrT<T> reflect_pad_to_multiple(const TensorPtrT<T>& image, int m) {
    const int c = image->shape[0], h = image->shape[1], w = image->shape[2];
    const int ph = (m - h % m) % m, pw = (m - w % m) % m;
    if (ph == 0 && pw == 0) return image;
    auto out = make_tensor<T>({c, h + ph, w + pw});
    auto mirror = [](int i, int n) {
        if (i < n) return i;
        return 2 * n - 2 - i;  // reflect without repeating the edge sample
    };
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h + ph; ++y)
            for (int x = 0; x < w + pw; ++x)
                out->at(ch, y, x) = image->at(ch, mirror(y, h), mirror(x, w));
    return out;
}

int receptive_field_radius(const EncoderConfig& cfg) {
    int rf = 1, jump = 1;
    auto apply = [&](int k, int s) {
        rf += (k - 1) * jump;
        jump *= s;
    };
    apply(7, 2);  // stem
    const int strides[6] = {1, 1, 2, 1, 2, 1};
    for (int i = 0; i < 6; ++i) {
        if (cfg.block_kind == BlockKind::residual) {
            apply(3, strides[i]);
            apply(3, 1);
        } else {
            apply(1, 1);
            apply(3, strides[i]);
            apply(1, 1);
        }
    }
    apply(1, 1);  // projection
    return (rf - 1) / 2;
}

#define FLOW_INSTANTIATE_ENC(T)                                                             \
    template struct ConvLayerT<T>;                                                          \
    template struct NormLayerT<T>;                                                          \
    template struct ResBlockT<T>;                                                           \
    template EncoderNetT<T> build_encoder<T>(ParamStoreT<T>&, const std::string&,           \
                                             const EncoderConfig&, Rng&);                   \
    template TensorPtrT<T> encode_features<T>(const TensorPtrT<T>&, const EncoderNetT<T>&); \
    template std::pair<TensorPtrT<T>, TensorPtrT<T>> encode_context<T>(                     \
        const TensorPtrT<T>&, const EncoderNetT<T>&);                                       \
    template TensorPtrT<T> reflect_pad_to_multiple<T>(const TensorPtrT<T>&, int);

FLOW_INSTANTIATE_ENC(float)
FLOW_INSTANTIATE_ENC(double)

}  // namespace flow
