#include "flow/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "flow/checkpoint.hpp"
#include "flow/correlation.hpp"
#include "flow/flow_io.hpp"
#include "flow/gradcheck.hpp"
#include "flow/kernels.hpp"
#include "flow/loss.hpp"
#include "flow/model.hpp"
#include "flow/update.hpp"

namespace flow {

namespace {

using D = double;
using Td = TensorPtrT<double>;

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

struct Suite {
    std::vector<CheckResult> results;
    void check(const std::string& name, bool pass, const std::string& detail = "") {
        results.push_back({name, pass, detail});
    }
    void metric(const std::string& name, double value, double bound) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%.3g (bound %.3g)", value, bound);
        results.push_back({name, value < bound, buf});
    }
};

void kernels_vs_reference(Suite& s, Rng& rng) {
    {
        auto in = randn_tensor<D>({2, 3, 11, 9}, rng);
        auto w = randn_tensor<D>({4, 3, 3, 3}, rng);
        auto bias = randn_tensor<D>({4}, rng);
        auto a = make_tensor<D>({2, 4, 11, 9});
        auto b = make_tensor<D>({2, 4, 11, 9});
        kern::conv2d_fwd(in->data.data(), w->data.data(), bias->data.data(), a->data.data(), 2, 3,
                         11, 9, 4, 3, 3, 1, 1, 1);
        ref::conv2d_fwd(in->data.data(), w->data.data(), bias->data.data(), b->data.data(), 2, 3,
                        11, 9, 4, 3, 3, 1, 1, 1);
        s.metric("conv2d parallel vs serial reference", max_abs_diff(a->data, b->data), 1e-12);
    }
    {
        auto a = randn_tensor<D>({17, 13}, rng);
        auto b = randn_tensor<D>({13, 7}, rng);
        auto c1 = make_tensor<D>({17, 7});
        auto c2 = make_tensor<D>({17, 7});
        kern::matmul(a->data.data(), b->data.data(), c1->data.data(), 17, 13, 7);
        ref::matmul(a->data.data(), b->data.data(), c2->data.data(), 17, 13, 7);
        s.metric("matmul parallel vs serial reference", max_abs_diff(c1->data, c2->data), 1e-12);
    }
    {
        auto x = randn_tensor<D>({3, 8, 8}, rng);
        auto a = make_tensor<D>({3, 2, 2});
        auto b = make_tensor<D>({3, 2, 2});
        kern::avgpool_fwd(x->data.data(), a->data.data(), 3, 8, 8, 4);
        ref::avgpool_fwd(x->data.data(), b->data.data(), 3, 8, 8, 4);
        s.metric("avg_pool2d parallel vs serial reference", max_abs_diff(a->data, b->data), 1e-13);
    }
    {
        auto f = randn_tensor<D>({4, 9, 9}, rng);
        auto pts = make_tensor<D>({30, 2});
        for (auto& v : pts->data) v = rng.uniform(-1.5, 9.5);
        auto a = make_tensor<D>({30, 4});
        auto b = make_tensor<D>({30, 4});
        kern::bilinear_fwd(f->data.data(), pts->data.data(), a->data.data(), 4, 9, 9, 30);
        ref::bilinear_fwd(f->data.data(), pts->data.data(), b->data.data(), 4, 9, 9, 30);
        s.metric("bilinear parallel vs serial reference", max_abs_diff(a->data, b->data), 1e-13);
    }
}

void gradient_spot_checks(Suite& s, Rng& rng) {
    // one composite graph touching most ops
    auto x = randn_tensor<D>({1, 2, 6, 6}, rng);
    x->requires_grad = true;
    auto w = randn_tensor<D>({3, 2, 3, 3}, rng, 0.4);
    w->requires_grad = true;
    auto b = randn_tensor<D>({3}, rng, 0.2);
    b->requires_grad = true;
    auto eval = [&]() {
        TapeT<D> tape;
        GraphScopeT<D> scope(tape);
        auto y = conv2d(x, w, b, 1, 1);
        auto z = tanh(y);
        auto r = relu(scale(z, 1.3));
        auto sm = sigmoid(r);
        return static_cast<double>(sum(mul(sm, sm))->data[0]);
    };
    auto run = [&]() {
        TapeT<D> tape;
        GraphScopeT<D> scope(tape);
        auto y = conv2d(x, w, b, 1, 1);
        auto z = tanh(y);
        auto r = relu(scale(z, 1.3));
        auto sm = sigmoid(r);
        auto loss = sum(mul(sm, sm));
        tape.backward(loss);
    };
    for (auto* leaf : {&x, &w, &b}) (*leaf)->zero_grad();
    run();
    double worst = 0;
    for (auto* leaf : {&x, &w, &b}) {
        auto rep = finite_diff_check(*leaf, eval, 12, 77);
        worst = std::max(worst, rep.max_rel_err);
    }
    s.metric("composite graph gradients vs finite differences", worst, 1e-4);
}

void correlation_checks(Suite& s, Rng& rng, bool quick) {
    const int cases = quick ? 4 : 12;
    double worst_fwd = 0, worst_grad = 0;
    for (int c = 0; c < cases; ++c) {
        const int d = rng.uniform_int(4, 16);
        const int h = rng.uniform_int(4, 8), w = rng.uniform_int(4, 10);
        LookupConfig lcfg;
        lcfg.radius = rng.uniform_int(0, 3);
        lcfg.levels = rng.uniform_int(1, 2);
        auto f1 = randn_tensor<D>({d, h, w}, rng);
        auto f2 = randn_tensor<D>({d, h, w}, rng);
        f1->requires_grad = f2->requires_grad = true;
        auto fl = randn_tensor<D>({2, h, w}, rng, 1.5);
        const D scale = static_cast<D>(1.0 / std::sqrt(static_cast<double>(d)));
        auto wsum = randn_tensor<D>({lookup_channels(lcfg), h, w}, rng);

        f1->zero_grad();
        f2->zero_grad();
        std::vector<double> ga, gb;
        Td oa, ob;
        {
            TapeT<D> tape;
            GraphScopeT<D> scope(tape);
            auto pyr = make_pyramid(f1, f2, scale, lcfg.levels);
            oa = lookup(pyr, fl, lcfg);
            tape.backward(sum(mul(oa, wsum)));
            ga = f1->grad;
            for (auto v : f2->grad) ga.push_back(v);
        }
        f1->zero_grad();
        f2->zero_grad();
        {
            TapeT<D> tape;
            GraphScopeT<D> scope(tape);
            auto pooled = make_pooled(f1, f2, scale, lcfg.levels);
            ob = lookup_ondemand(pooled, fl, lcfg);
            tape.backward(sum(mul(ob, wsum)));
            gb = f1->grad;
            for (auto v : f2->grad) gb.push_back(v);
        }
        worst_fwd = std::max(worst_fwd, max_abs_diff(oa->data, ob->data));
        worst_grad = std::max(worst_grad, max_abs_diff(ga, gb));
    }
    s.metric("lookup vs on-demand lookup (values)", worst_fwd, 1e-10);
    s.metric("lookup vs on-demand lookup (feature gradients)", worst_grad, 1e-10);

    // pyramid pooling consistency, exact
    auto f1 = randn_tensor<D>({8, 8, 8}, rng);
    auto f2 = randn_tensor<D>({8, 8, 8}, rng);
    auto pyr = make_pyramid(f1, f2, D(1), 3);
    double worst = 0;
    for (int k = 1; k < 3; ++k) {
        auto pooled = avg_pool2d(pyr.levels[0], 1 << k);
        worst = std::max(worst, max_abs_diff(pooled->data, pyr.levels[static_cast<size_t>(k)]->data));
    }
    s.check("pyramid level k equals avg_pool2d(level0, 2^k)", worst == 0.0);
}

void gru_checks(Suite& s, Rng& rng) {
    ParamStoreT<D> ps;
    UpdateConfig ucfg;
    ucfg.hidden_dim = 8;
    ucfg.context_dim = 0;
    ucfg.corr_channels = 12;
    ucfg.corr_branch1 = 8;
    ucfg.corr_branch2 = 6;
    ucfg.flow_branch1 = 6;
    ucfg.flow_branch2 = 4;
    ucfg.head_width = 8;
    Rng prng(rng.engine()());
    auto blk = build_update_block(ps, "u", ucfg, prng);
    const int h = 5, w = 6;
    auto x = randn_tensor<D>({motion_feature_channels(ucfg), h, w}, rng);
    UpdateStateT<D> st;
    st.hidden = uniform_tensor<D>({8, h, w}, rng, -0.9, 0.9);

    auto& wz_bias = ps.get("u.gru.wz.b");
    std::fill(wz_bias->data.begin(), wz_bias->data.end(), D(50));
    auto sat1 = gru_step(blk, st, x);
    // z -> 1 replaces the state with the candidate
    auto hx = concat_ch<D>({st.hidden, x});
    auto r = sigmoid(blk.grus[0].wr(hx));
    auto cand = tanh(blk.grus[0].wh(concat_ch<D>({mul(r, st.hidden), x})));
    s.metric("gate saturation z->1 gives h == candidate", max_abs_diff(sat1.hidden->data, cand->data),
             1e-12);
    std::fill(wz_bias->data.begin(), wz_bias->data.end(), D(-50));
    auto sat0 = gru_step(blk, st, x);
    s.metric("gate saturation z->0 freezes the state",
             max_abs_diff(sat0.hidden->data, st.hidden->data), 1e-12);
    std::fill(wz_bias->data.begin(), wz_bias->data.end(), D(0));

    bool bounded = true;
    auto state = st;
    for (int it = 0; it < 50; ++it) {
        auto xt = randn_tensor<D>({motion_feature_channels(ucfg), h, w}, rng, 2.0);
        state = gru_step(blk, state, xt);
        for (auto v : state.hidden->data)
            if (!(v > D(-1) && v < D(1))) bounded = false;
    }
    s.check("hidden state stays inside (-1,1)", bounded);
}

void upsample_checks(Suite& s, Rng& rng) {
    const int h = 6, w = 5;
    auto flow = randn_tensor<D>({2, h, w}, rng, 3.0);
    auto logits = randn_tensor<D>({8 * 8 * 9, h, w}, rng);
    auto up = upsample_convex(flow, logits);
    // convex hull bound against the clamped 3x3 neighborhood
    bool hull = true;
    for (int y = 0; y < 8 * h && hull; ++y) {
        for (int x = 0; x < 8 * w && hull; ++x) {
            const int ci = y / 8, cj = x / 8;
            for (int c = 0; c < 2; ++c) {
                double lo = 1e30, hi = -1e30;
                for (int n = 0; n < 9; ++n) {
                    const int ni = std::clamp(ci + n / 3 - 1, 0, h - 1);
                    const int nj = std::clamp(cj + n % 3 - 1, 0, w - 1);
                    const double v = flow->at(c, ni, nj);
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                const double v = up->at(c, y, x);
                if (v < 8 * lo - 1e-9 || v > 8 * hi + 1e-9) hull = false;
            }
        }
    }
    s.check("convex upsampling stays in 8x[min,max] of neighbors", hull);

    auto cflow = full_like_shape<D>({2, h, w}, D(1.75));
    auto upc = upsample_convex(cflow, logits);
    double worst = 0;
    for (auto v : upc->data) worst = std::max(worst, std::abs(v - 8 * 1.75));
    s.metric("constant field maps to 8c (convex)", worst, 1e-12);
    auto upb = upsample_bilinear(cflow);
    worst = 0;
    for (auto v : upb->data) worst = std::max(worst, std::abs(v - 8 * 1.75));
    s.metric("constant field maps to 8c (bilinear)", worst, 1e-12);
}

void loss_and_io_checks(Suite& s, Rng& rng) {
    {
        const int h = 4, w = 4;
        auto gt = randn_tensor<D>({2, h, w}, rng);
        auto valid = full_like_shape<D>({1, h, w}, D(1));
        auto p1 = add_scalar(gt, D(1));
        auto loss = sequence_loss<D>({p1, p1}, gt, valid, 0.8);
        s.metric("sequence loss matches the hand-computed value",
                 std::abs(loss->data[0] - (0.8 + 1.0) * 2.0), 1e-12);
    }
    {
        namespace fs = std::filesystem;
        const auto tmp = fs::temp_directory_path() / "corrflow_selftest.flo";
        FlowFile f;
        f.width = 7;
        f.height = 5;
        f.data.resize(70);
        for (auto& v : f.data) v = static_cast<float>(rng.normal());
        write_flo(tmp.string(), f);
        auto g = read_flo(tmp.string());
        bool same = g.width == f.width && g.height == f.height;
        if (same)
            for (size_t i = 0; i < f.data.size(); ++i)
                if (std::memcmp(&f.data[i], &g.data[i], sizeof(float)) != 0) same = false;
        fs::remove(tmp);
        s.check("flow file round trip is bit-identical", same);
    }
    {
        // tiny model: checkpoint round trip reproduces the forward pass
        ModelConfig mc;
        mc.feature_dim = 8;
        mc.stem_width = 8;
        mc.stage_widths = {8, 8, 8};
        mc.hidden_dim = 8;
        mc.context_dim = 8;
        mc.corr_radius = 1;
        mc.corr_levels = 1;
        mc.corr_branch1 = 8;
        mc.corr_branch2 = 8;
        mc.flow_branch1 = 8;
        mc.flow_branch2 = 8;
        mc.head_width = 8;
        mc.mask_width = 8;
        auto m1 = ModelT<D>::build(mc, 42);
        auto img1 = uniform_tensor<D>({3, 16, 16}, rng, -1, 1);
        auto img2 = uniform_tensor<D>({3, 16, 16}, rng, -1, 1);
        auto r1 = m1.run(img1, img2, 2, UpsamplePolicy::last);
        namespace fs = std::filesystem;
        const auto tmp = fs::temp_directory_path() / "corrflow_selftest.ckpt";
        Rng rr(7);
        save_checkpoint(tmp.string(), m1.params, mc.to_text(), 3, rr.state());
        auto m2 = ModelT<D>::build(mc, 999);  // different init, then overwritten
        load_checkpoint(tmp.string(), m2.params);
        auto r2 = m2.run(img1, img2, 2, UpsamplePolicy::last);
        fs::remove(tmp);
        s.check("checkpoint round trip reproduces forward outputs",
                r1.flows_full.back()->data == r2.flows_full.back()->data);
        auto r3 = m1.run(img1, img2, 2, UpsamplePolicy::last);
        s.check("repeated forward passes are bit-identical",
                r1.flows_full.back()->data == r3.flows_full.back()->data);
    }
}

void detach_checks(Suite& s, Rng& rng) {
    auto x = randn_tensor<D>({4}, rng);
    auto y = randn_tensor<D>({4}, rng);
    x->requires_grad = y->requires_grad = true;
    TapeT<D> tape;
    GraphScopeT<D> scope(tape);
    auto loss = sum(mul(detach(x), y));
    tape.backward(loss);
    bool xg_zero = x->grad.empty();
    if (!xg_zero) {
        xg_zero = true;
        for (auto v : x->grad) xg_zero = xg_zero && v == D(0);
    }
    double ydiff = 0;
    for (int i = 0; i < 4; ++i)
        ydiff = std::max(ydiff, std::abs(y->grad[static_cast<size_t>(i)] - x->data[static_cast<size_t>(i)]));
    s.check("detach severs the gradient", xg_zero);
    s.metric("detach passes values through", ydiff, 1e-15);
}

}  // namespace

std::vector<CheckResult> run_selftest(uint64_t seed, bool quick) {
    Suite s;
    Rng rng(seed);
    kernels_vs_reference(s, rng);
    gradient_spot_checks(s, rng);
    correlation_checks(s, rng, quick);
    gru_checks(s, rng);
    upsample_checks(s, rng);
    detach_checks(s, rng);
    loss_and_io_checks(s, rng);
    return s.results;
}

}  // namespace flow
