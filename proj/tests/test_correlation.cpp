#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flow/correlation.hpp"
#include "flow/kernels.hpp"

using namespace flow;
using D = double;

TEST_CASE("build_volume: orthonormal per-pixel features give a scaled identity") {
    // 4 pixels, 4 channels, pixel p carries basis vector e_p
    const int d = 4, h = 2, w = 2;
    auto f = make_tensor<D>({d, h, w});
    for (int p = 0; p < 4; ++p) f->data[static_cast<size_t>(p) * 4 + p] = 1.0;
    const D scale = static_cast<D>(1.0 / std::sqrt(4.0));
    auto vol = build_volume(f, f, scale);
    for (int p = 0; p < 4; ++p)
        for (int q = 0; q < 4; ++q)
            CHECK(vol->data[static_cast<size_t>(p) * 4 + q] ==
                  doctest::Approx(p == q ? 0.5 : 0.0).epsilon(1e-15));
}

TEST_CASE("build_volume: matches the quadruple-loop oracle") {
    Rng rng(21);
    auto f1 = randn_tensor<D>({16, 4, 6}, rng);
    auto f2 = randn_tensor<D>({16, 4, 6}, rng);
    const D scale = static_cast<D>(1.0 / 4.0);
    auto vol = build_volume(f1, f2, scale);
    auto oracle = make_tensor<D>({4, 6, 4, 6});
    ref::corr_volume(f1->data.data(), f2->data.data(), oracle->data.data(), 16, 4, 6, 4, 6,
                     scale);
    for (size_t i = 0; i < vol->data.size(); ++i)
        CHECK(std::abs(vol->data[i] - oracle->data[i]) < 1e-10);
}

TEST_CASE("build_volume: bilinear in each argument") {
    Rng rng(22);
    auto f1 = randn_tensor<D>({8, 3, 3}, rng);
    auto f2 = randn_tensor<D>({8, 3, 3}, rng);
    auto doubled = make_tensor<D>(f2->shape, f2->data);
    for (auto& v : doubled->data) v *= 2.0;
    auto a = build_volume(f1, f2, D(1));
    auto b = build_volume(f1, doubled, D(1));
    for (size_t i = 0; i < a->data.size(); ++i)
        CHECK(b->data[i] == doctest::Approx(2.0 * a->data[i]).epsilon(1e-13));

    auto mismatched = make_tensor<D>({4, 3, 3});
    CHECK_THROWS_AS(build_volume(f1, mismatched, D(1)), ShapeError);
}

TEST_CASE("build_pyramid: constants, block means, degenerate L=1, divisibility") {
    auto cvol = full_like_shape<D>({2, 2, 8, 8}, 1.5);
    auto pyr = build_pyramid(cvol, 4);
    REQUIRE(pyr.levels.size() == 4);
    for (const auto& lvl : pyr.levels)
        for (auto v : lvl->data) CHECK(v == doctest::Approx(1.5).epsilon(1e-15));

    Rng rng(23);
    auto vol = randn_tensor<D>({2, 3, 8, 8}, rng);
    auto p2 = build_pyramid(vol, 3);
    CHECK(p2.levels[2]->shape == std::vector<int>{6, 1, 2, 2});
    // level-k cell equals the mean of its 2^k x 2^k block of level 0
    for (int pix = 0; pix < 6; ++pix) {
        for (int oy = 0; oy < 2; ++oy)
            for (int ox = 0; ox < 2; ++ox) {
                double acc = 0;
                for (int dy = 0; dy < 4; ++dy)
                    for (int dx = 0; dx < 4; ++dx)
                        acc += p2.levels[0]
                                   ->data[(static_cast<size_t>(pix) * 8 + 4 * oy + dy) * 8 +
                                          4 * ox + dx];
                CHECK(p2.levels[2]->data[(static_cast<size_t>(pix) * 2 + oy) * 2 + ox] ==
                      doctest::Approx(acc / 16.0).epsilon(1e-13));
            }
    }

    auto single = build_pyramid(vol, 1);
    CHECK(single.levels.size() == 1);
    CHECK(single.levels[0]->data == vol->data);  // raw volume only

    auto odd = make_tensor<D>({2, 2, 6, 6});
    CHECK_THROWS_AS(build_pyramid(odd, 3), ShapeError);  // 6 not divisible by 4
}

TEST_CASE("pyramid consistency: avg_pool2d(level0, 2^k) equals level k exactly") {
    Rng rng(24);
    auto f1 = randn_tensor<D>({8, 8, 8}, rng);
    auto f2 = randn_tensor<D>({8, 8, 8}, rng);
    auto pyr = make_pyramid(f1, f2, D(0.353553), 4);
    for (int k = 1; k < 4; ++k) {
        auto pooled = avg_pool2d(pyr.levels[0], 1 << k);
        CHECK(pooled->data == pyr.levels[static_cast<size_t>(k)]->data);
    }
}

TEST_CASE("lookup: zero flow at r=0, L=1 reads the volume diagonal") {
    Rng rng(25);
    auto f1 = randn_tensor<D>({8, 4, 5}, rng);
    auto f2 = randn_tensor<D>({8, 4, 5}, rng);
    auto vol = build_volume(f1, f2, D(1));
    auto pyr = build_pyramid(vol, 1);
    LookupConfig cfg;
    cfg.radius = 0;
    cfg.levels = 1;
    auto out = lookup(pyr, make_tensor<D>({2, 4, 5}), cfg);
    REQUIRE(out->shape == std::vector<int>{1, 4, 5});
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j)
            CHECK(out->at(0, i, j) ==
                  doctest::Approx(vol->data[((static_cast<size_t>(i) * 5 + j) * 4 + i) * 5 + j])
                      .epsilon(1e-13));
}

TEST_CASE("lookup radius spans 256 original pixels at the coarsest level") {
    // radius 4 at pyramid level 3 (pooling 8) on 1/8-resolution features
    CHECK(lookup_range_px(4, 3) == 256);
}

TEST_CASE("lookup: matches a direct per-offset gather oracle") {
    Rng rng(26);
    const int d = 8, h = 6, w = 8;
    auto f1 = randn_tensor<D>({d, h, w}, rng);
    auto f2 = randn_tensor<D>({d, h, w}, rng);
    auto fl = randn_tensor<D>({2, h, w}, rng, 1.7);
    LookupConfig cfg;
    cfg.radius = 2;
    cfg.levels = 2;
    const D scale = static_cast<D>(1.0 / std::sqrt(8.0));
    auto pyr = make_pyramid(f1, f2, scale, cfg.levels);
    auto out = lookup(pyr, fl, cfg);
    const auto offs = lookup_offsets(cfg);
    const int npts = static_cast<int>(offs.size());
    REQUIRE(out->shape == std::vector<int>{cfg.levels * npts, h, w});
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const double u = fl->at(0, i, j), v = fl->at(1, i, j);
            for (int k = 0; k < cfg.levels; ++k) {
                const auto& lvl = *pyr.levels[static_cast<size_t>(k)];
                const int hk = lvl.shape[2], wk = lvl.shape[3];
                const double cx = (j + u) / (1 << k), cy = (i + v) / (1 << k);
                for (int oi = 0; oi < npts; ++oi) {
                    const double px = cx + offs[static_cast<size_t>(oi)].second;
                    const double py = cy + offs[static_cast<size_t>(oi)].first;
                    const int x0 = static_cast<int>(std::floor(px));
                    const int y0 = static_cast<int>(std::floor(py));
                    const double fx = px - x0, fy = py - y0;
                    auto pick = [&](int y, int x) -> double {
                        if (x < 0 || x >= wk || y < 0 || y >= hk) return 0.0;
                        return lvl.data[((static_cast<size_t>(i) * w + j) * hk + y) * wk + x];
                    };
                    const double want =
                        (1 - fx) * (1 - fy) * pick(y0, x0) + fx * (1 - fy) * pick(y0, x0 + 1) +
                        (1 - fx) * fy * pick(y0 + 1, x0) + fx * fy * pick(y0 + 1, x0 + 1);
                    CHECK(std::abs(out->at(k * npts + oi, i, j) - want) < 1e-10);
                }
            }
        }
    }
}

TEST_CASE("on-demand lookup: degenerate cases") {
    Rng rng(27);
    LookupConfig cfg;
    cfg.radius = 1;
    cfg.levels = 1;
    {
        auto z1 = make_tensor<D>({6, 4, 4});
        auto z2 = make_tensor<D>({6, 4, 4});
        auto pooled = make_pooled(z1, z2, D(1), 1);
        auto out = lookup_ondemand(pooled, randn_tensor<D>({2, 4, 4}, rng), cfg);
        for (auto v : out->data) CHECK(v == 0.0);  // zero features, zero evidence
    }
    {
        // single-pixel maps collapse both paths to one inner product
        auto f1 = randn_tensor<D>({6, 1, 1}, rng);
        auto f2 = randn_tensor<D>({6, 1, 1}, rng);
        cfg.radius = 0;
        auto pooled = make_pooled(f1, f2, D(1), 1);
        auto pyr = make_pyramid(f1, f2, D(1), 1);
        auto zero_flow = make_tensor<D>({2, 1, 1});
        auto a = lookup_ondemand(pooled, zero_flow, cfg);
        auto b = lookup(pyr, zero_flow, cfg);
        double dot = 0;
        for (int c = 0; c < 6; ++c) dot += f1->data[c] * f2->data[c];
        CHECK(a->data[0] == doctest::Approx(dot).epsilon(1e-13));
        CHECK(b->data[0] == doctest::Approx(dot).epsilon(1e-13));
    }
}

TEST_CASE("equivalence: lookup and on-demand agree in values and gradients") {
    Rng rng(28);
    double worst_val = 0, worst_grad = 0;
    for (int c = 0; c < 25; ++c) {
        const int d = rng.uniform_int(2, 24);
        const int h1 = rng.uniform_int(2, 9), w1 = rng.uniform_int(2, 9);
        LookupConfig cfg;
        cfg.radius = rng.uniform_int(0, 4);
        cfg.levels = rng.uniform_int(1, 4);
        cfg.grid = rng.bernoulli(0.25) ? GridShape::diamond : GridShape::square;
        auto f1 = randn_tensor<D>({d, h1, w1}, rng);
        auto f2 = randn_tensor<D>({d, h1, w1}, rng);
        auto fl = randn_tensor<D>({2, h1, w1}, rng, 2.0);
        fl->data[0] = 100.0;  // an out-of-frame correspondence stays well-defined
        f1->requires_grad = f2->requires_grad = true;
        fl->requires_grad = true;
        const D scale = static_cast<D>(1.0 / std::sqrt(static_cast<double>(d)));
        auto wsum = randn_tensor<D>({lookup_channels(cfg), h1, w1}, rng);

        std::vector<D> va, ga;
        f1->zero_grad();
        f2->zero_grad();
        fl->zero_grad();
        {
            TapeT<D> tape;
            GraphScopeT<D> scope(tape);
            auto out = lookup(make_pyramid(f1, f2, scale, cfg.levels), fl, cfg);
            va = out->data;
            tape.backward(sum(mul(out, wsum)));
            ga = f1->grad;
            ga.insert(ga.end(), f2->grad.begin(), f2->grad.end());
            ga.insert(ga.end(), fl->grad.begin(), fl->grad.end());
        }
        f1->zero_grad();
        f2->zero_grad();
        fl->zero_grad();
        std::vector<D> vb, gb;
        {
            TapeT<D> tape;
            GraphScopeT<D> scope(tape);
            auto out = lookup_ondemand(make_pooled(f1, f2, scale, cfg.levels), fl, cfg);
            vb = out->data;
            tape.backward(sum(mul(out, wsum)));
            gb = f1->grad;
            gb.insert(gb.end(), f2->grad.begin(), f2->grad.end());
            gb.insert(gb.end(), fl->grad.begin(), fl->grad.end());
        }
        for (size_t i = 0; i < va.size(); ++i)
            worst_val = std::max(worst_val, std::abs(va[i] - vb[i]));
        for (size_t i = 0; i < ga.size(); ++i)
            worst_grad = std::max(worst_grad, std::abs(ga[i] - gb[i]));
    }
    CHECK(worst_val < 1e-10);
    CHECK(worst_grad < 1e-10);
}

TEST_CASE("translation equivariance at lattice shifts") {
    Rng rng(29);
    const int d = 6, h = 8, w = 8;
    auto f1 = randn_tensor<D>({d, h, w}, rng);
    auto f2 = randn_tensor<D>({d, h, w}, rng);
    const int sx = 2, sy = 1;
    auto f2s = make_tensor<D>({d, h, w});
    for (int c = 0; c < d; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                f2s->at(c, y, x) = f2->at(c, (y - sy + h) % h, (x - sx + w) % w);
    LookupConfig cfg;
    cfg.radius = 0;
    cfg.levels = 1;
    auto self_pyr = make_pyramid(f1, f2, D(1), 1);
    auto shift_pyr = make_pyramid(f1, f2s, D(1), 1);
    auto zero = make_tensor<D>({2, h, w});
    auto shift_flow = make_tensor<D>({2, h, w});
    for (int p = 0; p < h * w; ++p) {
        shift_flow->data[static_cast<size_t>(p)] = sx;
        shift_flow->data[static_cast<size_t>(h * w + p)] = sy;
    }
    auto base = lookup(self_pyr, zero, cfg);
    auto shifted = lookup(shift_pyr, shift_flow, cfg);
    for (int y = 0; y < h - sy; ++y)
        for (int x = 0; x < w - sx; ++x)
            CHECK(shifted->at(0, y, x) == doctest::Approx(base->at(0, y, x)).epsilon(1e-13));
}

TEST_CASE("memory accounting: pooled path is O(N D L), pyramid is O(N^2)") {
    Rng rng(30);
    auto footprints = [&](int side) {
        auto f1 = randn_tensor<D>({16, side, side}, rng);
        auto f2 = randn_tensor<D>({16, side, side}, rng);
        auto pyr = make_pyramid(f1, f2, D(1), 4);
        auto pooled = make_pooled(f1, f2, D(1), 4);
        return std::make_pair(pyr.footprint_bytes(), pooled.footprint_bytes());
    };
    auto [pyr8, pool8] = footprints(8);
    auto [pyr16, pool16] = footprints(16);
    // N quadruples: the pyramid grows ~16x, the pooled features ~4x
    CHECK(pyr16 == 16 * pyr8);
    CHECK(pool16 <= 4 * pool8 + 16);
    CHECK(pool8 < pyr8);  // already smaller at the small size
}

TEST_CASE("diamond grid drops the corner offsets") {
    LookupConfig cfg;
    cfg.radius = 2;
    cfg.grid = GridShape::diamond;
    CHECK(lookup_points_per_level(cfg) == 13);
    const auto offs = lookup_offsets(cfg);
    CHECK(static_cast<int>(offs.size()) == 13);
    for (auto [dy, dx] : offs) CHECK(std::abs(dy) + std::abs(dx) <= 2);
    cfg.grid = GridShape::square;
    CHECK(lookup_points_per_level(cfg) == 25);
}
