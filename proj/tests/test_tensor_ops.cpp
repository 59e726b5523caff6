#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flow/gradcheck.hpp"
#include "flow/kernels.hpp"
#include "flow/ops.hpp"

using namespace flow;
using D = double;

TEST_CASE("conv2d: all-ones 3x3 against a 3x3 ones kernel sums to 9") {
    auto in = full_like_shape<D>({1, 1, 3, 3}, 1.0);
    auto w = full_like_shape<D>({1, 1, 3, 3}, 1.0);
    auto out = conv2d<D>(in, w, nullptr, 1, 0);
    REQUIRE(out->shape == std::vector<int>{1, 1, 1, 1});
    CHECK(out->data[0] == doctest::Approx(9.0).epsilon(1e-15));
}

TEST_CASE("conv2d: identity 1x1 kernel reproduces the input") {
    Rng rng(1);
    auto in = randn_tensor<D>({1, 1, 4, 5}, rng);
    auto w = full_like_shape<D>({1, 1, 1, 1}, 1.0);
    auto out = conv2d<D>(in, w, nullptr, 1, 0);
    REQUIRE(out->data.size() == in->data.size());
    for (size_t i = 0; i < in->data.size(); ++i) CHECK(out->data[i] == in->data[i]);
}

TEST_CASE("conv2d: random case matches the direct-loop oracle") {
    Rng rng(2);
    auto in = randn_tensor<D>({1, 2, 5, 5}, rng);
    auto w = randn_tensor<D>({3, 2, 3, 3}, rng);
    auto bias = randn_tensor<D>({3}, rng);
    for (int stride : {1, 2}) {
        for (int pad : {0, 1}) {
            auto out = conv2d(in, w, bias, stride, pad);
            auto oracle = make_tensor<D>(out->shape);
            ref::conv2d_fwd(in->data.data(), w->data.data(), bias->data.data(),
                            oracle->data.data(), 1, 2, 5, 5, 3, 3, 3, stride, pad, pad);
            for (size_t i = 0; i < out->data.size(); ++i)
                CHECK(std::abs(out->data[i] - oracle->data[i]) < 1e-10);
        }
    }
}

TEST_CASE("conv2d: channel mismatch raises a dimension error") {
    auto in = make_tensor<D>({1, 3, 4, 4});
    auto w = make_tensor<D>({2, 4, 3, 3});
    CHECK_THROWS_AS(conv2d<D>(in, w, nullptr, 1, 1), ShapeError);
}

TEST_CASE("matmul: identity, hand sum and the triple-loop oracle") {
    Rng rng(3);
    auto eye = make_tensor<D>({3, 3});
    for (int i = 0; i < 3; ++i) eye->at(i, i) = 1.0;
    auto a = randn_tensor<D>({3, 3}, rng);
    auto ia = matmul(eye, a);
    for (size_t i = 0; i < a->data.size(); ++i) CHECK(ia->data[i] == a->data[i]);

    auto m = make_tensor<D>({2, 2}, {1, 2, 3, 4});
    auto v = make_tensor<D>({2, 1}, {1, 1});
    auto mv = matmul(m, v);
    CHECK(mv->data[0] == 3.0);
    CHECK(mv->data[1] == 7.0);

    auto x = randn_tensor<D>({7, 5}, rng);
    auto y = randn_tensor<D>({5, 4}, rng);
    auto xy = matmul(x, y);
    auto oracle = make_tensor<D>({7, 4});
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0;
            for (int k = 0; k < 5; ++k) acc += x->at(i, k) * y->at(k, j);
            oracle->at(i, j) = acc;
        }
    for (size_t i = 0; i < xy->data.size(); ++i)
        CHECK(std::abs(xy->data[i] - oracle->data[i]) < 1e-12);

    auto bad = make_tensor<D>({3, 4});
    CHECK_THROWS_AS(matmul(x, bad), ShapeError);
}

TEST_CASE("avg_pool2d: constants, hand mean, block-mean oracle, divisibility") {
    auto c = full_like_shape<D>({2, 6, 6}, 3.25);
    auto pc = avg_pool2d(c, 3);
    for (auto v : pc->data) CHECK(v == 3.25);

    auto m = make_tensor<D>({1, 2, 2}, {1, 2, 3, 4});
    CHECK(avg_pool2d(m, 2)->data[0] == doctest::Approx(2.5).epsilon(1e-15));

    Rng rng(4);
    auto x = randn_tensor<D>({1, 8, 8}, rng);
    auto p = avg_pool2d(x, 4);
    for (int oy = 0; oy < 2; ++oy)
        for (int ox = 0; ox < 2; ++ox) {
            double acc = 0;
            for (int dy = 0; dy < 4; ++dy)
                for (int dx = 0; dx < 4; ++dx) acc += x->at(0, 4 * oy + dy, 4 * ox + dx);
            CHECK(p->at(0, oy, ox) == acc / 16.0);
        }

    CHECK_THROWS_AS(avg_pool2d(x, 3), ShapeError);
}

TEST_CASE("avg_pool2d and matmul are linear maps") {
    Rng rng(5);
    auto a = randn_tensor<D>({1, 8, 8}, rng);
    auto b = randn_tensor<D>({1, 8, 8}, rng);
    auto sum_then_pool = avg_pool2d(add(a, b), 2);
    auto pool_then_sum = add(avg_pool2d(a, 2), avg_pool2d(b, 2));
    for (size_t i = 0; i < sum_then_pool->data.size(); ++i)
        CHECK(std::abs(sum_then_pool->data[i] - pool_then_sum->data[i]) < 1e-14);

    auto m = randn_tensor<D>({4, 4}, rng);
    auto x = randn_tensor<D>({4, 2}, rng);
    auto y = randn_tensor<D>({4, 2}, rng);
    auto lhs = matmul(m, add(x, y));
    auto rhs = add(matmul(m, x), matmul(m, y));
    for (size_t i = 0; i < lhs->data.size(); ++i)
        CHECK(std::abs(lhs->data[i] - rhs->data[i]) < 1e-13);
}

TEST_CASE("bilinear_sample: lattice points, midpoint symmetry, 4-term oracle") {
    Rng rng(6);
    auto field = randn_tensor<D>({3, 6, 7}, rng);
    auto pt = make_tensor<D>({1, 2}, {2.0, 3.0});
    auto at = bilinear_sample(field, pt);
    for (int c = 0; c < 3; ++c) CHECK(at->at(0, c) == field->at(c, 3, 2));

    auto patch = make_tensor<D>({1, 2, 2}, {0, 0, 1, 1});
    auto mid = bilinear_sample(patch, make_tensor<D>({1, 2}, {0.5, 0.5}));
    CHECK(mid->data[0] == doctest::Approx(0.5).epsilon(1e-15));

    auto pts = make_tensor<D>({40, 2});
    for (auto& v : pts->data) v = rng.uniform(0.2, 5.2);
    auto out = bilinear_sample(field, pts);
    for (int i = 0; i < 40; ++i) {
        const double px = pts->at(i, 0), py = pts->at(i, 1);
        const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
        const double fx = px - x0, fy = py - y0;
        for (int c = 0; c < 3; ++c) {
            auto pick = [&](int y, int x) {
                return (x >= 0 && x < 7 && y >= 0 && y < 6) ? field->at(c, y, x) : 0.0;
            };
            const double want = (1 - fx) * (1 - fy) * pick(y0, x0) +
                                fx * (1 - fy) * pick(y0, x0 + 1) +
                                (1 - fx) * fy * pick(y0 + 1, x0) + fx * fy * pick(y0 + 1, x0 + 1);
            CHECK(std::abs(out->at(i, c) - want) < 1e-12);
        }
    }
}

TEST_CASE("bilinear_sample: out-of-frame neighbors contribute zero") {
    auto field = full_like_shape<D>({1, 4, 4}, 2.0);
    auto out = bilinear_sample(field, make_tensor<D>({1, 2}, {-0.5, 0.0}));
    CHECK(out->data[0] == doctest::Approx(1.0));  // half the mass is outside
    auto far = bilinear_sample(field, make_tensor<D>({1, 2}, {100.0, 100.0}));
    CHECK(far->data[0] == 0.0);
}

TEST_CASE("activations: sigmoid(0), uniform softmax, row normalization") {
    auto z = make_tensor<D>({1}, {0.0});
    CHECK(sigmoid(z)->data[0] == doctest::Approx(0.5).epsilon(1e-15));

    auto logits = full_like_shape<D>({9}, 0.7);
    auto sm = softmax_lastdim(logits);
    for (auto v : sm->data) CHECK(v == doctest::Approx(1.0 / 9.0).epsilon(1e-14));

    Rng rng(7);
    auto x = randn_tensor<D>({5, 11}, rng, 3.0);
    auto y = softmax_lastdim(x);
    for (int r = 0; r < 5; ++r) {
        double acc = 0;
        for (int c2 = 0; c2 < 11; ++c2) {
            const double v = y->at(r, c2);
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            acc += v;
        }
        CHECK(std::abs(acc - 1.0) < 1e-12);
    }
}

TEST_CASE("tanh gradient matches central finite differences") {
    Rng rng(8);
    auto x = randn_tensor<D>({17}, rng);
    x->requires_grad = true;
    auto eval = [&]() {
        TapeT<D> tape;
        GraphScopeT<D> scope(tape);
        return static_cast<double>(sum(tanh(x))->data[0]);
    };
    {
        TapeT<D> tape;
        GraphScopeT<D> scope(tape);
        tape.backward(sum(tanh(x)));
    }
    auto rep = finite_diff_check(x, eval, 0, 99, 1e-6);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("determinism: identical inputs give bit-identical results") {
    auto make = [](uint64_t seed) {
        Rng rng(seed);
        auto in = randn_tensor<D>({1, 4, 9, 9}, rng);
        auto w = randn_tensor<D>({6, 4, 3, 3}, rng);
        auto b = randn_tensor<D>({6}, rng);
        return conv2d(in, w, b, 1, 1);
    };
    auto a = make(0xabcd);
    auto b = make(0xabcd);
    CHECK(a->data == b->data);
}
