// Kernel benchmark: OpenMP implementations against the serial reference,
// plus end-to-end inference timing.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "flow/correlation.hpp"
#include "flow/kernels.hpp"
#include "flow/model.hpp"

using flow::Rng;
using T = float;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void row(const char* name, double ref_ms, double omp_ms, double max_diff) {
    std::printf("%-28s %10.3f %10.3f %8.2fx %12.3g\n", name, ref_ms, omp_ms, ref_ms / omp_ms,
                max_diff);
}

double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

}  // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%-28s %10s %10s %9s %12s\n", "kernel", "serial ms", "omp ms", "speedup",
                "max |diff|");

    Rng rng(7);

    {  // conv2d, GRU-sized
        const int c = 226, o = 64, h = 16, w = 16;
        auto in = flow::randn_tensor<T>({1, c, h, w}, rng);
        auto kw = flow::randn_tensor<T>({o, c, 3, 3}, rng);
        auto bias = flow::randn_tensor<T>({o}, rng);
        auto out1 = flow::make_tensor<T>({1, o, h, w});
        auto out2 = flow::make_tensor<T>({1, o, h, w});
        const double t_ref = time_ms(
            [&] {
                flow::ref::conv2d_fwd(in->data.data(), kw->data.data(), bias->data.data(),
                                      out1->data.data(), 1, c, h, w, o, 3, 3, 1, 1, 1);
            },
            3);
        const double t_omp = time_ms(
            [&] {
                flow::kern::conv2d_fwd(in->data.data(), kw->data.data(), bias->data.data(),
                                       out2->data.data(), 1, c, h, w, o, 3, 3, 1, 1, 1);
            },
            10);
        row("conv2d 226->64 3x3 @16x16", t_ref, t_omp, max_abs_diff(out1->data, out2->data));
    }

    {  // matmul
        const int m = 384, k = 384, n = 384;
        auto a = flow::randn_tensor<T>({m, k}, rng);
        auto b = flow::randn_tensor<T>({k, n}, rng);
        auto c1 = flow::make_tensor<T>({m, n});
        auto c2 = flow::make_tensor<T>({m, n});
        const double t_ref = time_ms(
            [&] { flow::ref::matmul(a->data.data(), b->data.data(), c1->data.data(), m, k, n); },
            3);
        const double t_omp = time_ms(
            [&] { flow::kern::matmul(a->data.data(), b->data.data(), c2->data.data(), m, k, n); },
            10);
        row("matmul 384x384x384", t_ref, t_omp, max_abs_diff(c1->data, c2->data));
    }

    {  // all-pairs volume (matmul path) vs quadruple loop
        const int d = 64, h = 16, w = 24;
        auto f1 = flow::randn_tensor<T>({d, h, w}, rng);
        auto f2 = flow::randn_tensor<T>({d, h, w}, rng);
        const T scale = static_cast<T>(1.0 / std::sqrt(64.0));
        auto volref = flow::make_tensor<T>({h, w, h, w});
        flow::TensorPtrT<T> vol;
        const double t_ref = time_ms(
            [&] {
                flow::ref::corr_volume(f1->data.data(), f2->data.data(), volref->data.data(), d,
                                       h, w, h, w, scale);
            },
            3);
        const double t_omp = time_ms([&] { vol = flow::build_volume(f1, f2, scale); }, 10);
        row("all-pairs volume 16x24 D64", t_ref, t_omp, max_abs_diff(volref->data, vol->data));
    }

    {  // pyramid lookup vs on-demand (the O(N^2) / O(NM) trade)
        const int d = 64, h = 16, w = 24;
        auto f1 = flow::randn_tensor<T>({d, h, w}, rng);
        auto f2 = flow::randn_tensor<T>({d, h, w}, rng);
        auto fl = flow::randn_tensor<T>({2, h, w}, rng, 2.0);
        flow::LookupConfig lcfg;
        const T scale = static_cast<T>(1.0 / std::sqrt(64.0));
        auto pyr = flow::make_pyramid(f1, f2, scale, lcfg.levels);
        auto pooled = flow::make_pooled(f1, f2, scale, lcfg.levels);
        flow::TensorPtrT<T> o1, o2;
        const double t_pyr = time_ms([&] { o1 = flow::lookup(pyr, fl, lcfg); }, 10);
        const double t_ond = time_ms([&] { o2 = flow::lookup_ondemand(pooled, fl, lcfg); }, 10);
        std::printf("%-28s %10.3f %10.3f %9s %12.3g   (pyramid bytes %lld, pooled bytes %lld)\n",
                    "lookup: pooled vs pyramid", t_ond, t_pyr, "-",
                    max_abs_diff(o1->data, o2->data),
                    static_cast<long long>(pyr.footprint_bytes()),
                    static_cast<long long>(pooled.footprint_bytes()));
    }

    {  // end-to-end inference
        flow::ModelConfig mc;
        auto model = flow::ModelT<T>::build(mc, 11);
        auto img1 = flow::uniform_tensor<T>({3, 128, 128}, rng, -1, 1);
        auto img2 = flow::uniform_tensor<T>({3, 128, 128}, rng, -1, 1);
        const double t12 = time_ms(
            [&] { model.run(img1, img2, 12, flow::UpsamplePolicy::last); }, 2);
        std::printf("\ninference 128x128, 12 updates: %.1f ms (%.2f fps)\n", t12, 1000.0 / t12);
    }
    return 0;
}
