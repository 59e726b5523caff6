#include "flow/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

namespace flow {

MotionKind motion_kind_from_string(const std::string& s) {
    if (s == "constant_translation" || s == "constant") return MotionKind::constant_translation;
    if (s == "affine") return MotionKind::affine;
    if (s == "smooth_random_field" || s == "smooth") return MotionKind::smooth_random_field;
    throw ContractError("unknown motion kind: " + s);
}

std::string to_string(MotionKind k) {
    switch (k) {
        case MotionKind::constant_translation: return "constant_translation";
        case MotionKind::affine: return "affine";
        default: return "smooth_random_field";
    }
}

namespace {

constexpr double kTau = 6.283185307179586;

// band-limited texture: per channel a sum of cosine gratings, amplitudes
// tapered with frequency so bilinear resampling error stays well under the
// photometric-consistency tolerance
struct Texture {
    struct Grating {
        double fx, fy, phase, amp;
    };
    std::array<std::vector<Grating>, 3> channels;

    static Texture draw(Rng& rng) {
        Texture t;
        for (auto& ch : t.channels) {
            double total = 0;
            for (int m = 0; m < 10; ++m) {
                Grating g;
                const double f = rng.uniform(0.015, 0.12);
                const double theta = rng.uniform(0.0, kTau);
                g.fx = f * std::cos(theta);
                g.fy = f * std::sin(theta);
                g.phase = rng.uniform(0.0, kTau);
                g.amp = 1.0 / (1.0 + std::pow(f / 0.04, 2.0));
                total += g.amp;
                ch.push_back(g);
            }
            for (auto& g : ch) g.amp *= 0.92 / total;
        }
        return t;
    }

    double eval(int ch, double x, double y) const {
        double v = 0;
        for (const auto& g : channels[static_cast<size_t>(ch)])
            v += g.amp * std::cos(kTau * (g.fx * x + g.fy * y) + g.phase);
        return v;
    }
};

struct SmoothField {
    struct Wave {
        double fx, fy, phase, ax, ay;
    };
    double dc_u = 0, dc_v = 0;  // zero-frequency part: a near-rigid drift
    std::vector<Wave> waves;

    static SmoothField draw(Rng& rng, int h, int w, double max_mag) {
        SmoothField f;
        const double mag = rng.uniform(0.2, 1.0) * max_mag;
        // split the magnitude budget between a constant drift and low
        // frequency waves, so both rigid and spatially-varying motion are
        // covered
        const double dc_frac = rng.uniform(0.25, 0.9);
        const double angle = rng.uniform(0.0, kTau);
        f.dc_u = dc_frac * mag * std::cos(angle);
        f.dc_v = dc_frac * mag * std::sin(angle);
        double budget = 0;
        for (int m = 0; m < 4; ++m) {
            Wave wv;
            // at most ~1.5 cycles across the frame keeps the field smooth
            wv.fx = rng.uniform(-1.5, 1.5) / static_cast<double>(w);
            wv.fy = rng.uniform(-1.5, 1.5) / static_cast<double>(h);
            wv.phase = rng.uniform(0.0, kTau);
            wv.ax = rng.normal();
            wv.ay = rng.normal();
            budget += std::abs(wv.ax) + std::abs(wv.ay);
            f.waves.push_back(wv);
        }
        const double wave_mag = (1.0 - dc_frac) * mag;
        for (auto& wv : f.waves) {
            wv.ax *= wave_mag / budget;
            wv.ay *= wave_mag / budget;
        }
        return f;
    }

    std::pair<double, double> eval(double x, double y) const {
        double u = dc_u, v = dc_v;
        for (const auto& wv : waves) {
            const double s = std::cos(kTau * (wv.fx * x + wv.fy * y) + wv.phase);
            u += wv.ax * s;
            v += wv.ay * s;
        }
        return {u, v};
    }
};

}  // namespace

template <typename T>
SyntheticSampleT<T> make_synthetic(uint64_t seed, int h, int w, MotionKind kind,
                                   const MotionParams& params) {
    Rng rng(seed);
    const Texture tex = Texture::draw(rng);

    // forward flow and the inverse correspondence (I2 coords -> I1 coords)
    std::function<std::pair<double, double>(double, double)> flow_fn;
    std::function<std::pair<double, double>(double, double)> inv_fn;

    switch (kind) {
        case MotionKind::constant_translation: {
            double a, b;
            if (params.fixed_translation) {
                a = params.fixed_translation->first;
                b = params.fixed_translation->second;
            } else {
                // |f| <= max_mag as a vector bound
                const double mag = rng.uniform(0.0, params.max_mag);
                const double angle = rng.uniform(0.0, kTau);
                a = mag * std::cos(angle);
                b = mag * std::sin(angle);
            }
            flow_fn = [a, b](double, double) { return std::make_pair(a, b); };
            inv_fn = [a, b](double xp, double yp) { return std::make_pair(xp - a, yp - b); };
            break;
        }
        case MotionKind::affine: {
            const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
            double m00 = 1, m01 = 0, m10 = 0, m11 = 1, tx = 0, ty = 0;
            if (!params.identity_affine) {
                const double half = std::min(h, w) * 0.5;
                const double lin = std::min(0.15, params.max_mag * 0.5 / half);
                const double rot = rng.uniform(-lin, lin);
                const double sc = 1.0 + rng.uniform(-lin, lin);
                m00 = sc * std::cos(rot);
                m01 = -sc * std::sin(rot);
                m10 = sc * std::sin(rot);
                m11 = sc * std::cos(rot);
                tx = rng.uniform(-params.max_mag * 0.5, params.max_mag * 0.5);
                ty = rng.uniform(-params.max_mag * 0.5, params.max_mag * 0.5);
            }
            flow_fn = [=](double x, double y) {
                const double dx = x - cx, dy = y - cy;
                const double xp = cx + m00 * dx + m01 * dy + tx;
                const double yp = cy + m10 * dx + m11 * dy + ty;
                return std::make_pair(xp - x, yp - y);
            };
            const double det = m00 * m11 - m01 * m10;
            const double i00 = m11 / det, i01 = -m01 / det, i10 = -m10 / det, i11 = m00 / det;
            inv_fn = [=](double xp, double yp) {
                const double dx = xp - cx - tx, dy = yp - cy - ty;
                return std::make_pair(cx + i00 * dx + i01 * dy, cy + i10 * dx + i11 * dy);
            };
            break;
        }
        case MotionKind::smooth_random_field: {
            auto field = SmoothField::draw(rng, h, w, params.max_mag);
            flow_fn = [field](double x, double y) { return field.eval(x, y); };
            inv_fn = [field](double xp, double yp) {
                // fixed point of x = y' - f(x); converges fast for smooth f
                double x = xp, y = yp;
                for (int it = 0; it < 12; ++it) {
                    const auto [u, v] = field.eval(x, y);
                    x = xp - u;
                    y = yp - v;
                }
                return std::make_pair(x, y);
            };
            break;
        }
    }

    SyntheticSampleT<T> s;
    s.image1 = make_tensor<T>({3, h, w});
    s.image2 = make_tensor<T>({3, h, w});
    s.flow = make_tensor<T>({2, h, w});
    s.valid = make_tensor<T>({1, h, w});
    const int64_t npix = static_cast<int64_t>(h) * w;
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < npix; ++p) {
        const int y = static_cast<int>(p / w), x = static_cast<int>(p % w);
        const auto [u, v] = flow_fn(x, y);
        s.flow->data[p] = static_cast<T>(u);
        s.flow->data[npix + p] = static_cast<T>(v);
        const double tx = x + u, ty = y + v;
        s.valid->data[p] =
            (tx >= 0.0 && tx <= w - 1.0 && ty >= 0.0 && ty <= h - 1.0) ? T(1) : T(0);
        const auto [sx, sy] = inv_fn(x, y);
        for (int ch = 0; ch < 3; ++ch) {
            s.image1->data[static_cast<size_t>(ch) * npix + p] =
                static_cast<T>(tex.eval(ch, x, y));
            s.image2->data[static_cast<size_t>(ch) * npix + p] =
                static_cast<T>(tex.eval(ch, sx, sy));
        }
    }
    return s;
}

template <typename T>
double photometric_residual(const SyntheticSampleT<T>& sample) {
    const int h = sample.image1->shape[1], w = sample.image1->shape[2];
    const int64_t npix = static_cast<int64_t>(h) * w;
    double acc = 0;
    int64_t count = 0;
    for (int64_t p = 0; p < npix; ++p) {
        if (sample.valid->data[p] == T(0)) continue;
        const int y = static_cast<int>(p / w), x = static_cast<int>(p % w);
        const double tx = x + static_cast<double>(sample.flow->data[p]);
        const double ty = y + static_cast<double>(sample.flow->data[npix + p]);
        const int x0 = std::clamp(static_cast<int>(std::floor(tx)), 0, w - 1);
        const int y0 = std::clamp(static_cast<int>(std::floor(ty)), 0, h - 1);
        const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const double fx = std::clamp(tx - x0, 0.0, 1.0), fy = std::clamp(ty - y0, 0.0, 1.0);
        for (int ch = 0; ch < 3; ++ch) {
            const T* img = sample.image2->data.data() + static_cast<size_t>(ch) * npix;
            const double warped = (1 - fx) * (1 - fy) * img[y0 * w + x0] +
                                  fx * (1 - fy) * img[y0 * w + x1] +
                                  (1 - fx) * fy * img[y1 * w + x0] + fx * fy * img[y1 * w + x1];
            acc += std::abs(warped -
                            static_cast<double>(
                                sample.image1->data[static_cast<size_t>(ch) * npix + p]));
            ++count;
        }
    }
    return count ? acc / static_cast<double>(count) : 0.0;
}

namespace {

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    v = mx;
    const double d = mx - mn;
    s = mx == 0 ? 0 : d / mx;
    if (d == 0) {
        h = 0;
    } else if (mx == r) {
        h = std::fmod((g - b) / d, 6.0) / 6.0;
    } else if (mx == g) {
        h = ((b - r) / d + 2.0) / 6.0;
    } else {
        h = ((r - g) / d + 4.0) / 6.0;
    }
    if (h < 0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double hh = std::fmod(h, 1.0) * 6.0;
    const int i = static_cast<int>(hh);
    const double f = hh - i;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i % 6) {
        case 0: r = v, g = t, b = p; break;
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        default: r = v, g = p, b = q; break;
    }
}

struct Jitter {
    double brightness = 1.0, contrast = 1.0, saturation = 1.0, hue = 0.0;
    bool is_noop() const {
        return brightness == 1.0 && contrast == 1.0 && saturation == 1.0 && hue == 0.0;
    }
};

Jitter draw_jitter(const AugmentPolicy& p, Rng& rng) {
    Jitter j;
    j.brightness = rng.uniform(std::max(0.0, 1.0 - p.brightness), 1.0 + p.brightness);
    j.contrast = rng.uniform(std::max(0.0, 1.0 - p.contrast), 1.0 + p.contrast);
    j.saturation = rng.uniform(std::max(0.0, 1.0 - p.saturation), 1.0 + p.saturation);
    j.hue = rng.uniform(-p.hue, p.hue);
    return j;
}

template <typename T>
void apply_jitter(TensorPtrT<T>& img, const Jitter& j) {
    if (j.is_noop()) return;
    const int64_t npix = static_cast<int64_t>(img->shape[1]) * img->shape[2];
    T* r = img->data.data();
    T* g = r + npix;
    T* b = g + npix;
    // work in [0,1]
    double mean_gray = 0;
    for (int64_t p = 0; p < npix; ++p) {
        const double rr = (r[p] + 1.0) * 0.5, gg = (g[p] + 1.0) * 0.5, bb = (b[p] + 1.0) * 0.5;
        mean_gray += 0.299 * rr + 0.587 * gg + 0.114 * bb;
    }
    mean_gray /= static_cast<double>(npix);
    for (int64_t p = 0; p < npix; ++p) {
        double rr = (r[p] + 1.0) * 0.5, gg = (g[p] + 1.0) * 0.5, bb = (b[p] + 1.0) * 0.5;
        rr *= j.brightness;
        gg *= j.brightness;
        bb *= j.brightness;
        rr = j.contrast * rr + (1.0 - j.contrast) * mean_gray * j.brightness;
        gg = j.contrast * gg + (1.0 - j.contrast) * mean_gray * j.brightness;
        bb = j.contrast * bb + (1.0 - j.contrast) * mean_gray * j.brightness;
        const double gray = 0.299 * rr + 0.587 * gg + 0.114 * bb;
        rr = j.saturation * rr + (1.0 - j.saturation) * gray;
        gg = j.saturation * gg + (1.0 - j.saturation) * gray;
        bb = j.saturation * bb + (1.0 - j.saturation) * gray;
        if (j.hue != 0.0) {
            rr = std::clamp(rr, 0.0, 1.0);
            gg = std::clamp(gg, 0.0, 1.0);
            bb = std::clamp(bb, 0.0, 1.0);
            double hh, ss, vv;
            rgb_to_hsv(rr, gg, bb, hh, ss, vv);
            hsv_to_rgb(hh + j.hue, ss, vv, rr, gg, bb);
        }
        r[p] = static_cast<T>(std::clamp(rr, 0.0, 1.0) * 2.0 - 1.0);
        g[p] = static_cast<T>(std::clamp(gg, 0.0, 1.0) * 2.0 - 1.0);
        b[p] = static_cast<T>(std::clamp(bb, 0.0, 1.0) * 2.0 - 1.0);
    }
}

// img_new(x') = img_old(x'/ax, y'/ay), edge-clamped bilinear
template <typename T>
TensorPtrT<T> resize_bilinear(const TensorPtrT<T>& img, int new_h, int new_w) {
    const int c = img->shape[0], h = img->shape[1], w = img->shape[2];
    const double ax = static_cast<double>(new_w) / w, ay = static_cast<double>(new_h) / h;
    auto out = make_tensor<T>({c, new_h, new_w});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < new_h; ++y) {
            for (int x = 0; x < new_w; ++x) {
                const double sx = std::min(x / ax, static_cast<double>(w - 1));
                const double sy = std::min(y / ay, static_cast<double>(h - 1));
                const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
                const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
                const double fx = sx - x0, fy = sy - y0;
                out->at(ch, y, x) = static_cast<T>(
                    (1 - fx) * (1 - fy) * img->at(ch, y0, x0) + fx * (1 - fy) * img->at(ch, y0, x1) +
                    (1 - fx) * fy * img->at(ch, y1, x0) + fx * fy * img->at(ch, y1, x1));
            }
        }
    }
    return out;
}

template <typename T>
TensorPtrT<T> resize_nearest(const TensorPtrT<T>& img, int new_h, int new_w) {
    const int c = img->shape[0], h = img->shape[1], w = img->shape[2];
    auto out = make_tensor<T>({c, new_h, new_w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < new_h; ++y)
            for (int x = 0; x < new_w; ++x) {
                const int sy = std::min(static_cast<int>(y * static_cast<double>(h) / new_h), h - 1);
                const int sx = std::min(static_cast<int>(x * static_cast<double>(w) / new_w), w - 1);
                out->at(ch, y, x) = img->at(ch, sy, sx);
            }
    return out;
}

template <typename T>
TensorPtrT<T> crop_chw(const TensorPtrT<T>& img, int y0, int x0, int h, int w) {
    const int c = img->shape[0];
    auto out = make_tensor<T>({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out->at(ch, y, x) = img->at(ch, y0 + y, x0 + x);
    return out;
}

}  // namespace

template <typename T>
SyntheticSampleT<T> augment(const SyntheticSampleT<T>& sample, const AugmentPolicy& policy,
                            Rng& rng) {
    const int h = sample.image1->shape[1], w = sample.image1->shape[2];
    SyntheticSampleT<T> out;
    out.image1 = make_tensor<T>(sample.image1->shape, sample.image1->data);
    out.image2 = make_tensor<T>(sample.image2->shape, sample.image2->data);
    out.flow = make_tensor<T>(sample.flow->shape, sample.flow->data);
    out.valid = make_tensor<T>(sample.valid->shape, sample.valid->data);

    // photometric: one draw shared by both frames, or independent draws with
    // probability color_prob
    if (policy.brightness > 0 || policy.contrast > 0 || policy.saturation > 0 || policy.hue > 0) {
        if (rng.bernoulli(policy.color_prob)) {
            auto j1 = draw_jitter(policy, rng);
            auto j2 = draw_jitter(policy, rng);
            apply_jitter(out.image1, j1);
            apply_jitter(out.image2, j2);
        } else {
            auto j = draw_jitter(policy, rng);
            apply_jitter(out.image1, j);
            apply_jitter(out.image2, j);
        }
    }

    // occlusion erasure: rectangles in image2 filled with its mean color
    if (rng.bernoulli(policy.erase_prob)) {
        const int64_t npix = static_cast<int64_t>(h) * w;
        T mean[3];
        for (int ch = 0; ch < 3; ++ch) {
            double acc = 0;
            for (int64_t p = 0; p < npix; ++p)
                acc += out.image2->data[static_cast<size_t>(ch) * npix + p];
            mean[ch] = static_cast<T>(acc / static_cast<double>(npix));
        }
        const int count = rng.uniform_int(1, policy.erase_max_count);
        for (int k = 0; k < count; ++k) {
            const int rw = rng.uniform_int(policy.erase_min_size, policy.erase_max_size);
            const int rh = rng.uniform_int(policy.erase_min_size, policy.erase_max_size);
            const int x0 = rng.uniform_int(0, std::max(0, w - rw));
            const int y0 = rng.uniform_int(0, std::max(0, h - rh));
            for (int ch = 0; ch < 3; ++ch)
                for (int y = y0; y < std::min(h, y0 + rh); ++y)
                    for (int x = x0; x < std::min(w, x0 + rw); ++x)
                        out.image2->at(ch, y, x) = mean[ch];
        }
    }

    // spatial: rescale + stretch, then crop back to the original extents
    if (rng.bernoulli(policy.spatial_prob)) {
        const double ls =
            rng.uniform(std::log2(policy.min_scale), std::log2(policy.max_scale));
        double lx = ls, ly = ls;
        if (rng.bernoulli(policy.stretch_prob)) {
            lx += rng.uniform(-policy.max_stretch, policy.max_stretch);
            ly += rng.uniform(-policy.max_stretch, policy.max_stretch);
        }
        // the crop must fit: effective scale never drops below 1
        const int new_w = std::max(w, static_cast<int>(std::lround(w * std::pow(2.0, lx))));
        const int new_h = std::max(h, static_cast<int>(std::lround(h * std::pow(2.0, ly))));
        const double ax = static_cast<double>(new_w) / w, ay = static_cast<double>(new_h) / h;
        out.image1 = resize_bilinear(out.image1, new_h, new_w);
        out.image2 = resize_bilinear(out.image2, new_h, new_w);
        auto flow_rs = resize_bilinear(out.flow, new_h, new_w);
        const int64_t npix2 = static_cast<int64_t>(new_h) * new_w;
        for (int64_t p = 0; p < npix2; ++p) {
            flow_rs->data[p] = static_cast<T>(flow_rs->data[p] * ax);
            flow_rs->data[npix2 + p] = static_cast<T>(flow_rs->data[npix2 + p] * ay);
        }
        out.flow = flow_rs;
        out.valid = resize_nearest(out.valid, new_h, new_w);
        const int x0 = rng.uniform_int(0, new_w - w);
        const int y0 = rng.uniform_int(0, new_h - h);
        out.image1 = crop_chw(out.image1, y0, x0, h, w);
        out.image2 = crop_chw(out.image2, y0, x0, h, w);
        out.flow = crop_chw(out.flow, y0, x0, h, w);
        out.valid = crop_chw(out.valid, y0, x0, h, w);
        // pixels whose correspondence left the cropped frame are no longer
        // verifiable; recompute the in-frame validity
        const int64_t npix = static_cast<int64_t>(h) * w;
        for (int64_t p = 0; p < npix; ++p) {
            const int y = static_cast<int>(p / w), x = static_cast<int>(p % w);
            const double tx = x + static_cast<double>(out.flow->data[p]);
            const double ty = y + static_cast<double>(out.flow->data[npix + p]);
            if (!(tx >= 0.0 && tx <= w - 1.0 && ty >= 0.0 && ty <= h - 1.0))
                out.valid->data[p] = T(0);
        }
    }
    return out;
}

#define FLOW_INSTANTIATE_SYN(T)                                                                  \
    template struct SyntheticSampleT<T>;                                                         \
    template SyntheticSampleT<T> make_synthetic<T>(uint64_t, int, int, MotionKind,               \
                                                   const MotionParams&);                         \
    template SyntheticSampleT<T> augment<T>(const SyntheticSampleT<T>&, const AugmentPolicy&,    \
                                            Rng&);                                               \
    template double photometric_residual<T>(const SyntheticSampleT<T>&);

FLOW_INSTANTIATE_SYN(float)
FLOW_INSTANTIATE_SYN(double)

}  // namespace flow
