#include "flow/flow_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace flow {

namespace {
constexpr double kUnknownFlow = 1e9;
}

FlowFile read_flo(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("flo: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PIEH", 4) != 0)
        throw IoError("flo: bad magic in " + path);
    int32_t w = 0, h = 0;
    is.read(reinterpret_cast<char*>(&w), 4);
    is.read(reinterpret_cast<char*>(&h), 4);
    if (!is || w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16)
        throw IoError("flo: implausible extents in " + path);
    FlowFile f;
    f.width = w;
    f.height = h;
    f.data.resize(static_cast<size_t>(2) * w * h);
    is.read(reinterpret_cast<char*>(f.data.data()),
            static_cast<std::streamsize>(f.data.size() * sizeof(float)));
    if (!is) throw IoError("flo: truncated payload in " + path);
    return f;
}

void write_flo(const std::string& path, const FlowFile& f) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("flo: cannot open for writing: " + path);
    os.write("PIEH", 4);
    const int32_t w = f.width, h = f.height;
    os.write(reinterpret_cast<const char*>(&w), 4);
    os.write(reinterpret_cast<const char*>(&h), 4);
    os.write(reinterpret_cast<const char*>(f.data.data()),
             static_cast<std::streamsize>(f.data.size() * sizeof(float)));
    if (!os) throw IoError("flo: write failed: " + path);
}

template <typename T>
FlowFile flow_to_file(const TensorPtrT<T>& flow) {
    if (flow->rank() != 3 || flow->shape[0] != 2)
        throw ShapeError("flow_to_file: expected [2,H,W]");
    FlowFile f;
    f.height = flow->shape[1];
    f.width = flow->shape[2];
    const int64_t npix = static_cast<int64_t>(f.width) * f.height;
    f.data.resize(static_cast<size_t>(2) * npix);
    for (int64_t p = 0; p < npix; ++p) {
        f.data[2 * p] = static_cast<float>(flow->data[p]);
        f.data[2 * p + 1] = static_cast<float>(flow->data[npix + p]);
    }
    return f;
}

template <typename T>
TensorPtrT<T> flow_from_file(const FlowFile& f) {
    auto t = make_tensor<T>({2, f.height, f.width});
    const int64_t npix = static_cast<int64_t>(f.width) * f.height;
    for (int64_t p = 0; p < npix; ++p) {
        t->data[p] = static_cast<T>(f.data[2 * p]);
        t->data[npix + p] = static_cast<T>(f.data[2 * p + 1]);
    }
    return t;
}

namespace {

Image8 read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw IoError("ppm: unsupported magic in " + path);
    auto skip_ws_comments = [&]() {
        while (true) {
            const int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
    };
    skip_ws_comments();
    int w, h, maxv;
    is >> w;
    skip_ws_comments();
    is >> h;
    skip_ws_comments();
    is >> maxv;
    is.get();  // single whitespace before payload
    if (!is || w <= 0 || h <= 0 || maxv != 255)
        throw IoError("ppm: unsupported header in " + path);
    Image8 img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<size_t>(3) * w * h);
    is.read(reinterpret_cast<char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
    if (!is) throw IoError("ppm: truncated payload in " + path);
    return img;
}

Image8 read_png_file(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("png: cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("png: decode failed: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    Image8 img;
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.rgb.resize(static_cast<size_t>(3) * w * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.rgb.data() + static_cast<size_t>(3) * w * y;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

}  // namespace

Image8 read_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("image: cannot open: " + path);
    unsigned char sig[2] = {0, 0};
    probe.read(reinterpret_cast<char*>(sig), 2);
    probe.close();
    if (sig[0] == 0x89 && sig[1] == 'P') return read_png_file(path);
    if (sig[0] == 'P' && sig[1] == '6') return read_ppm(path);
    throw IoError("image: unsupported format (need PNG or binary PPM): " + path);
}

void write_png(const std::string& path, const Image8& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("png: cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("png: encode failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(3) * img.width * y);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

void write_ppm(const std::string& path, const Image8& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("ppm: cannot open for writing: " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()),
             static_cast<std::streamsize>(img.rgb.size()));
}

template <typename T>
TensorPtrT<T> image_to_tensor(const Image8& img) {
    auto t = make_tensor<T>({3, img.height, img.width});
    const int64_t npix = static_cast<int64_t>(img.width) * img.height;
    for (int64_t p = 0; p < npix; ++p)
        for (int c = 0; c < 3; ++c)
            t->data[static_cast<size_t>(c) * npix + p] =
                static_cast<T>(img.rgb[3 * p + c] / 127.5 - 1.0);
    return t;
}

template <typename T>
Image8 tensor_to_image(const TensorPtrT<T>& t) {
    if (t->rank() != 3 || t->shape[0] != 3) throw ShapeError("tensor_to_image: expected [3,H,W]");
    Image8 img;
    img.height = t->shape[1];
    img.width = t->shape[2];
    const int64_t npix = static_cast<int64_t>(img.width) * img.height;
    img.rgb.resize(static_cast<size_t>(3) * npix);
    for (int64_t p = 0; p < npix; ++p)
        for (int c = 0; c < 3; ++c) {
            const double v = (static_cast<double>(t->data[static_cast<size_t>(c) * npix + p]) +
                              1.0) *
                             127.5;
            img.rgb[3 * p + c] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
        }
    return img;
}

namespace {

// the 55-entry wheel used by the Middlebury flow tools
std::vector<std::array<double, 3>> make_color_wheel() {
    const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<double, 3>> wheel;
    for (int i = 0; i < RY; ++i) wheel.push_back({255, 255.0 * i / RY, 0});
    for (int i = 0; i < YG; ++i) wheel.push_back({255 - 255.0 * i / YG, 255, 0});
    for (int i = 0; i < GC; ++i) wheel.push_back({0, 255, 255.0 * i / GC});
    for (int i = 0; i < CB; ++i) wheel.push_back({0, 255 - 255.0 * i / CB, 255});
    for (int i = 0; i < BM; ++i) wheel.push_back({255.0 * i / BM, 0, 255});
    for (int i = 0; i < MR; ++i) wheel.push_back({255, 0, 255 - 255.0 * i / MR});
    return wheel;
}

}  // namespace

std::vector<uint8_t> flow_known_mask(const FlowFile& flow) {
    const int64_t npix = static_cast<int64_t>(flow.width) * flow.height;
    std::vector<uint8_t> mask(static_cast<size_t>(npix), 1);
    for (int64_t p = 0; p < npix; ++p) {
        const float u = flow.data[2 * p], v = flow.data[2 * p + 1];
        if (!std::isfinite(u) || !std::isfinite(v) || std::abs(u) > kUnknownFlow ||
            std::abs(v) > kUnknownFlow)
            mask[static_cast<size_t>(p)] = 0;
    }
    return mask;
}

Image8 flow_to_color(const FlowFile& flow, double max_mag) {
    static const auto wheel = make_color_wheel();
    const int ncols = static_cast<int>(wheel.size());
    const int64_t npix = static_cast<int64_t>(flow.width) * flow.height;
    const auto known = flow_known_mask(flow);
    if (max_mag <= 0.0) {
        // 99th percentile of known magnitudes
        std::vector<double> mags;
        mags.reserve(static_cast<size_t>(npix));
        for (int64_t p = 0; p < npix; ++p) {
            if (!known[static_cast<size_t>(p)]) continue;
            const double u = flow.data[2 * p], v = flow.data[2 * p + 1];
            mags.push_back(std::sqrt(u * u + v * v));
        }
        if (mags.empty()) {
            max_mag = 1.0;
        } else {
            const size_t q = static_cast<size_t>(0.99 * (mags.size() - 1));
            std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(q),
                             mags.end());
            max_mag = std::max(mags[q], 1e-6);
        }
    }
    Image8 img;
    img.width = flow.width;
    img.height = flow.height;
    img.rgb.resize(static_cast<size_t>(3) * npix);
    for (int64_t p = 0; p < npix; ++p) {
        if (!known[static_cast<size_t>(p)]) {
            img.rgb[3 * p] = img.rgb[3 * p + 1] = img.rgb[3 * p + 2] = 0;
            continue;
        }
        const double u = flow.data[2 * p] / max_mag, v = flow.data[2 * p + 1] / max_mag;
        const double rad = std::min(std::sqrt(u * u + v * v), 1.0);
        const double a = std::atan2(-v, -u) / M_PI;
        const double fk = (a + 1.0) / 2.0 * (ncols - 1);
        const int k0 = static_cast<int>(fk);
        const int k1 = (k0 + 1) % ncols;
        const double f = fk - k0;
        for (int c = 0; c < 3; ++c) {
            double col = ((1 - f) * wheel[static_cast<size_t>(k0)][static_cast<size_t>(c)] +
                          f * wheel[static_cast<size_t>(k1)][static_cast<size_t>(c)]) /
                         255.0;
            col = 1.0 - rad * (1.0 - col);  // saturate with magnitude, white at zero
            img.rgb[3 * p + c] = static_cast<uint8_t>(std::lround(255.0 * col));
        }
    }
    return img;
}

template FlowFile flow_to_file<float>(const TensorPtrT<float>&);
template FlowFile flow_to_file<double>(const TensorPtrT<double>&);
template TensorPtrT<float> flow_from_file<float>(const FlowFile&);
template TensorPtrT<double> flow_from_file<double>(const FlowFile&);
template TensorPtrT<float> image_to_tensor<float>(const Image8&);
template TensorPtrT<double> image_to_tensor<double>(const Image8&);
template Image8 tensor_to_image<float>(const TensorPtrT<float>&);
template Image8 tensor_to_image<double>(const TensorPtrT<double>&);

}  // namespace flow
