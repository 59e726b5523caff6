#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flow/tensor.hpp"

namespace flow {

// Middlebury-style .flo: 4-byte magic "PIEH", int32 width, int32 height
// (little-endian), then row-major interleaved (u,v) float32 pairs.
struct FlowFile {
    int width = 0, height = 0;
    std::vector<float> data;  // 2 * width * height, interleaved
};

FlowFile read_flo(const std::string& path);
void write_flo(const std::string& path, const FlowFile& f);

template <typename T>
FlowFile flow_to_file(const TensorPtrT<T>& flow);  // [2,H,W]
template <typename T>
TensorPtrT<T> flow_from_file(const FlowFile& f);

struct Image8 {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

// PNG or binary PPM (P6), picked by magic bytes
Image8 read_image(const std::string& path);
void write_png(const std::string& path, const Image8& img);
void write_ppm(const std::string& path, const Image8& img);

// 8-bit RGB <-> [3,H,W] in [-1,1]
template <typename T>
TensorPtrT<T> image_to_tensor(const Image8& img);
template <typename T>
Image8 tensor_to_image(const TensorPtrT<T>& t);

// Standard flow color wheel: hue encodes direction, saturation magnitude;
// zero flow renders white. max_mag <= 0 normalizes by the field's 99th
// percentile magnitude. Values above ~1e9 are treated as unknown and drawn
// black.
Image8 flow_to_color(const FlowFile& flow, double max_mag = 0.0);

// per-pixel validity from the unknown-value sentinel
std::vector<uint8_t> flow_known_mask(const FlowFile& flow);

}  // namespace flow
