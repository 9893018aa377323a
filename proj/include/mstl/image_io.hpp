#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mstl/tensor.hpp"

namespace mstl {

// Decoded 8-bit raster, interleaved rows (HWC). channels is 1 or 3.
struct RawImage {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;
};

// PNG or JPEG, detected from magic bytes. Only 8-bit grayscale/RGB come
// back; palettes and alpha are expanded/stripped by the decoder.
RawImage decode_image(const std::string& path);

void write_png(const std::string& path, const RawImage& img);

// Pixel-center bilinear resample of CHW float planes.
std::vector<float> resize_bilinear_chw(const std::vector<float>& src, int channels, int height,
                                       int width, int out_height, int out_width);

// Decode + scale to [0,1] + channel replicate/average + bilinear resize.
TensorPtr load_image(const std::string& ref, const Shape& chw);

// The same pipeline applied after decoding, shared with synthetic refs.
std::vector<float> adapt_image(std::vector<float> chw_data, int channels, int height, int width,
                               const Shape& target_chw);

} // namespace mstl
