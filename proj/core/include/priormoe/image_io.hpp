#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "priormoe/tensor.hpp"

namespace priormoe {

// 8-bit raster, channels = 1 (gray) or 3 (RGB), row-major, interleaved.
struct ImageU8 {
    int64_t width = 0;
    int64_t height = 0;
    int channels = 0;
    std::vector<uint8_t> pixels;
    std::string comment;  // first header comment when the format carries one
};

// Format is picked from the extension: .ppm/.pgm (binary P6/P5) or .png
// (8-bit gray/RGB, non-interlaced, zlib-backed).
ImageU8 read_image(const std::string& path);
void write_image(const std::string& path, const ImageU8& img);

// [C,H,W] in [0,1] <-> 8-bit rasters.
Tensor image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor& t);

// Grayscale confidence/mask helpers: [H,W] in [0,1].
Tensor gray_to_tensor(const ImageU8& img);
ImageU8 tensor_to_gray(const Tensor& t);

}  // namespace priormoe
