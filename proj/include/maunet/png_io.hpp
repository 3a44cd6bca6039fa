#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace maunet {

struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, one byte per pixel
};

// 8-bit grayscale PNG, non-interlaced. The reader handles all five scanline
// filters; the writer emits filter 0 with a fixed compression level so output
// bytes are reproducible.
GrayImage read_png_gray8(const std::string& path);
void write_png_gray8(const std::string& path, const GrayImage& image);

}  // namespace maunet
