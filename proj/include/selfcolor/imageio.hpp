#pragma once

#include <string>

#include "selfcolor/image.hpp"

namespace selfcolor {

// 8-bit sRGB files decoded to float [0,1]. PNG support covers non-interlaced
// 8-bit grayscale / RGB / RGBA (alpha dropped); PPM is binary P6, masks are
// binary P5 with raw label indices.
Image read_image(const std::string& path);          // by extension
Image read_ppm(const std::string& path);
Image read_png(const std::string& path);
void write_ppm(const std::string& path, const Image& rgb);
void write_png(const std::string& path, const Image& img);  // 1 or 3 channels

std::vector<uint8_t> read_mask_pgm(const std::string& path, int* h, int* w);
void write_mask_pgm(const std::string& path, const std::vector<uint8_t>& mask, int h,
                    int w);

}  // namespace selfcolor
