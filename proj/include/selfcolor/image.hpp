#pragma once

#include <cstdint>
#include <vector>

#include "selfcolor/tensor.hpp"

namespace selfcolor {

// Planar float image: data laid out [channel][y][x]. Channel conventions:
//   rgb: 3 channels in [0,1]; gray: 1 channel in [0,1];
//   lab: L in [0,100], a/b in [-128,128];
//   huechroma: channel 0 hue in degrees [0,360), channel 1 chroma in [0,1].
//   Hue is undefined exactly when chroma == 0.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w) : channels(c), height(h), width(w),
                               data(static_cast<size_t>(c) * h * w, 0.f) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float* plane(int c) { return data.data() + static_cast<size_t>(c) * height * width; }
  const float* plane(int c) const {
    return data.data() + static_cast<size_t>(c) * height * width;
  }
  bool empty() const { return data.empty(); }
};

Image resize_bilinear(const Image& img, int out_h, int out_w);
Image crop(const Image& img, int y0, int x0, int h, int w);
Image mirror_horizontal(const Image& img);

// [C,H,W] tensor from an image and back (for network input).
template <typename T>
Tensor<T> image_to_tensor(const Image& img);

}  // namespace selfcolor
