// Invertible color mathematics: grayscale, CIELAB (sRGB, D65) and the
// hexagonal hue/chroma decomposition that supplies colorization labels.
#pragma once

#include "selfcolor/image.hpp"

namespace selfcolor {

// Luminance 0.299 R + 0.587 G + 0.114 B.
Image rgb_to_gray(const Image& rgb);

// sRGB decode -> XYZ (D65) -> CIELAB. Input channels must lie in [0,1].
Image rgb_to_lab(const Image& rgb);
Image lab_to_rgb(const Image& lab);

// Chroma = max(R,G,B) - min(R,G,B); hue is the hexagonal angle in degrees
// (red 0, green 120, blue 240). Chroma 0 marks hue as undefined.
Image rgb_to_huechroma(const Image& rgb);

// Per-pixel primitives (shared by the image-level paths and the tests).
void rgb_pixel_to_lab(double r, double g, double b, double* L, double* a, double* bb);
void lab_pixel_to_rgb(double L, double a, double bb, double* r, double* g, double* b);
void rgb_pixel_to_huechroma(double r, double g, double b, double* hue, double* chroma);

}  // namespace selfcolor
