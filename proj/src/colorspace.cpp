#include "selfcolor/colorspace.hpp"

#include <algorithm>
#include <cmath>

namespace selfcolor {

// ---------------------------------------------------------------------------
// image utilities

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  check(out_h >= 1 && out_w >= 1, "resize_bilinear: output extents must be positive");
  Image out(img.channels, out_h, out_w);
  const double sy = out_h > 1 ? static_cast<double>(img.height - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(img.width - 1) / (out_w - 1) : 0.0;
  for (int c = 0; c < img.channels; ++c) {
    const float* src = img.plane(c);
    float* dst = out.plane(c);
    for (int y = 0; y < out_h; ++y) {
      const double fy = y * sy;
      int y0 = static_cast<int>(fy);
      if (y0 > img.height - 2) y0 = std::max(img.height - 2, 0);
      const int y1 = std::min(y0 + 1, img.height - 1);
      const double wy = fy - y0;
      for (int x = 0; x < out_w; ++x) {
        const double fx = x * sx;
        int x0 = static_cast<int>(fx);
        if (x0 > img.width - 2) x0 = std::max(img.width - 2, 0);
        const int x1 = std::min(x0 + 1, img.width - 1);
        const double wx = fx - x0;
        const double v = (1 - wy) * ((1 - wx) * src[y0 * img.width + x0] +
                                     wx * src[y0 * img.width + x1]) +
                         wy * ((1 - wx) * src[y1 * img.width + x0] +
                               wx * src[y1 * img.width + x1]);
        dst[y * out_w + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

Image crop(const Image& img, int y0, int x0, int h, int w) {
  check(y0 >= 0 && x0 >= 0 && y0 + h <= img.height && x0 + w <= img.width,
        "crop: window out of bounds");
  Image out(img.channels, h, w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

Image mirror_horizontal(const Image& img) {
  Image out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  Tensor<T> t({img.channels, img.height, img.width});
  for (size_t i = 0; i < img.data.size(); ++i) t.data()[i] = static_cast<T>(img.data[i]);
  return t;
}

template Tensor<float> image_to_tensor<float>(const Image&);
template Tensor<double> image_to_tensor<double>(const Image&);

// ---------------------------------------------------------------------------
// grayscale

Image rgb_to_gray(const Image& rgb) {
  check(rgb.channels == 3, "rgb_to_gray: expected 3 channels");
  Image out(1, rgb.height, rgb.width);
  const size_t n = static_cast<size_t>(rgb.height) * rgb.width;
  const float* r = rgb.plane(0);
  const float* g = rgb.plane(1);
  const float* b = rgb.plane(2);
  for (size_t i = 0; i < n; ++i)
    out.data[i] = static_cast<float>(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
  return out;
}

// ---------------------------------------------------------------------------
// CIELAB (sRGB decode, D65 white)

static double srgb_decode(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}
static double srgb_encode(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

static constexpr double kXn = 0.95047, kYn = 1.0, kZn = 1.08883;
static constexpr double kDelta = 6.0 / 29.0;

static double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t)
                                      : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}
static double lab_finv(double t) {
  return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

void rgb_pixel_to_lab(double r, double g, double b, double* L, double* a, double* bb) {
  const double rl = srgb_decode(r), gl = srgb_decode(g), bl = srgb_decode(b);
  const double X = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
  const double Y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double Z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
  const double fx = lab_f(X / kXn), fy = lab_f(Y / kYn), fz = lab_f(Z / kZn);
  *L = 116.0 * fy - 16.0;
  *a = 500.0 * (fx - fy);
  *bb = 200.0 * (fy - fz);
}

void lab_pixel_to_rgb(double L, double a, double bb, double* r, double* g, double* b) {
  const double fy = (L + 16.0) / 116.0;
  const double fx = fy + a / 500.0;
  const double fz = fy - bb / 200.0;
  const double X = kXn * lab_finv(fx), Y = kYn * lab_finv(fy), Z = kZn * lab_finv(fz);
  const double rl = 3.2404542 * X - 1.5371385 * Y - 0.4985314 * Z;
  const double gl = -0.9692660 * X + 1.8760108 * Y + 0.0415560 * Z;
  const double bl = 0.0556434 * X - 0.2040259 * Y + 1.0572252 * Z;
  *r = srgb_encode(std::clamp(rl, 0.0, 1.0));
  *g = srgb_encode(std::clamp(gl, 0.0, 1.0));
  *b = srgb_encode(std::clamp(bl, 0.0, 1.0));
}

Image rgb_to_lab(const Image& rgb) {
  check(rgb.channels == 3, "rgb_to_lab: expected 3 channels");
  const size_t n = static_cast<size_t>(rgb.height) * rgb.width;
  const float* r = rgb.plane(0);
  const float* g = rgb.plane(1);
  const float* b = rgb.plane(2);
  for (size_t i = 0; i < n; ++i)
    check(r[i] >= -1e-6f && r[i] <= 1.f + 1e-6f && g[i] >= -1e-6f &&
              g[i] <= 1.f + 1e-6f && b[i] >= -1e-6f && b[i] <= 1.f + 1e-6f,
          "rgb_to_lab: input channel out of [0,1]");
  Image out(3, rgb.height, rgb.width);
  for (size_t i = 0; i < n; ++i) {
    double L, a, bb;
    rgb_pixel_to_lab(std::clamp<double>(r[i], 0, 1), std::clamp<double>(g[i], 0, 1),
                     std::clamp<double>(b[i], 0, 1), &L, &a, &bb);
    out.plane(0)[i] = static_cast<float>(L);
    out.plane(1)[i] = static_cast<float>(a);
    out.plane(2)[i] = static_cast<float>(bb);
  }
  return out;
}

Image lab_to_rgb(const Image& lab) {
  check(lab.channels == 3, "lab_to_rgb: expected 3 channels");
  Image out(3, lab.height, lab.width);
  const size_t n = static_cast<size_t>(lab.height) * lab.width;
  for (size_t i = 0; i < n; ++i) {
    double r, g, b;
    lab_pixel_to_rgb(lab.plane(0)[i], lab.plane(1)[i], lab.plane(2)[i], &r, &g, &b);
    out.plane(0)[i] = static_cast<float>(r);
    out.plane(1)[i] = static_cast<float>(g);
    out.plane(2)[i] = static_cast<float>(b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// hue/chroma

void rgb_pixel_to_huechroma(double r, double g, double b, double* hue, double* chroma) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double c = mx - mn;
  *chroma = c;
  if (c <= 0.0) {
    *hue = 0.0;  // undefined; flagged by chroma == 0
    return;
  }
  double h;
  if (mx == r)
    h = std::fmod((g - b) / c, 6.0);
  else if (mx == g)
    h = (b - r) / c + 2.0;
  else
    h = (r - g) / c + 4.0;
  h *= 60.0;
  if (h < 0.0) h += 360.0;
  if (h >= 360.0) h -= 360.0;
  *hue = h;
}

Image rgb_to_huechroma(const Image& rgb) {
  check(rgb.channels == 3, "rgb_to_huechroma: expected 3 channels");
  Image out(2, rgb.height, rgb.width);
  const size_t n = static_cast<size_t>(rgb.height) * rgb.width;
  for (size_t i = 0; i < n; ++i) {
    double h, c;
    rgb_pixel_to_huechroma(rgb.plane(0)[i], rgb.plane(1)[i], rgb.plane(2)[i], &h, &c);
    out.plane(0)[i] = static_cast<float>(h);
    out.plane(1)[i] = static_cast<float>(c);
  }
  return out;
}

}  // namespace selfcolor
