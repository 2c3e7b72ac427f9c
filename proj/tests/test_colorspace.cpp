#include "doctest.h"

#include <cmath>

#include "selfcolor/colorspace.hpp"
#include "test_util.hpp"

using namespace selfcolor;

namespace {
Image pixel(double r, double g, double b) {
  Image img(3, 1, 1);
  img.at(0, 0, 0) = static_cast<float>(r);
  img.at(1, 0, 0) = static_cast<float>(g);
  img.at(2, 0, 0) = static_cast<float>(b);
  return img;
}
}  // namespace

TEST_CASE("rgb_to_gray: pinned luminance weights") {
  CHECK(rgb_to_gray(pixel(1, 1, 1)).at(0, 0, 0) == doctest::Approx(1.0));
  CHECK(rgb_to_gray(pixel(0, 0, 0)).at(0, 0, 0) == doctest::Approx(0.0));
  CHECK(rgb_to_gray(pixel(1, 0, 0)).at(0, 0, 0) == doctest::Approx(0.299));
  CHECK(rgb_to_gray(pixel(0, 1, 0)).at(0, 0, 0) == doctest::Approx(0.587));
  CHECK(rgb_to_gray(pixel(0, 0, 1)).at(0, 0, 0) == doctest::Approx(0.114));
}

TEST_CASE("rgb_to_lab: white point, black, round trip") {
  Image white_lab = rgb_to_lab(pixel(1, 1, 1));
  CHECK(white_lab.at(0, 0, 0) == doctest::Approx(100.0).epsilon(1e-4));
  CHECK(std::abs(white_lab.at(1, 0, 0)) < 1e-3);
  CHECK(std::abs(white_lab.at(2, 0, 0)) < 1e-3);

  Image black_lab = rgb_to_lab(pixel(0, 0, 0));
  CHECK(std::abs(black_lab.at(0, 0, 0)) < 1e-6);
  CHECK(std::abs(black_lab.at(1, 0, 0)) < 1e-6);
  CHECK(std::abs(black_lab.at(2, 0, 0)) < 1e-6);

  // 10^4 random in-gamut colors round trip within 1e-4.
  Rng rng(123);
  const int n = 10000;
  Image img(3, 100, 100);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n; ++i) img.plane(c)[i] = static_cast<float>(rng.uniform());
  Image back = lab_to_rgb(rgb_to_lab(img));
  double worst = 0;
  for (size_t i = 0; i < img.data.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(img.data[i]) - back.data[i]));
  CHECK(worst < 1e-4);

  CHECK_THROWS(rgb_to_lab(pixel(1.5, 0, 0)));
}

TEST_CASE("rgb_to_huechroma: primary anchors and achromatic flag") {
  Image red = rgb_to_huechroma(pixel(1, 0, 0));
  CHECK(red.at(0, 0, 0) == doctest::Approx(0.0));
  CHECK(red.at(1, 0, 0) == doctest::Approx(1.0));

  Image green = rgb_to_huechroma(pixel(0, 1, 0));
  CHECK(green.at(0, 0, 0) == doctest::Approx(120.0));
  CHECK(green.at(1, 0, 0) == doctest::Approx(1.0));

  Image blue = rgb_to_huechroma(pixel(0, 0, 1));
  CHECK(blue.at(0, 0, 0) == doctest::Approx(240.0));

  for (double g : {0.0, 0.25, 0.8, 1.0}) {
    Image gray = rgb_to_huechroma(pixel(g, g, g));
    CHECK(gray.at(1, 0, 0) == 0.0f);  // chroma exactly 0 flags undefined hue
  }
}

TEST_CASE("hue is invariant to positive scaling while chroma > 0") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    double r = rng.uniform(), g = rng.uniform(), b = rng.uniform();
    double h1, c1;
    rgb_pixel_to_huechroma(r, g, b, &h1, &c1);
    if (c1 <= 0) continue;
    const double s = rng.uniform(0.1, 1.0 / std::max({r, g, b, 1e-9}));
    double h2, c2;
    rgb_pixel_to_huechroma(r * s, g * s, b * s, &h2, &c2);
    double diff = std::fmod(std::abs(h1 - h2), 360.0);
    diff = std::min(diff, 360.0 - diff);
    CHECK(diff < 1e-6);
  }
}

TEST_CASE("image utilities: resize, crop, mirror") {
  Image img(1, 2, 2);
  img.at(0, 0, 0) = 0;
  img.at(0, 0, 1) = 1;
  img.at(0, 1, 0) = 2;
  img.at(0, 1, 1) = 3;

  Image same = resize_bilinear(img, 2, 2);
  for (size_t i = 0; i < img.data.size(); ++i) CHECK(same.data[i] == img.data[i]);

  Image up = resize_bilinear(img, 3, 3);
  CHECK(up.at(0, 0, 0) == doctest::Approx(0.0));
  CHECK(up.at(0, 1, 1) == doctest::Approx(1.5));  // center of the 2x2 grid
  CHECK(up.at(0, 2, 2) == doctest::Approx(3.0));

  Image m = mirror_horizontal(img);
  CHECK(m.at(0, 0, 0) == 1);
  CHECK(m.at(0, 0, 1) == 0);

  Image c = crop(img, 1, 0, 1, 2);
  CHECK(c.at(0, 0, 0) == 2);
  CHECK(c.at(0, 0, 1) == 3);
  CHECK_THROWS(crop(img, 1, 1, 2, 2));
}
