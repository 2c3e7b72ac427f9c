#include "selfcolor/targets.hpp"

#include <cmath>

namespace selfcolor {

int valid_margin() { return kTargetWindow / 2; }

int64_t valid_position_count(int height, int width) {
  const int m = valid_margin();
  const int64_t vh = height - 2 * m, vw = width - 2 * m;
  return (vh <= 0 || vw <= 0) ? 0 : vh * vw;
}

PixelSampleSet sample_pixel_locations(int height, int width, int k, Rng& rng,
                                      int image_index) {
  check(k >= 1, "sample_pixel_locations: K must be >= 1");
  const int m = valid_margin();
  const int64_t total = valid_position_count(height, width);
  check(total > 0, "sample_pixel_locations: image too small for the target window");
  check(k <= total, "sample_pixel_locations: K exceeds valid positions");
  const int vw = width - 2 * m;
  auto picks = rng.sample_without_replacement(total, k);
  PixelSampleSet out;
  out.reserve(k);
  for (int64_t p : picks)
    out.push_back({image_index, static_cast<int>(p / vw) + m,
                   static_cast<int>(p % vw) + m});
  return out;
}

static int hue_bin(double hue) {
  int b = static_cast<int>(std::floor(hue / 360.0 * kHistBins));
  if (b >= kHistBins) b -= kHistBins;  // wraparound at 360
  if (b < 0) b = 0;
  return b;
}

static int chroma_bin(double chroma) {
  // Uniform bins over [0,1]; the final bin is closed so chroma 1 lands in it.
  int b = static_cast<int>(std::floor(chroma * kHistBins));
  if (b >= kHistBins) b = kHistBins - 1;
  if (b < 0) b = 0;
  return b;
}

HistogramTarget build_histogram_target(const Image& huechroma, int y, int x,
                                       const TargetOptions& opts) {
  check(huechroma.channels == 2, "build_histogram_target: expected huechroma image");
  const int m = valid_margin();
  check(y >= m && x >= m && y < huechroma.height - m && x < huechroma.width - m,
        "build_histogram_target: window out of bounds");

  HistogramTarget t;
  const double per_pixel = 1.0 / (kTargetWindow * kTargetWindow);
  std::array<double, kHistBins> hacc{}, cacc{};
  const bool renorm_hue = opts.skip_undefined_hue || opts.chroma_weighted_hue;
  double hue_weight_total = 0.0;

  for (int dy = -m; dy <= m; ++dy) {
    for (int dx = -m; dx <= m; ++dx) {
      const double hue = huechroma.at(0, y + dy, x + dx);
      const double chroma = huechroma.at(1, y + dy, x + dx);
      cacc[chroma_bin(chroma)] += per_pixel;
      if (chroma <= 0.0) {
        if (!opts.skip_undefined_hue && !opts.chroma_weighted_hue) {
          for (int b = 0; b < kHistBins; ++b) hacc[b] += per_pixel / kHistBins;
          hue_weight_total += per_pixel;
        }
      } else {
        const double w = opts.chroma_weighted_hue ? chroma * per_pixel : per_pixel;
        hacc[hue_bin(hue)] += w;
        hue_weight_total += w;
      }
    }
  }

  if (renorm_hue) {
    // Non-default options leave the hue mass != 1; renormalize. A window
    // with no defined hue at all falls back to uniform.
    if (hue_weight_total > 0.0) {
      for (int b = 0; b < kHistBins; ++b) hacc[b] /= hue_weight_total;
    } else {
      for (int b = 0; b < kHistBins; ++b) hacc[b] = 1.0 / kHistBins;
    }
  }
  for (int b = 0; b < kHistBins; ++b) {
    t.hue[b] = static_cast<float>(hacc[b]);
    t.chroma[b] = static_cast<float>(cacc[b]);
  }
  return t;
}

std::pair<float, float> build_lab_target(const Image& lab, int y, int x) {
  check(lab.channels == 3, "build_lab_target: expected lab image");
  check(y >= 0 && x >= 0 && y < lab.height && x < lab.width,
        "build_lab_target: location out of bounds");
  return {lab.at(1, y, x), lab.at(2, y, x)};
}

}  // namespace selfcolor
