// Self-supervision labels: hue/chroma histograms over 7x7 windows, Lab
// regression targets, and the sparse pixel sampler.
#pragma once

#include <array>
#include <vector>

#include "selfcolor/image.hpp"

namespace selfcolor {

constexpr int kHistBins = 32;
constexpr int kTargetWindow = 7;  // window side; targets exist where it fits

struct HistogramTarget {
  std::array<float, kHistBins> hue{};
  std::array<float, kHistBins> chroma{};
};

struct PixelLocation {
  int image_index = 0;
  int y = 0;
  int x = 0;
};
using PixelSampleSet = std::vector<PixelLocation>;

struct TargetOptions {
  // Off: an achromatic pixel spreads its hue mass uniformly over all bins.
  // On: achromatic pixels are skipped for hue and the histogram renormalized.
  bool skip_undefined_hue = false;
  // Weight each pixel's hue contribution by its chroma (renormalized).
  bool chroma_weighted_hue = false;
};

// Valid target positions on an h x w image: centers where the full window fits.
int valid_margin();
int64_t valid_position_count(int height, int width);

// K distinct positions, uniform over the valid region, for one image.
PixelSampleSet sample_pixel_locations(int height, int width, int k, Rng& rng,
                                      int image_index = 0);

// Histograms from the 7x7 window around (y, x) of a huechroma image.
// Hue: 32 uniform bins over [0, 360) with wraparound. Chroma: 32 uniform bins
// over [0, 1], final bin closed. Each pixel contributes 1/49 per histogram.
HistogramTarget build_histogram_target(const Image& huechroma, int y, int x,
                                       const TargetOptions& opts = {});

// The chromatic (a, b) components at a pixel of a lab image.
std::pair<float, float> build_lab_target(const Image& lab, int y, int x);

}  // namespace selfcolor
