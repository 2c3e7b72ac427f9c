// Latent-representation analyses: per-feature correlation between two
// checkpoints and top-activation patch extraction.
#pragma once

#include "selfcolor/dataset.hpp"
#include "selfcolor/model.hpp"

namespace selfcolor {

struct LayerCorrelation {
  std::string layer;
  std::vector<double> corr;  // per feature; NaN marks zero-variance channels
  double median = 0;         // over defined entries
  double iqr_lo = 0, iqr_hi = 0;
  int defined = 0;
};

struct CorrelationReport {
  std::vector<LayerCorrelation> layers;
  int pixel_stride = 4;
  int probe_images = 0;
  int crop = 32;
};

// Pearson correlation of post-relu activations between two networks sharing a
// spec, per layer and feature channel, over all probe pixels at the given
// spatial stride. Zero-variance channels are excluded from the medians.
CorrelationReport feature_correlation(Network<float>& a, Network<float>& b,
                                      const std::vector<Sample>& probe,
                                      int pixel_stride = 4, int crop = 32);

struct ActivationRecord {
  int image_index = 0;
  int y = 0, x = 0;     // position in the layer's output grid
  float activation = 0;
  int box_y0 = 0, box_x0 = 0, box_y1 = 0, box_x1 = 0;  // input patch, clipped
};

struct TopActivationSet {
  std::string layer;
  int rf_size = 0;
  int stride = 1;
  std::vector<std::vector<ActivationRecord>> per_feature;  // sorted descending
};

// Exact top-M over all (image, position) pairs per feature of `layer`.
TopActivationSet top_activations(Network<float>& net, const std::string& layer,
                                 const std::vector<Sample>& samples, int m,
                                 int crop = 32);

}  // namespace selfcolor
