#include "selfcolor/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "selfcolor/transfer.hpp"

namespace selfcolor {

static double percentile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - lo;
  return v[lo] * (1 - frac) + v[hi] * frac;
}

CorrelationReport feature_correlation(Network<float>& a, Network<float>& b,
                                      const std::vector<Sample>& probe,
                                      int pixel_stride, int crop) {
  check(!probe.empty(), "feature_correlation: empty probe set");
  check(spec_hash(a.spec) == spec_hash(b.spec),
        "feature_correlation: checkpoints have different specs");
  check(pixel_stride >= 1, "feature_correlation: bad pixel stride");

  // Relu layers are the correlated activations.
  std::vector<std::string> relu_layers;
  for (const auto& l : a.spec.layers)
    if (l.kind == LayerKind::kRelu) relu_layers.push_back(l.name);
  check(!relu_layers.empty(), "feature_correlation: spec has no relu layers");

  // Accumulate first and second moments per (layer, channel) streaming over
  // probe images.
  struct Acc {
    std::vector<double> sx, sy, sxx, syy, sxy;
    int64_t n = 0;
  };
  std::map<std::string, Acc> accs;

  for (const auto& sample : probe) {
    Tensor<float> input = eval_input(sample, crop, a.spec.input_channels == 3);
    Tensor<float> batch({1, input.dim(0), crop, crop});
    std::copy(input.data(), input.data() + input.numel(), batch.data());
    Tape<float> tape_a(false), tape_b(false);
    auto acts_a = forward(a, tape_a, batch, BnMode::kInfer);
    auto acts_b = forward(b, tape_b, batch, BnMode::kInfer);
    for (const auto& lname : relu_layers) {
      const Tensor<float>* ta = acts_a.by_name(lname);
      const Tensor<float>* tb = acts_b.by_name(lname);
      const int64_t C = ta->dim(1), H = ta->dim(2), W = ta->dim(3);
      auto& acc = accs[lname];
      if (acc.sx.empty()) {
        acc.sx.assign(C, 0);
        acc.sy.assign(C, 0);
        acc.sxx.assign(C, 0);
        acc.syy.assign(C, 0);
        acc.sxy.assign(C, 0);
      }
      int64_t added = 0;
      for (int64_t c = 0; c < C; ++c) {
        const float* pa = ta->data() + c * H * W;
        const float* pb = tb->data() + c * H * W;
        for (int64_t y = 0; y < H; y += pixel_stride)
          for (int64_t x = 0; x < W; x += pixel_stride) {
            const double va = pa[y * W + x], vb = pb[y * W + x];
            acc.sx[c] += va;
            acc.sy[c] += vb;
            acc.sxx[c] += va * va;
            acc.syy[c] += vb * vb;
            acc.sxy[c] += va * vb;
            if (c == 0) ++added;
          }
      }
      acc.n += added;
    }
  }

  CorrelationReport report;
  report.pixel_stride = pixel_stride;
  report.probe_images = static_cast<int>(probe.size());
  report.crop = crop;
  for (const auto& lname : relu_layers) {
    const Acc& acc = accs.at(lname);
    LayerCorrelation lc;
    lc.layer = lname;
    std::vector<double> defined;
    const double n = static_cast<double>(acc.n);
    for (size_t c = 0; c < acc.sx.size(); ++c) {
      const double vx = acc.sxx[c] - acc.sx[c] * acc.sx[c] / n;
      const double vy = acc.syy[c] - acc.sy[c] * acc.sy[c] / n;
      const double cov = acc.sxy[c] - acc.sx[c] * acc.sy[c] / n;
      if (vx <= 1e-12 || vy <= 1e-12) {
        lc.corr.push_back(std::nan(""));  // dead feature in one of the nets
        continue;
      }
      const double r = cov / std::sqrt(vx * vy);
      lc.corr.push_back(r);
      defined.push_back(r);
    }
    lc.defined = static_cast<int>(defined.size());
    lc.median = percentile(defined, 0.5);
    lc.iqr_lo = percentile(defined, 0.25);
    lc.iqr_hi = percentile(defined, 0.75);
    report.layers.push_back(std::move(lc));
  }
  return report;
}

TopActivationSet top_activations(Network<float>& net, const std::string& layer,
                                 const std::vector<Sample>& samples, int m, int crop) {
  check(m >= 1, "top_activations: M must be >= 1");
  check(net.spec.find(layer) != nullptr, "top_activations: unknown layer " + layer);
  const FieldOfView fov = compute_receptive_field(net.spec, layer);

  TopActivationSet set;
  set.layer = layer;
  set.rf_size = fov.rf_size;
  set.stride = fov.cumulative_stride;

  std::vector<std::vector<ActivationRecord>> records;
  for (size_t i = 0; i < samples.size(); ++i) {
    Tensor<float> input = eval_input(samples[i], crop, net.spec.input_channels == 3);
    Tensor<float> batch({1, input.dim(0), crop, crop});
    std::copy(input.data(), input.data() + input.numel(), batch.data());
    Tape<float> tape(false);
    auto acts = forward(net, tape, batch, BnMode::kInfer);
    const Tensor<float>* t = acts.by_name(layer);
    check(t != nullptr, "top_activations: layer has no recorded activation");
    const int64_t C = t->dim(1), H = t->dim(2), W = t->dim(3);
    if (records.empty()) records.resize(C);
    for (int64_t c = 0; c < C; ++c) {
      const float* p = t->data() + c * H * W;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          ActivationRecord r;
          r.image_index = static_cast<int>(i);
          r.y = static_cast<int>(y);
          r.x = static_cast<int>(x);
          r.activation = p[y * W + x];
          const int cy = static_cast<int>(
              std::lround((y + 0.5) * fov.cumulative_stride - 0.5));
          const int cx = static_cast<int>(
              std::lround((x + 0.5) * fov.cumulative_stride - 0.5));
          r.box_y0 = std::max(0, cy - fov.rf_size / 2);
          r.box_x0 = std::max(0, cx - fov.rf_size / 2);
          r.box_y1 = std::min(crop - 1, cy + (fov.rf_size - 1) / 2);
          r.box_x1 = std::min(crop - 1, cx + (fov.rf_size - 1) / 2);
          records[c].push_back(r);
        }
    }
  }

  auto by_activation = [](const ActivationRecord& a, const ActivationRecord& b) {
    if (a.activation != b.activation) return a.activation > b.activation;
    if (a.image_index != b.image_index) return a.image_index < b.image_index;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  };
  for (auto& feature : records) {
    std::sort(feature.begin(), feature.end(), by_activation);
    if (static_cast<int>(feature.size()) > m) feature.resize(m);
    set.per_feature.push_back(std::move(feature));
  }
  return set;
}

}  // namespace selfcolor
