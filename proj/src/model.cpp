#include "selfcolor/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace selfcolor {

const LayerDesc* NetworkSpec::find(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

void validate_spec(const NetworkSpec& spec) {
  check(spec.input_channels == 1 || spec.input_channels == 3,
        "spec: input_channels must be 1 or 3");
  check(!spec.layers.empty(), "spec: no layers");
  std::set<std::string> names;
  for (const auto& l : spec.layers) {
    check(!l.name.empty(), "spec: layer without a name");
    check(names.insert(l.name).second, "spec: duplicate layer name " + l.name);
    switch (l.kind) {
      case LayerKind::kConv:
        check(l.out_channels >= 1 && l.kernel >= 1 && l.stride >= 1 && l.pad >= 0,
              "spec: bad conv hyperparameters in " + l.name);
        break;
      case LayerKind::kAffine:
        check(l.out_channels >= 1, "spec: bad affine width in " + l.name);
        break;
      case LayerKind::kPool:
        check(l.kernel >= 1 && l.stride >= 1, "spec: bad pool hyperparameters in " + l.name);
        break;
      default:
        break;
    }
  }
  for (const auto& t : spec.taps)
    check(names.count(t), "spec: tap names unknown layer " + t);
}

static std::string kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kPool: return "pool";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kAffine: return "affine";
  }
  return "?";
}

static LayerKind kind_from_name(const std::string& s) {
  if (s == "conv") return LayerKind::kConv;
  if (s == "pool") return LayerKind::kPool;
  if (s == "relu") return LayerKind::kRelu;
  if (s == "batchnorm") return LayerKind::kBatchNorm;
  if (s == "affine") return LayerKind::kAffine;
  throw std::invalid_argument("spec: unknown layer kind " + s);
}

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json j;
  j["input_channels"] = spec.input_channels;
  j["taps"] = spec.taps;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    nlohmann::json lj;
    lj["kind"] = kind_name(l.kind);
    lj["name"] = l.name;
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kAffine)
      lj["out"] = l.out_channels;
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kPool) {
      lj["k"] = l.kernel;
      lj["stride"] = l.stride;
    }
    if (l.kind == LayerKind::kConv) {
      lj["pad"] = l.pad;
      lj["pad_mode"] = l.pad_mode == PadMode::kFill ? "bias_prev" : "zero";
    }
    j["layers"].push_back(lj);
  }
  return j;
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.input_channels = j.at("input_channels").get<int>();
  if (j.contains("taps")) spec.taps = j.at("taps").get<std::vector<std::string>>();
  for (const auto& lj : j.at("layers")) {
    LayerDesc l;
    l.kind = kind_from_name(lj.at("kind").get<std::string>());
    l.name = lj.at("name").get<std::string>();
    l.out_channels = lj.value("out", 0);
    l.kernel = lj.value("k", 0);
    l.stride = lj.value("stride", 1);
    l.pad = lj.value("pad", 0);
    l.pad_mode = lj.value("pad_mode", "zero") == "bias_prev" ? PadMode::kFill
                                                             : PadMode::kZero;
    spec.layers.push_back(l);
  }
  validate_spec(spec);
  return spec;
}

uint64_t spec_hash(const NetworkSpec& spec) {
  const std::string s = spec_to_json(spec).dump();
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::map<std::string, LayerInfo> layer_info(const NetworkSpec& spec) {
  std::map<std::string, LayerInfo> info;
  int channels = spec.input_channels;
  int stride = 1;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kAffine)
      channels = l.out_channels;
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kPool) stride *= l.stride;
    info[l.name] = {channels, stride};
  }
  return info;
}

int tap_channel_sum(const NetworkSpec& spec) {
  auto info = layer_info(spec);
  int total = 0;
  for (const auto& t : spec.taps) total += info.at(t).channels;
  return total;
}

std::vector<int> tap_strides(const NetworkSpec& spec) {
  auto info = layer_info(spec);
  std::vector<int> out;
  for (const auto& t : spec.taps) out.push_back(info.at(t).stride);
  return out;
}

FieldOfView compute_receptive_field(const NetworkSpec& spec, const std::string& layer) {
  FieldOfView fov;
  for (const auto& l : spec.layers) {
    const int k = (l.kind == LayerKind::kConv || l.kind == LayerKind::kPool) ? l.kernel
                  : l.kind == LayerKind::kAffine                             ? 1
                                                                             : 0;
    if (k > 0) {
      fov.rf_size += (k - 1) * fov.cumulative_stride;
      fov.cumulative_stride *= l.stride;
    }
    if (l.name == layer) return fov;
  }
  throw std::invalid_argument("compute_receptive_field: unknown layer " + layer);
}

NetworkSpec add_fov_blocks(const NetworkSpec& spec, int n_blocks, int width) {
  check(n_blocks >= 0, "add_fov_blocks: n_blocks must be >= 0");
  check(n_blocks == 0 || width >= 1, "add_fov_blocks: width must be >= 1");
  NetworkSpec out = spec;
  for (int i = 1; i <= n_blocks; ++i) {
    const std::string base = "fov" + std::to_string(i);
    out.layers.push_back({LayerKind::kPool, base + "_pool", 0, 2, 2, 0, PadMode::kZero});
    out.layers.push_back({LayerKind::kConv, base + "_conv", width, 3, 1, 1, PadMode::kZero});
    out.layers.push_back({LayerKind::kBatchNorm, base + "_bn"});
    out.layers.push_back({LayerKind::kRelu, base + "_relu"});
    out.taps.push_back(base + "_relu");
  }
  return out;
}

// ---------------------------------------------------------------------------
// presets

static void conv_block(NetworkSpec& s, const std::string& base, int out, int k, int pad) {
  s.layers.push_back({LayerKind::kConv, base, out, k, 1, pad, PadMode::kZero});
  s.layers.push_back({LayerKind::kBatchNorm, base + "_bn"});
  s.layers.push_back({LayerKind::kRelu, base + "_relu"});
}

NetworkSpec mini_vgg_spec(int input_channels) {
  NetworkSpec s;
  s.input_channels = input_channels;
  conv_block(s, "conv1", 16, 3, 1);
  conv_block(s, "conv2", 16, 3, 1);
  s.layers.push_back({LayerKind::kPool, "pool1", 0, 2, 2});
  conv_block(s, "conv3", 32, 3, 1);
  conv_block(s, "conv4", 32, 3, 1);
  s.layers.push_back({LayerKind::kPool, "pool2", 0, 2, 2});
  conv_block(s, "conv5", 64, 3, 1);
  conv_block(s, "conv6", 64, 3, 1);
  s.layers.push_back({LayerKind::kPool, "pool3", 0, 2, 2});
  conv_block(s, "conv7", 128, 3, 1);
  conv_block(s, "conv8", 128, 3, 1);
  s.taps = {"pool1", "pool2", "pool3", "conv8_relu"};
  return s;
}

NetworkSpec mini_alex_spec(int input_channels) {
  NetworkSpec s;
  s.input_channels = input_channels;
  conv_block(s, "conv1", 16, 5, 2);
  s.layers.push_back({LayerKind::kPool, "pool1", 0, 2, 2});
  conv_block(s, "conv2", 32, 3, 1);
  s.layers.push_back({LayerKind::kPool, "pool2", 0, 2, 2});
  conv_block(s, "conv3", 64, 3, 1);
  s.layers.push_back({LayerKind::kPool, "pool3", 0, 2, 2});
  // fc layers applied per pixel (1x1) so they can feed hypercolumns
  s.layers.push_back({LayerKind::kAffine, "fc4", 96});
  s.layers.push_back({LayerKind::kBatchNorm, "fc4_bn"});
  s.layers.push_back({LayerKind::kRelu, "fc4_relu"});
  s.layers.push_back({LayerKind::kAffine, "fc5", 96});
  s.layers.push_back({LayerKind::kBatchNorm, "fc5_bn"});
  s.layers.push_back({LayerKind::kRelu, "fc5_relu"});
  s.taps = {"pool1", "pool2", "pool3", "fc5_relu"};
  return s;
}

NetworkSpec vgg16_shaped_spec(int input_channels) {
  NetworkSpec s;
  s.input_channels = input_channels;
  const int blocks[5] = {2, 2, 3, 3, 3};
  const int widths[5] = {4, 4, 8, 8, 8};  // shape study only; widths are token
  for (int b = 0; b < 5; ++b) {
    for (int i = 0; i < blocks[b]; ++i)
      conv_block(s, "conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1),
                 widths[b], 3, 1);
    s.layers.push_back({LayerKind::kPool, "pool" + std::to_string(b + 1), 0, 2, 2});
  }
  s.taps = {"pool3", "pool4", "pool5"};
  return s;
}

NetworkSpec spec_by_name(const std::string& preset, int input_channels) {
  if (preset == "mini-vgg") return mini_vgg_spec(input_channels);
  if (preset == "mini-alex") return mini_alex_spec(input_channels);
  if (preset == "vgg16-shaped") return vgg16_shaped_spec(input_channels);
  throw std::invalid_argument("unknown network preset: " + preset);
}

// ---------------------------------------------------------------------------
// parameters

template <typename T>
std::vector<std::string> Network<T>::parameter_names() const {
  std::vector<std::string> out;
  for (const auto& l : spec.layers)
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kAffine) {
      out.push_back(l.name + ".w");
      out.push_back(l.name + ".b");
    }
  return out;
}

template <typename T>
Tensor<T>& Network<T>::param(const std::string& name) {
  auto it = params.find(name);
  check(it != params.end(), "network: unknown parameter " + name);
  return it->second;
}

template <typename T>
const Tensor<T>& Network<T>::param(const std::string& name) const {
  auto it = params.find(name);
  check(it != params.end(), "network: unknown parameter " + name);
  return it->second;
}

template <typename T>
Network<T> build_network(const NetworkSpec& spec, Rng& rng) {
  validate_spec(spec);
  Network<T> net;
  net.spec = spec;
  int channels = spec.input_channels;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kAffine) {
      const int k = l.kind == LayerKind::kConv ? l.kernel : 1;
      const int64_t fan_in = static_cast<int64_t>(channels) * k * k;
      Tensor<T> w = xavier_init<T>({l.out_channels, channels, k, k}, fan_in, rng);
      Tensor<T> b({l.out_channels}, T(0));
      w.set_requires_grad(true);
      b.set_requires_grad(true);
      net.params[l.name + ".w"] = w;
      net.params[l.name + ".b"] = b;
      channels = l.out_channels;
    } else if (l.kind == LayerKind::kBatchNorm) {
      net.bn_stats[l.name] = RunningStats<T>{};
    }
  }
  return net;
}

// ---------------------------------------------------------------------------
// forward

template <typename T>
const Tensor<T>* TrunkActivations<T>::by_name(const std::string& name) const {
  for (const auto& [n, t] : named)
    if (n == name) return &t;
  return nullptr;
}

template <typename T>
TrunkActivations<T> forward(Network<T>& net, Tape<T>& tape, const Tensor<T>& input,
                            BnMode mode) {
  check(input.rank() == 4, "forward: input must be [N,C,H,W]");
  check(input.dim(1) == net.spec.input_channels,
        "forward: input channel count does not match the spec");

  TrunkActivations<T> acts;
  Tensor<T> cur = input;
  Tensor<T> pending_bias;  // conv bias deferred until after its batchnorm
  Tensor<T> prev_bias;     // bias of the layer that produced `cur` (kFill source)

  const auto& layers = net.spec.layers;
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    switch (l.kind) {
      case LayerKind::kConv:
      case LayerKind::kAffine: {
        Tensor<T>& w = net.param(l.name + ".w");
        Tensor<T>& b = net.param(l.name + ".b");
        const bool next_bn =
            i + 1 < layers.size() && layers[i + 1].kind == LayerKind::kBatchNorm;
        const int stride = l.kind == LayerKind::kConv ? l.stride : 1;
        const int pad = l.kind == LayerKind::kConv ? l.pad : 0;
        PadMode pm = l.pad_mode;
        Tensor<T> fill;
        if (pm == PadMode::kFill) {
          if (prev_bias.defined())
            fill = prev_bias;
          else
            pm = PadMode::kZero;  // first layer: nothing to estimate from
        }
        cur = conv2d(tape, cur, w, next_bn ? Tensor<T>{} : b, stride, pad, pm, fill);
        if (next_bn)
          pending_bias = b;
        else
          prev_bias = b;
        break;
      }
      case LayerKind::kBatchNorm: {
        cur = batchnorm2d(tape, cur, mode, net.bn_stats.at(l.name));
        if (pending_bias.defined()) {
          cur = add_channel_bias(tape, cur, pending_bias);
          prev_bias = pending_bias;
          pending_bias = {};
        }
        break;
      }
      case LayerKind::kRelu:
        cur = relu(tape, cur);
        break;
      case LayerKind::kPool:
        cur = maxpool2d(tape, cur, l.kernel, l.stride);
        break;
    }
    acts.named.emplace_back(l.name, cur);
  }
  acts.top = cur;
  for (const auto& t : net.spec.taps) {
    const Tensor<T>* a = acts.by_name(t);
    check(a != nullptr, "forward: tap not found: " + t);
    acts.taps.push_back(*a);
  }
  return acts;
}

// ---------------------------------------------------------------------------
// hypercolumn

template <typename T>
Tensor<T> hypercolumn_extract(Tape<T>& tape, const std::vector<Tensor<T>>& taps,
                              const std::vector<int>& strides,
                              const PixelSampleSet& locations) {
  check(!taps.empty() && taps.size() == strides.size(),
        "hypercolumn_extract: taps and strides disagree");
  check(!locations.empty(), "hypercolumn_extract: no locations");
  const int64_t K = static_cast<int64_t>(locations.size());
  int64_t D = 0;
  for (const auto& t : taps) {
    check(t.rank() == 4, "hypercolumn_extract: taps must be [N,C,H,W]");
    D += t.dim(1);
  }

  // Precompute per-location, per-tap corner indices and weights.
  struct Corner {
    int64_t y0, x0, y1, x1;
    T w00, w01, w10, w11;
  };
  auto corners = std::make_shared<std::vector<Corner>>(K * taps.size());
  for (int64_t k = 0; k < K; ++k) {
    const auto& loc = locations[k];
    for (size_t ti = 0; ti < taps.size(); ++ti) {
      const int64_t H = taps[ti].dim(2), W = taps[ti].dim(3);
      check(loc.image_index >= 0 && loc.image_index < taps[ti].dim(0),
            "hypercolumn_extract: image index out of range");
      const double s = strides[ti];
      double fy = (loc.y + 0.5) / s - 0.5;
      double fx = (loc.x + 0.5) / s - 0.5;
      fy = std::min(std::max(fy, 0.0), static_cast<double>(H - 1));
      fx = std::min(std::max(fx, 0.0), static_cast<double>(W - 1));
      int64_t y0 = static_cast<int64_t>(std::floor(fy));
      int64_t x0 = static_cast<int64_t>(std::floor(fx));
      if (y0 > H - 2) y0 = std::max<int64_t>(H - 2, 0);
      if (x0 > W - 2) x0 = std::max<int64_t>(W - 2, 0);
      const int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
      const T wy = static_cast<T>(fy - y0), wx = static_cast<T>(fx - x0);
      (*corners)[k * taps.size() + ti] = {y0, x0, y1, x1,
                                          (T(1) - wy) * (T(1) - wx),
                                          (T(1) - wy) * wx,
                                          wy * (T(1) - wx),
                                          wy * wx};
    }
  }

  Tensor<T> out({K, D});
  T* o = out.data();
  bool any_grad = false;
  for (int64_t k = 0; k < K; ++k) {
    int64_t col = 0;
    for (size_t ti = 0; ti < taps.size(); ++ti) {
      const auto& t = taps[ti];
      any_grad = any_grad || t.requires_grad();
      const int64_t C = t.dim(1), H = t.dim(2), W = t.dim(3);
      const Corner& cr = (*corners)[k * taps.size() + ti];
      const T* base = t.data() + static_cast<int64_t>(locations[k].image_index) * C * H * W;
      for (int64_t c = 0; c < C; ++c) {
        const T* p = base + c * H * W;
        o[k * D + col + c] = cr.w00 * p[cr.y0 * W + cr.x0] + cr.w01 * p[cr.y0 * W + cr.x1] +
                             cr.w10 * p[cr.y1 * W + cr.x0] + cr.w11 * p[cr.y1 * W + cr.x1];
      }
      col += C;
    }
  }

  if (tape.recording() && any_grad) {
    Tensor<T> out_ref = out;
    std::vector<Tensor<T>> tap_refs = taps;
    PixelSampleSet locs = locations;
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      for (int64_t k = 0; k < K; ++k) {
        int64_t col = 0;
        for (size_t ti = 0; ti < tap_refs.size(); ++ti) {
          auto& t = tap_refs[ti];
          const int64_t C = t.dim(1), H = t.dim(2), W = t.dim(3);
          if (!t.requires_grad()) {
            col += C;
            continue;
          }
          const Corner& cr = (*corners)[k * tap_refs.size() + ti];
          T* base = t.grad() + static_cast<int64_t>(locs[k].image_index) * C * H * W;
          for (int64_t c = 0; c < C; ++c) {
            T* p = base + c * H * W;
            const T g = dy[k * D + col + c];
            p[cr.y0 * W + cr.x0] += cr.w00 * g;
            p[cr.y0 * W + cr.x1] += cr.w01 * g;
            p[cr.y1 * W + cr.x0] += cr.w10 * g;
            p[cr.y1 * W + cr.x1] += cr.w11 * g;
          }
          col += C;
        }
      }
    });
    out.set_requires_grad(true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// head

template <typename T>
std::vector<std::string> Head<T>::parameter_names() const {
  std::vector<std::string> out;
  if (hidden > 0) out.insert(out.end(), {"head.fc1.w", "head.fc1.b"});
  out.insert(out.end(), {"head.fc2.w", "head.fc2.b"});
  return out;
}

template <typename T>
Tensor<T>& Head<T>::param(const std::string& name) {
  auto it = params.find(name);
  check(it != params.end(), "head: unknown parameter " + name);
  return it->second;
}

template <typename T>
Head<T> build_head(int in_dim, int hidden, int out_dim, Rng& rng) {
  check(in_dim >= 1 && out_dim >= 1 && hidden >= 0, "build_head: bad dimensions");
  Head<T> h;
  h.in_dim = in_dim;
  h.hidden = hidden;
  h.out_dim = out_dim;
  const int mid = hidden > 0 ? hidden : in_dim;
  if (hidden > 0) {
    Tensor<T> w1 = xavier_init<T>({in_dim, hidden}, in_dim, rng);
    Tensor<T> b1({hidden}, T(0));
    w1.set_requires_grad(true);
    b1.set_requires_grad(true);
    h.params["head.fc1.w"] = w1;
    h.params["head.fc1.b"] = b1;
  }
  Tensor<T> w2 = xavier_init<T>({mid, out_dim}, mid, rng);
  Tensor<T> b2({out_dim}, T(0));
  w2.set_requires_grad(true);
  b2.set_requires_grad(true);
  h.params["head.fc2.w"] = w2;
  h.params["head.fc2.b"] = b2;
  return h;
}

template <typename T>
Tensor<T> head_forward(Head<T>& head, Tape<T>& tape, const Tensor<T>& x) {
  check(x.rank() == 2 && x.dim(1) == head.in_dim, "head_forward: bad input shape");
  Tensor<T> cur = x;
  if (head.hidden > 0) {
    cur = affine(tape, cur, head.param("head.fc1.w"), head.param("head.fc1.b"));
    cur = relu(tape, cur);
  }
  return affine(tape, cur, head.param("head.fc2.w"), head.param("head.fc2.b"));
}

// ---------------------------------------------------------------------------

#define SELFCOLOR_INSTANTIATE_MODEL(T)                                                  \
  template struct Network<T>;                                                           \
  template struct TrunkActivations<T>;                                                  \
  template struct Head<T>;                                                              \
  template Network<T> build_network<T>(const NetworkSpec&, Rng&);                       \
  template TrunkActivations<T> forward<T>(Network<T>&, Tape<T>&, const Tensor<T>&,     \
                                          BnMode);                                      \
  template Tensor<T> hypercolumn_extract<T>(Tape<T>&, const std::vector<Tensor<T>>&,   \
                                            const std::vector<int>&,                   \
                                            const PixelSampleSet&);                    \
  template Head<T> build_head<T>(int, int, int, Rng&);                                  \
  template Tensor<T> head_forward<T>(Head<T>&, Tape<T>&, const Tensor<T>&);

SELFCOLOR_INSTANTIATE_MODEL(float)
SELFCOLOR_INSTANTIATE_MODEL(double)

#undef SELFCOLOR_INSTANTIATE_MODEL

}  // namespace selfcolor
