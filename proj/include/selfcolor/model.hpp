// Declarative network construction, sparse hypercolumn extraction,
// field-of-view extension blocks, and receptive-field arithmetic.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "selfcolor/targets.hpp"
#include "selfcolor/tensor.hpp"

#include "json.hpp"

namespace selfcolor {

enum class LayerKind { kConv, kPool, kRelu, kBatchNorm, kAffine };

// An affine layer in a spatial trunk is lowered to a 1x1 convolution.
struct LayerDesc {
  LayerKind kind = LayerKind::kRelu;
  std::string name;
  int out_channels = 0;  // conv / affine
  int kernel = 0;        // conv / pool
  int stride = 1;
  int pad = 0;
  PadMode pad_mode = PadMode::kZero;  // kFill pads with the previous layer's bias
};

struct NetworkSpec {
  int input_channels = 1;
  std::vector<LayerDesc> layers;
  std::vector<std::string> taps;  // hypercolumn source layer names

  const LayerDesc* find(const std::string& name) const;
};

void validate_spec(const NetworkSpec& spec);

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);
uint64_t spec_hash(const NetworkSpec& spec);  // FNV-1a over canonical JSON

// Channel count and cumulative stride of each layer's output.
struct LayerInfo {
  int channels = 0;
  int stride = 1;
};
std::map<std::string, LayerInfo> layer_info(const NetworkSpec& spec);
int tap_channel_sum(const NetworkSpec& spec);
std::vector<int> tap_strides(const NetworkSpec& spec);

// rf <- rf + (k-1)*stride_product; stride_product <- stride_product*stride,
// accumulated through the named layer (inclusive).
struct FieldOfView {
  int rf_size = 1;
  int cumulative_stride = 1;
};
FieldOfView compute_receptive_field(const NetworkSpec& spec, const std::string& layer);

// Appends n_blocks of [2x2/2 maxpool, 3x3 conv(width), batchnorm, relu] at the
// top; each new relu output becomes an additional hypercolumn tap.
NetworkSpec add_fov_blocks(const NetworkSpec& spec, int n_blocks, int width);

// Desk-scale presets.
NetworkSpec mini_vgg_spec(int input_channels = 1);
NetworkSpec mini_alex_spec(int input_channels = 1);
NetworkSpec vgg16_shaped_spec(int input_channels = 3);
NetworkSpec spec_by_name(const std::string& preset, int input_channels);

// ---------------------------------------------------------------------------

template <typename T>
struct Network {
  NetworkSpec spec;
  std::map<std::string, Tensor<T>> params;          // "<layer>.w", "<layer>.b"
  std::map<std::string, RunningStats<T>> bn_stats;  // keyed by batchnorm layer name

  std::vector<std::string> parameter_names() const;  // layer order
  Tensor<T>& param(const std::string& name);
  const Tensor<T>& param(const std::string& name) const;
};

template <typename T>
Network<T> build_network(const NetworkSpec& spec, Rng& rng);

template <typename T>
struct TrunkActivations {
  Tensor<T> top;
  std::vector<Tensor<T>> taps;  // aligned with spec.taps
  std::vector<std::pair<std::string, Tensor<T>>> named;  // every layer output
  const Tensor<T>* by_name(const std::string& name) const;
};

// Runs the trunk on a [N,C,H,W] batch. Train mode updates batch-norm running
// statistics. Convs followed by a batchnorm add their bias after it, so the
// bias is the expected pre-relu activation (which kFill padding reads).
template <typename T>
TrunkActivations<T> forward(Network<T>& net, Tape<T>& tape, const Tensor<T>& input,
                            BnMode mode);

// Sparse hypercolumns: for each location (n, y, x) in input coordinates, map
// into each tap's frame as (y + 0.5)/stride - 0.5 (clamped), bilinear-sample
// and concatenate in tap order. Output is [K, sum of tap channels].
template <typename T>
Tensor<T> hypercolumn_extract(Tape<T>& tape, const std::vector<Tensor<T>>& taps,
                              const std::vector<int>& strides,
                              const PixelSampleSet& locations);

// ---------------------------------------------------------------------------
// Per-pixel affine stack used as the pretraining / downstream head.
// hidden == 0 collapses to a single affine layer.

template <typename T>
struct Head {
  int in_dim = 0, hidden = 0, out_dim = 0;
  std::map<std::string, Tensor<T>> params;

  bool empty() const { return params.empty(); }
  std::vector<std::string> parameter_names() const;
  Tensor<T>& param(const std::string& name);
};

template <typename T>
Head<T> build_head(int in_dim, int hidden, int out_dim, Rng& rng);

template <typename T>
Tensor<T> head_forward(Head<T>& head, Tape<T>& tape, const Tensor<T>& x);

}  // namespace selfcolor
