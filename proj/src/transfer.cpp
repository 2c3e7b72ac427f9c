#include "selfcolor/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "selfcolor/colorspace.hpp"

namespace selfcolor {

static constexpr uint64_t kStreamAdapt = 0x2000000000000000ULL;
static constexpr uint64_t kStreamSplit = 0x3000000000000000ULL;
static constexpr uint64_t kStreamPerm = 0x8000000000000000ULL;

// ---------------------------------------------------------------------------
// checkpoint adaptation

template <typename T>
void absorb_batchnorm(Network<T>& net, T eps) {
  std::vector<LayerDesc> kept;
  for (size_t i = 0; i < net.spec.layers.size(); ++i) {
    const auto& l = net.spec.layers[i];
    if (l.kind != LayerKind::kBatchNorm) {
      kept.push_back(l);
      continue;
    }
    check(i > 0 && (net.spec.layers[i - 1].kind == LayerKind::kConv ||
                    net.spec.layers[i - 1].kind == LayerKind::kAffine),
          "absorb_batchnorm: " + l.name + " does not follow a conv/affine layer");
    const auto& stats = net.bn_stats.at(l.name);
    check(!stats.mean.empty(), "absorb_batchnorm: missing running statistics for " + l.name);
    const std::string prev = net.spec.layers[i - 1].name;
    Tensor<T>& w = net.param(prev + ".w");
    Tensor<T>& b = net.param(prev + ".b");
    const int64_t F = w.dim(0), per = w.numel() / F;
    for (int64_t f = 0; f < F; ++f) {
      const double inv_sigma =
          1.0 / std::sqrt(static_cast<double>(stats.var[f]) + static_cast<double>(eps));
      for (int64_t j = 0; j < per; ++j)
        w.data()[f * per + j] = static_cast<T>(w.data()[f * per + j] * inv_sigma);
      b.data()[f] = static_cast<T>(b.data()[f] - stats.mean[f] * inv_sigma);
    }
    net.bn_stats.erase(l.name);
  }
  net.spec.layers = std::move(kept);
  validate_spec(net.spec);
}

template <typename T>
void rebalance_unit_variance(Network<T>& net, const Tensor<T>& probe_batch) {
  for (const auto& l : net.spec.layers)
    check(l.kind != LayerKind::kBatchNorm,
          "rebalance_unit_variance: absorb batch normalization first");
  check(probe_batch.rank() == 4 && probe_batch.dim(0) >= 64,
        "rebalance_unit_variance: probe batch must hold at least 64 samples");

  const auto& layers = net.spec.layers;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind != LayerKind::kConv && layers[i].kind != LayerKind::kAffine)
      continue;
    // Activation = the relu right after this layer, if any.
    std::string act = layers[i].name;
    if (i + 1 < layers.size() && layers[i + 1].kind == LayerKind::kRelu)
      act = layers[i + 1].name;

    Tape<T> tape(false);
    auto acts = forward(net, tape, probe_batch, BnMode::kInfer);
    const Tensor<T>* out = acts.by_name(act);
    double m = 0;
    for (T v : out->values()) m += v;
    m /= out->numel();
    double var = 0;
    for (T v : out->values()) var += (v - m) * (v - m);
    var /= out->numel();
    const double s = std::sqrt(var);
    check(s > 1e-12, "rebalance_unit_variance: zero-variance layer " + layers[i].name);

    Tensor<T>& w = net.param(layers[i].name + ".w");
    Tensor<T>& b = net.param(layers[i].name + ".b");
    for (int64_t j = 0; j < w.numel(); ++j) w.data()[j] = static_cast<T>(w.data()[j] / s);
    for (int64_t j = 0; j < b.numel(); ++j) b.data()[j] = static_cast<T>(b.data()[j] / s);
  }
}

template <typename T>
void gray_to_rgb_filters(Network<T>& net) {
  check(net.spec.input_channels == 1, "gray_to_rgb_filters: network already takes color");
  for (auto& l : net.spec.layers) {
    if (l.kind != LayerKind::kConv && l.kind != LayerKind::kAffine) continue;
    Tensor<T>& w = net.param(l.name + ".w");
    const int64_t F = w.dim(0), k1 = w.dim(2), k2 = w.dim(3);
    Tensor<T> w3({F, 3, k1, k2});
    for (int64_t f = 0; f < F; ++f)
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t j = 0; j < k1 * k2; ++j)
          w3.data()[(f * 3 + c) * k1 * k2 + j] = w.data()[f * k1 * k2 + j] / T(3);
    w3.set_requires_grad(true);
    net.params[l.name + ".w"] = w3;
    break;  // only the input-facing layer
  }
  net.spec.input_channels = 3;
}

template void absorb_batchnorm<float>(Network<float>&, float);
template void absorb_batchnorm<double>(Network<double>&, double);
template void rebalance_unit_variance<float>(Network<float>&, const Tensor<float>&);
template void rebalance_unit_variance<double>(Network<double>&, const Tensor<double>&);
template void gray_to_rgb_filters<float>(Network<float>&);
template void gray_to_rgb_filters<double>(Network<double>&);

// ---------------------------------------------------------------------------
// early stopping

EarlyStopMachine::EarlyStopMachine(int patience, double tolerance, double baseline)
    : patience_(patience), tolerance_(tolerance), best_(baseline) {
  check(patience >= 1, "early stop: patience must be >= 1");
  check(tolerance >= 0, "early stop: tolerance must be >= 0");
}

EarlyStopMachine::Action EarlyStopMachine::observe(double score) {
  check(!done(), "early stop: machine already concluded");
  if (score > best_ + tolerance_) {
    best_ = score;
    streak_ = 0;
    return Action::kNone;
  }
  if (++streak_ < patience_) return Action::kNone;
  streak_ = 0;
  ++phase_;
  return phase_ <= 2 ? Action::kDrop : Action::kStop;
}

// ---------------------------------------------------------------------------
// metrics

double topk_accuracy(const std::vector<std::vector<double>>& scores,
                     const std::vector<int>& labels, int k) {
  check(!scores.empty() && scores.size() == labels.size(), "topk_accuracy: empty or mismatched");
  check(k >= 1 && k <= static_cast<int>(scores[0].size()),
        "topk_accuracy: k must be in [1, classes]");
  int64_t hits = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const double s_true = scores[i][labels[i]];
    int above = 0;
    for (double s : scores[i])
      if (s > s_true) ++above;
    if (above < k) ++hits;
  }
  return static_cast<double>(hits) / scores.size();
}

double mean_iu(const std::vector<std::vector<uint8_t>>& predictions,
               const std::vector<std::vector<uint8_t>>& ground_truth, int num_classes) {
  check(predictions.size() == ground_truth.size() && !predictions.empty(),
        "mean_iu: empty or mismatched sets");
  std::vector<int64_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  int64_t labeled = 0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    check(predictions[i].size() == ground_truth[i].size(), "mean_iu: size mismatch");
    for (size_t j = 0; j < predictions[i].size(); ++j) {
      const int p = predictions[i][j], g = ground_truth[i][j];
      check(p < num_classes && g < num_classes, "mean_iu: label out of range");
      ++labeled;
      if (p == g)
        ++tp[g];
      else {
        ++fp[p];
        ++fn[g];
      }
    }
  }
  check(labeled > 0, "mean_iu: no labeled pixels");
  double total = 0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (tp[c] + fn[c] == 0) continue;  // class absent from ground truth
    ++present;
    total += static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c] + fn[c]);
  }
  check(present > 0, "mean_iu: no classes present in ground truth");
  return total / present;
}

// ---------------------------------------------------------------------------
// evaluation

Tensor<float> eval_input(const Sample& s, int crop_size, bool color_input) {
  check(s.rgb.height >= crop_size && s.rgb.width >= crop_size,
        "eval_input: image smaller than crop");
  const int oy = (s.rgb.height - crop_size) / 2, ox = (s.rgb.width - crop_size) / 2;
  Image c = crop(s.rgb, oy, ox, crop_size, crop_size);
  if (!color_input) c = rgb_to_gray(c);
  return image_to_tensor<float>(c);
}

// Stacks per-sample [C,H,W] tensors into one batch.
static Tensor<float> stack(const std::vector<Tensor<float>>& items) {
  const auto& s0 = items[0].shape();
  Tensor<float> out({static_cast<int64_t>(items.size()), s0[0], s0[1], s0[2]});
  for (size_t i = 0; i < items.size(); ++i)
    std::copy(items[i].data(), items[i].data() + items[i].numel(),
              out.data() + static_cast<int64_t>(i) * items[i].numel());
  return out;
}

static std::vector<std::vector<double>> classifier_scores(
    DownstreamModel<float>& model, const std::vector<Sample>& samples) {
  std::vector<std::vector<double>> scores;
  const int64_t batch = 32;
  for (size_t start = 0; start < samples.size(); start += batch) {
    const size_t end = std::min(samples.size(), start + batch);
    std::vector<Tensor<float>> inputs;
    for (size_t i = start; i < end; ++i)
      inputs.push_back(eval_input(samples[i], model.crop, model.color_input));
    Tape<float> tape(false);
    auto acts = forward(model.net, tape, stack(inputs), BnMode::kInfer);
    auto pooled = global_avg_pool(tape, acts.top);
    auto logits = head_forward(model.head, tape, pooled);
    for (int64_t n = 0; n < logits.dim(0); ++n)
      scores.emplace_back(logits.data() + n * logits.dim(1),
                          logits.data() + (n + 1) * logits.dim(1));
  }
  return scores;
}

double evaluate_classification(DownstreamModel<float>& model,
                               const std::vector<Sample>& samples, int topk) {
  check(!samples.empty(), "evaluate_classification: empty dataset");
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  return topk_accuracy(classifier_scores(model, samples), labels, topk);
}

// Dense per-pixel prediction over the center crop.
static std::vector<uint8_t> predict_mask(DownstreamModel<float>& model, const Sample& s,
                                         const std::vector<int>& strides) {
  Tensor<float> input = eval_input(s, model.crop, model.color_input);
  Tensor<float> batch({1, input.dim(0), model.crop, model.crop});
  std::copy(input.data(), input.data() + input.numel(), batch.data());
  Tape<float> tape(false);
  auto acts = forward(model.net, tape, batch, BnMode::kInfer);
  PixelSampleSet all;
  for (int y = 0; y < model.crop; ++y)
    for (int x = 0; x < model.crop; ++x) all.push_back({0, y, x});
  auto column = hypercolumn_extract(tape, acts.taps, strides, all);
  auto logits = head_forward(model.head, tape, column);
  std::vector<uint8_t> pred(all.size());
  const int64_t C = logits.dim(1);
  for (int64_t i = 0; i < logits.dim(0); ++i) {
    int best = 0;
    for (int64_t c = 1; c < C; ++c)
      if (logits.data()[i * C + c] > logits.data()[i * C + best]) best = static_cast<int>(c);
    pred[i] = static_cast<uint8_t>(best);
  }
  return pred;
}

double evaluate_segmentation(DownstreamModel<float>& model,
                             const std::vector<Sample>& samples) {
  check(!samples.empty(), "evaluate_segmentation: empty dataset");
  const auto strides = tap_strides(model.net.spec);
  std::vector<std::vector<uint8_t>> preds, gts;
  for (const auto& s : samples) {
    check(!s.mask.empty(), "evaluate_segmentation: sample without per-pixel labels");
    preds.push_back(predict_mask(model, s, strides));
    const int oy = (s.rgb.height - model.crop) / 2, ox = (s.rgb.width - model.crop) / 2;
    std::vector<uint8_t> gt(static_cast<size_t>(model.crop) * model.crop);
    for (int y = 0; y < model.crop; ++y)
      for (int x = 0; x < model.crop; ++x)
        gt[static_cast<size_t>(y) * model.crop + x] =
            s.mask[static_cast<size_t>(oy + y) * s.rgb.width + ox + x];
    gts.push_back(std::move(gt));
  }
  return mean_iu(preds, gts, model.num_outputs);
}

// ---------------------------------------------------------------------------
// downstream training

namespace {

// Mean cross-entropy of logits [N,C] against integer labels.
Tensor<float> cross_entropy_loss(Tape<float>& tape, const Tensor<float>& logits,
                                 const std::vector<int>& labels) {
  const int64_t N = logits.dim(0), C = logits.dim(1);
  check(static_cast<int64_t>(labels.size()) == N, "cross_entropy: label count mismatch");
  auto probs = std::make_shared<std::vector<double>>(N * C);
  double total = 0;
  for (int64_t n = 0; n < N; ++n) {
    const float* z = logits.data() + n * C;
    double mx = z[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(z[c]));
    double s = 0;
    for (int64_t c = 0; c < C; ++c) {
      (*probs)[n * C + c] = std::exp(z[c] - mx);
      s += (*probs)[n * C + c];
    }
    for (int64_t c = 0; c < C; ++c) (*probs)[n * C + c] /= s;
    total -= std::log(std::max((*probs)[n * C + labels[n]], 1e-12));
  }
  Tensor<float> out = Tensor<float>::scalar(static_cast<float>(total / N));
  check_finite(out, "cross_entropy_loss");

  if (tape.recording() && logits.requires_grad()) {
    Tensor<float> out_ref = out, z_ref = logits;
    auto lbl = std::make_shared<std::vector<int>>(labels);
    tape.record([=]() mutable {
      const double g0 = static_cast<double>(out_ref.grad()[0]) / N;
      float* dz = z_ref.grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
          dz[n * C + c] += static_cast<float>(
              g0 * ((*probs)[n * C + c] - ((*lbl)[n] == c ? 1.0 : 0.0)));
    });
    out.set_requires_grad(true);
  }
  return out;
}

struct Trainable {
  std::vector<Tensor<float>> params;
  std::vector<std::string> names;
};

Trainable trainable_params(DownstreamModel<float>& model, const std::string& freeze_until) {
  Trainable t;
  bool training = freeze_until == "NONE";
  bool boundary_seen = training || freeze_until == "ALL";
  for (const auto& l : model.net.spec.layers) {
    if (l.name == freeze_until) {
      training = true;
      boundary_seen = true;
    }
    if (l.kind != LayerKind::kConv && l.kind != LayerKind::kAffine) continue;
    for (const char* suffix : {".w", ".b"}) {
      Tensor<float>& p = model.net.param(l.name + suffix);
      p.set_requires_grad(training);
      if (training) {
        t.params.push_back(p);
        t.names.push_back(l.name + suffix);
      }
    }
  }
  check(boundary_seen, "transfer: freeze boundary names no layer: " + freeze_until);
  for (const auto& name : model.head.parameter_names()) {
    t.params.push_back(model.head.param(name));
    t.names.push_back(name);
  }
  return t;
}

}  // namespace

static DownstreamModel<float> build_downstream_model(const Dataset& ds,
                                                     const Checkpoint<float>* init,
                                                     const NetworkSpec& random_spec,
                                                     const TransferConfig& cfg,
                                                     const std::vector<Sample>& probe_pool) {
  DownstreamModel<float> model;
  model.task = cfg.task;
  model.crop = cfg.crop;
  model.color_input = cfg.plan.gray_to_rgb_filters;

  Rng adapt_rng = Rng(cfg.seed).child(kStreamAdapt);
  if (init) {
    model.net.spec = init->net.spec;
    for (const auto& [name, t] : init->net.params) {
      model.net.params[name] = t.clone();
      model.net.params[name].set_requires_grad(true);
    }
    model.net.bn_stats = init->net.bn_stats;
    if (cfg.plan.gray_to_rgb_filters) gray_to_rgb_filters(model.net);
  } else {
    NetworkSpec spec = random_spec;
    spec.input_channels = cfg.plan.gray_to_rgb_filters ? 3 : 1;
    model.net = build_network<float>(spec, adapt_rng);
  }
  if (cfg.plan.fov_blocks > 0) {
    NetworkSpec extended =
        add_fov_blocks(model.net.spec, cfg.plan.fov_blocks, cfg.plan.fov_width);
    Network<float> fresh = build_network<float>(extended, adapt_rng);
    for (auto& [name, t] : fresh.params)
      if (!model.net.params.count(name)) model.net.params[name] = t;
    for (auto& [name, s] : fresh.bn_stats)
      if (!model.net.bn_stats.count(name)) model.net.bn_stats[name] = s;
    model.net.spec = extended;
  }
  if (cfg.plan.absorb_batchnorm) {
    // Downstream training runs without batch normalization. Layers that were
    // never trained (random init, fresh FoV blocks) absorb identity
    // statistics, leaving their weights effectively untouched.
    for (const auto& l : model.net.spec.layers) {
      if (l.kind != LayerKind::kBatchNorm) continue;
      auto& stats = model.net.bn_stats[l.name];
      if (stats.mean.empty()) {
        const int c = layer_info(model.net.spec).at(l.name).channels;
        stats.mean.assign(c, 0.f);
        stats.var.assign(c, 1.f);
      }
    }
    absorb_batchnorm(model.net);
  }
  if (cfg.plan.rebalance_unit_variance) {
    const int n_probe = std::min<int>(64, static_cast<int>(probe_pool.size()));
    std::vector<Tensor<float>> inputs;
    for (int i = 0; i < n_probe; ++i)
      inputs.push_back(eval_input(probe_pool[i], cfg.crop, model.color_input));
    Tensor<float> probe({static_cast<int64_t>(inputs.size()), inputs[0].dim(0),
                         cfg.crop, cfg.crop});
    for (size_t i = 0; i < inputs.size(); ++i)
      std::copy(inputs[i].data(), inputs[i].data() + inputs[i].numel(),
                probe.data() + static_cast<int64_t>(i) * inputs[i].numel());
    rebalance_unit_variance(model.net, probe);
  }

  const auto info = layer_info(model.net.spec);
  if (cfg.task == "classification") {
    model.num_outputs = ds.num_classes();
    const int top_channels = info.at(model.net.spec.layers.back().name).channels;
    model.head = build_head<float>(top_channels, cfg.plan.head_hidden, model.num_outputs,
                                   adapt_rng);
  } else if (cfg.task == "segmentation") {
    model.num_outputs = ds.num_classes() + 1;  // masks carry 0 = background
    model.head = build_head<float>(tap_channel_sum(model.net.spec),
                                   cfg.plan.head_hidden > 0 ? cfg.plan.head_hidden : 64,
                                   model.num_outputs, adapt_rng);
  } else {
    throw std::invalid_argument("transfer: unknown task " + cfg.task);
  }
  return model;
}

namespace {

struct TrainBatch {
  Tensor<float> input;
  std::vector<int> labels;       // classification
  PixelSampleSet locations;      // segmentation
  std::vector<int> pixel_labels; // segmentation
};

TrainBatch build_train_batch(const std::vector<Sample>& samples,
                             const std::vector<int64_t>& idx, const TransferConfig& cfg,
                             bool color_input, const Rng& base, int64_t epoch_index,
                             int64_t pos0, int64_t n_total) {
  const int B = static_cast<int>(idx.size());
  const int channels = color_input ? 3 : 1;
  TrainBatch batch;
  batch.input = Tensor<float>({B, channels, cfg.crop, cfg.crop});
  for (int i = 0; i < B; ++i) {
    const Sample& s = samples[idx[i]];
    Rng rng = base.child(static_cast<uint64_t>(epoch_index * n_total + pos0 + i));
    Image img = s.rgb;
    std::vector<uint8_t> mask = s.mask;
    if (cfg.mirror && rng.coin(0.5)) {
      img = mirror_horizontal(img);
      if (!mask.empty()) {
        std::vector<uint8_t> m2(mask.size());
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x)
            m2[static_cast<size_t>(y) * img.width + x] =
                mask[static_cast<size_t>(y) * img.width + (img.width - 1 - x)];
        mask.swap(m2);
      }
    }
    check(img.height >= cfg.crop && img.width >= cfg.crop, "transfer: image smaller than crop");
    const int oy = static_cast<int>(rng.uniform_int(img.height - cfg.crop + 1));
    const int ox = static_cast<int>(rng.uniform_int(img.width - cfg.crop + 1));
    Image c = crop(img, oy, ox, cfg.crop, cfg.crop);
    if (!color_input) c = rgb_to_gray(c);
    std::copy(c.data.begin(), c.data.end(),
              batch.input.data() + static_cast<int64_t>(i) * channels * cfg.crop * cfg.crop);

    if (cfg.task == "classification") {
      batch.labels.push_back(s.label);
    } else {
      check(!mask.empty(), "transfer: segmentation needs per-pixel labels");
      for (int k = 0; k < cfg.pixels_per_image; ++k) {
        const int y = static_cast<int>(rng.uniform_int(cfg.crop));
        const int x = static_cast<int>(rng.uniform_int(cfg.crop));
        batch.locations.push_back({i, y, x});
        batch.pixel_labels.push_back(
            mask[static_cast<size_t>(oy + y) * img.width + ox + x]);
      }
    }
  }
  return batch;
}

double validation_score(DownstreamModel<float>& model, const std::vector<Sample>& samples,
                        const std::vector<int64_t>& idx) {
  std::vector<Sample> subset;
  for (int64_t i : idx) subset.push_back(samples[i]);
  return model.task == "classification" ? evaluate_classification(model, subset, 1)
                                        : evaluate_segmentation(model, subset);
}

}  // namespace

TransferResult train_downstream(const Dataset& ds, const std::string& train_split,
                                const std::string& eval_split,
                                const Checkpoint<float>* init,
                                const NetworkSpec& random_spec,
                                const TransferConfig& cfg) {
  const auto& all_samples = ds.split(train_split);
  check(!all_samples.empty(), "transfer: empty training split");
  check(cfg.stop.val_fraction > 0 && cfg.stop.val_fraction < 1,
        "transfer: val_fraction must be in (0,1)");

  // 90/10 split, deterministic in the seed.
  std::vector<int64_t> order(all_samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = Rng(cfg.seed).child(kStreamSplit);
  split_rng.shuffle(order);
  const int64_t n_val = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(cfg.stop.val_fraction * order.size())));
  check(n_val < static_cast<int64_t>(order.size()), "transfer: split leaves no training data");
  std::vector<int64_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<int64_t> train_idx(order.begin() + n_val, order.end());

  // Phase 1: early-stopped run on the 90%.
  DownstreamModel<float> model =
      build_downstream_model(ds, init, random_spec, cfg, all_samples);
  TransferResult result;

  std::ofstream metrics;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    metrics.open(std::filesystem::path(cfg.out_dir) / "metrics.csv", std::ios::trunc);
    metrics << "step,epoch,lr,loss\n";
  }

  auto run = [&](DownstreamModel<float>& m, const std::vector<int64_t>& tr_idx,
                 const std::vector<int64_t>* v_idx, const std::vector<double>& fixed_drops,
                 double fixed_stop, std::vector<double>* drops_out,
                 std::vector<std::pair<double, double>>* curve_out) -> double {
    Trainable trainable = trainable_params(m, cfg.plan.freeze_until);
    OptimizerState<float> opt;
    opt.momentum = static_cast<float>(cfg.momentum);
    opt.init(trainable.params);

    const int64_t n = static_cast<int64_t>(tr_idx.size());
    const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t eval_interval =
        std::max<int64_t>(1, steps_per_epoch / cfg.stop.evals_per_epoch);
    const double stop_epoch_cap = v_idx ? cfg.stop.max_epochs : fixed_stop;
    const int64_t total_steps =
        static_cast<int64_t>(std::ceil(stop_epoch_cap * steps_per_epoch - 1e-9));
    Rng base(cfg.seed);

    EarlyStopMachine machine(cfg.stop.patience, cfg.stop.tolerance,
                             v_idx ? validation_score(m, all_samples, *v_idx) : 0.0);
    double lr = cfg.base_lr;
    double stopped_at = stop_epoch_cap;
    for (int64_t step = 0; step < total_steps; ++step) {
      const int64_t epoch_index = step / steps_per_epoch;
      const int64_t pos = (step % steps_per_epoch) * cfg.batch_size;
      const double epoch_f = static_cast<double>(step) / steps_per_epoch;
      if (!v_idx) {
        lr = cfg.base_lr;
        for (double d : fixed_drops)
          if (epoch_f >= d) lr *= cfg.stop.drop_factor;
      }

      std::vector<int64_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      Rng perm_rng = base.child(kStreamPerm + static_cast<uint64_t>(epoch_index));
      perm_rng.shuffle(perm);
      std::vector<int64_t> batch_ids;
      for (int64_t i = pos; i < std::min(pos + cfg.batch_size, n); ++i)
        batch_ids.push_back(tr_idx[perm[i]]);

      TrainBatch batch = build_train_batch(all_samples, batch_ids, cfg, m.color_input,
                                           base, epoch_index, pos, n);
      for (auto& p : trainable.params) p.zero_grad();
      Tape<float> tape;
      auto acts = forward(m.net, tape, batch.input, BnMode::kTrain);
      Tensor<float> loss;
      if (cfg.task == "classification") {
        auto pooled = global_avg_pool(tape, acts.top);
        auto logits = head_forward(m.head, tape, pooled);
        loss = cross_entropy_loss(tape, logits, batch.labels);
      } else {
        auto column = hypercolumn_extract(tape, acts.taps, tap_strides(m.net.spec),
                                          batch.locations);
        auto logits = head_forward(m.head, tape, column);
        loss = cross_entropy_loss(tape, logits, batch.pixel_labels);
      }
      tape.backward(loss);
      opt.learning_rate = static_cast<float>(lr);
      sgd_momentum_step(trainable.params, opt);
      if (metrics.is_open()) {
        char line[128];
        std::snprintf(line, sizeof(line), "%lld,%.6f,%.8g,%.8g\n",
                      static_cast<long long>(step), epoch_f, lr,
                      static_cast<double>(loss.item()));
        metrics << line;
      }

      if (v_idx && (step + 1) % eval_interval == 0) {
        const double at_epoch = static_cast<double>(step + 1) / steps_per_epoch;
        const double score = validation_score(m, all_samples, *v_idx);
        if (curve_out) curve_out->emplace_back(at_epoch, score);
        const auto action = machine.observe(score);
        if (action == EarlyStopMachine::Action::kDrop) {
          lr *= cfg.stop.drop_factor;
          if (drops_out) drops_out->push_back(at_epoch);
        } else if (action == EarlyStopMachine::Action::kStop) {
          stopped_at = at_epoch;
          break;
        }
      }
    }
    return stopped_at;
  };

  result.stop_epoch = run(model, train_idx, &val_idx, {}, 0.0, &result.drop_epochs,
                          &result.val_curve);

  if (cfg.stop.retrain_full) {
    // Replay the recorded schedule on 100% of the data from the same
    // adapted initialization (the adaptation stream is seed-derived).
    DownstreamModel<float> full =
        build_downstream_model(ds, init, random_spec, cfg, all_samples);
    run(full, order, nullptr, result.drop_epochs, result.stop_epoch, nullptr, nullptr);
    model = full;
  }

  result.final_metric = cfg.task == "classification"
                            ? evaluate_classification(model, ds.split(eval_split), 1)
                            : evaluate_segmentation(model, ds.split(eval_split));
  result.model = std::move(model);
  return result;
}

}  // namespace selfcolor
