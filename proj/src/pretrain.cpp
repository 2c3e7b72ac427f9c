#include "selfcolor/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "selfcolor/colorspace.hpp"

namespace selfcolor {

// Disjoint child-stream index spaces of the run seed.
static constexpr uint64_t kStreamInit = 0x4000000000000000ULL;
static constexpr uint64_t kStreamPerm = 0x8000000000000000ULL;

void AugmentationPolicy::validate() const {
  check(mirror_prob >= 0 && mirror_prob <= 1, "augment: mirror_prob must be in [0,1]");
  check(scale_min >= 1 && scale_max >= scale_min, "augment: bad scale range");
  check(crop >= 1 && crop <= scale_min, "augment: crop must be <= scale_min");
}

AugmentedPair augment(const Image& rgb, const AugmentationPolicy& policy, Rng& rng) {
  policy.validate();
  check(rgb.channels == 3, "augment: expected rgb input");
  Image img = rgb;
  if (rng.coin(policy.mirror_prob)) img = mirror_horizontal(img);

  const int short_side = std::min(img.height, img.width);
  // Uniform integer short side in [scale_min, scale_max].
  const int target = policy.scale_min +
                     static_cast<int>(rng.uniform_int(policy.scale_max - policy.scale_min + 1));
  const double f = static_cast<double>(target) / short_side;
  const int nh = std::max(policy.crop, static_cast<int>(std::lround(img.height * f)));
  const int nw = std::max(policy.crop, static_cast<int>(std::lround(img.width * f)));
  img = resize_bilinear(img, nh, nw);

  const int oy = static_cast<int>(rng.uniform_int(nh - policy.crop + 1));
  const int ox = static_cast<int>(rng.uniform_int(nw - policy.crop + 1));
  AugmentedPair out;
  out.color = crop(img, oy, ox, policy.crop, policy.crop);
  out.gray = policy.desaturate ? rgb_to_gray(out.color) : Image{};
  return out;
}

void TrainingSchedule::validate() const {
  check(total_epochs >= 0, "schedule: total_epochs must be >= 0");
  check(base_lr > 0, "schedule: base_lr must be positive");
  check(drop_factor > 0 && drop_factor <= 1, "schedule: drop_factor must be in (0,1]");
  for (size_t i = 0; i < drop_epochs.size(); ++i) {
    check(drop_epochs[i] > 0 && drop_epochs[i] < total_epochs,
          "schedule: drop epochs must lie strictly inside (0, total)");
    if (i) check(drop_epochs[i] > drop_epochs[i - 1],
                 "schedule: drop epochs must be strictly increasing");
  }
}

double TrainingSchedule::lr_at_epoch(double epoch) const {
  double lr = base_lr;
  for (double d : drop_epochs)
    if (epoch >= d) lr *= drop_factor;
  return lr;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
std::map<std::string, Tensor<T>*> all_params(Network<T>& net, Head<T>& head) {
  std::map<std::string, Tensor<T>*> out;
  for (const auto& n : net.parameter_names()) out[n] = &net.param(n);
  for (const auto& n : head.parameter_names()) out[n] = &head.param(n);
  return out;
}

struct BatchData {
  Tensor<float> input;  // [B,1,crop,crop]
  PixelSampleSet locations;
  std::vector<HistogramTarget> hist_targets;
  std::vector<std::pair<float, float>> lab_targets;
};

BatchData build_batch(const std::vector<Sample>& samples,
                      const std::vector<int64_t>& indices, const PretrainConfig& cfg,
                      const Rng& base, int64_t epoch_index, int64_t position0,
                      int64_t n_split) {
  const int B = static_cast<int>(indices.size());
  const int crop_size = cfg.augment.crop;
  BatchData batch;
  batch.input = Tensor<float>({B, 1, crop_size, crop_size});
  const bool histogram = cfg.loss == "histogram";

  for (int i = 0; i < B; ++i) {
    // Stream fixed by (seed, epoch, position): order-independent, resumable.
    Rng rng = base.child(static_cast<uint64_t>(epoch_index * n_split + position0 + i));
    AugmentedPair pair = augment(samples[indices[i]].rgb, cfg.augment, rng);
    std::copy(pair.gray.data.begin(), pair.gray.data.end(),
              batch.input.data() + static_cast<int64_t>(i) * crop_size * crop_size);

    auto locs = sample_pixel_locations(crop_size, crop_size, cfg.pixels_per_image, rng, i);
    if (histogram) {
      const Image hc = rgb_to_huechroma(pair.color);
      for (const auto& loc : locs)
        batch.hist_targets.push_back(
            build_histogram_target(hc, loc.y, loc.x, cfg.target_options));
    } else {
      const Image lab = rgb_to_lab(pair.color);
      for (const auto& loc : locs) batch.lab_targets.push_back(build_lab_target(lab, loc.y, loc.x));
    }
    batch.locations.insert(batch.locations.end(), locs.begin(), locs.end());
  }
  return batch;
}

}  // namespace

PretrainResult train_colorization(const Dataset& ds, const std::string& split,
                                 const PretrainConfig& cfg,
                                 const Checkpoint<float>* resume) {
  cfg.schedule.validate();
  cfg.augment.validate();
  check(cfg.loss == "histogram" || cfg.loss == "regression",
        "pretrain: loss must be histogram or regression");
  check(cfg.spec.input_channels == 1, "pretrain: trunk must take grayscale input");
  check(cfg.batch_size >= 1 && cfg.pixels_per_image >= 1, "pretrain: bad batch config");
  const auto& samples = ds.split(split);
  check(!samples.empty(), "pretrain: dataset split is empty");

  Rng base(cfg.seed);
  Rng init_rng = base.child(kStreamInit);

  Network<float> net;
  Head<float> head;
  double loss_scale = 1.0;
  int64_t start_step = 0;
  const int head_out = cfg.loss == "histogram" ? 2 * kHistBins : 2;
  if (resume) {
    check(spec_hash(resume->net.spec) == spec_hash(cfg.spec),
          "pretrain: resume checkpoint spec differs from configured spec");
    net = resume->net;
    head = resume->head;
    loss_scale = resume->loss_scale;
    start_step = resume->step;
  } else {
    net = build_network<float>(cfg.spec, init_rng);
    head = build_head<float>(tap_channel_sum(cfg.spec), cfg.head_hidden, head_out, init_rng);
  }

  auto params = all_params(net, head);
  std::vector<Tensor<float>> param_list;
  std::vector<std::string> param_names;
  for (auto& [name, t] : params) {
    param_names.push_back(name);
    param_list.push_back(*t);
  }
  OptimizerState<float> opt;
  opt.momentum = static_cast<float>(cfg.momentum);
  opt.init(param_list);
  if (resume)
    for (size_t i = 0; i < param_names.size(); ++i) {
      auto it = resume->velocity.find(param_names[i]);
      if (it != resume->velocity.end()) opt.velocity[i] = it->second;
    }

  const int64_t n = static_cast<int64_t>(samples.size());
  const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = static_cast<int64_t>(
      std::ceil(cfg.schedule.total_epochs * static_cast<double>(steps_per_epoch) - 1e-9));
  auto epoch_of = [&](int64_t step) {
    return static_cast<double>(step) / static_cast<double>(steps_per_epoch);
  };

  const std::vector<int> strides = tap_strides(cfg.spec);
  std::ofstream metrics;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    const bool fresh = start_step == 0;
    metrics.open(std::filesystem::path(cfg.out_dir) / "metrics.csv",
                 fresh ? std::ios::trunc : std::ios::app);
    if (fresh) metrics << "step,epoch,lr,loss\n";
  }

  PretrainResult result;
  auto emit_checkpoint = [&](double at_epoch, int64_t at_step) {
    Checkpoint<float> c;
    c.net.spec = net.spec;
    for (const auto& [name, t] : net.params) c.net.params[name] = t.clone();
    c.net.bn_stats = net.bn_stats;
    c.head.in_dim = head.in_dim;
    c.head.hidden = head.hidden;
    c.head.out_dim = head.out_dim;
    for (const auto& [name, t] : head.params) c.head.params[name] = t.clone();
    c.head_kind = cfg.loss;
    c.epoch = at_epoch;
    c.step = at_step;
    c.rng_state = base.serialize_state();
    c.loss_scale = loss_scale;
    for (size_t i = 0; i < param_names.size(); ++i) c.velocity[param_names[i]] = opt.velocity[i];
    result.checkpoints.push_back(c);
    result.checkpoint_epochs.push_back(at_epoch);
    if (!cfg.out_dir.empty()) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "ckpt_e%07.3f.cprx", at_epoch);
      save_checkpoint(c, (std::filesystem::path(cfg.out_dir) / buf).string());
    }
  };

  std::set<int64_t> snapshot_steps;
  for (double e : cfg.snapshot_epochs)
    snapshot_steps.insert(static_cast<int64_t>(std::llround(e * steps_per_epoch)));

  if (start_step == 0 && total_steps == 0) {
    emit_checkpoint(0.0, 0);
    return result;
  }

  double prev_lr = cfg.schedule.lr_at_epoch(epoch_of(start_step));
  for (int64_t step = start_step; step < total_steps; ++step) {
    const int64_t epoch_index = step / steps_per_epoch;
    const int64_t pos = (step % steps_per_epoch) * cfg.batch_size;
    const double epoch_f = epoch_of(step);
    const double lr = cfg.schedule.lr_at_epoch(epoch_f);
    if (lr != prev_lr || (snapshot_steps.count(step) && step != start_step))
      emit_checkpoint(epoch_f, step);
    prev_lr = lr;
    opt.learning_rate = static_cast<float>(lr);

    // Epoch permutation is a pure function of (seed, epoch).
    std::vector<int64_t> perm(n);
    for (int64_t i = 0; i < n; ++i) perm[i] = i;
    Rng perm_rng = base.child(kStreamPerm + static_cast<uint64_t>(epoch_index));
    perm_rng.shuffle(perm);
    std::vector<int64_t> indices(
        perm.begin() + pos, perm.begin() + std::min<int64_t>(pos + cfg.batch_size, n));

    try {
      BatchData batch = build_batch(samples, indices, cfg, base, epoch_index, pos, n);

      if (step == 0) {
        // Calibrate the scale on the first batch of the fresh network, then
        // reset running statistics so training starts clean. The init
        // checkpoint is emitted afterwards so it carries the final scale.
        check(static_cast<int64_t>(indices.size()) * cfg.pixels_per_image >= 32,
              "pretrain: calibration batch must cover at least 32 pixels");
        Tape<float> probe_tape(false);
        auto acts = forward(net, probe_tape, batch.input, BnMode::kTrain);
        auto column = hypercolumn_extract(probe_tape, acts.taps, strides, batch.locations);
        auto logits = head_forward(head, probe_tape, column);
        float initial;
        if (cfg.loss == "histogram") {
          auto lh = slice_cols(probe_tape, logits, 0, kHistBins);
          auto lc = slice_cols(probe_tape, logits, kHistBins, 2 * kHistBins);
          initial = kl_histogram_loss(probe_tape, lh, lc, batch.hist_targets).value.item();
        } else {
          initial = lab_regression_loss(probe_tape, logits, batch.lab_targets).value.item();
        }
        loss_scale = calibrate_loss_scale(initial);
        for (auto& [name, stats] : net.bn_stats) stats = RunningStats<float>{};
        emit_checkpoint(0.0, 0);
      }

      for (auto& p : param_list) p.zero_grad();
      Tape<float> tape;
      auto acts = forward(net, tape, batch.input, BnMode::kTrain);
      auto column = hypercolumn_extract(tape, acts.taps, strides, batch.locations);
      auto logits = head_forward(head, tape, column);
      LossValue<float> loss;
      if (cfg.loss == "histogram") {
        auto lh = slice_cols(tape, logits, 0, kHistBins);
        auto lc = slice_cols(tape, logits, kHistBins, 2 * kHistBins);
        loss = kl_histogram_loss(tape, lh, lc, batch.hist_targets,
                                 static_cast<float>(loss_scale));
      } else {
        loss = lab_regression_loss(tape, logits, batch.lab_targets,
                                   static_cast<float>(loss_scale));
      }
      const double scaled = loss.value.item();
      tape.backward(loss.value);
      sgd_momentum_step(param_list, opt);

      result.loss_trace.push_back(scaled);
      if (metrics.is_open()) {
        char line[128];
        std::snprintf(line, sizeof(line), "%lld,%.6f,%.8g,%.8g\n",
                      static_cast<long long>(step), epoch_f, lr, scaled);
        metrics << line;
      }
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("pretrain diverged at batch " + std::to_string(step) +
                               ": " + e.what());
    }
  }

  emit_checkpoint(cfg.schedule.total_epochs, total_steps);
  result.loss_scale = loss_scale;
  return result;
}

}  // namespace selfcolor
