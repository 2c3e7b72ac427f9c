// The self-supervised colorization training loop: augmentation, piecewise
// learning-rate schedule with drops, loss-scale calibration, checkpointing.
#pragma once

#include "selfcolor/checkpoint.hpp"
#include "selfcolor/dataset.hpp"
#include "selfcolor/losses.hpp"

namespace selfcolor {

struct AugmentationPolicy {
  double mirror_prob = 0.5;
  int scale_min = 32;  // short-side range after scaling
  int scale_max = 56;
  int crop = 32;
  bool desaturate = true;

  void validate() const;
};

struct AugmentedPair {
  Image gray;   // network input (1 channel)
  Image color;  // target source (3 channels), same geometry
};

// Mirror with probability 0.5, uniform short-side rescale, uniform crop,
// desaturate. The gray output is always rgb_to_gray of the color output.
AugmentedPair augment(const Image& rgb, const AugmentationPolicy& policy, Rng& rng);

struct TrainingSchedule {
  double total_epochs = 3.0;
  double base_lr = 0.05;
  std::vector<double> drop_epochs = {2.0, 2.5};  // strictly increasing, in (0, total)
  double drop_factor = 0.1;

  void validate() const;
  double lr_at_epoch(double epoch) const;
};

struct PretrainConfig {
  std::string loss = "histogram";  // histogram | regression
  NetworkSpec spec;                // grayscale trunk
  int head_hidden = 96;
  int pixels_per_image = 32;       // hypercolumns sampled per image
  int batch_size = 16;
  double momentum = 0.9;
  TrainingSchedule schedule;
  AugmentationPolicy augment;
  TargetOptions target_options;
  uint64_t seed = 0;
  std::vector<double> snapshot_epochs;
  std::string out_dir;  // metrics.csv + checkpoints; empty keeps everything in memory
};

struct PretrainResult {
  std::vector<Checkpoint<float>> checkpoints;  // init, drops, snapshots, final
  std::vector<double> checkpoint_epochs;
  std::vector<double> loss_trace;  // scaled per-batch loss
  double loss_scale = 1.0;
};

// Resumes from `resume` when given (its epoch/step mark the restart point).
PretrainResult train_colorization(const Dataset& ds, const std::string& split,
                                  const PretrainConfig& cfg,
                                  const Checkpoint<float>* resume = nullptr);

}  // namespace selfcolor
