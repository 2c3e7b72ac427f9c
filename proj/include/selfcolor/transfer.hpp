// Downstream fine-tuning: checkpoint adaptation (batch-norm absorption,
// rebalancing, gray-to-RGB filters), layer freezing, the early-stopping
// state machine, and evaluation metrics.
#pragma once

#include "selfcolor/checkpoint.hpp"
#include "selfcolor/dataset.hpp"

namespace selfcolor {

// --- checkpoint adaptation ---------------------------------------------------

// Folds running statistics into the preceding conv/affine weights and biases
// and removes the batch-norm layers. Our blocks compute bn(conv(x)) + bias, so
// w' = w / sqrt(var + eps) and b' = b - mean / sqrt(var + eps). Inference
// output is preserved.
template <typename T>
void absorb_batchnorm(Network<T>& net, T eps = T(1e-5));

// Layer by layer from the input: measure the post-activation standard
// deviation on the probe batch and divide that layer's weights and bias by
// it. Requires a batch-norm-free trunk.
template <typename T>
void rebalance_unit_variance(Network<T>& net, const Tensor<T>& probe_batch);

// Replicates first-layer grayscale filters to three channels, divided by 3.
template <typename T>
void gray_to_rgb_filters(Network<T>& net);

// --- early stopping ----------------------------------------------------------

// Validation-plateau state machine: lr0 -> lr1 -> lr2 -> done. Construct with
// the pre-training baseline score; each patience expiry either drops the
// learning rate (twice) or concludes training.
class EarlyStopMachine {
 public:
  enum class Action { kNone, kDrop, kStop };

  EarlyStopMachine(int patience, double tolerance, double baseline);
  Action observe(double score);

  int phase() const { return phase_; }  // 0,1,2 while running; 3 when done
  bool done() const { return phase_ >= 3; }
  double best() const { return best_; }

 private:
  int patience_;
  double tolerance_;
  double best_;
  int streak_ = 0;
  int phase_ = 0;
};

// --- downstream training ------------------------------------------------------

struct AdaptationPlan {
  bool absorb_batchnorm = true;
  bool rebalance_unit_variance = false;
  bool gray_to_rgb_filters = false;  // color-reintroduction experiment
  std::string freeze_until = "NONE";  // NONE | ALL | first trainable layer name
  std::string head = "classifier";    // classifier | segmentation
  int head_hidden = 0;
  int fov_blocks = 0;
  int fov_width = 128;
};

struct EarlyStopConfig {
  int patience = 3;
  double tolerance = 0.0;
  double drop_factor = 0.1;
  double val_fraction = 0.10;
  int evals_per_epoch = 4;
  double max_epochs = 40;
  bool retrain_full = false;  // replay the recorded schedule on 100% of the data
};

struct TransferConfig {
  AdaptationPlan plan;
  EarlyStopConfig stop;
  double base_lr = 0.02;
  double momentum = 0.9;
  int batch_size = 16;
  int crop = 32;
  bool mirror = true;
  std::string task = "classification";  // classification | segmentation
  int pixels_per_image = 64;            // segmentation hypercolumns per image
  uint64_t seed = 0;
  std::string out_dir;
};

template <typename T>
struct DownstreamModel {
  Network<T> net;
  Head<T> head;
  std::string task = "classification";
  int crop = 32;
  bool color_input = false;
  int num_outputs = 0;
};

struct TransferResult {
  DownstreamModel<float> model;
  std::vector<double> drop_epochs;
  double stop_epoch = 0;
  double final_metric = 0;  // on the eval split, after optional full retrain
  std::vector<std::pair<double, double>> val_curve;  // (epoch, score)
};

// init == nullptr trains from random initialization of `random_spec` (batch
// norm stays active in that case; adaptation transforms need a checkpoint).
TransferResult train_downstream(const Dataset& ds, const std::string& train_split,
                                const std::string& eval_split,
                                const Checkpoint<float>* init,
                                const NetworkSpec& random_spec,
                                const TransferConfig& cfg);

// --- metrics -----------------------------------------------------------------

// Fraction of rows whose true label is among the k highest scores.
double topk_accuracy(const std::vector<std::vector<double>>& scores,
                     const std::vector<int>& labels, int k);

// Mean over classes present in ground truth of TP/(TP+FP+FN), accumulated
// over the whole set.
double mean_iu(const std::vector<std::vector<uint8_t>>& predictions,
               const std::vector<std::vector<uint8_t>>& ground_truth, int num_classes);

double evaluate_classification(DownstreamModel<float>& model,
                               const std::vector<Sample>& samples, int topk);
double evaluate_segmentation(DownstreamModel<float>& model,
                             const std::vector<Sample>& samples);

// Center-cropped network input for one sample.
Tensor<float> eval_input(const Sample& s, int crop_size, bool color_input);

}  // namespace selfcolor
