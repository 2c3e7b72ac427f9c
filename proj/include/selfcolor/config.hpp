// Experiment configuration: JSON tree, schema-validated up front (unknown
// keys are rejected with the offending path).
#pragma once

#include "selfcolor/dataset.hpp"
#include "selfcolor/pretrain.hpp"
#include "selfcolor/transfer.hpp"

namespace selfcolor {

struct LabelTransformSpec {
  std::string kind;  // hierarchical | random_buckets | noise | subsample
  int level_size = 0;
  int n_buckets = 0;
  double fraction = 0;
  int k = 0;
  uint64_t seed = 0;
  nlohmann::json hierarchy;  // hierarchical only; empty uses the built-in tree
};

struct ExperimentConfig {
  nlohmann::json raw;
  uint64_t seed = 0;
  std::string out_dir;
  std::string run_id;

  static ExperimentConfig load(const std::string& path);
  static ExperimentConfig from_json(const nlohmann::json& j);

  // Section parsers (validated on load; these extract typed values).
  bool has(const std::string& section) const { return raw.contains(section); }
  ColoredShapesSpec shapes_spec() const;
  std::string dataset_path() const;  // empty when the dataset is inline synthetic
  NetworkSpec network_spec() const;
  PretrainConfig pretrain_config() const;
  TransferConfig transfer_config() const;
  std::string transfer_init() const;  // "random" or a checkpoint path
  std::string pretrain_split() const;
  std::string train_split() const;
  std::string eval_split() const;
  std::vector<LabelTransformSpec> label_transforms() const;
};

// Applies the configured transforms in order to the named split.
Dataset apply_label_transforms(const Dataset& ds, const std::string& split,
                               const std::vector<LabelTransformSpec>& transforms);

}  // namespace selfcolor
