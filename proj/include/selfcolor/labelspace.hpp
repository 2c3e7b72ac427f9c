// Label-space reductions for the pretraining-paradigm study: hierarchy cuts,
// random buckets, label noise, and per-class subsampling.
#pragma once

#include "selfcolor/dataset.hpp"

namespace selfcolor {

// Maps every leaf class to its ancestor at the tree depth whose group count
// equals level_size. The hierarchy is a nested JSON object whose leaves are
// arrays of class names.
std::vector<int> hierarchy_cut_mapping(const nlohmann::json& hierarchy,
                                       const std::vector<std::string>& class_names,
                                       int level_size,
                                       std::vector<std::string>* group_names = nullptr);
Dataset hierarchical_merge(const Dataset& ds, const nlohmann::json& hierarchy,
                           int level_size);

// Partition of the classes into n_buckets non-empty buckets (one class is
// placed per bucket first, the rest uniformly).
std::vector<int> random_bucket_mapping(int num_classes, int n_buckets, uint64_t seed);
Dataset random_buckets(const Dataset& ds, int n_buckets, uint64_t seed);

// Exactly floor(fraction * N) samples of the named split, chosen uniformly
// without replacement, get a label redrawn uniformly over all labels (the
// original label may be redrawn). Other splits are untouched.
Dataset label_noise(const Dataset& ds, const std::string& split, double fraction,
                    uint64_t seed);

// Uniformly selects exactly k samples per class from the named split.
Dataset subsample_per_class(const Dataset& ds, const std::string& split, int k,
                            uint64_t seed);

}  // namespace selfcolor
