// Binary checkpoint format: "CPRX", version, JSON metadata block (embedded
// network spec, schedule position, RNG state, loss scale), then one record
// per named array, little-endian on disk.
#pragma once

#include "selfcolor/model.hpp"

namespace selfcolor {

template <typename T>
struct Checkpoint {
  Network<T> net;
  Head<T> head;                 // pretraining head; may be empty
  std::string head_kind = "none";  // histogram | regression | classifier | none
  double epoch = 0.0;
  int64_t step = 0;
  std::string rng_state;
  double loss_scale = 1.0;
  std::vector<double> drop_epochs;  // learning-rate drops recorded so far
  std::map<std::string, std::vector<T>> velocity;  // optimizer state by param name
};

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path);

// Validates magic, version, and that every parameter named by the embedded
// spec (and head) is present with the expected dtype.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

// Hash of the embedded network spec without loading the arrays.
uint64_t peek_spec_hash(const std::string& path);

}  // namespace selfcolor
