// Pretraining objectives and the scale calibration that makes them comparable.
#pragma once

#include "selfcolor/targets.hpp"
#include "selfcolor/tensor.hpp"

namespace selfcolor {

template <typename T>
struct LossValue {
  Tensor<T> value;     // taped scalar
  int64_t pixel_count = 0;
  T scale = T(1);      // factor already applied to `value`
};

// Mean over pixels of KL(target || softmax(logits)), summed over the hue and
// chroma heads. Zero-probability target bins contribute nothing; predictions
// are floored at 1e-12 inside the log.
template <typename T>
LossValue<T> kl_histogram_loss(Tape<T>& tape, const Tensor<T>& logits_hue,
                               const Tensor<T>& logits_chroma,
                               const std::vector<HistogramTarget>& targets,
                               T scale = T(1));

// Mean squared error over pixels and both chromatic channels; the (a, b)
// targets are rescaled by 1/128 so predictions live in [-1, 1].
template <typename T>
LossValue<T> lab_regression_loss(Tape<T>& tape, const Tensor<T>& pred,
                                 const std::vector<std::pair<float, float>>& targets,
                                 T scale = T(1));

// Returns c with c * initial_loss == 1; initial_loss is the unscaled mean
// loss of the freshly initialized network on a calibration batch.
template <typename T>
T calibrate_loss_scale(T initial_mean_loss);

}  // namespace selfcolor
