#include "selfcolor/losses.hpp"

#include <cmath>

namespace selfcolor {

static constexpr double kLogFloor = 1e-12;

template <typename T>
static void validate_normalized(const std::vector<HistogramTarget>& targets) {
  for (const auto& t : targets) {
    double hs = 0, cs = 0;
    for (int b = 0; b < kHistBins; ++b) {
      check(t.hue[b] >= 0.f && t.chroma[b] >= 0.f, "histogram target has negative mass");
      hs += t.hue[b];
      cs += t.chroma[b];
    }
    check(std::abs(hs - 1.0) < 1e-4 && std::abs(cs - 1.0) < 1e-4,
          "histogram target is not normalized");
  }
}

// KL(t || softmax(z)) for one row; writes softmax into p.
template <typename T>
static double kl_row(const T* z, const float* t, int64_t d, double* p) {
  double mx = z[0];
  for (int64_t b = 1; b < d; ++b) mx = std::max(mx, static_cast<double>(z[b]));
  double s = 0;
  for (int64_t b = 0; b < d; ++b) {
    p[b] = std::exp(static_cast<double>(z[b]) - mx);
    s += p[b];
  }
  double kl = 0;
  for (int64_t b = 0; b < d; ++b) {
    p[b] /= s;
    if (t[b] > 0.f)
      kl += static_cast<double>(t[b]) *
            (std::log(static_cast<double>(t[b])) - std::log(std::max(p[b], kLogFloor)));
  }
  return kl;
}

template <typename T>
LossValue<T> kl_histogram_loss(Tape<T>& tape, const Tensor<T>& logits_hue,
                               const Tensor<T>& logits_chroma,
                               const std::vector<HistogramTarget>& targets,
                               T scale) {
  const int64_t K = static_cast<int64_t>(targets.size());
  check(K > 0, "kl_histogram_loss: no targets");
  check(logits_hue.rank() == 2 && logits_hue.dim(0) == K && logits_hue.dim(1) == kHistBins,
        "kl_histogram_loss: hue logits must be [K,32]");
  check(logits_chroma.rank() == 2 && logits_chroma.dim(0) == K &&
            logits_chroma.dim(1) == kHistBins,
        "kl_histogram_loss: chroma logits must be [K,32]");
  validate_normalized<T>(targets);

  auto p_hue = std::make_shared<std::vector<double>>(K * kHistBins);
  auto p_chroma = std::make_shared<std::vector<double>>(K * kHistBins);
  double total = 0;
  for (int64_t k = 0; k < K; ++k) {
    total += kl_row(logits_hue.data() + k * kHistBins, targets[k].hue.data(), kHistBins,
                    p_hue->data() + k * kHistBins);
    total += kl_row(logits_chroma.data() + k * kHistBins, targets[k].chroma.data(),
                    kHistBins, p_chroma->data() + k * kHistBins);
  }

  LossValue<T> out;
  out.pixel_count = K;
  out.scale = scale;
  out.value = Tensor<T>::scalar(static_cast<T>(scale * total / K));
  check_finite(out.value, "kl_histogram_loss");

  if (tape.recording() && (logits_hue.requires_grad() || logits_chroma.requires_grad())) {
    Tensor<T> loss_ref = out.value, zh = logits_hue, zc = logits_chroma;
    auto tgts = std::make_shared<std::vector<HistogramTarget>>(targets);
    tape.record([=]() mutable {
      const double g0 = static_cast<double>(loss_ref.grad()[0]) * scale / K;
      auto backprop = [&](Tensor<T>& z, const std::vector<double>& p, bool hue_head) {
        if (!z.requires_grad()) return;
        T* dz = z.grad();
        for (int64_t k = 0; k < K; ++k) {
          const float* t = hue_head ? (*tgts)[k].hue.data() : (*tgts)[k].chroma.data();
          const double* pk = p.data() + k * kHistBins;
          double usum = 0;
          double u[kHistBins];
          for (int b = 0; b < kHistBins; ++b) {
            u[b] = pk[b] > kLogFloor ? static_cast<double>(t[b]) : 0.0;
            usum += u[b];
          }
          for (int b = 0; b < kHistBins; ++b)
            dz[k * kHistBins + b] += static_cast<T>(g0 * (pk[b] * usum - u[b]));
        }
      };
      backprop(zh, *p_hue, true);
      backprop(zc, *p_chroma, false);
    });
    out.value.set_requires_grad(true);
  }
  return out;
}

template <typename T>
LossValue<T> lab_regression_loss(Tape<T>& tape, const Tensor<T>& pred,
                                 const std::vector<std::pair<float, float>>& targets,
                                 T scale) {
  const int64_t K = static_cast<int64_t>(targets.size());
  check(K > 0, "lab_regression_loss: no targets");
  check(pred.rank() == 2 && pred.dim(0) == K && pred.dim(1) == 2,
        "lab_regression_loss: predictions must be [K,2]");

  double total = 0;
  for (int64_t k = 0; k < K; ++k) {
    const double da = pred.data()[k * 2 + 0] - targets[k].first / 128.0;
    const double db = pred.data()[k * 2 + 1] - targets[k].second / 128.0;
    total += da * da + db * db;
  }

  LossValue<T> out;
  out.pixel_count = K;
  out.scale = scale;
  out.value = Tensor<T>::scalar(static_cast<T>(scale * total / (2.0 * K)));
  check_finite(out.value, "lab_regression_loss");

  if (tape.recording() && pred.requires_grad()) {
    Tensor<T> loss_ref = out.value, p = pred;
    auto tgts = std::make_shared<std::vector<std::pair<float, float>>>(targets);
    tape.record([=]() mutable {
      const double g0 = static_cast<double>(loss_ref.grad()[0]) * scale / K;
      T* dp = p.grad();
      for (int64_t k = 0; k < K; ++k) {
        dp[k * 2 + 0] += static_cast<T>(g0 * (p.data()[k * 2 + 0] - (*tgts)[k].first / 128.0));
        dp[k * 2 + 1] += static_cast<T>(g0 * (p.data()[k * 2 + 1] - (*tgts)[k].second / 128.0));
      }
    });
    out.value.set_requires_grad(true);
  }
  return out;
}

template <typename T>
T calibrate_loss_scale(T initial_mean_loss) {
  check(std::isfinite(static_cast<double>(initial_mean_loss)) && initial_mean_loss > T(0),
        "calibrate_loss_scale: initial loss must be finite and positive");
  return T(1) / initial_mean_loss;
}

#define SELFCOLOR_INSTANTIATE_LOSS(T)                                                     \
  template LossValue<T> kl_histogram_loss<T>(Tape<T>&, const Tensor<T>&,                  \
                                             const Tensor<T>&,                            \
                                             const std::vector<HistogramTarget>&, T);     \
  template LossValue<T> lab_regression_loss<T>(                                           \
      Tape<T>&, const Tensor<T>&, const std::vector<std::pair<float, float>>&, T);        \
  template T calibrate_loss_scale<T>(T);

SELFCOLOR_INSTANTIATE_LOSS(float)
SELFCOLOR_INSTANTIATE_LOSS(double)

#undef SELFCOLOR_INSTANTIATE_LOSS

}  // namespace selfcolor
