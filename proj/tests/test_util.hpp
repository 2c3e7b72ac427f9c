// Shared test oracles: finite-difference gradient checks and brute-force
// reference implementations, independent of the library's compute paths.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "selfcolor/tensor.hpp"

namespace sctest {

using selfcolor::Tape;
using selfcolor::Tensor;

inline selfcolor::Rng test_rng(uint64_t seed) { return selfcolor::Rng(seed); }

template <typename T>
Tensor<T> random_tensor(std::vector<int64_t> shape, selfcolor::Rng& rng, double lo = -1.0,
                        double hi = 1.0) {
  Tensor<T> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Test-local primitive: loss = sum_i coeffs[i] * x[i]. Projecting the output
// through fixed random coefficients turns any op into a scalar loss.
inline Tensor<double> weighted_sum(Tape<double>& tape, const Tensor<double>& x,
                                   const std::vector<double>& coeffs) {
  double s = 0;
  for (int64_t i = 0; i < x.numel(); ++i) s += coeffs[i] * x.data()[i];
  Tensor<double> out = Tensor<double>::scalar(s);
  if (tape.recording() && x.requires_grad()) {
    Tensor<double> out_ref = out, x_ref = x;
    auto c = coeffs;
    tape.record([=]() mutable {
      const double g = out_ref.grad()[0];
      double* dx = x_ref.grad();
      for (int64_t i = 0; i < x_ref.numel(); ++i) dx[i] += c[i] * g;
    });
    out.set_requires_grad(true);
  }
  return out;
}

// Central-difference gradient check of `loss_fn` (which must rebuild the
// graph from scratch on every call) against the analytic gradients of
// `inputs`. Returns the max elementwise relative error.
inline double gradient_check(
    const std::function<Tensor<double>(Tape<double>&)>& loss_fn,
    std::vector<Tensor<double>> inputs, double step = 1e-5) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape<double> tape;
  Tensor<double> loss = loss_fn(tape);
  tape.backward(loss);

  double worst = 0;
  for (auto& t : inputs) {
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double keep = t.data()[i];
      t.data()[i] = keep + step;
      Tape<double> t1(false);
      const double up = loss_fn(t1).item();
      t.data()[i] = keep - step;
      Tape<double> t2(false);
      const double down = loss_fn(t2).item();
      t.data()[i] = keep;
      const double numeric = (up - down) / (2 * step);
      const double analytic = t.has_grad() ? t.grad_values()[i] : 0.0;
      const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

// Straightforward sliding-window cross-correlation, zero or constant fill.
inline Tensor<double> reference_conv2d(const Tensor<double>& x, const Tensor<double>& w,
                                       const Tensor<double>& b, int stride, int pad,
                                       const std::vector<double>& fill = {}) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t OH = (H + 2 * pad - kh) / stride + 1, OW = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> y({N, F, OH, OW});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t f = 0; f < F; ++f)
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox) {
          double acc = b.defined() ? b.data()[f] : 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t iy = oy * stride - pad + ky;
                const int64_t ix = ox * stride - pad + kx;
                double v;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W)
                  v = fill.empty() ? 0.0 : fill[c];
                else
                  v = x.data()[((n * C + c) * H + iy) * W + ix];
                acc += v * w.data()[((f * C + c) * kh + ky) * kw + kx];
              }
          y.data()[((n * F + f) * OH + oy) * OW + ox] = acc;
        }
  return y;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double worst = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return worst;
}

}  // namespace sctest
