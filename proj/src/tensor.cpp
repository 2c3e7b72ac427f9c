#include "selfcolor/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace selfcolor {

// ---------------------------------------------------------------------------
// Rng

static uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

Rng Rng::child(uint64_t index) const {
  return Rng(splitmix64(splitmix64(seed_) + index));
}

double Rng::uniform() {
  return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t Rng::uniform_int(int64_t n) {
  check(n > 0, "uniform_int: n must be positive");
  const uint64_t bound = static_cast<uint64_t>(n);
  const uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    uint64_t r = gen_();
    if (r >= threshold) return static_cast<int64_t>(r % bound);
  }
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

bool Rng::coin(double p) { return uniform() < p; }

std::vector<int64_t> Rng::sample_without_replacement(int64_t n, int64_t k) {
  check(k >= 0 && k <= n, "sample_without_replacement: k out of range");
  std::vector<int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = 0; i < k; ++i) {
    int64_t j = i + uniform_int(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

std::string Rng::serialize_state() const {
  std::ostringstream os;
  uint64_t spare_bits;
  std::memcpy(&spare_bits, &spare_, sizeof(spare_bits));
  os << seed_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << spare_bits << ' ' << gen_;
  return os.str();
}

void Rng::restore_state(const std::string& s) {
  std::istringstream is(s);
  int spare_flag = 0;
  uint64_t spare_bits = 0;
  is >> seed_ >> spare_flag >> spare_bits >> gen_;
  check(!is.fail(), "Rng::restore_state: malformed state string");
  std::memcpy(&spare_, &spare_bits, sizeof(spare_));
  has_spare_ = spare_flag != 0;
}

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(std::vector<int64_t> shape, T fill) {
  int64_t n = 1;
  for (int64_t e : shape) {
    check(e > 0, "Tensor: extents must be positive");
    n *= e;
  }
  s_ = std::make_shared<Storage>();
  s_->shape = std::move(shape);
  s_->val.assign(static_cast<size_t>(n), fill);
}

template <typename T>
Tensor<T> Tensor<T>::from(std::vector<int64_t> shape, std::vector<T> values) {
  Tensor t(shape);
  check(static_cast<int64_t>(values.size()) == t.numel(),
        "Tensor::from: value count does not match shape");
  t.s_->val = std::move(values);
  return t;
}

template <typename T>
T* Tensor<T>::grad() {
  if (s_->grad.empty()) s_->grad.assign(s_->val.size(), T(0));
  return s_->grad.data();
}

template <typename T>
const std::vector<T>& Tensor<T>::grad_values() const {
  return s_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(s_->grad.begin(), s_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  check(numel() == 1, "Tensor::item: tensor is not scalar");
  return s_->val[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t(s_->shape);
  t.s_->val = s_->val;
  t.s_->requires_grad = s_->requires_grad;
  return t;
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
void Tape<T>::backward(Tensor<T>& loss) {
  check(!consumed_, "Tape::backward: tape already consumed");
  check(loss.numel() == 1, "Tape::backward: loss must be scalar");
  consumed_ = true;
  loss.grad()[0] = T(1);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  ops_.clear();
}

// ---------------------------------------------------------------------------
// Helpers

template <typename T>
void check_finite(const Tensor<T>& t, const char* where) {
  for (T v : t.values())
    if (!std::isfinite(static_cast<double>(v)))
      throw std::runtime_error(std::string("non-finite value in ") + where);
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;

// C[M,N] (+)= A[M,K] * B[K,N], row-major buffers.
template <typename T>
static void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n,
                 bool accumulate) {
  MapC<T> A(a, m, k);
  MapC<T> B(b, k, n);
  MapM<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
template <typename T>
static void gemm_tn(const T* a, const T* b, T* c, int64_t k, int64_t m, int64_t n,
                    bool accumulate) {
  MapC<T> A(a, k, m);
  MapC<T> B(b, k, n);
  MapM<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <typename T>
static void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n,
                    bool accumulate) {
  MapC<T> A(a, m, k);
  MapC<T> B(b, n, k);
  MapM<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
static void im2col(const T* img, int64_t C, int64_t H, int64_t W, int64_t kh,
                   int64_t kw, int stride, int pad, PadMode pad_mode,
                   const T* fill, int64_t OH, int64_t OW, T* col) {
  const int64_t ohw = OH * OW;
  for (int64_t c = 0; c < C; ++c) {
    const T* plane = img + c * H * W;
    const T fv = (pad_mode == PadMode::kFill && fill) ? fill[c] : T(0);
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        T* dst = col + ((c * kh + ky) * kw + kx) * ohw;
        for (int64_t oy = 0; oy < OH; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            for (int64_t ox = 0; ox < OW; ++ox) dst[oy * OW + ox] = fv;
            continue;
          }
          for (int64_t ox = 0; ox < OW; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            dst[oy * OW + ox] = (ix < 0 || ix >= W) ? fv : plane[iy * W + ix];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int pad, PadMode pad_mode,
                 const Tensor<T>& fill) {
  check(input.rank() == 4, "conv2d: input must be [N,C,H,W]");
  check(weight.rank() == 4, "conv2d: weight must be [F,C,kH,kW]");
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t F = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  check(weight.dim(1) == C, "conv2d: channel mismatch between input and weight");
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(pad >= 0, "conv2d: pad must be >= 0");
  check(kh <= H + 2 * pad && kw <= W + 2 * pad, "conv2d: kernel exceeds padded extent");
  if (bias.defined()) check(bias.numel() == F, "conv2d: bias length mismatch");
  if (pad_mode == PadMode::kFill)
    check(fill.defined() && fill.numel() == C, "conv2d: kFill requires a per-channel fill vector");

  const int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const int64_t OW = (W + 2 * pad - kw) / stride + 1;
  const int64_t CK = C * kh * kw, ohw = OH * OW;

  Tensor<T> out({N, F, OH, OW});
  auto cols = std::make_shared<std::vector<T>>(static_cast<size_t>(N * CK * ohw));
  for (int64_t n = 0; n < N; ++n) {
    T* col = cols->data() + n * CK * ohw;
    im2col(input.data() + n * C * H * W, C, H, W, kh, kw, stride, pad, pad_mode,
           fill.defined() ? fill.data() : nullptr, OH, OW, col);
    gemm(weight.data(), col, out.data() + n * F * ohw, F, CK, ohw, false);
    if (bias.defined()) {
      T* o = out.data() + n * F * ohw;
      for (int64_t f = 0; f < F; ++f) {
        const T b = bias.data()[f];
        for (int64_t i = 0; i < ohw; ++i) o[f * ohw + i] += b;
      }
    }
  }
  check_finite(out, "conv2d");

  const bool needs_grad = input.requires_grad() || weight.requires_grad() ||
                          (bias.defined() && bias.requires_grad()) ||
                          (fill.defined() && fill.requires_grad());
  if (tape.recording() && needs_grad) {
    Tensor<T> out_ref = out;
    Tensor<T> x = input, w = weight, b = bias, fv = fill;
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      std::vector<T> dcol(static_cast<size_t>(CK * ohw));
      for (int64_t n = 0; n < N; ++n) {
        const T* dyn = dy + n * F * ohw;
        const T* col = cols->data() + n * CK * ohw;
        if (w.requires_grad()) gemm_nt(dyn, col, w.grad(), F, ohw, CK, true);
        if (b.defined() && b.requires_grad()) {
          T* db = b.grad();
          for (int64_t f = 0; f < F; ++f)
            for (int64_t i = 0; i < ohw; ++i) db[f] += dyn[f * ohw + i];
        }
        if (x.requires_grad() || (fv.defined() && fv.requires_grad())) {
          gemm_tn(w.data(), dyn, dcol.data(), F, CK, ohw, false);
          T* dx = x.requires_grad() ? x.grad() + n * C * H * W : nullptr;
          T* dfill = (fv.defined() && fv.requires_grad()) ? fv.grad() : nullptr;
          for (int64_t c = 0; c < C; ++c) {
            for (int64_t ky = 0; ky < kh; ++ky) {
              for (int64_t kx = 0; kx < kw; ++kx) {
                const T* src = dcol.data() + ((c * kh + ky) * kw + kx) * ohw;
                for (int64_t oy = 0; oy < OH; ++oy) {
                  const int64_t iy = oy * stride - pad + ky;
                  for (int64_t ox = 0; ox < OW; ++ox) {
                    const int64_t ix = ox * stride - pad + kx;
                    if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
                      if (dx) dx[(c * H + iy) * W + ix] += src[oy * OW + ox];
                    } else if (dfill) {
                      dfill[c] += src[oy * OW + ox];
                    }
                  }
                }
              }
            }
          }
        }
      }
    });
    out.set_requires_grad(true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// maxpool2d

template <typename T>
Tensor<T> maxpool2d(Tape<T>& tape, const Tensor<T>& input, int k, int stride) {
  check(input.rank() == 4, "maxpool2d: input must be [N,C,H,W]");
  check(k >= 1 && stride >= 1, "maxpool2d: window and stride must be >= 1");
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  check(H >= k && W >= k, "maxpool2d: window larger than spatial extent");
  const int64_t OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;

  Tensor<T> out({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
  const T* x = input.data();
  T* y = out.data();
  int64_t oi = 0;
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T* plane = x + (n * C + c) * H * W;
      for (int64_t oy = 0; oy < OH; ++oy) {
        for (int64_t ox = 0; ox < OW; ++ox, ++oi) {
          T best = plane[(oy * stride) * W + ox * stride];
          int64_t bestij = (oy * stride) * W + ox * stride;
          for (int64_t dy = 0; dy < k; ++dy)
            for (int64_t dx = 0; dx < k; ++dx) {
              const int64_t ij = (oy * stride + dy) * W + ox * stride + dx;
              if (plane[ij] > best) {  // strict: first occurrence wins ties
                best = plane[ij];
                bestij = ij;
              }
            }
          y[oi] = best;
          (*argmax)[oi] = (n * C + c) * H * W + bestij;
        }
      }
    }
  }

  if (tape.recording() && input.requires_grad()) {
    Tensor<T> out_ref = out, x_ref = input;
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      T* dx = x_ref.grad();
      for (int64_t i = 0; i < out_ref.numel(); ++i) dx[(*argmax)[i]] += dy[i];
    });
    out.set_requires_grad(true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// affine

template <typename T>
Tensor<T> affine(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  check(input.rank() == 2 && weight.rank() == 2, "affine: input [N,D], weight [D,M]");
  const int64_t N = input.dim(0), D = input.dim(1), M = weight.dim(1);
  check(weight.dim(0) == D, "affine: inner dimensions disagree");
  check(bias.defined() && bias.numel() == M, "affine: bias length mismatch");

  Tensor<T> out({N, M});
  gemm(input.data(), weight.data(), out.data(), N, D, M, false);
  T* y = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t m = 0; m < M; ++m) y[n * M + m] += bias.data()[m];
  check_finite(out, "affine");

  const bool needs = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
  if (tape.recording() && needs) {
    Tensor<T> out_ref = out, x = input, w = weight, b = bias;
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      if (x.requires_grad()) gemm_nt(dy, w.data(), x.grad(), N, M, D, true);
      if (w.requires_grad()) gemm_tn(x.data(), dy, w.grad(), N, D, M, true);
      if (b.requires_grad()) {
        T* db = b.grad();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t m = 0; m < M; ++m) db[m] += dy[n * M + m];
      }
    });
    out.set_requires_grad(true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// relu / softmax

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  for (int64_t i = 0; i < input.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);

  if (tape.recording() && input.requires_grad()) {
    Tensor<T> out_ref = out, x_ref = input;
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      const T* xv = x_ref.data();
      T* dx = x_ref.grad();
      for (int64_t i = 0; i < x_ref.numel(); ++i)
        if (xv[i] > T(0)) dx[i] += dy[i];
    });
    out.set_requires_grad(true);
  }
  return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& input, int axis) {
  check(axis >= 0 && axis < input.rank(), "softmax: invalid axis");
  const auto& sh = input.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  for (int i = axis + 1; i < input.rank(); ++i) inner *= sh[i];
  const int64_t D = sh[axis];

  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * D * inner + i;
      T mx = x[base];
      for (int64_t d = 1; d < D; ++d) mx = std::max(mx, x[base + d * inner]);
      T s = T(0);
      for (int64_t d = 0; d < D; ++d) {
        const T e = std::exp(x[base + d * inner] - mx);
        y[base + d * inner] = e;
        s += e;
      }
      for (int64_t d = 0; d < D; ++d) y[base + d * inner] /= s;
    }
  }
  check_finite(out, "softmax");

  if (tape.recording() && input.requires_grad()) {
    Tensor<T> out_ref = out, x_ref = input;
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      const T* p = out_ref.data();
      T* dx = x_ref.grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          const int64_t base = o * D * inner + i;
          T dot = T(0);
          for (int64_t d = 0; d < D; ++d) dot += dy[base + d * inner] * p[base + d * inner];
          for (int64_t d = 0; d < D; ++d)
            dx[base + d * inner] += p[base + d * inner] * (dy[base + d * inner] - dot);
        }
      }
    });
    out.set_requires_grad(true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm2d

template <typename T>
Tensor<T> batchnorm2d(Tape<T>& tape, const Tensor<T>& input, BnMode mode,
                      RunningStats<T>& stats, T eps, T ema) {
  check(input.rank() == 4, "batchnorm2d: input must be [N,C,H,W]");
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t cnt = N * H * W;
  if (stats.mean.empty()) {
    stats.mean.assign(static_cast<size_t>(C), T(0));
    stats.var.assign(static_cast<size_t>(C), T(1));
  }
  check(static_cast<int64_t>(stats.mean.size()) == C, "batchnorm2d: stats size mismatch");

  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();

  std::vector<T> mu(C), inv_sigma(C);
  if (mode == BnMode::kTrain) {
    check(cnt > 1, "batchnorm2d: train mode needs more than one value per channel");
    // Bias-corrected blend: equivalent to an EMA with zero-initialized
    // accumulators divided by (1 - ema^t).
    const double t = static_cast<double>(stats.updates + 1);
    const double f = static_cast<double>(ema) *
                     (1.0 - std::pow(static_cast<double>(ema), t - 1)) /
                     (1.0 - std::pow(static_cast<double>(ema), t));
    ++stats.updates;
    for (int64_t c = 0; c < C; ++c) {
      double m = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* plane = x + (n * C + c) * H * W;
        for (int64_t i = 0; i < H * W; ++i) m += plane[i];
      }
      m /= static_cast<double>(cnt);
      double v = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* plane = x + (n * C + c) * H * W;
        for (int64_t i = 0; i < H * W; ++i) {
          const double d = plane[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(cnt);
      mu[c] = static_cast<T>(m);
      inv_sigma[c] = T(1) / std::sqrt(static_cast<T>(v) + eps);
      stats.mean[c] = static_cast<T>(f * stats.mean[c] + (1.0 - f) * m);
      stats.var[c] = static_cast<T>(f * stats.var[c] + (1.0 - f) * v);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mu[c] = stats.mean[c];
      inv_sigma[c] = T(1) / std::sqrt(stats.var[c] + eps);
    }
  }
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* xp = x + (n * C + c) * H * W;
      T* yp = y + (n * C + c) * H * W;
      for (int64_t i = 0; i < H * W; ++i) yp[i] = (xp[i] - mu[c]) * inv_sigma[c];
    }
  check_finite(out, "batchnorm2d");

  if (tape.recording() && input.requires_grad()) {
    Tensor<T> out_ref = out, x_ref = input;
    const bool train = mode == BnMode::kTrain;
    auto isig = std::make_shared<std::vector<T>>(inv_sigma);
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      const T* xhat = out_ref.data();
      T* dx = x_ref.grad();
      for (int64_t c = 0; c < C; ++c) {
        const T is = (*isig)[c];
        if (!train) {
          for (int64_t n = 0; n < N; ++n) {
            const int64_t off = (n * C + c) * H * W;
            for (int64_t i = 0; i < H * W; ++i) dx[off + i] += dy[off + i] * is;
          }
          continue;
        }
        double sum_dy = 0, sum_dyx = 0;
        for (int64_t n = 0; n < N; ++n) {
          const int64_t off = (n * C + c) * H * W;
          for (int64_t i = 0; i < H * W; ++i) {
            sum_dy += dy[off + i];
            sum_dyx += dy[off + i] * xhat[off + i];
          }
        }
        const T m_dy = static_cast<T>(sum_dy / cnt);
        const T m_dyx = static_cast<T>(sum_dyx / cnt);
        for (int64_t n = 0; n < N; ++n) {
          const int64_t off = (n * C + c) * H * W;
          for (int64_t i = 0; i < H * W; ++i)
            dx[off + i] += is * (dy[off + i] - m_dy - xhat[off + i] * m_dyx);
        }
      }
    });
    out.set_requires_grad(true);
  }
  return out;
}

template <typename T>
Tensor<T> add_channel_bias(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& bias) {
  check(input.rank() == 4, "add_channel_bias: input must be [N,C,H,W]");
  const int64_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  check(bias.numel() == C, "add_channel_bias: bias length mismatch");

  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T b = bias.data()[c];
      const int64_t off = (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) y[off + i] = x[off + i] + b;
    }

  if (tape.recording() && (input.requires_grad() || bias.requires_grad())) {
    Tensor<T> out_ref = out, x_ref = input, b_ref = bias;
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      if (x_ref.requires_grad()) {
        T* dx = x_ref.grad();
        for (int64_t i = 0; i < x_ref.numel(); ++i) dx[i] += dy[i];
      }
      if (b_ref.requires_grad()) {
        T* db = b_ref.grad();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t c = 0; c < C; ++c) {
            const int64_t off = (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) db[c] += dy[off + i];
          }
      }
    });
    out.set_requires_grad(true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// bilinear_sample

template <typename T>
Tensor<T> bilinear_sample(Tape<T>& tape, const Tensor<T>& featmap, double y, double x) {
  check(featmap.rank() == 3, "bilinear_sample: featmap must be [C,H,W]");
  const int64_t C = featmap.dim(0), H = featmap.dim(1), W = featmap.dim(2);
  check(y >= 0.0 && y <= static_cast<double>(H - 1) && x >= 0.0 &&
            x <= static_cast<double>(W - 1),
        "bilinear_sample: coordinates out of range");

  int64_t y0 = static_cast<int64_t>(std::floor(y));
  int64_t x0 = static_cast<int64_t>(std::floor(x));
  if (y0 > H - 2) y0 = std::max<int64_t>(H - 2, 0);
  if (x0 > W - 2) x0 = std::max<int64_t>(W - 2, 0);
  const int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
  const T wy = static_cast<T>(y - y0), wx = static_cast<T>(x - x0);
  const T w00 = (T(1) - wy) * (T(1) - wx), w01 = (T(1) - wy) * wx;
  const T w10 = wy * (T(1) - wx), w11 = wy * wx;

  Tensor<T> out({C});
  const T* f = featmap.data();
  for (int64_t c = 0; c < C; ++c) {
    const T* p = f + c * H * W;
    out.data()[c] = w00 * p[y0 * W + x0] + w01 * p[y0 * W + x1] +
                    w10 * p[y1 * W + x0] + w11 * p[y1 * W + x1];
  }

  if (tape.recording() && featmap.requires_grad()) {
    Tensor<T> out_ref = out, fm = featmap;
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      T* df = fm.grad();
      for (int64_t c = 0; c < C; ++c) {
        T* p = df + c * H * W;
        p[y0 * W + x0] += w00 * dy[c];
        p[y0 * W + x1] += w01 * dy[c];
        p[y1 * W + x0] += w10 * dy[c];
        p[y1 * W + x1] += w11 * dy[c];
      }
    });
    out.set_requires_grad(true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions and glue

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& input) {
  check(input.rank() == 4, "global_avg_pool: input must be [N,C,H,W]");
  const int64_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  Tensor<T> out({N, C});
  const T* x = input.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      double s = 0;
      const int64_t off = (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) s += x[off + i];
      out.data()[n * C + c] = static_cast<T>(s / HW);
    }

  if (tape.recording() && input.requires_grad()) {
    Tensor<T> out_ref = out, x_ref = input;
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      T* dx = x_ref.grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
          const T g = dy[n * C + c] / static_cast<T>(HW);
          const int64_t off = (n * C + c) * HW;
          for (int64_t i = 0; i < HW; ++i) dx[off + i] += g;
        }
    });
    out.set_requires_grad(true);
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(Tape<T>& tape, const Tensor<T>& input, int64_t c0, int64_t c1) {
  check(input.rank() == 2, "slice_cols: input must be [N,D]");
  const int64_t N = input.dim(0), D = input.dim(1);
  check(c0 >= 0 && c0 < c1 && c1 <= D, "slice_cols: bad column range");
  const int64_t M = c1 - c0;
  Tensor<T> out({N, M});
  for (int64_t n = 0; n < N; ++n)
    std::copy(input.data() + n * D + c0, input.data() + n * D + c1, out.data() + n * M);

  if (tape.recording() && input.requires_grad()) {
    Tensor<T> out_ref = out, x_ref = input;
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      T* dx = x_ref.grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t m = 0; m < M; ++m) dx[n * D + c0 + m] += dy[n * M + m];
    });
    out.set_requires_grad(true);
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input) {
  Tensor<T> out({1});
  double s = 0;
  for (T v : input.values()) s += v;
  out.data()[0] = static_cast<T>(s);

  if (tape.recording() && input.requires_grad()) {
    Tensor<T> out_ref = out, x_ref = input;
    tape.record([=]() mutable {
      const T g = out_ref.grad()[0];
      T* dx = x_ref.grad();
      for (int64_t i = 0; i < x_ref.numel(); ++i) dx[i] += g;
    });
    out.set_requires_grad(true);
  }
  return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& input) {
  Tensor<T> s = sum(tape, input);
  return scale(tape, s, T(1) / static_cast<T>(input.numel()));
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T c) {
  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  for (int64_t i = 0; i < input.numel(); ++i) y[i] = x[i] * c;

  if (tape.recording() && input.requires_grad()) {
    Tensor<T> out_ref = out, x_ref = input;
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      T* dx = x_ref.grad();
      for (int64_t i = 0; i < x_ref.numel(); ++i) dx[i] += dy[i] * c;
    });
    out.set_requires_grad(true);
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "add: shape mismatch");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];

  if (tape.recording() && (a.requires_grad() || b.requires_grad())) {
    Tensor<T> out_ref = out, ar = a, br = b;
    tape.record([=]() mutable {
      const T* dy = out_ref.grad();
      if (ar.requires_grad()) {
        T* da = ar.grad();
        for (int64_t i = 0; i < ar.numel(); ++i) da[i] += dy[i];
      }
      if (br.requires_grad()) {
        T* db = br.grad();
        for (int64_t i = 0; i < br.numel(); ++i) db[i] += dy[i];
      }
    });
    out.set_requires_grad(true);
  }
  return out;
}

// ---------------------------------------------------------------------------
// optimizer & init

template <typename T>
void sgd_momentum_step(std::vector<Tensor<T>>& params, OptimizerState<T>& state) {
  check(state.velocity.size() == params.size(), "sgd_momentum_step: state not initialized");
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& v = state.velocity[i];
    check(static_cast<int64_t>(v.size()) == p.numel(), "sgd_momentum_step: velocity shape mismatch");
    const T* g = p.has_grad() ? p.grad_values().data() : nullptr;
    T* w = p.data();
    for (int64_t j = 0; j < p.numel(); ++j) {
      v[j] = state.momentum * v[j] + state.learning_rate * (g ? g[j] : T(0));
      w[j] -= v[j];
    }
  }
}

template <typename T>
Tensor<T> xavier_init(const std::vector<int64_t>& shape, int64_t fan_in, Rng& rng) {
  check(fan_in > 0, "xavier_init: fan_in must be positive");
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  Tensor<T> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

// ---------------------------------------------------------------------------
// explicit instantiations

#define SELFCOLOR_INSTANTIATE(T)                                                          \
  template class Tensor<T>;                                                               \
  template class Tape<T>;                                                                 \
  template void check_finite<T>(const Tensor<T>&, const char*);                           \
  template Tensor<T> conv2d<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&,              \
                               const Tensor<T>&, int, int, PadMode, const Tensor<T>&);    \
  template Tensor<T> maxpool2d<T>(Tape<T>&, const Tensor<T>&, int, int);                  \
  template Tensor<T> affine<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&,              \
                               const Tensor<T>&);                                         \
  template Tensor<T> relu<T>(Tape<T>&, const Tensor<T>&);                                 \
  template Tensor<T> softmax<T>(Tape<T>&, const Tensor<T>&, int);                         \
  template Tensor<T> batchnorm2d<T>(Tape<T>&, const Tensor<T>&, BnMode,                   \
                                    RunningStats<T>&, T, T);                              \
  template Tensor<T> add_channel_bias<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> bilinear_sample<T>(Tape<T>&, const Tensor<T>&, double, double);      \
  template Tensor<T> global_avg_pool<T>(Tape<T>&, const Tensor<T>&);                      \
  template Tensor<T> slice_cols<T>(Tape<T>&, const Tensor<T>&, int64_t, int64_t);         \
  template Tensor<T> sum<T>(Tape<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mean<T>(Tape<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale<T>(Tape<T>&, const Tensor<T>&, T);                             \
  template Tensor<T> add<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template void sgd_momentum_step<T>(std::vector<Tensor<T>>&, OptimizerState<T>&);        \
  template Tensor<T> xavier_init<T>(const std::vector<int64_t>&, int64_t, Rng&);

SELFCOLOR_INSTANTIATE(float)
SELFCOLOR_INSTANTIATE(double)

#undef SELFCOLOR_INSTANTIATE

}  // namespace selfcolor
