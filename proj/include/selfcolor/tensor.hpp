// Dense tensors with tape-based reverse-mode autodiff, plus the optimizer
// and initializer used by every network in this project.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace selfcolor {

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Deterministic RNG. All sampling goes through this wrapper so that fixed
// seeds reproduce bit-identically regardless of the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  // Derived stream for (this rng's seed, index); order-independent.
  Rng child(uint64_t index) const;

  double uniform();                    // [0, 1)
  double uniform(double lo, double hi);
  int64_t uniform_int(int64_t n);      // [0, n), unbiased
  double normal();                     // standard normal (Box-Muller)
  bool coin(double p = 0.5);

  // Sample k distinct values from [0, n) via partial Fisher-Yates.
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k);
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i)
      std::swap(v[i], v[uniform_int(i + 1)]);
  }

  std::string serialize_state() const;
  void restore_state(const std::string& s);
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape, T fill = T(0));
  static Tensor from(std::vector<int64_t> shape, std::vector<T> values);
  static Tensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return s_ != nullptr; }
  const std::vector<int64_t>& shape() const { return s_->shape; }
  int64_t dim(int i) const { return s_->shape[i]; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(s_->val.size()); }

  T* data() { return s_->val.data(); }
  const T* data() const { return s_->val.data(); }
  std::vector<T>& values() { return s_->val; }
  const std::vector<T>& values() const { return s_->val; }

  // Gradient buffer; allocated (zeroed) on first access.
  T* grad();
  const std::vector<T>& grad_values() const;
  bool has_grad() const { return !s_->grad.empty(); }
  void zero_grad();

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool b) { s_->requires_grad = b; }

  T item() const;
  Tensor clone() const;  // deep copy of values (not grad)

  // Identity of the underlying buffer (copies share storage).
  const void* storage_id() const { return s_.get(); }

 private:
  struct Storage {
    std::vector<int64_t> shape;
    std::vector<T> val;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

// Ordered record of executed operations; one reverse sweep per tape.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  void record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
  }
  size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the recorded ops in reverse
  // execution order. The tape is consumed; a second call is an error.
  void backward(Tensor<T>& loss);

 private:
  std::vector<std::function<void()>> ops_;
  bool recording_;
  bool consumed_ = false;
};

enum class PadMode { kZero, kFill };  // kFill: out-of-image reads a per-channel value
enum class BnMode { kTrain, kInfer };

// Bias-corrected exponential moving averages: the first batch initializes
// mean/var exactly and the blend factor approaches `ema` as updates grow, so
// the stored values are usable estimates from the first step on.
template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;
  int64_t updates = 0;
};

// --- Operators -------------------------------------------------------------
// All operators are pure in their inputs; they push a backward closure onto
// the tape when recording and some input requires a gradient.

// Cross-correlation. `bias` and `fill` may be undefined tensors. With
// PadMode::kFill, out-of-image positions read fill[c] instead of zero and
// the fill vector itself receives gradient.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int pad,
                 PadMode pad_mode = PadMode::kZero, const Tensor<T>& fill = {});

// Window max; gradient routed to the first max element in row-major order.
template <typename T>
Tensor<T> maxpool2d(Tape<T>& tape, const Tensor<T>& input, int k, int stride);

template <typename T>
Tensor<T> affine(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias);

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input);

// Numerically stable softmax along `axis`.
template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& input, int axis);

// Parameter-free batch normalization over [N,C,H,W] (per-channel, no learned
// scale/shift). Train mode normalizes by batch statistics and updates the
// running averages with EMA factor `ema`; infer mode uses the running stats.
template <typename T>
Tensor<T> batchnorm2d(Tape<T>& tape, const Tensor<T>& input, BnMode mode,
                      RunningStats<T>& stats, T eps = T(1e-5), T ema = T(0.99));

template <typename T>
Tensor<T> add_channel_bias(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& bias);

// Bilinear interpolation of a [C,H,W] map at fractional (y, x).
template <typename T>
Tensor<T> bilinear_sample(Tape<T>& tape, const Tensor<T>& featmap, double y, double x);

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& input);  // [N,C,H,W] -> [N,C]

template <typename T>
Tensor<T> slice_cols(Tape<T>& tape, const Tensor<T>& input, int64_t c0, int64_t c1);

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input);   // -> scalar

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& input);  // -> scalar

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T c);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// --- Optimizer & init -------------------------------------------------------

// Heavy-ball SGD; the learning rate lives inside the velocity:
//   v <- momentum * v + lr * g;  w <- w - v
template <typename T>
struct OptimizerState {
  T learning_rate;
  T momentum = T(0.9);
  std::vector<std::vector<T>> velocity;  // aligned with the parameter list

  void init(const std::vector<Tensor<T>>& params) {
    velocity.clear();
    for (const auto& p : params) velocity.emplace_back(p.numel(), T(0));
  }
};

template <typename T>
void sgd_momentum_step(std::vector<Tensor<T>>& params, OptimizerState<T>& state);

// Uniform on [-sqrt(3/fan_in), +sqrt(3/fan_in)] (variance 1/fan_in).
template <typename T>
Tensor<T> xavier_init(const std::vector<int64_t>& shape, int64_t fan_in, Rng& rng);

// Throws if any element is non-finite.
template <typename T>
void check_finite(const Tensor<T>& t, const char* where);

}  // namespace selfcolor
