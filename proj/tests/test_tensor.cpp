#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "selfcolor/tensor.hpp"
#include "test_util.hpp"

using namespace selfcolor;
using namespace sctest;

TEST_CASE("rng: determinism, children, state round trip") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());

  Rng parent(3);
  Rng c1 = parent.child(5), c2 = parent.child(5), c3 = parent.child(6);
  CHECK(c1.uniform() == c2.uniform());
  CHECK(c1.uniform() != c3.uniform());

  Rng d(11);
  d.uniform();
  d.normal();
  const std::string state = d.serialize_state();
  Rng e(0);
  e.restore_state(state);
  for (int i = 0; i < 50; ++i) CHECK(d.normal() == e.normal());
}

TEST_CASE("rng: sample_without_replacement is a k-subset") {
  Rng rng(1);
  auto s = rng.sample_without_replacement(10, 10);
  std::sort(s.begin(), s.end());
  for (int i = 0; i < 10; ++i) CHECK(s[i] == i);
  auto t = rng.sample_without_replacement(100, 5);
  CHECK(t.size() == 5);
  std::sort(t.begin(), t.end());
  CHECK(std::unique(t.begin(), t.end()) == t.end());
}

TEST_CASE("conv2d: 1x1 identity-times-two on a constant image") {
  Tape<double> tape;
  Tensor<double> x({1, 1, 3, 3}, 1.0);
  Tensor<double> w = Tensor<double>::from({1, 1, 1, 1}, {2.0});
  Tensor<double> b = Tensor<double>::from({1}, {0.0});
  auto y = conv2d(tape, x, w, b, 1, 0);
  CHECK(y.shape() == std::vector<int64_t>{1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == doctest::Approx(2.0));
}

TEST_CASE("conv2d: full-window kernel sums the elements") {
  Tape<double> tape;
  Tensor<double> x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> w({1, 1, 2, 2}, 1.0);
  Tensor<double> b({1}, 0.0);
  auto y = conv2d(tape, x, w, b, 1, 0);
  CHECK(y.numel() == 1);
  CHECK(y.item() == doctest::Approx(10.0));
}

TEST_CASE("conv2d: random case matches the sliding-window reference") {
  Rng rng(42);
  for (int trial = 0; trial < 4; ++trial) {
    auto x = random_tensor<double>({2, 3, 8, 8}, rng);
    auto w = random_tensor<double>({4, 3, 3, 3}, rng);
    auto b = random_tensor<double>({4}, rng);
    const int stride = trial % 2 + 1, pad = trial % 3;
    Tape<double> tape(false);
    auto y = conv2d(tape, x, w, b, stride, pad);
    auto ref = reference_conv2d(x, w, b, stride, pad);
    CHECK(max_abs_diff(y, ref) < 1e-6);
  }
}

TEST_CASE("conv2d: bias-fill padding reads the fill value out of image") {
  Rng rng(43);
  auto x = random_tensor<double>({1, 2, 5, 5}, rng);
  auto w = random_tensor<double>({3, 2, 3, 3}, rng);
  auto b = random_tensor<double>({3}, rng);
  auto fill = random_tensor<double>({2}, rng);
  Tape<double> tape(false);
  auto y = conv2d(tape, x, w, b, 1, 1, PadMode::kFill, fill);
  auto ref = reference_conv2d(x, w, b, 1, 1, {fill.data()[0], fill.data()[1]});
  CHECK(max_abs_diff(y, ref) < 1e-12);
}

TEST_CASE("maxpool2d: window max and tie-breaking") {
  Tape<double> tape;
  Tensor<double> x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = maxpool2d(tape, x, 2, 2);
  CHECK(y.item() == doctest::Approx(4.0));

  // Constant input: output constant, gradient lands on the first element
  // of each window in row-major order.
  Tensor<double> c({1, 1, 2, 2}, 5.0);
  c.set_requires_grad(true);
  Tape<double> tape2;
  auto out = maxpool2d(tape2, c, 2, 2);
  CHECK(out.item() == doctest::Approx(5.0));
  auto loss = sum(tape2, out);
  tape2.backward(loss);
  CHECK(c.grad_values()[0] == doctest::Approx(1.0));
  for (int i = 1; i < 4; ++i) CHECK(c.grad_values()[i] == doctest::Approx(0.0));
}

TEST_CASE("maxpool2d: random case matches brute-force window max") {
  Rng rng(44);
  auto x = random_tensor<double>({1, 1, 6, 6}, rng);
  Tape<double> tape(false);
  auto y = maxpool2d(tape, x, 2, 2);
  for (int oy = 0; oy < 3; ++oy)
    for (int ox = 0; ox < 3; ++ox) {
      double best = -1e300;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          best = std::max(best, x.data()[(oy * 2 + dy) * 6 + ox * 2 + dx]);
      CHECK(y.data()[oy * 3 + ox] == best);
    }
}

TEST_CASE("affine: identity, broadcast bias, triple-loop reference") {
  Tape<double> tape(false);
  Rng rng(45);
  auto x = random_tensor<double>({3, 4}, rng);

  Tensor<double> eye({4, 4}, 0.0);
  for (int i = 0; i < 4; ++i) eye.data()[i * 4 + i] = 1.0;
  Tensor<double> zero_b({4}, 0.0);
  CHECK(max_abs_diff(affine(tape, x, eye, zero_b), x) == 0.0);

  Tensor<double> zero_w({4, 2}, 0.0);
  auto b = random_tensor<double>({2}, rng);
  auto rows = affine(tape, x, zero_w, b);
  for (int n = 0; n < 3; ++n)
    for (int m = 0; m < 2; ++m) CHECK(rows.data()[n * 2 + m] == b.data()[m]);

  auto w = random_tensor<double>({4, 2}, rng);
  auto y = affine(tape, x, w, b);
  for (int n = 0; n < 3; ++n)
    for (int m = 0; m < 2; ++m) {
      double acc = b.data()[m];
      for (int d = 0; d < 4; ++d) acc += x.data()[n * 4 + d] * w.data()[d * 2 + m];
      CHECK(std::abs(y.data()[n * 2 + m] - acc) < 1e-12);
    }
}

TEST_CASE("relu and softmax: anchor values and stability") {
  Tape<double> tape(false);
  auto r = relu(tape, Tensor<double>::from({2}, {-1.0, 2.0}));
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 2.0);

  auto s = softmax(tape, Tensor<double>::from({2}, {0.0, 0.0}), 0);
  CHECK(s.data()[0] == doctest::Approx(0.5));
  CHECK(s.data()[1] == doctest::Approx(0.5));

  auto big = softmax(tape, Tensor<double>::from({2}, {1000.0, 1000.0}), 0);
  CHECK(big.data()[0] == doctest::Approx(0.5));

  Rng rng(46);
  auto z = random_tensor<double>({5, 7}, rng, -3, 3);
  auto p = softmax(tape, z, 1);
  for (int n = 0; n < 5; ++n) {
    double total = 0;
    for (int d = 0; d < 7; ++d) total += p.data()[n * 7 + d];
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
  // Invariance to adding a constant per row.
  auto z2 = z.clone();
  for (int n = 0; n < 5; ++n)
    for (int d = 0; d < 7; ++d) z2.data()[n * 7 + d] += 3.25;
  CHECK(max_abs_diff(softmax(tape, z2, 1), p) < 1e-6);
}

TEST_CASE("batchnorm2d: train-mode statistics and infer-mode formula") {
  Rng rng(47);
  auto x = random_tensor<double>({4, 3, 5, 5}, rng, -2, 5);
  RunningStats<double> stats;
  Tape<double> tape(false);
  auto y = batchnorm2d(tape, x, BnMode::kTrain, stats);
  const int64_t cnt = 4 * 5 * 5;
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) m += y.data()[(n * 3 + c) * 25 + i];
    m /= cnt;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) {
        const double d = y.data()[(n * 3 + c) * 25 + i] - m;
        v += d * d;
      }
    v /= cnt;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1.0) < 1e-4);
  }

  // Constant channel normalizes to zero via the epsilon term.
  Tensor<double> flat({2, 1, 3, 3}, 7.5);
  RunningStats<double> s2;
  auto z2 = batchnorm2d(tape, flat, BnMode::kTrain, s2);
  for (int i = 0; i < z2.numel(); ++i) CHECK(z2.data()[i] == doctest::Approx(0.0));

  RunningStats<double> fixed;
  fixed.mean = {2.0};
  fixed.var = {4.0};
  Tensor<double> q({1, 1, 1, 2}, 4.0);
  auto out = batchnorm2d(tape, q, BnMode::kInfer, fixed);
  const double expected = (4.0 - 2.0) / std::sqrt(4.0 + 1e-5);
  CHECK(out.data()[0] == doctest::Approx(expected).epsilon(1e-9));
  CHECK(out.data()[0] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("batchnorm2d: train mode rejects a single-value channel") {
  Tensor<double> x({1, 2, 1, 1}, 1.0);
  RunningStats<double> stats;
  Tape<double> tape(false);
  CHECK_THROWS(batchnorm2d(tape, x, BnMode::kTrain, stats));
}

TEST_CASE("bilinear_sample: integers, midpoints, four-corner oracle") {
  Tape<double> tape(false);
  Tensor<double> fm = Tensor<double>::from({1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
  CHECK(bilinear_sample(tape, fm, 1.0, 1.0).data()[0] == doctest::Approx(3.0));
  CHECK(bilinear_sample(tape, fm, 0.0, 0.5).data()[0] == doctest::Approx(0.5));

  Rng rng(48);
  auto f = random_tensor<double>({3, 6, 7}, rng);
  const double y = rng.uniform(0, 5), x = rng.uniform(0, 6);
  auto v = bilinear_sample(tape, f, y, x);
  const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  const double wy = y - y0, wx = x - x0;
  for (int c = 0; c < 3; ++c) {
    const auto at = [&](int yy, int xx) { return f.data()[(c * 6 + yy) * 7 + xx]; };
    const double expect = (1 - wy) * (1 - wx) * at(y0, x0) + (1 - wy) * wx * at(y0, x0 + 1) +
                          wy * (1 - wx) * at(y0 + 1, x0) + wy * wx * at(y0 + 1, x0 + 1);
    CHECK(std::abs(v.data()[c] - expect) < 1e-12);
  }
  CHECK_THROWS(bilinear_sample(tape, f, -0.5, 0.0));
  CHECK_THROWS(bilinear_sample(tape, f, 0.0, 6.5));
}

TEST_CASE("backward: trivial gradients and tape discipline") {
  Tensor<double> w({3, 2}, 0.5);
  w.set_requires_grad(true);

  Tape<double> tape;
  auto loss = sum(tape, w);
  tape.backward(loss);
  for (int i = 0; i < 6; ++i) CHECK(w.grad_values()[i] == doctest::Approx(1.0));

  // loss = 0 * f(w) has zero gradient everywhere.
  w.zero_grad();
  Tape<double> tape2;
  auto zero_loss = scale(tape2, sum(tape2, relu(tape2, w)), 0.0);
  tape2.backward(zero_loss);
  for (int i = 0; i < 6; ++i) CHECK(w.grad_values()[i] == doctest::Approx(0.0));

  Tape<double> tape3;
  auto y = relu(tape3, w);
  CHECK_THROWS(tape3.backward(y));  // non-scalar loss

  Tape<double> tape4;
  auto l4 = sum(tape4, w);
  tape4.backward(l4);
  CHECK_THROWS(tape4.backward(l4));  // consumed tape
}

TEST_CASE("gradients: finite differences across the operator set") {
  Rng rng(49);
  auto coeffs = [&](int64_t n) {
    std::vector<double> c(n);
    for (auto& v : c) v = rng.uniform(-1, 1);
    return c;
  };

  SUBCASE("conv2d with bias fill") {
    auto x = random_tensor<double>({2, 2, 5, 5}, rng);
    auto w = random_tensor<double>({3, 2, 3, 3}, rng);
    auto b = random_tensor<double>({3}, rng);
    auto fill = random_tensor<double>({2}, rng);
    auto c = coeffs(2 * 3 * 5 * 5);
    auto fn = [&](Tape<double>& t) {
      return weighted_sum(t, conv2d(t, x, w, b, 1, 1, PadMode::kFill, fill), c);
    };
    CHECK(gradient_check(fn, {x, w, b, fill}) < 1e-4);
  }
  SUBCASE("maxpool2d") {
    auto x = random_tensor<double>({1, 2, 6, 6}, rng);
    auto c = coeffs(2 * 3 * 3);
    auto fn = [&](Tape<double>& t) { return weighted_sum(t, maxpool2d(t, x, 2, 2), c); };
    CHECK(gradient_check(fn, {x}) < 1e-4);
  }
  SUBCASE("affine") {
    auto x = random_tensor<double>({3, 4}, rng);
    auto w = random_tensor<double>({4, 2}, rng);
    auto b = random_tensor<double>({2}, rng);
    auto c = coeffs(6);
    auto fn = [&](Tape<double>& t) { return weighted_sum(t, affine(t, x, w, b), c); };
    CHECK(gradient_check(fn, {x, w, b}) < 1e-4);
  }
  SUBCASE("softmax") {
    auto x = random_tensor<double>({3, 5}, rng, -2, 2);
    auto c = coeffs(15);
    auto fn = [&](Tape<double>& t) { return weighted_sum(t, softmax(t, x, 1), c); };
    CHECK(gradient_check(fn, {x}) < 1e-4);
  }
  SUBCASE("batchnorm train mode") {
    auto x = random_tensor<double>({2, 2, 3, 3}, rng);
    auto c = coeffs(2 * 2 * 9);
    auto fn = [&](Tape<double>& t) {
      RunningStats<double> stats;  // fresh per call: forward is repeatable
      return weighted_sum(t, batchnorm2d(t, x, BnMode::kTrain, stats), c);
    };
    CHECK(gradient_check(fn, {x}) < 1e-4);
  }
  SUBCASE("bilinear_sample") {
    auto fm = random_tensor<double>({2, 4, 4}, rng);
    auto c = coeffs(2);
    auto fn = [&](Tape<double>& t) {
      return weighted_sum(t, bilinear_sample(t, fm, 1.3, 2.6), c);
    };
    CHECK(gradient_check(fn, {fm}) < 1e-4);
  }
  SUBCASE("global_avg_pool") {
    auto x = random_tensor<double>({2, 3, 4, 4}, rng);
    auto c = coeffs(6);
    auto fn = [&](Tape<double>& t) { return weighted_sum(t, global_avg_pool(t, x), c); };
    CHECK(gradient_check(fn, {x}) < 1e-4);
  }
}

TEST_CASE("sgd_momentum_step: anchor sequences") {
  SUBCASE("single step from zero velocity") {
    std::vector<Tensor<double>> params = {Tensor<double>::from({2}, {1.0, -2.0})};
    params[0].set_requires_grad(true);
    params[0].grad()[0] = 0.5;
    params[0].grad()[1] = -1.0;
    OptimizerState<double> opt;
    opt.learning_rate = 0.1;
    opt.init(params);
    sgd_momentum_step(params, opt);
    CHECK(params[0].data()[0] == doctest::Approx(1.0 - 0.1 * 0.5));
    CHECK(params[0].data()[1] == doctest::Approx(-2.0 + 0.1));
  }
  SUBCASE("zero momentum reduces to plain SGD over any sequence") {
    std::vector<Tensor<double>> params = {Tensor<double>::from({1}, {0.0})};
    params[0].set_requires_grad(true);
    OptimizerState<double> opt;
    opt.learning_rate = 0.2;
    opt.momentum = 0.0;
    opt.init(params);
    Rng rng(50);
    double expect = 0.0;
    for (int i = 0; i < 10; ++i) {
      const double g = rng.uniform(-1, 1);
      params[0].zero_grad();
      params[0].grad()[0] = g;
      sgd_momentum_step(params, opt);
      expect -= 0.2 * g;
      CHECK(params[0].data()[0] == doctest::Approx(expect));
    }
  }
  SUBCASE("two steps of the heavy-ball recurrence") {
    std::vector<Tensor<double>> params = {Tensor<double>::from({1}, {0.0})};
    params[0].set_requires_grad(true);
    OptimizerState<double> opt;
    opt.learning_rate = 0.1;
    opt.momentum = 0.9;
    opt.init(params);
    for (int i = 0; i < 2; ++i) {
      params[0].zero_grad();
      params[0].grad()[0] = 1.0;
      sgd_momentum_step(params, opt);
    }
    // v1 = 0.1, w1 = -0.1; v2 = 0.09 + 0.1 = 0.19, w2 = -0.29
    CHECK(params[0].data()[0] == doctest::Approx(-0.29));
  }
}

TEST_CASE("xavier_init: bounds, variance, determinism") {
  Rng rng(51);
  const int64_t fan_in = 48;
  auto t = xavier_init<double>({200, 500}, fan_in, rng);
  const double bound = std::sqrt(3.0 / fan_in);
  double var = 0;
  for (int64_t i = 0; i < t.numel(); ++i) {
    CHECK(t.data()[i] >= -bound);
    CHECK(t.data()[i] <= bound);
    var += t.data()[i] * t.data()[i];
  }
  var /= t.numel();
  CHECK(var == doctest::Approx(1.0 / fan_in).epsilon(0.10));

  Rng r1(9), r2(9);
  auto a = xavier_init<float>({37}, 5, r1);
  auto b = xavier_init<float>({37}, 5, r2);
  for (int i = 0; i < 37; ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("shape errors surface as exceptions") {
  Tape<double> tape(false);
  Rng rng(52);
  auto x = random_tensor<double>({1, 2, 4, 4}, rng);
  auto w = random_tensor<double>({1, 3, 3, 3}, rng);  // channel mismatch
  CHECK_THROWS(conv2d(tape, x, w, Tensor<double>({1}, 0.0), 1, 0));
  auto a = random_tensor<double>({2, 3}, rng);
  auto wa = random_tensor<double>({4, 2}, rng);  // inner mismatch
  CHECK_THROWS(affine(tape, a, wa, Tensor<double>({2}, 0.0)));
  CHECK_THROWS(maxpool2d(tape, x, 5, 1));  // window larger than extent
}
