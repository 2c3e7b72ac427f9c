#include "doctest.h"

#include <cmath>

#include "selfcolor/model.hpp"
#include "test_util.hpp"

using namespace selfcolor;
using namespace sctest;

TEST_CASE("spec validation and json round trip") {
  NetworkSpec spec = mini_vgg_spec(1);
  validate_spec(spec);
  NetworkSpec back = spec_from_json(spec_to_json(spec));
  CHECK(spec_hash(back) == spec_hash(spec));

  NetworkSpec dup = spec;
  dup.layers.push_back(dup.layers[0]);
  CHECK_THROWS(validate_spec(dup));

  NetworkSpec bad_tap = spec;
  bad_tap.taps.push_back("nope");
  CHECK_THROWS(validate_spec(bad_tap));
}

TEST_CASE("build_network: single 1x1 conv acts as identity once pinned") {
  NetworkSpec spec;
  spec.input_channels = 1;
  spec.layers.push_back({LayerKind::kConv, "conv1", 1, 1, 1, 0, PadMode::kZero});
  spec.taps = {"conv1"};
  Rng rng(5);
  auto net = build_network<double>(spec, rng);
  net.param("conv1.w").data()[0] = 1.0;
  net.param("conv1.b").data()[0] = 0.0;

  auto x = random_tensor<double>({2, 1, 4, 4}, rng);
  Tape<double> tape(false);
  auto acts = forward(net, tape, x, BnMode::kInfer);
  CHECK(max_abs_diff(acts.top, x) == 0.0);
}

TEST_CASE("mini-vgg: tap shapes at 32x32 follow the hand-derived chain") {
  NetworkSpec spec = mini_vgg_spec(1);
  Rng rng(6);
  auto net = build_network<float>(spec, rng);
  Tensor<float> x({2, 1, 32, 32}, 0.1f);
  Tape<float> tape(false);
  auto acts = forward(net, tape, x, BnMode::kTrain);
  REQUIRE(acts.taps.size() == 4);
  CHECK(acts.taps[0].shape() == std::vector<int64_t>{2, 16, 16, 16});  // pool1
  CHECK(acts.taps[1].shape() == std::vector<int64_t>{2, 32, 8, 8});    // pool2
  CHECK(acts.taps[2].shape() == std::vector<int64_t>{2, 64, 4, 4});    // pool3
  CHECK(acts.taps[3].shape() == std::vector<int64_t>{2, 128, 4, 4});   // conv8_relu
  CHECK(tap_channel_sum(spec) == 16 + 32 + 64 + 128);
  CHECK(tap_strides(spec) == std::vector<int>{2, 4, 8, 8});

  // Grayscale spec rejects color input.
  Tensor<float> color({1, 3, 32, 32}, 0.f);
  CHECK_THROWS(forward(net, tape, color, BnMode::kInfer));
}

TEST_CASE("receptive field: hand recurrences") {
  NetworkSpec spec;
  spec.input_channels = 1;
  spec.layers.push_back({LayerKind::kConv, "c1", 4, 3, 1, 1, PadMode::kZero});
  CHECK(compute_receptive_field(spec, "c1").rf_size == 3);
  CHECK(compute_receptive_field(spec, "c1").cumulative_stride == 1);

  spec.layers.push_back({LayerKind::kPool, "p1", 0, 2, 2});
  spec.layers.push_back({LayerKind::kConv, "c2", 4, 3, 1, 1, PadMode::kZero});
  auto fov = compute_receptive_field(spec, "c2");
  CHECK(fov.rf_size == 8);  // 3 + 1 + 2*2
  CHECK(fov.cumulative_stride == 2);

  CHECK_THROWS(compute_receptive_field(spec, "missing"));
}

TEST_CASE("add_fov_blocks: spec growth and receptive-field expansion") {
  NetworkSpec vgg = vgg16_shaped_spec(3);
  CHECK(compute_receptive_field(vgg, "pool5").cumulative_stride == 32);

  CHECK(add_fov_blocks(vgg, 0, 128).layers.size() == vgg.layers.size());

  NetworkSpec ext = add_fov_blocks(vgg, 2, 16);
  const int rf_before = compute_receptive_field(ext, "pool5").rf_size;
  const int rf_one = compute_receptive_field(ext, "fov1_relu").rf_size;
  const int rf_two = compute_receptive_field(ext, "fov2_relu").rf_size;
  CHECK(rf_one - rf_before == 160);  // pool: +1*32, conv: +2*64
  CHECK(rf_two - rf_one == 320);     // the recurrence compounds with stride
  CHECK(ext.taps.size() == vgg.taps.size() + 2);

  // Mini trunk at stride 4: one block expands by 4 + 2*8 = 20.
  NetworkSpec mini;
  mini.input_channels = 1;
  mini.layers.push_back({LayerKind::kConv, "c1", 4, 3, 1, 1, PadMode::kZero});
  mini.layers.push_back({LayerKind::kPool, "p1", 0, 2, 2});
  mini.layers.push_back({LayerKind::kConv, "c2", 4, 3, 1, 1, PadMode::kZero});
  mini.layers.push_back({LayerKind::kPool, "p2", 0, 2, 2});
  NetworkSpec mini_ext = add_fov_blocks(mini, 1, 8);
  const int before = compute_receptive_field(mini_ext, "p2").rf_size;
  const int after = compute_receptive_field(mini_ext, "fov1_relu").rf_size;
  CHECK(after - before == 20);
}

TEST_CASE("add_fov_blocks: existing activations unchanged") {
  NetworkSpec spec = mini_alex_spec(1);
  Rng rng(7);
  auto net = build_network<float>(spec, rng);
  Tensor<float> x = random_tensor<float>({1, 1, 32, 32}, rng, 0, 1);
  Tape<float> tape(false);
  auto base = forward(net, tape, x, BnMode::kInfer);

  NetworkSpec ext_spec = add_fov_blocks(spec, 1, 8);
  Rng rng2(8);
  auto fresh = build_network<float>(ext_spec, rng2);
  for (const auto& [name, t] : net.params) fresh.params[name] = t;  // share trunk
  for (const auto& [name, s] : net.bn_stats) fresh.bn_stats[name] = s;
  auto ext = forward(fresh, tape, x, BnMode::kInfer);
  for (size_t i = 0; i < base.named.size(); ++i) {
    CHECK(base.named[i].first == ext.named[i].first);
    CHECK(max_abs_diff(base.named[i].second, ext.named[i].second) == 0.0);
  }
}

TEST_CASE("receptive field agrees with empirical probing on a linear net") {
  // All-positive weights, no relu/pool nonlinearity in the way of signal
  // propagation (pool replaced by stride-2 conv to stay linear).
  NetworkSpec spec;
  spec.input_channels = 1;
  spec.layers.push_back({LayerKind::kConv, "c1", 2, 3, 1, 0, PadMode::kZero});
  spec.layers.push_back({LayerKind::kConv, "c2", 2, 3, 2, 0, PadMode::kZero});
  spec.layers.push_back({LayerKind::kConv, "c3", 1, 3, 1, 0, PadMode::kZero});
  Rng rng(9);
  auto net = build_network<double>(spec, rng);
  for (auto& [name, t] : net.params)
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = std::abs(t.data()[i]) + 0.01;

  const auto fov = compute_receptive_field(spec, "c3");
  const int H = 20;
  Tensor<double> x({1, 1, H, H}, 1.0);
  Tape<double> tape(false);
  auto base = forward(net, tape, x, BnMode::kInfer).top;

  // Output unit (0,0) must react exactly to input pixels inside its field.
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < H; ++xx) {
      Tensor<double> probe = x.clone();
      probe.data()[y * H + xx] += 1.0;
      auto out = forward(net, tape, probe, BnMode::kInfer).top;
      const bool changed = std::abs(out.data()[0] - base.data()[0]) > 1e-12;
      const bool inside = y < fov.rf_size && xx < fov.rf_size;
      CHECK(changed == inside);
    }
}

TEST_CASE("hypercolumn_extract: direct indexing, shape contract, dense oracle") {
  Rng rng(10);

  SUBCASE("single stride-1 tap at integer locations is direct indexing") {
    auto tap = random_tensor<float>({2, 3, 8, 8}, rng);
    PixelSampleSet locs = {{0, 2, 5}, {1, 7, 0}};
    Tape<float> tape(false);
    auto col = hypercolumn_extract(tape, {tap}, {1}, locs);
    CHECK(col.shape() == std::vector<int64_t>{2, 3});
    for (int c = 0; c < 3; ++c) {
      CHECK(col.data()[0 * 3 + c] == tap.data()[((0 * 3 + c) * 8 + 2) * 8 + 5]);
      CHECK(col.data()[1 * 3 + c] == tap.data()[((1 * 3 + c) * 8 + 7) * 8 + 0]);
    }
  }

  SUBCASE("two taps concatenate channel counts in order") {
    auto t1 = random_tensor<float>({1, 3, 8, 8}, rng);
    auto t2 = random_tensor<float>({1, 5, 4, 4}, rng);
    PixelSampleSet locs = {{0, 3, 3}};
    Tape<float> tape(false);
    auto col = hypercolumn_extract(tape, {t1, t2}, {1, 2}, locs);
    CHECK(col.shape() == std::vector<int64_t>{1, 8});
  }

  SUBCASE("sparse extraction equals an independent per-pixel gather") {
    auto t1 = random_tensor<double>({1, 2, 8, 8}, rng);
    auto t2 = random_tensor<double>({1, 3, 4, 4}, rng);
    const std::vector<int> strides = {1, 2};
    PixelSampleSet all;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) all.push_back({0, y, x});
    Tape<double> tape(false);
    auto col = hypercolumn_extract(tape, {t1, t2}, strides, all);

    auto sample_tap = [](const Tensor<double>& t, int stride, double y, double x, int c) {
      const int64_t H = t.dim(2), W = t.dim(3);
      double fy = std::clamp((y + 0.5) / stride - 0.5, 0.0, static_cast<double>(H - 1));
      double fx = std::clamp((x + 0.5) / stride - 0.5, 0.0, static_cast<double>(W - 1));
      const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(fy), H - 2 >= 0 ? H - 2 : 0);
      const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(fx), W - 2 >= 0 ? W - 2 : 0);
      const double wy = fy - y0, wx = fx - x0;
      auto at = [&](int64_t yy, int64_t xx) { return t.data()[(c * H + yy) * W + xx]; };
      return (1 - wy) * (1 - wx) * at(y0, x0) + (1 - wy) * wx * at(y0, x0 + 1) +
             wy * (1 - wx) * at(y0 + 1, x0) + wy * wx * at(y0 + 1, x0 + 1);
    };
    for (size_t k = 0; k < all.size(); ++k) {
      for (int c = 0; c < 2; ++c)
        CHECK(std::abs(col.data()[k * 5 + c] -
                       sample_tap(t1, 1, all[k].y, all[k].x, c)) < 1e-6);
      for (int c = 0; c < 3; ++c)
        CHECK(std::abs(col.data()[k * 5 + 2 + c] -
                       sample_tap(t2, 2, all[k].y, all[k].x, c)) < 1e-6);
    }
  }

  SUBCASE("gradients flow through the extraction") {
    auto t1 = random_tensor<double>({1, 2, 6, 6}, rng);
    auto t2 = random_tensor<double>({1, 2, 3, 3}, rng);
    PixelSampleSet locs = {{0, 1, 4}, {0, 5, 2}, {0, 0, 0}};
    std::vector<double> c(3 * 4);
    for (auto& v : c) v = rng.uniform(-1, 1);
    auto fn = [&](Tape<double>& t) {
      return weighted_sum(t, hypercolumn_extract(t, {t1, t2}, {1, 2}, locs), c);
    };
    CHECK(gradient_check(fn, {t1, t2}) < 1e-4);
  }
}

TEST_CASE("head: affine stack shapes and gradient flow") {
  Rng rng(11);
  auto head = build_head<double>(10, 6, 4, rng);
  auto x = random_tensor<double>({3, 10}, rng);
  Tape<double> tape(false);
  auto y = head_forward(head, tape, x);
  CHECK(y.shape() == std::vector<int64_t>{3, 4});

  auto flat = build_head<double>(10, 0, 4, rng);
  Tape<double> t2(false);
  CHECK(head_forward(flat, t2, x).shape() == std::vector<int64_t>{3, 4});

  std::vector<double> c(12);
  for (auto& v : c) v = rng.uniform(-1, 1);
  auto fn = [&](Tape<double>& t) { return weighted_sum(t, head_forward(head, t, x), c); };
  std::vector<Tensor<double>> inputs = {x, head.param("head.fc1.w"), head.param("head.fc1.b"),
                                        head.param("head.fc2.w"), head.param("head.fc2.b")};
  CHECK(gradient_check(fn, inputs) < 1e-4);
}

TEST_CASE("forward: bias-of-previous padding feeds the batchnorm bias") {
  // conv1 (bn, bias b1) -> conv2 with kFill padding: out-of-image positions
  // of conv2's input read b1 rather than 0.
  NetworkSpec spec;
  spec.input_channels = 1;
  spec.layers.push_back({LayerKind::kConv, "c1", 2, 3, 1, 1, PadMode::kZero});
  spec.layers.push_back({LayerKind::kBatchNorm, "c1_bn"});
  spec.layers.push_back({LayerKind::kConv, "c2", 1, 3, 1, 1, PadMode::kFill});
  Rng rng(12);
  auto net = build_network<double>(spec, rng);
  net.param("c1.b").data()[0] = 0.7;
  net.param("c1.b").data()[1] = -0.3;

  auto x = random_tensor<double>({1, 1, 6, 6}, rng);
  Tape<double> tape(false);
  auto acts = forward(net, tape, x, BnMode::kTrain);

  // Reference: bn(conv1) + b1, then conv2 with constant fill = b1.
  auto c1 = reference_conv2d(x, net.param("c1.w"), Tensor<double>{}, 1, 1);
  RunningStats<double> stats;
  auto bn = batchnorm2d(tape, c1, BnMode::kTrain, stats);
  for (int ch = 0; ch < 2; ++ch)
    for (int i = 0; i < 36; ++i) bn.data()[ch * 36 + i] += net.param("c1.b").data()[ch];
  auto expect = reference_conv2d(bn, net.param("c2.w"), net.param("c2.b"), 1, 1,
                                 {0.7, -0.3});
  CHECK(max_abs_diff(acts.top, expect) < 1e-9);
}
