#include "doctest.h"

#include <cmath>
#include <set>

#include "selfcolor/dataset.hpp"
#include "selfcolor/labelspace.hpp"
#include "test_util.hpp"

using namespace selfcolor;

namespace {

Dataset tiny_dataset(int per_class, int classes = 12, uint64_t seed = 5) {
  ColoredShapesSpec spec;
  spec.image_size = 16;
  spec.num_classes = classes;
  spec.emit_masks = false;
  spec.split_counts = {{"train", per_class * classes}};
  return generate_colored_shapes(spec, seed);
}

}  // namespace

TEST_CASE("hierarchical_merge: identity, collapse, family cut") {
  Dataset ds = tiny_dataset(2);
  const auto tree = default_shapes_hierarchy();

  Dataset same = hierarchical_merge(ds, tree, 12);
  for (size_t i = 0; i < ds.split("train").size(); ++i)
    CHECK(same.split("train")[i].label == ds.split("train")[i].label);

  Dataset one = hierarchical_merge(ds, tree, 1);
  for (const auto& s : one.split("train")) CHECK(s.label == 0);
  CHECK(one.num_classes() == 1);

  // Cut at the four families: classes 0-2 round, 3-5 quad, 6-8 tri, 9-11 stroke.
  Dataset fam = hierarchical_merge(ds, tree, 4);
  CHECK(fam.num_classes() == 4);
  for (size_t i = 0; i < ds.split("train").size(); ++i) {
    const int orig = ds.split("train")[i].label;
    CHECK(fam.split("train")[i].label == orig / 3);
  }

  // Two supergroups.
  Dataset super = hierarchical_merge(ds, tree, 2);
  for (size_t i = 0; i < ds.split("train").size(); ++i)
    CHECK(super.split("train")[i].label == ds.split("train")[i].label / 6);

  CHECK_THROWS(hierarchical_merge(ds, tree, 5));  // no cut yields 5 groups

  Dataset alien = ds;
  alien.class_names[0] = "unknown_shape";
  CHECK_THROWS(hierarchical_merge(alien, tree, 4));  // uncoverable label
}

TEST_CASE("random_buckets: partition properties and golden mapping") {
  Dataset ds = tiny_dataset(1);

  // n_buckets == classes is a bijection.
  auto bij = random_bucket_mapping(12, 12, 3);
  std::set<int> seen(bij.begin(), bij.end());
  CHECK(seen.size() == 12);

  // Every bucket non-empty across seeds.
  for (uint64_t seed = 0; seed < 50; ++seed) {
    auto m = random_bucket_mapping(12, 4, seed);
    std::set<int> buckets(m.begin(), m.end());
    CHECK(buckets.size() == 4);
    for (int b : m) {
      CHECK(b >= 0);
      CHECK(b < 4);
    }
  }

  // Golden mapping frozen from the first run at seed 2024.
  auto golden = random_bucket_mapping(12, 4, 2024);
  CHECK(golden == std::vector<int>{1, 0, 1, 2, 3, 2, 3, 0, 0, 1, 2, 2});
  CHECK(random_bucket_mapping(12, 4, 2024) == golden);

  Dataset bucketed = random_buckets(ds, 4, 2024);
  CHECK(bucketed.num_classes() == 4);
  for (size_t i = 0; i < ds.split("train").size(); ++i)
    CHECK(bucketed.split("train")[i].label == golden[ds.split("train")[i].label]);

  CHECK_THROWS(random_buckets(ds, 13, 0));
}

TEST_CASE("label_noise: counts, determinism, eval split untouched") {
  ColoredShapesSpec spec;
  spec.image_size = 16;
  spec.emit_masks = false;
  spec.split_counts = {{"train", 1000}, {"test", 50}};
  Dataset ds = generate_colored_shapes(spec, 5);

  Dataset zero = label_noise(ds, "train", 0.0, 1);
  for (size_t i = 0; i < ds.split("train").size(); ++i)
    CHECK(zero.split("train")[i].label == ds.split("train")[i].label);

  Dataset noisy = label_noise(ds, "train", 0.1, 1);
  int changed = 0;
  for (size_t i = 0; i < ds.split("train").size(); ++i)
    if (noisy.split("train")[i].label != ds.split("train")[i].label) ++changed;
  CHECK(changed <= 100);  // exactly 100 redraws, coincidences allowed
  // Expected changes 100*(1 - 1/12): allow 4 sigma of Binomial(100, 11/12).
  const double expect = 100.0 * 11 / 12;
  CHECK(std::abs(changed - expect) < 4 * std::sqrt(100 * (11.0 / 12) * (1.0 / 12)));

  for (size_t i = 0; i < ds.split("test").size(); ++i)
    CHECK(noisy.split("test")[i].label == ds.split("test")[i].label);

  Dataset again = label_noise(ds, "train", 0.1, 1);
  for (size_t i = 0; i < ds.split("train").size(); ++i)
    CHECK(again.split("train")[i].label == noisy.split("train")[i].label);

  // Full redraw: labels approach the uniform distribution (3 sigma).
  Dataset full = label_noise(ds, "train", 1.0, 9);
  std::vector<int> counts(12, 0);
  for (const auto& s : full.split("train")) counts[s.label]++;
  const double mean = 1000.0 / 12;
  const double sigma = std::sqrt(1000 * (1.0 / 12) * (11.0 / 12));
  for (int c : counts) CHECK(std::abs(c - mean) < 3 * sigma);
}

TEST_CASE("subsample_per_class: flat histogram, determinism, errors") {
  Dataset ds = tiny_dataset(10);
  Dataset sub = subsample_per_class(ds, "train", 4, 2);
  CHECK(sub.split("train").size() == 4 * 12);
  std::vector<int> counts(12, 0);
  for (const auto& s : sub.split("train")) counts[s.label]++;
  for (int c : counts) CHECK(c == 4);

  Dataset sub2 = subsample_per_class(ds, "train", 4, 2);
  for (size_t i = 0; i < sub.split("train").size(); ++i) {
    CHECK(sub2.split("train")[i].label == sub.split("train")[i].label);
    CHECK(sub2.split("train")[i].rgb.data == sub.split("train")[i].rgb.data);
  }

  CHECK_NOTHROW(subsample_per_class(ds, "train", 10, 0));  // k = min class size
  CHECK_THROWS(subsample_per_class(ds, "train", 11, 0));
}

TEST_CASE("transforms preserve sample counts except subsample") {
  Dataset ds = tiny_dataset(3);
  const size_t n = ds.split("train").size();
  CHECK(hierarchical_merge(ds, default_shapes_hierarchy(), 4).split("train").size() == n);
  CHECK(random_buckets(ds, 5, 0).split("train").size() == n);
  CHECK(label_noise(ds, "train", 0.5, 0).split("train").size() == n);
  CHECK(subsample_per_class(ds, "train", 2, 0).split("train").size() == 24);
}
