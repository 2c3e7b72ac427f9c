#include "selfcolor/labelspace.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace selfcolor {

static void collect_leaves(const nlohmann::json& node, std::vector<std::string>& out) {
  if (node.is_array()) {
    for (const auto& leaf : node) {
      check(leaf.is_string(), "hierarchy: leaves must be class-name strings");
      out.push_back(leaf.get<std::string>());
    }
    return;
  }
  check(node.is_object(), "hierarchy: nodes must be objects or arrays");
  for (const auto& [k, v] : node.items()) collect_leaves(v, out);
}

static int tree_depth(const nlohmann::json& node) {
  if (node.is_array()) return 1;  // leaves sit one below the array's owner
  int d = 0;
  for (const auto& [k, v] : node.items()) d = std::max(d, tree_depth(v));
  return d + 1;
}

// Ancestor of each leaf when the tree is cut at `target` (0 = root).
static void ancestors_at_depth(const nlohmann::json& node, const std::string& name,
                               int depth, int target,
                               std::map<std::string, std::string>& out) {
  if (target == depth) {
    std::vector<std::string> leaves;
    collect_leaves(node, leaves);
    for (const auto& l : leaves) out[l] = name;
    return;
  }
  if (node.is_array()) {
    // Cut below the leaf level: leaves stay themselves.
    for (const auto& leaf : node) out[leaf.get<std::string>()] = leaf.get<std::string>();
    return;
  }
  for (const auto& [child_name, child] : node.items())
    ancestors_at_depth(child, child_name, depth + 1, target, out);
}

std::vector<int> hierarchy_cut_mapping(const nlohmann::json& hierarchy,
                                       const std::vector<std::string>& class_names,
                                       int level_size,
                                       std::vector<std::string>* group_names_out) {
  check(level_size >= 1, "hierarchical_merge: level_size must be >= 1");
  const int max_cut = tree_depth(hierarchy) + 1;
  for (int cut = 0; cut <= max_cut; ++cut) {
    std::map<std::string, std::string> anc;
    ancestors_at_depth(hierarchy, "root", 0, cut, anc);
    for (const auto& c : class_names)
      check(anc.count(c), "hierarchical_merge: hierarchy does not cover class " + c);
    std::set<std::string> distinct;
    for (const auto& c : class_names) distinct.insert(anc.at(c));
    if (static_cast<int>(distinct.size()) != level_size) continue;
    // Groups ordered by first appearance so a leaf-level cut is the identity.
    std::vector<std::string> group_names;
    std::map<std::string, int> group_index;
    for (const auto& c : class_names) {
      const std::string& g = anc.at(c);
      if (!group_index.count(g)) {
        group_index[g] = static_cast<int>(group_names.size());
        group_names.push_back(g);
      }
    }
    std::vector<int> mapping(class_names.size());
    for (size_t i = 0; i < class_names.size(); ++i)
      mapping[i] = group_index.at(anc.at(class_names[i]));
    if (group_names_out) *group_names_out = group_names;
    return mapping;
  }
  throw std::invalid_argument("hierarchical_merge: no tree cut yields " +
                              std::to_string(level_size) + " groups");
}

static Dataset relabel(const Dataset& ds, const std::vector<int>& mapping,
                       const std::vector<std::string>& new_names) {
  Dataset out;
  out.class_names = new_names;
  for (const auto& [split_name, samples] : ds.splits) {
    auto& dst = out.splits[split_name];
    dst = samples;
    for (auto& s : dst) s.label = mapping[s.label];
  }
  return out;
}

Dataset hierarchical_merge(const Dataset& ds, const nlohmann::json& hierarchy,
                           int level_size) {
  std::vector<std::string> group_names;
  auto mapping = hierarchy_cut_mapping(hierarchy, ds.class_names, level_size, &group_names);
  return relabel(ds, mapping, group_names);
}

std::vector<int> random_bucket_mapping(int num_classes, int n_buckets, uint64_t seed) {
  check(n_buckets >= 1 && n_buckets <= num_classes,
        "random_buckets: need 1 <= n_buckets <= classes");
  Rng rng(seed);
  std::vector<int> order(num_classes);
  for (int i = 0; i < num_classes; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<int> mapping(num_classes, -1);
  for (int b = 0; b < n_buckets; ++b) mapping[order[b]] = b;  // every bucket non-empty
  for (int i = n_buckets; i < num_classes; ++i)
    mapping[order[i]] = static_cast<int>(rng.uniform_int(n_buckets));
  return mapping;
}

Dataset random_buckets(const Dataset& ds, int n_buckets, uint64_t seed) {
  auto mapping = random_bucket_mapping(ds.num_classes(), n_buckets, seed);
  std::vector<std::string> names;
  for (int b = 0; b < n_buckets; ++b) names.push_back("bucket" + std::to_string(b));
  return relabel(ds, mapping, names);
}

Dataset label_noise(const Dataset& ds, const std::string& split, double fraction,
                    uint64_t seed) {
  check(fraction >= 0.0 && fraction <= 1.0, "label_noise: fraction must be in [0,1]");
  Dataset out = ds;
  auto& samples = out.splits.at(split);
  const int64_t n = static_cast<int64_t>(samples.size());
  const int64_t redraws = static_cast<int64_t>(fraction * n);
  Rng rng(seed);
  auto picks = rng.sample_without_replacement(n, redraws);
  for (int64_t i : picks)
    samples[i].label = static_cast<int>(rng.uniform_int(ds.num_classes()));
  return out;
}

Dataset subsample_per_class(const Dataset& ds, const std::string& split, int k,
                            uint64_t seed) {
  check(k >= 1, "subsample_per_class: k must be >= 1");
  Dataset out = ds;
  const auto& samples = ds.split(split);
  std::vector<std::vector<int64_t>> by_class(ds.num_classes());
  for (int64_t i = 0; i < static_cast<int64_t>(samples.size()); ++i)
    by_class[samples[i].label].push_back(i);
  Rng rng(seed);
  std::vector<int64_t> keep;
  for (int c = 0; c < ds.num_classes(); ++c) {
    check(static_cast<int>(by_class[c].size()) >= k,
          "subsample_per_class: class " + ds.class_names[c] + " has fewer than k samples");
    auto picks = rng.sample_without_replacement(by_class[c].size(), k);
    for (int64_t p : picks) keep.push_back(by_class[c][p]);
  }
  std::sort(keep.begin(), keep.end());
  std::vector<Sample> kept;
  kept.reserve(keep.size());
  for (int64_t i : keep) kept.push_back(samples[i]);
  out.splits[split] = std::move(kept);
  return out;
}

}  // namespace selfcolor
