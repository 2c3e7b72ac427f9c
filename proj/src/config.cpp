#include "selfcolor/config.hpp"

#include <fstream>

#include "selfcolor/labelspace.hpp"

namespace selfcolor {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw std::invalid_argument("config error at " + path + ": " + msg);
}

void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                    const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  for (const auto& [key, value] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      fail(path + "." + key, "unknown key");
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(path + "." + key, "wrong type");
  }
}

void validate_schedule(const json& j, const std::string& path) {
  reject_unknown(j, {"total_epochs", "base_lr", "drop_epochs", "drop_factor"}, path);
}

void validate_augment(const json& j, const std::string& path) {
  reject_unknown(j, {"mirror_prob", "scale_min", "scale_max", "crop", "desaturate"}, path);
}

void validate_config(const json& j) {
  reject_unknown(j,
                 {"seed", "out_dir", "run_id", "dataset", "network", "pretrain",
                  "transfer", "analysis", "eval"},
                 "$");
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown(d, {"source", "path", "synthetic"}, "$.dataset");
    if (d.contains("synthetic")) {
      reject_unknown(d.at("synthetic"),
                     {"image_size", "num_classes", "achromatic_fraction",
                      "background_noise", "max_distractors", "emit_masks", "splits",
                      "palettes"},
                     "$.dataset.synthetic");
    }
    const std::string source = get_or<std::string>(d, "source", "synthetic", "$.dataset");
    if (source != "synthetic" && source != "folder")
      fail("$.dataset.source", "must be synthetic or folder");
  }
  if (j.contains("network")) {
    reject_unknown(j.at("network"), {"preset", "input_channels", "spec"}, "$.network");
  }
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    reject_unknown(p,
                   {"loss", "split", "pixels_per_image", "batch_size", "head_hidden",
                    "momentum", "schedule", "augment", "snapshot_epochs",
                    "skip_undefined_hue", "chroma_weighted_hue"},
                   "$.pretrain");
    if (p.contains("schedule")) validate_schedule(p.at("schedule"), "$.pretrain.schedule");
    if (p.contains("augment")) validate_augment(p.at("augment"), "$.pretrain.augment");
    const std::string loss = get_or<std::string>(p, "loss", "histogram", "$.pretrain");
    if (loss != "histogram" && loss != "regression")
      fail("$.pretrain.loss", "must be histogram or regression");
  }
  if (j.contains("transfer")) {
    const auto& t = j.at("transfer");
    reject_unknown(t,
                   {"task", "init", "train_split", "eval_split", "base_lr", "momentum",
                    "batch_size", "crop", "mirror", "pixels_per_image", "plan", "stop",
                    "label_transforms"},
                   "$.transfer");
    if (t.contains("plan"))
      reject_unknown(t.at("plan"),
                     {"absorb_batchnorm", "rebalance_unit_variance", "gray_to_rgb_filters",
                      "freeze_until", "head", "head_hidden", "fov_blocks", "fov_width"},
                     "$.transfer.plan");
    if (t.contains("stop"))
      reject_unknown(t.at("stop"),
                     {"patience", "tolerance", "drop_factor", "val_fraction",
                      "evals_per_epoch", "max_epochs", "retrain_full"},
                     "$.transfer.stop");
    if (t.contains("label_transforms")) {
      const auto& lts = t.at("label_transforms");
      if (!lts.is_array()) fail("$.transfer.label_transforms", "expected an array");
      for (size_t i = 0; i < lts.size(); ++i) {
        const std::string path = "$.transfer.label_transforms[" + std::to_string(i) + "]";
        reject_unknown(lts[i],
                       {"kind", "level_size", "n_buckets", "fraction", "k", "seed",
                        "hierarchy"},
                       path);
        const std::string kind = get_or<std::string>(lts[i], "kind", "", path);
        if (kind != "hierarchical" && kind != "random_buckets" && kind != "noise" &&
            kind != "subsample")
          fail(path + ".kind", "unknown transform kind");
      }
    }
  }
  if (j.contains("analysis")) {
    reject_unknown(j.at("analysis"),
                   {"checkpoint_a", "checkpoint_b", "probe_split", "pixel_stride",
                    "top_layer", "top_m", "crop"},
                   "$.analysis");
  }
  if (j.contains("eval")) {
    reject_unknown(j.at("eval"), {"checkpoint", "split", "task", "topk", "crop"}, "$.eval");
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  validate_config(j);
  ExperimentConfig cfg;
  cfg.raw = j;
  cfg.seed = get_or<uint64_t>(j, "seed", 0, "$");
  cfg.out_dir = get_or<std::string>(j, "out_dir", "out", "$");
  cfg.run_id = get_or<std::string>(j, "run_id", "run", "$");
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream f(path);
  check(static_cast<bool>(f), "cannot open config file: " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config parse error in " + path + ": " + e.what());
  }
  return from_json(j);
}

ColoredShapesSpec ExperimentConfig::shapes_spec() const {
  ColoredShapesSpec spec;
  if (!raw.contains("dataset") || !raw.at("dataset").contains("synthetic")) return spec;
  const json& s = raw.at("dataset").at("synthetic");
  const std::string p = "$.dataset.synthetic";
  spec.image_size = get_or<int>(s, "image_size", spec.image_size, p);
  spec.num_classes = get_or<int>(s, "num_classes", spec.num_classes, p);
  spec.achromatic_fraction =
      get_or<double>(s, "achromatic_fraction", spec.achromatic_fraction, p);
  spec.background_noise = get_or<double>(s, "background_noise", spec.background_noise, p);
  spec.max_distractors = get_or<int>(s, "max_distractors", spec.max_distractors, p);
  spec.emit_masks = get_or<bool>(s, "emit_masks", spec.emit_masks, p);
  if (s.contains("splits")) {
    spec.split_counts.clear();
    for (const auto& [name, count] : s.at("splits").items())
      spec.split_counts[name] = count.get<int>();
  }
  if (s.contains("palettes")) {
    for (const auto& pal : s.at("palettes")) {
      std::vector<PaletteColor> colors;
      for (const auto& c : pal)
        colors.push_back({c.at("hue").get<double>(), c.at("saturation").get<double>(),
                          c.at("weight").get<double>()});
      spec.palettes.push_back(std::move(colors));
    }
  }
  validate_shapes_spec(spec);
  return spec;
}

std::string ExperimentConfig::dataset_path() const {
  if (!raw.contains("dataset")) return "";
  return get_or<std::string>(raw.at("dataset"), "path", "", "$.dataset");
}

NetworkSpec ExperimentConfig::network_spec() const {
  if (!raw.contains("network")) return mini_vgg_spec(1);
  const json& n = raw.at("network");
  if (n.contains("spec")) return spec_from_json(n.at("spec"));
  const int channels = get_or<int>(n, "input_channels", 1, "$.network");
  return spec_by_name(get_or<std::string>(n, "preset", "mini-vgg", "$.network"), channels);
}

std::string ExperimentConfig::pretrain_split() const {
  if (!raw.contains("pretrain")) return "unlabeled";
  return get_or<std::string>(raw.at("pretrain"), "split", "unlabeled", "$.pretrain");
}

PretrainConfig ExperimentConfig::pretrain_config() const {
  PretrainConfig cfg;
  cfg.spec = network_spec();
  cfg.seed = seed;
  if (!raw.contains("pretrain")) return cfg;
  const json& p = raw.at("pretrain");
  const std::string path = "$.pretrain";
  cfg.loss = get_or<std::string>(p, "loss", cfg.loss, path);
  cfg.pixels_per_image = get_or<int>(p, "pixels_per_image", cfg.pixels_per_image, path);
  cfg.batch_size = get_or<int>(p, "batch_size", cfg.batch_size, path);
  cfg.head_hidden = get_or<int>(p, "head_hidden", cfg.head_hidden, path);
  cfg.momentum = get_or<double>(p, "momentum", cfg.momentum, path);
  cfg.target_options.skip_undefined_hue =
      get_or<bool>(p, "skip_undefined_hue", false, path);
  cfg.target_options.chroma_weighted_hue =
      get_or<bool>(p, "chroma_weighted_hue", false, path);
  if (p.contains("snapshot_epochs"))
    cfg.snapshot_epochs = p.at("snapshot_epochs").get<std::vector<double>>();
  if (p.contains("schedule")) {
    const json& s = p.at("schedule");
    cfg.schedule.total_epochs =
        get_or<double>(s, "total_epochs", cfg.schedule.total_epochs, path + ".schedule");
    cfg.schedule.base_lr = get_or<double>(s, "base_lr", cfg.schedule.base_lr, path);
    if (s.contains("drop_epochs"))
      cfg.schedule.drop_epochs = s.at("drop_epochs").get<std::vector<double>>();
    cfg.schedule.drop_factor = get_or<double>(s, "drop_factor", cfg.schedule.drop_factor, path);
  }
  if (p.contains("augment")) {
    const json& a = p.at("augment");
    cfg.augment.mirror_prob = get_or<double>(a, "mirror_prob", cfg.augment.mirror_prob, path);
    cfg.augment.scale_min = get_or<int>(a, "scale_min", cfg.augment.scale_min, path);
    cfg.augment.scale_max = get_or<int>(a, "scale_max", cfg.augment.scale_max, path);
    cfg.augment.crop = get_or<int>(a, "crop", cfg.augment.crop, path);
    cfg.augment.desaturate = get_or<bool>(a, "desaturate", cfg.augment.desaturate, path);
  }
  cfg.schedule.validate();
  cfg.augment.validate();
  return cfg;
}

TransferConfig ExperimentConfig::transfer_config() const {
  TransferConfig cfg;
  cfg.seed = seed;
  if (!raw.contains("transfer")) return cfg;
  const json& t = raw.at("transfer");
  const std::string path = "$.transfer";
  cfg.task = get_or<std::string>(t, "task", cfg.task, path);
  cfg.base_lr = get_or<double>(t, "base_lr", cfg.base_lr, path);
  cfg.momentum = get_or<double>(t, "momentum", cfg.momentum, path);
  cfg.batch_size = get_or<int>(t, "batch_size", cfg.batch_size, path);
  cfg.crop = get_or<int>(t, "crop", cfg.crop, path);
  cfg.mirror = get_or<bool>(t, "mirror", cfg.mirror, path);
  cfg.pixels_per_image = get_or<int>(t, "pixels_per_image", cfg.pixels_per_image, path);
  if (t.contains("plan")) {
    const json& pl = t.at("plan");
    auto& plan = cfg.plan;
    plan.absorb_batchnorm = get_or<bool>(pl, "absorb_batchnorm", plan.absorb_batchnorm, path);
    plan.rebalance_unit_variance =
        get_or<bool>(pl, "rebalance_unit_variance", plan.rebalance_unit_variance, path);
    plan.gray_to_rgb_filters =
        get_or<bool>(pl, "gray_to_rgb_filters", plan.gray_to_rgb_filters, path);
    plan.freeze_until = get_or<std::string>(pl, "freeze_until", plan.freeze_until, path);
    plan.head = get_or<std::string>(pl, "head", plan.head, path);
    plan.head_hidden = get_or<int>(pl, "head_hidden", plan.head_hidden, path);
    plan.fov_blocks = get_or<int>(pl, "fov_blocks", plan.fov_blocks, path);
    plan.fov_width = get_or<int>(pl, "fov_width", plan.fov_width, path);
  }
  if (t.contains("stop")) {
    const json& st = t.at("stop");
    auto& stop = cfg.stop;
    stop.patience = get_or<int>(st, "patience", stop.patience, path);
    stop.tolerance = get_or<double>(st, "tolerance", stop.tolerance, path);
    stop.drop_factor = get_or<double>(st, "drop_factor", stop.drop_factor, path);
    stop.val_fraction = get_or<double>(st, "val_fraction", stop.val_fraction, path);
    stop.evals_per_epoch = get_or<int>(st, "evals_per_epoch", stop.evals_per_epoch, path);
    stop.max_epochs = get_or<double>(st, "max_epochs", stop.max_epochs, path);
    stop.retrain_full = get_or<bool>(st, "retrain_full", stop.retrain_full, path);
  }
  return cfg;
}

std::string ExperimentConfig::transfer_init() const {
  if (!raw.contains("transfer")) return "random";
  return get_or<std::string>(raw.at("transfer"), "init", "random", "$.transfer");
}

std::string ExperimentConfig::train_split() const {
  if (!raw.contains("transfer")) return "train";
  return get_or<std::string>(raw.at("transfer"), "train_split", "train", "$.transfer");
}

std::string ExperimentConfig::eval_split() const {
  if (!raw.contains("transfer")) return "test";
  return get_or<std::string>(raw.at("transfer"), "eval_split", "test", "$.transfer");
}

std::vector<LabelTransformSpec> ExperimentConfig::label_transforms() const {
  std::vector<LabelTransformSpec> out;
  if (!raw.contains("transfer") || !raw.at("transfer").contains("label_transforms"))
    return out;
  for (const auto& j : raw.at("transfer").at("label_transforms")) {
    LabelTransformSpec t;
    t.kind = j.at("kind").get<std::string>();
    t.level_size = get_or<int>(j, "level_size", 0, "$.transfer.label_transforms");
    t.n_buckets = get_or<int>(j, "n_buckets", 0, "$.transfer.label_transforms");
    t.fraction = get_or<double>(j, "fraction", 0.0, "$.transfer.label_transforms");
    t.k = get_or<int>(j, "k", 0, "$.transfer.label_transforms");
    t.seed = get_or<uint64_t>(j, "seed", seed, "$.transfer.label_transforms");
    if (j.contains("hierarchy")) t.hierarchy = j.at("hierarchy");
    out.push_back(std::move(t));
  }
  return out;
}

Dataset apply_label_transforms(const Dataset& ds, const std::string& split,
                               const std::vector<LabelTransformSpec>& transforms) {
  Dataset cur = ds;
  for (const auto& t : transforms) {
    if (t.kind == "hierarchical") {
      const nlohmann::json tree =
          t.hierarchy.is_null() || t.hierarchy.empty() ? default_shapes_hierarchy()
                                                       : t.hierarchy;
      cur = hierarchical_merge(cur, tree, t.level_size);
    } else if (t.kind == "random_buckets") {
      cur = random_buckets(cur, t.n_buckets, t.seed);
    } else if (t.kind == "noise") {
      cur = label_noise(cur, split, t.fraction, t.seed);
    } else if (t.kind == "subsample") {
      cur = subsample_per_class(cur, split, t.k, t.seed);
    } else {
      throw std::invalid_argument("unknown label transform: " + t.kind);
    }
  }
  return cur;
}

}  // namespace selfcolor
