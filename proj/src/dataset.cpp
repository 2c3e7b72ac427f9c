#include "selfcolor/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "selfcolor/colorspace.hpp"
#include "selfcolor/imageio.hpp"

namespace fs = std::filesystem;

namespace selfcolor {

const std::vector<Sample>& Dataset::split(const std::string& name) const {
  auto it = splits.find(name);
  check(it != splits.end(), "dataset: no such split: " + name);
  return it->second;
}

const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> kNames = {
      "disc",   "ring",    "half_disc",  // round
      "square", "diamond", "frame",      // quad
      "tri_up", "tri_down", "tri_right", // tri
      "plus",   "x_cross", "bars",       // stroke
  };
  return kNames;
}

nlohmann::json default_shapes_hierarchy() {
  return nlohmann::json::parse(R"({
    "compact": {
      "round": ["disc", "ring", "half_disc"],
      "quad": ["square", "diamond", "frame"]
    },
    "angular": {
      "tri": ["tri_up", "tri_down", "tri_right"],
      "stroke": ["plus", "x_cross", "bars"]
    }
  })");
}

void validate_shapes_spec(const ColoredShapesSpec& spec) {
  check(spec.image_size >= 16, "shapes: image_size must be >= 16");
  check(spec.num_classes >= 2 &&
            spec.num_classes <= static_cast<int>(shape_class_names().size()),
        "shapes: num_classes must be in [2,12]");
  check(spec.achromatic_fraction >= 0 && spec.achromatic_fraction <= 1,
        "shapes: achromatic_fraction must be in [0,1]");
  check(!spec.split_counts.empty(), "shapes: no splits requested");
  for (const auto& [name, count] : spec.split_counts)
    check(count >= 0, "shapes: negative count for split " + name);
  if (!spec.palettes.empty()) {
    check(static_cast<int>(spec.palettes.size()) == spec.num_classes,
          "shapes: palette count must match num_classes");
    for (const auto& pal : spec.palettes) {
      check(!pal.empty(), "shapes: empty palette");
      double w = 0;
      for (const auto& p : pal) w += p.weight;
      check(std::abs(w - 1.0) < 1e-6, "shapes: palette weights must sum to 1");
    }
  }
}

// ---------------------------------------------------------------------------
// color sampling

static void hsv_to_rgb(double h, double s, double v, double* r, double* g, double* b) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double rp = 0, gp = 0, bp = 0;
  if (hp < 1) { rp = c; gp = x; }
  else if (hp < 2) { rp = x; gp = c; }
  else if (hp < 3) { gp = c; bp = x; }
  else if (hp < 4) { gp = x; bp = c; }
  else if (hp < 5) { rp = x; bp = c; }
  else { rp = c; bp = x; }
  const double m = v - c;
  *r = rp + m;
  *g = gp + m;
  *b = bp + m;
}

static double luminance(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

// Saturation capped so every hue can reach the target luminance band; the
// value is then solved exactly (luminance is linear in v for fixed h, s).
static void sample_shape_color(const PaletteColor& pc, double target_lum, Rng& rng,
                               double* r, double* g, double* b) {
  double pr, pg, pb;
  hsv_to_rgb(pc.hue, 1.0, 1.0, &pr, &pg, &pb);
  const double lum_pure = luminance(pr, pg, pb);
  const double s_cap = std::min(1.0, 0.55 / std::max(1.0 - lum_pure, 1e-9));
  const double s = std::min(pc.saturation, s_cap);
  hsv_to_rgb(pc.hue, s, 1.0, &pr, &pg, &pb);
  const double lum_v1 = luminance(pr, pg, pb);
  const double v = std::min(1.0, target_lum / std::max(lum_v1, 1e-9));
  hsv_to_rgb(pc.hue, s, v, r, g, b);
  (void)rng;
}

static std::vector<PaletteColor> default_palette(int class_index) {
  const double base = class_index * 30.0;
  return {{base, 0.9, 0.7}, {base + 14.0, 0.7, 0.3}};
}

// ---------------------------------------------------------------------------
// shape predicates (pixel center relative to shape center, radius r)

static bool in_tri_up(double dy, double dx, double r) {
  if (dy < -r || dy > 0.7 * r) return false;
  return std::abs(dx) <= 0.95 * r * (dy + r) / (1.7 * r);
}

static bool shape_predicate(int shape, double dy, double dx, double r) {
  const double d = std::sqrt(dy * dy + dx * dx);
  switch (shape) {
    case 0: return d <= r;                                   // disc
    case 1: return d <= r && d >= 0.55 * r;                  // ring
    case 2: return d <= r && dy >= 0;                        // half_disc
    case 3: return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;  // square
    case 4: return std::abs(dx) + std::abs(dy) <= 1.1 * r;   // diamond
    case 5: {                                                // frame
      const double m = std::max(std::abs(dx), std::abs(dy));
      return m <= 0.85 * r && m >= 0.45 * r;
    }
    case 6: return in_tri_up(dy, dx, r);                     // tri_up
    case 7: return in_tri_up(-dy, dx, r);                    // tri_down
    case 8: return in_tri_up(-dx, dy, r);                    // tri_right
    case 9:                                                  // plus
      return (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) ||
             (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r);
    case 10: {                                               // x_cross
      const double u = (dx + dy) * 0.7071067811865476;
      const double v = (dx - dy) * 0.7071067811865476;
      return (std::abs(u) <= 0.3 * r && std::abs(v) <= r) ||
             (std::abs(v) <= 0.3 * r && std::abs(u) <= r);
    }
    case 11:                                                 // bars
      return std::abs(dx) <= 0.9 * r &&
             (std::abs(dy - 0.5 * r) <= 0.22 * r || std::abs(dy + 0.5 * r) <= 0.22 * r);
  }
  return false;
}

std::vector<uint8_t> rasterize_shape(int shape, int n, double cy, double cx, double r) {
  check(shape >= 0 && shape < static_cast<int>(shape_class_names().size()),
        "rasterize_shape: bad shape index");
  check(2 * r <= n, "rasterize_shape: shape larger than canvas");
  std::vector<uint8_t> mask(static_cast<size_t>(n) * n, 0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if (shape_predicate(shape, y + 0.5 - cy, x + 0.5 - cx, r))
        mask[static_cast<size_t>(y) * n + x] = 1;
  return mask;
}

static Sample render_sample(const ColoredShapesSpec& spec, int label, Rng& rng) {
  const int n = spec.image_size;
  Sample s;
  s.label = label;
  s.rgb = Image(3, n, n);
  if (spec.emit_masks) s.mask.assign(static_cast<size_t>(n) * n, 0);

  // Achromatic background with mild noise.
  const double bg = rng.uniform(0.15, 0.80);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double v =
          std::clamp(bg + rng.uniform(-spec.background_noise, spec.background_noise),
                     0.0, 1.0);
      for (int c = 0; c < 3; ++c) s.rgb.at(c, y, x) = static_cast<float>(v);
    }

  // Gray distractor blobs under the shape.
  const int n_distract = spec.max_distractors > 0
                             ? static_cast<int>(rng.uniform_int(spec.max_distractors + 1))
                             : 0;
  for (int d = 0; d < n_distract; ++d) {
    const double dr = rng.uniform(0.06, 0.14) * n;
    const double dcy = rng.uniform(dr, n - dr);
    const double dcx = rng.uniform(dr, n - dr);
    const double dv = rng.uniform(0.25, 0.7);
    const int kind = static_cast<int>(rng.uniform_int(2));  // disc or square
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double ddy = y + 0.5 - dcy, ddx = x + 0.5 - dcx;
        const bool inside = kind == 0 ? (ddy * ddy + ddx * ddx <= dr * dr)
                                      : (std::abs(ddy) <= dr && std::abs(ddx) <= dr);
        if (inside)
          for (int c = 0; c < 3; ++c) s.rgb.at(c, y, x) = static_cast<float>(dv);
      }
  }

  // The class shape, colored from the class palette at a class-independent
  // target luminance.
  const auto pal = spec.palettes.empty() ? default_palette(label) : spec.palettes[label];
  double pick = rng.uniform();
  const PaletteColor* pc = &pal.back();
  for (const auto& p : pal) {
    if (pick < p.weight) {
      pc = &p;
      break;
    }
    pick -= p.weight;
  }
  const double target_lum = rng.uniform(0.30, 0.45);
  double cr, cg, cb;
  sample_shape_color(*pc, target_lum, rng, &cr, &cg, &cb);

  const double r = rng.uniform(0.26, 0.40) * n;
  const double cy = n / 2.0 + rng.uniform(-0.12, 0.12) * n;
  const double cx = n / 2.0 + rng.uniform(-0.12, 0.12) * n;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (!shape_predicate(label, y + 0.5 - cy, x + 0.5 - cx, r)) continue;
      const double jitter = 1.0 + rng.uniform(-0.10, 0.10);
      s.rgb.at(0, y, x) = static_cast<float>(std::clamp(cr * jitter, 0.0, 1.0));
      s.rgb.at(1, y, x) = static_cast<float>(std::clamp(cg * jitter, 0.0, 1.0));
      s.rgb.at(2, y, x) = static_cast<float>(std::clamp(cb * jitter, 0.0, 1.0));
      if (spec.emit_masks) s.mask[static_cast<size_t>(y) * n + x] =
          static_cast<uint8_t>(label + 1);
    }

  // A configurable fraction of the corpus is legitimately achromatic.
  if (rng.coin(spec.achromatic_fraction)) {
    Image g = rgb_to_gray(s.rgb);
    for (int c = 0; c < 3; ++c)
      std::copy(g.data.begin(), g.data.end(),
                s.rgb.data.begin() + static_cast<size_t>(c) * n * n);
  }
  return s;
}

Dataset generate_colored_shapes(const ColoredShapesSpec& spec, uint64_t seed) {
  validate_shapes_spec(spec);
  Dataset ds;
  const auto& names = shape_class_names();
  ds.class_names.assign(names.begin(), names.begin() + spec.num_classes);

  Rng master(seed);
  uint64_t global_index = 0;
  for (const auto& [split_name, count] : spec.split_counts) {
    auto& samples = ds.splits[split_name];
    samples.reserve(count);
    for (int i = 0; i < count; ++i, ++global_index) {
      Rng rng = master.child(global_index);
      samples.push_back(render_sample(spec, i % spec.num_classes, rng));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// disk round trip

Dataset load_image_folder(const std::string& path) {
  check(fs::is_directory(path), "load_image_folder: not a directory: " + path);
  Dataset ds;
  std::set<std::string> class_set;
  std::vector<std::string> split_names;
  for (const auto& split_dir : fs::directory_iterator(path)) {
    if (!split_dir.is_directory()) continue;
    split_names.push_back(split_dir.path().filename().string());
    for (const auto& class_dir : fs::directory_iterator(split_dir.path()))
      if (class_dir.is_directory()) class_set.insert(class_dir.path().filename().string());
  }
  if (class_set.empty()) {
    std::cerr << "warning: " << path << " contains no <split>/<class> directories\n";
    return ds;
  }
  ds.class_names.assign(class_set.begin(), class_set.end());  // set is sorted
  std::sort(split_names.begin(), split_names.end());
  for (const auto& split_name : split_names) {
    auto& samples = ds.splits[split_name];
    for (size_t ci = 0; ci < ds.class_names.size(); ++ci) {
      const fs::path class_dir = fs::path(path) / split_name / ds.class_names[ci];
      if (!fs::is_directory(class_dir)) continue;
      std::vector<std::string> files;
      for (const auto& e : fs::directory_iterator(class_dir))
        if (e.is_regular_file()) files.push_back(e.path().string());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        Sample s;
        s.rgb = read_image(f);
        s.label = static_cast<int>(ci);
        samples.push_back(std::move(s));
      }
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["classes"] = ds.class_names;
  for (const auto& [split_name, samples] : ds.splits) {
    nlohmann::json entries = nlohmann::json::array();
    for (size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      char buf[32];
      std::snprintf(buf, sizeof(buf), "img_%05zu.ppm", i);
      const std::string cls = ds.class_names[s.label];
      const fs::path img_rel = fs::path(split_name) / cls / buf;
      fs::create_directories(fs::path(dir) / split_name / cls);
      write_ppm((fs::path(dir) / img_rel).string(), s.rgb);
      nlohmann::json e;
      e["image"] = img_rel.generic_string();
      e["label"] = s.label;
      if (!s.mask.empty()) {
        char mbuf[32];
        std::snprintf(mbuf, sizeof(mbuf), "img_%05zu.pgm", i);
        const fs::path mask_rel = fs::path("masks") / split_name / cls / mbuf;
        fs::create_directories(fs::path(dir) / "masks" / split_name / cls);
        write_mask_pgm((fs::path(dir) / mask_rel).string(), s.mask, s.rgb.height,
                       s.rgb.width);
        e["mask"] = mask_rel.generic_string();
      }
      entries.push_back(e);
    }
    manifest["splits"][split_name] = entries;
  }
  std::ofstream f(fs::path(dir) / "manifest.json");
  check(static_cast<bool>(f), "save_dataset: cannot write manifest");
  f << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  if (!fs::exists(manifest_path)) return load_image_folder(dir);
  std::ifstream f(manifest_path);
  nlohmann::json manifest = nlohmann::json::parse(f);
  Dataset ds;
  ds.class_names = manifest.at("classes").get<std::vector<std::string>>();
  for (const auto& [split_name, entries] : manifest.at("splits").items()) {
    auto& samples = ds.splits[split_name];
    for (const auto& e : entries) {
      Sample s;
      s.rgb = read_image((fs::path(dir) / e.at("image").get<std::string>()).string());
      s.label = e.at("label").get<int>();
      if (e.contains("mask")) {
        int mh = 0, mw = 0;
        s.mask = read_mask_pgm((fs::path(dir) / e.at("mask").get<std::string>()).string(),
                               &mh, &mw);
        check(mh == s.rgb.height && mw == s.rgb.width, "load_dataset: mask size mismatch");
      }
      samples.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace selfcolor
