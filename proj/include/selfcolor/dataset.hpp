// Synthetic colored-shapes corpus and on-disk dataset ingestion.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "selfcolor/image.hpp"

#include "json.hpp"

namespace selfcolor {

struct Sample {
  Image rgb;
  int label = -1;
  std::vector<uint8_t> mask;  // 0 = background, label+1 on the shape; may be empty
};

struct Dataset {
  std::vector<std::string> class_names;
  std::map<std::string, std::vector<Sample>> splits;

  const std::vector<Sample>& split(const std::string& name) const;
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct PaletteColor {
  double hue = 0;         // degrees
  double saturation = 1;  // [0,1]
  double weight = 1;
};

// Each class is one shape with its own hue palette. Shape colors are sampled
// at a class-independent target luminance so gray level alone does not give
// the class away; hue and chroma do.
struct ColoredShapesSpec {
  int image_size = 40;
  int num_classes = 12;  // 2..12, prefix of the shape list
  double achromatic_fraction = 0.05;
  double background_noise = 0.05;
  int max_distractors = 2;
  bool emit_masks = true;
  std::map<std::string, int> split_counts = {{"train", 100}, {"val", 20}};
  std::vector<std::vector<PaletteColor>> palettes;  // empty -> defaults per class
};

void validate_shapes_spec(const ColoredShapesSpec& spec);

// All twelve shape class names, grouped as four families of three.
const std::vector<std::string>& shape_class_names();

// Rasterizes one shape (by class index) on an n x n canvas: 1 inside, 0 out.
// Pixel centers at (y + 0.5, x + 0.5) are tested against the analytic region.
std::vector<uint8_t> rasterize_shape(int shape, int n, double cy, double cx, double r);

// Family/supergroup tree over the shape classes, for hierarchical label
// transforms: root -> 2 supergroups -> 4 families -> 12 leaves.
nlohmann::json default_shapes_hierarchy();

Dataset generate_colored_shapes(const ColoredShapesSpec& spec, uint64_t seed);

// Directory layout <split>/<class>/<image>.{ppm,png}; labels from class
// directory names sorted lexicographically.
Dataset load_image_folder(const std::string& path);

// Written by the synth-data command; load_dataset prefers a manifest (which
// carries masks) and falls back to the raw folder layout.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace selfcolor
