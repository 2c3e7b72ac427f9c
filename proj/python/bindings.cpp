// Python bindings for the main selfcolor operations: tensor ops (forward
// paths on numpy arrays), color mathematics, histogram targets, network
// presets with forward/hypercolumn access, receptive fields, the shapes
// generator, and end-to-end pretrain/transfer entry points.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "selfcolor/analysis.hpp"
#include "selfcolor/checkpoint.hpp"
#include "selfcolor/colorspace.hpp"
#include "selfcolor/dataset.hpp"
#include "selfcolor/labelspace.hpp"
#include "selfcolor/losses.hpp"
#include "selfcolor/model.hpp"
#include "selfcolor/pretrain.hpp"
#include "selfcolor/transfer.hpp"

namespace py = pybind11;
using namespace selfcolor;

namespace {

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Arr& a) {
  std::vector<int64_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = a.shape(i);
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor<double>::from(shape, std::move(data));
}

py::array_t<double> to_array(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
  return out;
}

Image to_image(const Arr& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected a [C,H,W] array");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
            static_cast<int>(a.shape(2)));
  for (size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = static_cast<float>(a.data()[i]);
  return img;
}

py::array_t<double> from_image(const Image& img) {
  py::array_t<double> out({img.channels, img.height, img.width});
  for (size_t i = 0; i < img.data.size(); ++i) out.mutable_data()[i] = img.data[i];
  return out;
}

}  // namespace

PYBIND11_MODULE(_selfcolor, m) {
  m.doc() = "self-supervised colorization pretraining core";

  // --- tensor ops (forward) --------------------------------------------------
  m.def("conv2d",
        [](const Arr& x, const Arr& w, const Arr& b, int stride, int pad) {
          Tape<double> tape(false);
          return to_array(conv2d(tape, to_tensor(x), to_tensor(w), to_tensor(b),
                                 stride, pad));
        },
        py::arg("input"), py::arg("weight"), py::arg("bias"), py::arg("stride") = 1,
        py::arg("pad") = 0);
  m.def("maxpool2d", [](const Arr& x, int k, int stride) {
    Tape<double> tape(false);
    return to_array(maxpool2d(tape, to_tensor(x), k, stride));
  });
  m.def("affine", [](const Arr& x, const Arr& w, const Arr& b) {
    Tape<double> tape(false);
    return to_array(affine(tape, to_tensor(x), to_tensor(w), to_tensor(b)));
  });
  m.def("relu", [](const Arr& x) {
    Tape<double> tape(false);
    return to_array(relu(tape, to_tensor(x)));
  });
  m.def("softmax", [](const Arr& x, int axis) {
    Tape<double> tape(false);
    return to_array(softmax(tape, to_tensor(x), axis));
  });
  m.def("bilinear_sample", [](const Arr& fm, double y, double x) {
    Tape<double> tape(false);
    return to_array(bilinear_sample(tape, to_tensor(fm), y, x));
  });

  // --- colorspace -------------------------------------------------------------
  m.def("rgb_to_gray", [](const Arr& img) { return from_image(rgb_to_gray(to_image(img))); });
  m.def("rgb_to_lab", [](const Arr& img) { return from_image(rgb_to_lab(to_image(img))); });
  m.def("lab_to_rgb", [](const Arr& img) { return from_image(lab_to_rgb(to_image(img))); });
  m.def("rgb_to_huechroma",
        [](const Arr& img) { return from_image(rgb_to_huechroma(to_image(img))); });

  // --- targets ----------------------------------------------------------------
  m.def("histogram_target",
        [](const Arr& rgb, int y, int x) {
          const Image hc = rgb_to_huechroma(to_image(rgb));
          HistogramTarget t = build_histogram_target(hc, y, x);
          std::array<double, kHistBins> hue, chroma;
          for (int b = 0; b < kHistBins; ++b) {
            hue[b] = t.hue[b];
            chroma[b] = t.chroma[b];
          }
          return py::make_tuple(py::array_t<double>(kHistBins, hue.data()),
                                py::array_t<double>(kHistBins, chroma.data()));
        },
        "32-bin hue/chroma histograms over the 7x7 window centered at (y, x)");

  // --- model ------------------------------------------------------------------
  m.def("receptive_field", [](const std::string& preset, const std::string& layer) {
    const FieldOfView fov = compute_receptive_field(spec_by_name(preset, 1), layer);
    return py::make_tuple(fov.rf_size, fov.cumulative_stride);
  });
  m.def("network_layers", [](const std::string& preset) {
    std::vector<std::string> names;
    for (const auto& l : spec_by_name(preset, 1).layers) names.push_back(l.name);
    return names;
  });

  py::class_<Network<double>>(m, "Network")
      .def_static("build",
                  [](const std::string& preset, int input_channels, uint64_t seed) {
                    Rng rng(seed);
                    return build_network<double>(spec_by_name(preset, input_channels), rng);
                  },
                  py::arg("preset"), py::arg("input_channels") = 1, py::arg("seed") = 0)
      .def("forward",
           [](Network<double>& net, const Arr& input) {
             Tape<double> tape(false);
             auto acts = forward(net, tape, to_tensor(input), BnMode::kInfer);
             py::dict named;
             for (const auto& [name, t] : acts.named) named[py::str(name)] = to_array(t);
             return named;
           },
           "Infer-mode forward; returns every layer activation by name")
      .def("hypercolumns",
           [](Network<double>& net, const Arr& input,
              const std::vector<std::pair<int, int>>& locations) {
             Tape<double> tape(false);
             auto acts = forward(net, tape, to_tensor(input), BnMode::kInfer);
             PixelSampleSet locs;
             for (auto [y, x] : locations) locs.push_back({0, y, x});
             return to_array(
                 hypercolumn_extract(tape, acts.taps, tap_strides(net.spec), locs));
           })
      .def_property_readonly("parameter_names", &Network<double>::parameter_names);

  // --- dataset ----------------------------------------------------------------
  m.def("shape_class_names", []() { return shape_class_names(); });
  m.def("generate_shapes",
        [](int image_size, int num_classes, const std::map<std::string, int>& splits,
           uint64_t seed) {
          ColoredShapesSpec spec;
          spec.image_size = image_size;
          spec.num_classes = num_classes;
          spec.split_counts = splits;
          Dataset ds = generate_colored_shapes(spec, seed);
          py::dict out;
          for (const auto& [name, samples] : ds.splits) {
            py::list items;
            for (const auto& s : samples) {
              py::dict d;
              d["image"] = from_image(s.rgb);
              d["label"] = s.label;
              if (!s.mask.empty()) {
                py::array_t<uint8_t> mask({s.rgb.height, s.rgb.width});
                std::copy(s.mask.begin(), s.mask.end(), mask.mutable_data());
                d["mask"] = mask;
              }
              items.append(d);
            }
            out[py::str(name)] = items;
          }
          return out;
        },
        py::arg("image_size") = 40, py::arg("num_classes") = 12,
        py::arg("splits") = std::map<std::string, int>{{"train", 100}},
        py::arg("seed") = 0);
  m.def("save_shapes_dataset",
        [](int image_size, int num_classes, const std::map<std::string, int>& splits,
           uint64_t seed, const std::string& dir) {
          ColoredShapesSpec spec;
          spec.image_size = image_size;
          spec.num_classes = num_classes;
          spec.split_counts = splits;
          save_dataset(generate_colored_shapes(spec, seed), dir);
        });

  // --- label transforms ---------------------------------------------------------
  m.def("random_bucket_mapping", &random_bucket_mapping);
  m.def("hierarchy_cut_mapping",
        [](const std::string& hierarchy_json, const std::vector<std::string>& classes,
           int level_size) {
          return hierarchy_cut_mapping(nlohmann::json::parse(hierarchy_json), classes,
                                       level_size);
        });
  m.def("default_shapes_hierarchy", []() { return default_shapes_hierarchy().dump(); });

  // --- end-to-end -----------------------------------------------------------------
  m.def("pretrain_and_transfer",
        [](const std::string& dataset_dir, const std::string& out_dir, uint64_t seed,
           double pretrain_epochs, double max_epochs, int crop) {
          Dataset ds = load_dataset(dataset_dir);
          PretrainConfig pc;
          pc.spec = mini_vgg_spec(1);
          pc.seed = seed;
          pc.schedule.total_epochs = pretrain_epochs;
          pc.schedule.drop_epochs = {pretrain_epochs * 2 / 3, pretrain_epochs * 5 / 6};
          pc.augment.crop = crop;
          pc.augment.scale_min = crop;
          pc.augment.scale_max = crop + crop / 2;
          pc.out_dir = out_dir + "/pretrain";
          auto pre = train_colorization(ds, "unlabeled", pc);
          TransferConfig tc;
          tc.seed = seed;
          tc.crop = crop;
          tc.stop.max_epochs = max_epochs;
          tc.out_dir = out_dir + "/transfer";
          auto post = train_downstream(ds, "train", "test", &pre.checkpoints.back(),
                                       mini_vgg_spec(1), tc);
          return py::make_tuple(pre.loss_trace.back(), post.final_metric);
        },
        py::arg("dataset_dir"), py::arg("out_dir"), py::arg("seed") = 0,
        py::arg("pretrain_epochs") = 1.0, py::arg("max_epochs") = 4.0,
        py::arg("crop") = 32);
}
