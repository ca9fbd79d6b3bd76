#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "cloudmask/checkpoint.hpp"
#include "cloudmask/errors.hpp"
#include "cloudmask/inference.hpp"
#include "cloudmask/metrics.hpp"
#include "cloudmask/resnet.hpp"
#include "cloudmask/sampler.hpp"
#include "cloudmask/scene.hpp"
#include "cloudmask/synth.hpp"

namespace py = pybind11;
using namespace cloudmask;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

std::vector<std::string> names_of(const std::vector<BandId>& bands) {
  std::vector<std::string> out;
  for (BandId b : bands) out.emplace_back(band_name(b));
  return out;
}

std::vector<BandId> ids_of(const std::vector<std::string>& names) {
  std::vector<BandId> out;
  for (const auto& n : names) out.push_back(parse_band(n));
  return out;
}

// [bands, height, width] float32 copy.
F32 planes_array(const BandStack& s) {
  F32 out({s.bands.size(), s.height, s.width});
  float* dst = out.mutable_data();
  for (const auto& p : s.planes) {
    std::memcpy(dst, p.data(), p.size() * sizeof(float));
    dst += p.size();
  }
  return out;
}

BandStack stack_from_arrays(F32 planes, U8 nodata, const std::vector<std::string>& bands) {
  if (planes.ndim() != 3 || nodata.ndim() != 2) {
    throw ConfigError("planes must be [bands, height, width] and nodata [height, width]");
  }
  const auto nb = static_cast<std::size_t>(planes.shape(0));
  const auto h = static_cast<std::size_t>(planes.shape(1));
  const auto w = static_cast<std::size_t>(planes.shape(2));
  if (nb != bands.size() || static_cast<std::size_t>(nodata.shape(0)) != h ||
      static_cast<std::size_t>(nodata.shape(1)) != w) {
    throw ConfigError("array shapes disagree with the band list");
  }
  BandStack s(w, h, ids_of(bands));
  const float* src = planes.data();
  for (auto& p : s.planes) {
    std::memcpy(p.data(), src, p.size() * sizeof(float));
    src += p.size();
  }
  std::memcpy(s.nodata.data(), nodata.data(), s.nodata.size());
  s.validate();
  return s;
}

U8 labels_array(const MaskRaster& m) {
  U8 out({m.height, m.width});
  std::memcpy(out.mutable_data(), m.labels.data(), m.labels.size());
  return out;
}

py::object confidence_array(const MaskRaster& m) {
  if (!m.confidence) return py::none();
  F32 out({m.height, m.width});
  std::memcpy(out.mutable_data(), m.confidence->data(), m.confidence->size() * sizeof(float));
  return std::move(out);
}

MaskRaster mask_from_arrays(U8 labels, std::optional<F32> confidence) {
  if (labels.ndim() != 2) throw ConfigError("labels must be [height, width]");
  MaskRaster m(static_cast<std::size_t>(labels.shape(1)), static_cast<std::size_t>(labels.shape(0)));
  std::memcpy(m.labels.data(), labels.data(), m.labels.size());
  if (confidence) {
    if (static_cast<std::size_t>(confidence->size()) != m.labels.size()) {
      throw ConfigError("confidence shape differs from labels");
    }
    m.confidence.emplace(confidence->data(), confidence->data() + confidence->size());
  }
  m.validate();
  return m;
}

std::vector<std::uint8_t> positives_of(U8 labels) {
  return {labels.data(), labels.data() + labels.size()};
}

}  // namespace

PYBIND11_MODULE(_cloudmask, m) {
  m.doc() = "Cloud and shadow masking with a residual patch classifier";

  auto config_error = py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_RuntimeError);
  (void)config_error;

  py::class_<BandStack>(m, "BandStack")
      .def(py::init(&stack_from_arrays), py::arg("planes"), py::arg("nodata"), py::arg("bands"))
      .def_readonly("width", &BandStack::width)
      .def_readonly("height", &BandStack::height)
      .def_property_readonly("bands", [](const BandStack& s) { return names_of(s.bands); })
      .def_property_readonly("planes", &planes_array)
      .def_property_readonly("nodata", [](const BandStack& s) {
        U8 out({s.height, s.width});
        std::memcpy(out.mutable_data(), s.nodata.data(), s.nodata.size());
        return out;
      })
      .def("__eq__", [](const BandStack& a, const BandStack& b) { return a == b; });

  py::class_<MaskRaster>(m, "MaskRaster")
      .def(py::init(&mask_from_arrays), py::arg("labels"), py::arg("confidence") = py::none())
      .def_readonly("width", &MaskRaster::width)
      .def_readonly("height", &MaskRaster::height)
      .def_property_readonly("labels", &labels_array)
      .def_property_readonly("confidence", &confidence_array)
      .def("count", [](const MaskRaster& r, int label) {
        return r.count(static_cast<MaskLabel>(label));
      })
      .def("__eq__", [](const MaskRaster& a, const MaskRaster& b) { return a == b; });

  m.attr("CLEAR") = 0;
  m.attr("CLOUD_SHADOW") = 1;
  m.attr("NODATA") = 255;

  m.def("read_bandstack", &read_bandstack);
  m.def("write_bandstack", &write_bandstack, py::arg("scene"), py::arg("path"));
  m.def("read_mask", &read_mask);
  m.def("write_mask", &write_mask, py::arg("mask"), py::arg("path"));

  m.def(
      "synth",
      [](std::size_t width, std::size_t height, std::uint64_t seed,
         std::optional<std::vector<std::string>> bands) {
        SynthSpec s;
        s.width = width;
        s.height = height;
        s.seed = seed;
        if (bands) s.bands = ids_of(*bands);
        SyntheticScene sc = generate_synthetic(s);
        return py::make_tuple(std::move(sc.scene), std::move(sc.truth));
      },
      py::arg("width") = 256, py::arg("height") = 256, py::arg("seed") = 1,
      py::arg("bands") = py::none(), "Synthetic scene and its reference mask");

  m.def(
      "subsample",
      [](const BandStack& scene, const MaskRaster& truth, std::size_t quota, std::uint64_t seed,
         bool strict, const std::string& scene_id) {
        SampleOptions opt;
        opt.quota = quota;
        opt.seed = seed;
        opt.strict = strict;
        opt.scene_id = scene_id;
        const SampleSet set = subsample(scene, truth, opt);
        py::list out;
        for (const auto& p : set.patches) {
          py::dict d;
          d["row"] = p.row;
          d["col"] = p.col;
          d["split"] = std::string(split_name(p.split));
          d["label"] = static_cast<int>(p.label);
          out.append(d);
        }
        return out;
      },
      py::arg("scene"), py::arg("truth"), py::arg("quota") = 10000, py::arg("seed") = 0,
      py::arg("strict") = false, py::arg("scene_id") = "scene");

  m.def("enumerate_valid", [](const BandStack& scene) {
    py::list out;
    for (const auto& c : enumerate_valid(scene)) out.append(py::make_tuple(c.row, c.col));
    return out;
  });

  py::class_<NetworkConfig>(m, "NetworkConfig")
      .def(py::init([](int depth, std::array<std::size_t, 3> widths, std::size_t channels) {
             NetworkConfig c;
             c.depth_param = depth;
             c.stage_widths = widths;
             c.input_channels = channels;
             c.validate();
             return c;
           }),
           py::arg("depth") = 3, py::arg("widths") = std::array<std::size_t, 3>{16, 32, 64},
           py::arg("channels") = 7)
      .def_readonly("depth", &NetworkConfig::depth_param)
      .def_readonly("widths", &NetworkConfig::stage_widths)
      .def_readonly("channels", &NetworkConfig::input_channels)
      .def_readwrite("input_bands", &NetworkConfig::input_bands)
      .def_property_readonly("weighted_layers", &NetworkConfig::weighted_layers);

  py::class_<ParameterSet>(m, "ParameterSet")
      .def_property_readonly("config", &ParameterSet::config)
      .def_property_readonly("weighted_layer_count", &ParameterSet::weighted_layer_count)
      .def("layer_keys", [](const ParameterSet& p) {
        std::vector<std::string> keys;
        for (const auto& e : p.entries()) keys.push_back(e.spec.key);
        return keys;
      })
      .def("__eq__", [](const ParameterSet& a, const ParameterSet& b) { return a == b; });

  m.def("build", &build, py::arg("config"), py::arg("seed") = 0);
  m.def("read_checkpoint", &read_checkpoint);
  m.def("write_checkpoint", &write_checkpoint, py::arg("params"), py::arg("path"));

  m.def(
      "forward",
      [](const ParameterSet& p, F64 batch) {
        Tensor::Shape shape(batch.shape(), batch.shape() + batch.ndim());
        Tensor x(shape, std::vector<double>(batch.data(), batch.data() + batch.size()));
        Tensor probs;
        {
          py::gil_scoped_release release;
          probs = forward(p, x);
        }
        F64 out({probs.dim(0), probs.dim(1)});
        std::memcpy(out.mutable_data(), probs.data().data(), probs.size() * sizeof(double));
        return out;
      },
      py::arg("params"), py::arg("batch"), "Eval-mode class probabilities for [B,C,15,15] patches");

  m.def(
      "infer",
      [](const BandStack& scene, const ParameterSet& params, double threshold,
         std::size_t tile_size, std::size_t threads) {
        InferenceConfig cfg;
        cfg.threshold = threshold;
        cfg.tile_size = tile_size;
        cfg.threads = threads;
        py::gil_scoped_release release;
        return infer_scene(scene, params, cfg);
      },
      py::arg("scene"), py::arg("params"), py::arg("threshold") = 0.5,
      py::arg("tile_size") = 256, py::arg("threads") = 1);

  m.def("apply_threshold", &apply_threshold, py::arg("mask"), py::arg("threshold"));

  m.def(
      "evaluate_json",
      [](const MaskRaster& pred, const MaskRaster& truth) { return to_json(evaluate(pred, truth)); },
      py::arg("pred"), py::arg("truth"));
  m.def(
      "auroc",
      [](F64 scores, U8 positive) {
        return auroc({scores.data(), static_cast<std::size_t>(scores.size())},
                     positives_of(positive));
      },
      py::arg("scores"), py::arg("positive"));
  m.def(
      "average_precision",
      [](F64 scores, U8 positive) {
        return average_precision({scores.data(), static_cast<std::size_t>(scores.size())},
                                 positives_of(positive));
      },
      py::arg("scores"), py::arg("positive"));
}
