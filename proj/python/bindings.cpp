#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "drt/accounting.hpp"
#include "drt/checkpoint.hpp"
#include "drt/config_io.hpp"
#include "drt/errors.hpp"
#include "drt/metrics.hpp"
#include "drt/rain.hpp"
#include "drt/training.hpp"
#include "drt/window_attention.hpp"

namespace py = pybind11;
using namespace drt;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(0) != 3) throw py::value_error("expected a float array of shape (3, H, W)");
  const auto* p = a.data();
  return Image({3, a.shape(1), a.shape(2)}, std::vector<float>(p, p + a.size()));
}

Array to_array(const Image& im) {
  Array out({im.dim(0), im.dim(1), im.dim(2)});
  std::copy(im.data().begin(), im.data().end(), out.mutable_data());
  return out;
}

// Parameters plus the config they were built for.
struct Model {
  ModelConfig config;
  DrtParameters<float> params;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core: accounting, metrics, rain synthesis, checkpoints and inference";
  m.attr("__version__") = DRT_VERSION;

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("rtb_count", &ModelConfig::rtb_count)
      .def_readwrite("recursions", &ModelConfig::recursions)
      .def_readwrite("blocks_per_rtb", &ModelConfig::blocks_per_rtb)
      .def_readwrite("embed_dim", &ModelConfig::embed_dim)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("window", &ModelConfig::window)
      .def_readwrite("patch", &ModelConfig::patch)
      .def_readwrite("mlp_ratio", &ModelConfig::mlp_ratio)
      .def_readwrite("kernel", &ModelConfig::kernel)
      .def_readwrite("channels", &ModelConfig::channels)
      .def_readwrite("tail_convs", &ModelConfig::tail_convs)
      .def_readwrite("leaky_slope", &ModelConfig::leaky_slope)
      .def_property(
          "recursion_input", [](const ModelConfig& c) { return recursion_input_name(c.recursion_input); },
          [](ModelConfig& c, const std::string& v) {
            if (v == "previous") c.recursion_input = RecursionInput::Previous;
            else if (v == "anchor") c.recursion_input = RecursionInput::Anchor;
            else throw py::value_error("recursion_input must be 'previous' or 'anchor'");
          })
      .def("validate", &ModelConfig::validate)
      .def("to_dict",
           [](const ModelConfig& c) {
             py::dict d;
             for (const auto& [k, v] : to_key_values(c)) d[py::str(k)] = v;
             return d;
           })
      .def(py::self == py::self)
      .def("__repr__", [](const ModelConfig& c) {
        std::string s = "ModelConfig(";
        for (const auto& [k, v] : to_key_values(c)) s += k + "=" + v + ", ";
        return s.substr(0, s.size() - 2) + ")";
      });

  m.def(
      "load_config",
      [](const std::filesystem::path& path) { return load_run_config(path).model; },
      py::arg("path"), "Model section of a key = value config file.");
  m.def(
      "config_from_dict",
      [](const std::map<std::string, std::string>& kv) { return run_config_from(kv).model; }, py::arg("values"));

  m.def("count_params", &count_params, py::arg("config") = ModelConfig{});
  m.def(
      "count_macs",
      [](const ModelConfig& c, std::int64_t h, std::int64_t w) {
        py::dict d;
        for (const auto& item : count_macs(c, h, w).items) d[py::str(item.name)] = item.macs;
        return d;
      },
      py::arg("config") = ModelConfig{}, py::arg("height") = 336, py::arg("width") = 336,
      "Itemized multiply-accumulates of one forward pass, by component.");
  m.def(
      "wmsa_complexity",
      [](std::uint64_t h, std::uint64_t w, std::uint64_t c, std::uint64_t window) {
        const auto r = wmsa_complexity(h, w, c, window);
        return py::make_tuple(r.windowed, r.global);
      },
      py::arg("h"), py::arg("w"), py::arg("channels"), py::arg("window"), "(windowed, global) attention cost.");

  m.def(
      "psnr", [](const Array& a, const Array& b, double peak) { return psnr(to_image(a), to_image(b), peak); },
      py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
  m.def(
      "ssim", [](const Array& a, const Array& b) { return ssim(to_image(a), to_image(b)); }, py::arg("a"), py::arg("b"));

  m.def(
      "clean_scene", [](Index h, Index w, std::uint64_t seed) { return to_array(make_clean_scene(h, w, seed)); },
      py::arg("height"), py::arg("width"), py::arg("seed") = 0);
  m.def(
      "synthesize_rain",
      [](const Array& clean, std::uint64_t seed, int count_min, int count_max, double intensity_min,
         double intensity_max) {
        RainParams p;
        p.seed = seed;
        p.count_min = count_min;
        p.count_max = count_max;
        p.intensity_min = intensity_min;
        p.intensity_max = intensity_max;
        return to_array(synthesize_rain(to_image(clean), p).degraded);
      },
      py::arg("clean"), py::arg("seed") = 0, py::arg("count_min") = RainParams{}.count_min,
      py::arg("count_max") = RainParams{}.count_max, py::arg("intensity_min") = RainParams{}.intensity_min,
      py::arg("intensity_max") = RainParams{}.intensity_max);

  py::class_<Model>(m, "Model")
      .def_static(
          "init", [](const ModelConfig& c, std::uint64_t seed) { return Model{c, init_params<float>(c, seed)}; },
          py::arg("config") = ModelConfig{}, py::arg("seed") = 0)
      .def_static(
          "load",
          [](const std::filesystem::path& path) {
            auto ck = load_checkpoint<float>(path);
            return Model{ck.config, std::move(ck.params)};
          },
          py::arg("path"))
      .def(
          "save",
          [](const Model& self, const std::filesystem::path& path) {
            Checkpoint<float> ck;
            ck.config = self.config;
            ck.params = self.params;
            save_checkpoint(path, ck);
          },
          py::arg("path"))
      .def_readonly("config", &Model::config)
      .def_property_readonly("num_params",
                             [](const Model& self) {
                               std::int64_t n = 0;
                               for (const auto& t : named_parameters(self.params)) n += t.tensor.numel();
                               return n;
                             })
      .def(
          "__call__",
          [](const Model& self, const Array& img) {
            const Image in = to_image(img);
            const Image out = [&] {
              py::gil_scoped_release release;
              return infer(self.config, self.params, in);
            }();
            return to_array(out);
          },
          py::arg("image"), "Forward pass on a (3, H, W) image; output is not clamped.");
}
