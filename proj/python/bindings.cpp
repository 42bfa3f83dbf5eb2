#include "accentkit/accent.hpp"
#include "accentkit/attrib.hpp"
#include "accentkit/cli.hpp"
#include "accentkit/error.hpp"
#include "accentkit/eval.hpp"
#include "accentkit/param.hpp"
#include "accentkit/run.hpp"
#include "accentkit/train.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace accentkit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 3) throw ConfigError("expected a (channels, height, width) array");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.raw().begin());
  return img;
}

Array to_array(const Image& img) {
  Array a({img.channels(), img.height(), img.width()});
  std::copy(img.raw().begin(), img.raw().end(), a.mutable_data());
  return a;
}

FeatureDetector make_detector(const Model& model, std::optional<int> logit, std::optional<std::string> layer,
                              std::optional<int> unit, std::optional<std::pair<int, int>> position) {
  if (logit) return FeatureDetector::logit(model, *logit);
  if (!layer || !unit) throw ConfigError("give either logit or layer and unit");
  if (position) return FeatureDetector::neuron(model, *layer, *unit, position->first, position->second);
  return FeatureDetector::channel(model, *layer, *unit);
}

py::dict accentuate(const Model& model, const Array& seed, std::optional<int> logit, std::optional<std::string> layer,
                    std::optional<int> unit, std::optional<std::pair<int, int>> position, double lambda, int steps,
                    const std::string& param, const std::string& reg_layer, double lr, std::uint64_t rng_seed) {
  AccentConfig cfg;
  cfg.detector = make_detector(model, logit, layer, unit, position);
  cfg.lambda = lambda;
  cfg.steps = steps;
  cfg.param_kind = parse_param_kind(param);
  cfg.reg_layer = reg_layer;
  cfg.adam.lr = lr;
  cfg.seed = rng_seed;
  cfg.validate(model);
  const Image x = to_image(seed);
  AccentResult r;
  {
    py::gil_scoped_release release;
    r = run_accentuation(model, x, cfg);
  }
  py::list trace;
  for (const TraceEntry& t : r.trace)
    trace.append(py::dict(py::arg("step") = t.step, py::arg("activation") = t.activation, py::arg("reg") = t.reg,
                          py::arg("total") = t.total));
  py::dict out;
  out["image"] = to_array(r.image);
  out["trace"] = trace;
  out["config_hash"] = r.config_hash;
  out["warnings"] = r.warnings;
  out["aborted"] = r.aborted ? py::cast(*r.aborted) : py::none();
  return out;
}

}  // namespace

PYBIND11_MODULE(_accentkit, m) {
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<Model>(m, "Model")
      .def_static("reference", &Model::reference, py::arg("init_seed"), py::arg("classes") = 10)
      .def_static("toy", &Model::toy, py::arg("init_seed"))
      .def_property_readonly("input_shape",
                             [](const Model& model) {
                               const Shape3& s = model.input_shape();
                               return py::make_tuple(s.channels, s.height, s.width);
                             })
      .def("layer_names", &Model::layer_names)
      .def("predict_logits",
           [](const Model& model, const std::vector<Array>& images) {
             std::vector<Image> batch;
             for (const auto& a : images) batch.push_back(to_image(a));
             return predict_logits(model, batch);
           })
      .def(
          "activations",
          [](const Model& model, const Array& image, const std::vector<std::string>& layers) {
            const Image x = to_image(image);
            const auto rec = forward_capture(model, std::span(&x, 1), layers);
            py::dict out;
            for (const auto& [name, act] : rec.front().layers) out[py::str(name)] = to_array(act);
            return out;
          },
          py::arg("image"), py::arg("layers") = std::vector<std::string>{})
      .def("fingerprint", &weights_fingerprint);

  m.def("default_model_dir", [] { return default_model_dir().string(); });
  m.def(
      "load_model",
      [](const std::string& dir) {
        return load_model_dir(dir.empty() ? default_model_dir() : std::filesystem::path(dir)).model;
      },
      py::arg("dir") = "");
  m.def(
      "held_out_images",
      [](int count, const std::string& dir) {
        const TrainedModel t = load_model_dir(dir.empty() ? default_model_dir() : std::filesystem::path(dir));
        const Dataset d = held_out_images(t.manifest, count);
        py::list images;
        for (const Image& img : d.images) images.append(to_array(img));
        return py::make_tuple(images, d.labels);
      },
      py::arg("count"), py::arg("dir") = "");

  m.def(
      "round_trip", [](const std::string& kind, const Array& image) {
        return to_array(decode(init_from_image(parse_param_kind(kind), to_image(image))));
      },
      py::arg("kind"), py::arg("image"));

  m.def("accentuate", &accentuate, py::arg("model"), py::arg("seed"), py::arg("logit") = py::none(),
        py::arg("layer") = py::none(), py::arg("unit") = py::none(), py::arg("position") = py::none(),
        py::arg("lam") = 0.1, py::arg("steps") = 100, py::arg("param") = "fourier", py::arg("reg_layer") = "conv2",
        py::arg("lr") = 0.05, py::arg("rng_seed") = 0);

  m.def(
      "reg_distance",
      [](const Model& model, const Array& seed, const Array& image, const std::string& layer) {
        return reg_distance(model, to_image(seed), to_image(image), layer);
      },
      py::arg("model"), py::arg("seed"), py::arg("image"), py::arg("layer"));
  m.def("normalize_distance",
        [](double d, double d_min, double d_max) { return normalize_distance(d, DistanceBounds{d_min, d_max}); });

  m.def(
      "attribution_map",
      [](const Model& model, const Array& image, const std::string& method, std::optional<int> logit,
         std::optional<std::string> layer, std::optional<int> unit) {
        const auto det = make_detector(model, logit, layer, unit, std::nullopt);
        return to_array(attribution_map(model, to_image(image), det, parse_attribution_method(method)).values);
      },
      py::arg("model"), py::arg("image"), py::arg("method"), py::arg("logit") = py::none(),
      py::arg("layer") = py::none(), py::arg("unit") = py::none());
  m.def("percentile", [](std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    return percentile_sorted(v, p);
  });
  m.def("normalize_value", &normalize_value, py::arg("u"), py::arg("lo"), py::arg("hi"));

  m.def(
      "stripe_test",
      [](const Model& model, double a, double b, const std::string& layer) {
        const StripeVerdict v = stripe_test(model, a, b, layer);
        auto dist = [](const StripeDistances& d) {
          return py::dict(py::arg("stripe_a") = d.stripe_a, py::arg("stripe_b") = d.stripe_b, py::arg("a_b") = d.a_b);
        };
        return py::dict(py::arg("pixel") = dist(v.pixel), py::arg("latent") = dist(v.latent),
                        py::arg("degenerate") = v.degenerate, py::arg("failures") = v.failures,
                        py::arg("passed") = v.passed());
      },
      py::arg("model"), py::arg("shade_a") = 0.4, py::arg("shade_b") = 0.6, py::arg("layer") = "conv1");

  m.def(
      "run_command",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_command(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
