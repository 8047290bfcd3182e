#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <memory>
#include <string>

#include "rtsmono/depth_net.hpp"
#include "rtsmono/image_io.hpp"
#include "rtsmono/metrics.hpp"
#include "rtsmono/ops.hpp"
#include "rtsmono/scene.hpp"
#include "rtsmono/train.hpp"

namespace py = pybind11;
using namespace rtsmono;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  Tensor<float> t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data().begin());
  return t;
}

FloatArray to_array(const Tensor<float>& t) {
  FloatArray a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["abs_rel"] = r.abs_rel;
  d["sq_rel"] = r.sq_rel;
  d["rmse"] = r.rmse;
  d["rmse_log"] = r.rmse_log;
  d["a1"] = r.a1;
  d["a2"] = r.a2;
  d["a3"] = r.a3;
  d["n_valid"] = r.n_valid;
  return d;
}

/// Depth network restored from a training checkpoint.
class DepthModel {
 public:
  explicit DepthModel(const std::filesystem::path& ckpt) : trainer_(Trainer::load(ckpt)) {}

  FloatArray predict(const FloatArray& image) const {
    if (image.ndim() != 3 || image.shape(0) != 3) throw std::invalid_argument("predict: image must be [3,H,W]");
    const Tensor<float> img = to_tensor(image);
    Tensor<float> depth;
    {
      py::gil_scoped_release release;
      NoGradGuard guard;
      const auto& net = trainer_->depth();
      const auto disp = net.forward(Var<float>(img.reshaped({1, 3, img.dim(1), img.dim(2)})));
      depth = disp_to_depth(disp, net.config().dmin, net.config().dmax).value().reshaped({img.dim(1), img.dim(2)});
    }
    return to_array(depth);
  }

  std::string config_text() const { return trainer_->config().to_text(); }
  std::int64_t step() const { return trainer_->step(); }

 private:
  std::unique_ptr<Trainer> trainer_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "rtsmono core bindings";

  m.def(
      "compute_metrics",
      [](const FloatArray& pred, const FloatArray& gt, double cap, bool median_scale) {
        return report_dict(compute_metrics(to_tensor(pred), to_tensor(gt), cap, median_scale));
      },
      py::arg("pred"), py::arg("gt"), py::arg("cap") = 80.0, py::arg("median_scale") = false);

  m.def("disp_to_depth", [](double disp, double dmin, double dmax) { return disp_to_depth(disp, dmin, dmax); },
        py::arg("disp"), py::arg("dmin") = 0.1, py::arg("dmax") = 100.0);

  m.def("read_png", [](const std::filesystem::path& p) { return to_array(read_png(p)); });
  m.def("read_pfm", [](const std::filesystem::path& p) { return to_array(read_pfm(p)); });
  m.def("write_pfm", [](const std::filesystem::path& p, const FloatArray& a) { write_pfm(p, to_tensor(a)); });

  m.def(
      "render_random_scene",
      [](std::uint64_t seed, int frames, int width, int height, int frame) {
        const RenderedFrame f = render_frame(make_random_scene(seed, frames, width, height), frame);
        return py::make_tuple(to_array(f.image), to_array(f.depth));
      },
      py::arg("seed"), py::arg("frames"), py::arg("width"), py::arg("height"), py::arg("frame") = 0,
      "Image [3,H,W] and ground-truth depth [H,W] for one frame of a synthetic scene.");

  m.def(
      "parameter_counts",
      [](const std::string& variant, int width, int height) {
        const DepthNet<float> net(ModelConfig::preset(parse_variant(variant), width, height), 0);
        py::dict d;
        d["encoder"] = net.encoder_parameter_count();
        d["decoder"] = net.decoder_parameter_count();
        d["full"] = net.encoder_parameter_count() + net.decoder_parameter_count();
        return d;
      },
      py::arg("variant"), py::arg("width") = 640, py::arg("height") = 192);

  py::class_<DepthModel>(m, "DepthModel")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def("predict", &DepthModel::predict, py::arg("image"), "Depth [H,W] for an image [3,H,W] in [0,1].")
      .def_property_readonly("config_text", &DepthModel::config_text)
      .def_property_readonly("step", &DepthModel::step);
}
