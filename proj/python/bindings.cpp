#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "g2s/checkpoint.hpp"
#include "g2s/error.hpp"
#include "g2s/gradcheck.hpp"
#include "g2s/pointcloud.hpp"
#include "g2s/scene.hpp"
#include "g2s/trainer.hpp"
#include "json.hpp"

namespace py = pybind11;
using namespace g2s;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

PointCloud cloud_from(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) {
    std::vector<std::size_t> shape(a.shape(), a.shape() + a.ndim());
    throw ShapeError("points", {shape}, "expected an N x 3 array");
  }
  PointCloud pc;
  const double* p = a.data();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) pc.points.push_back({p[i * 3], p[i * 3 + 1], p[i * 3 + 2]});
  return pc;
}

Array cloud_to(const PointCloud& pc) {
  Array out({static_cast<py::ssize_t>(pc.size()), py::ssize_t{3}});
  double* p = out.mutable_data();
  for (std::size_t i = 0; i < pc.size(); ++i)
    for (int k = 0; k < 3; ++k) p[i * 3 + k] = pc.points[i][k];
  return out;
}

Array image_to(const Image& img) {
  Array out({static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width), py::ssize_t{3}});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

Array depth_to(const DepthMap& d) {
  Array out({static_cast<py::ssize_t>(d.height), static_cast<py::ssize_t>(d.width)});
  std::copy(d.meters.begin(), d.meters.end(), out.mutable_data());
  return out;
}

py::object json_to_py(const std::string& text) {
  return py::module_::import("json").attr("loads")(text);
}

py::list reports_to(const std::vector<LossReport>& reports) {
  py::list out;
  for (const auto& r : reports) out.append(json_to_py(r.to_json()));
  return out;
}

TrainConfig config_from(const std::string& text) {
  return TrainConfig::from_config(KeyValueFile::parse(text, "<python>"));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-stage point/image pre-training with Gaussian splatting supervision";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);

  m.def("chamfer", [](const Array& a, const Array& b) { return chamfer(cloud_from(a), cloud_from(b)); },
        py::arg("a"), py::arg("b"));
  m.def("farthest_point_sample",
        [](const Array& pts, std::size_t count) { return farthest_point_sample(cloud_from(pts), count); },
        py::arg("points"), py::arg("count"));
  m.def("knn",
        [](const Array& pts, std::array<double, 3> q, std::size_t k) {
          return knn(cloud_from(pts), Vec3{q[0], q[1], q[2]}, k);
        },
        py::arg("points"), py::arg("query"), py::arg("k"));

  py::class_<SceneData>(m, "Scene")
      .def_readonly("name", &SceneData::name)
      .def_property_readonly("cloud", [](const SceneData& s) { return cloud_to(s.cloud); })
      .def_property_readonly("views", [](const SceneData& s) { return s.frames.size(); })
      .def("image", [](const SceneData& s, std::size_t i) { return image_to(s.frames.at(i).image); })
      .def("depth", [](const SceneData& s, std::size_t i) { return depth_to(s.frames.at(i).depth); })
      .def("save", [](const SceneData& s, const std::string& dir) { write_scene_dir(dir, s); });

  m.def("synthesize_scene",
        [](const std::string& spec_text) {
          return synthesize_scene(SceneSpec::from_config(KeyValueFile::parse(spec_text, "<python>")));
        },
        py::arg("spec"), "Renders a scene from `key = value` spec text.");
  m.def("load_scene", &load_scene_dir, py::arg("dir"));
  m.def("load_dataset", &load_dataset, py::arg("dir"));

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("load", &Checkpoint::load, py::arg("path"))
      .def("save", &Checkpoint::save, py::arg("path"))
      .def_property_readonly("config", [](const Checkpoint& c) { return c.config.to_text(); })
      .def_property_readonly("names", [](const Checkpoint& c) {
        std::vector<std::string> out;
        for (const auto& b : c.blobs) out.push_back(b.name);
        return out;
      })
      .def("gaussian_sets", [](const Checkpoint& c) {
        py::dict out;
        for (auto i : c.gaussian_indices()) out[py::int_(i)] = c.gaussian_scene(i);
        return out;
      })
      .def("export_ply", [](const Checkpoint& c, std::size_t i, const std::string& path) {
        write_gaussian_ply(path, c.gaussians(i));
      }, py::arg("index"), py::arg("path"));

  m.def(
      "pretrain",
      [](int stage, const std::string& config, const std::vector<SceneData>& data,
         const Checkpoint* init, const std::string& out_dir) {
        TrainConfig cfg = config_from(config);
        std::ostringstream metrics;
        TrainHooks hooks;
        hooks.metrics = &metrics;
        hooks.out_dir = out_dir;
        TrainResult res;
        {
          py::gil_scoped_release release;
          if (stage == 1) {
            res = train_stage1(data, cfg, hooks, init);
          } else if (stage == 2) {
            if (!init) throw std::invalid_argument("stage 2 needs a stage-1 checkpoint");
            res = train_stage2(data, cfg, *init, hooks);
          } else {
            throw std::invalid_argument("stage must be 1 or 2");
          }
        }
        py::dict out;
        out["checkpoint"] = res.checkpoint;
        out["reports"] = reports_to(res.reports);
        out["skipped"] = res.skipped;
        out["metrics"] = metrics.str();
        return out;
      },
      py::arg("stage"), py::arg("config"), py::arg("data"), py::arg("init") = nullptr,
      py::arg("out_dir") = "",
      "Trains on `data` with a `key = value` config text. Returns the checkpoint, "
      "per-step loss reports and the JSON-lines metrics stream.");

  m.def(
      "evaluate",
      [](const Checkpoint& ckpt, const std::vector<SceneData>& data) {
        return json_to_py(evaluate(ckpt, data).to_json());
      },
      py::arg("checkpoint"), py::arg("data"));

  m.def(
      "reconstruct",
      [](const Checkpoint& ckpt, const SceneData& scene) {
        const auto r = reconstruct_scene(ckpt, {scene}, 0);
        py::dict out;
        out["points"] = cloud_to(r.recon);
        py::list renders;
        for (const auto& img : r.renders) renders.append(image_to(img));
        out["renders"] = renders;
        out["stored"] = r.stored;
        return out;
      },
      py::arg("checkpoint"), py::arg("scene"));

  m.def(
      "gradcheck",
      [](const std::string& module, std::size_t instances, std::uint64_t seed) {
        GradcheckOptions opts;
        opts.instances = instances;
        opts.seed = seed;
        const auto res = run_gradcheck(module, opts);
        py::dict out;
        for (const auto& c : res.cases) out[py::str(c.name)] = c.max_rel_error;
        return out;
      },
      py::arg("module"), py::arg("instances") = 20, py::arg("seed") = 0,
      "Maximum relative error of analytic against central-difference gradients per case.");
  m.attr("gradcheck_modules") = gradcheck_modules();
}
