#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "shapeforge/config.hpp"
#include "shapeforge/editor.hpp"
#include "shapeforge/error.hpp"
#include "shapeforge/evalkit.hpp"
#include "shapeforge/mesh.hpp"
#include "shapeforge/random.hpp"
#include "shapeforge/synthdata.hpp"
#include "shapeforge/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace shapeforge;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<float>(), c.numel() * sizeof(float));
  return out;
}

torch::Tensor from_numpy(const FloatArray& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<float*>(a.data()), shape, torch::kFloat32).clone();
}

// H x W or H x W x C array -> C x H x W tensor.
torch::Tensor image_from_numpy(const FloatArray& a) {
  auto t = from_numpy(a);
  require(t.dim() == 2 || t.dim() == 3, "invalid_image", "expected an H x W or H x W x C array");
  return t.dim() == 2 ? t.unsqueeze(0) : t.permute({2, 0, 1}).contiguous();
}

py::array_t<float> image_to_numpy(const torch::Tensor& chw) {
  return chw.size(0) == 1 ? to_numpy(chw[0]) : to_numpy(chw.permute({1, 2, 0}));
}

Viewpoint view_of(double azimuth, double elevation) {
  Viewpoint v{azimuth, elevation};
  require(v.legal(), "invalid_view", "elevation outside the supported range");
  return v;
}

struct Model {
  Checkpoint checkpoint;

  explicit Model(const fs::path& dir) : checkpoint(load_checkpoint(dir)) { checkpoint.model->eval(); }

  MMVAD& net() { return checkpoint.model; }
  LatentDims dims() const { return checkpoint.model->config().dims; }

  JointLatentCode code_of(const FloatArray& a) {
    auto full = from_numpy(a).reshape({-1});
    require(full.size(0) == dims().total(), "dim_mismatch",
            "code has " + std::to_string(full.size(0)) + " entries, expected " + std::to_string(dims().total()));
    return JointLatentCode::split(full, dims().shape);
  }

  py::array_t<float> instance_code(int64_t id) {
    require(id >= 0 && id < checkpoint.codebook->size(), "unknown_instance", "no instance " + std::to_string(id));
    return to_numpy(checkpoint.code(id).full());
  }

  py::array_t<float> sample(uint64_t seed) { return to_numpy(sample_prior(dims(), seed).full()); }

  py::array_t<float> sketch(const FloatArray& code, double azimuth, double elevation) {
    torch::NoGradGuard no_grad;
    return image_to_numpy(torch::sigmoid(net()->generate_sketch(code_of(code).shape, view_of(azimuth, elevation))));
  }

  py::array_t<float> render(const FloatArray& code, double azimuth, double elevation) {
    torch::NoGradGuard no_grad;
    return image_to_numpy(net()->generate_render(code_of(code), view_of(azimuth, elevation)));
  }

  py::tuple mesh(const FloatArray& code, int resolution) {
    auto m = code_mesh(net(), code_of(code), resolution);
    py::array_t<double> vertices({static_cast<py::ssize_t>(m.vertices.size()), py::ssize_t{3}});
    py::array_t<int32_t> triangles({static_cast<py::ssize_t>(m.triangles.size()), py::ssize_t{3}});
    auto v = vertices.mutable_unchecked<2>();
    auto t = triangles.mutable_unchecked<2>();
    for (size_t i = 0; i < m.vertices.size(); ++i) {
      for (int k = 0; k < 3; ++k) v(i, k) = m.vertices[i][k];
    }
    for (size_t i = 0; i < m.triangles.size(); ++i) {
      for (int k = 0; k < 3; ++k) t(i, k) = m.triangles[i][k];
    }
    return py::make_tuple(vertices, triangles);
  }

  py::tuple edit(const FloatArray& code, const std::string& modality, double azimuth, double elevation,
                 const FloatArray& target, const FloatArray& mask, std::optional<std::string> subspace, int steps) {
    EditSpec spec;
    spec.modality = parse_modality(modality);
    spec.view = view_of(azimuth, elevation);
    spec.target = image_from_numpy(target);
    spec.mask = from_numpy(mask);
    auto config = OptimizeConfig::edit();
    config.steps = steps;
    config.subspace = subspace ? parse_subspace(*subspace)
                               : (spec.modality == Modality::Render ? Subspace::ColorOnly : Subspace::ShapeOnly);
    auto init = code_of(code);
    OptimizeResult result;
    {
      py::gil_scoped_release release;
      result = optimize_latent(net(), init, std::span<const EditSpec>(&spec, 1), config);
    }
    return py::make_tuple(to_numpy(result.code.full()), result.edit_loss);
  }

  py::tuple reconstruct(const FloatArray& image, const std::string& modality, double azimuth, double elevation,
                        int trials, int steps, uint64_t seed) {
    OptimizeConfig config;
    config.trials = trials;
    config.steps = steps;
    config.seed = seed;
    auto target = image_from_numpy(image);
    const auto kind = parse_modality(modality);
    const auto view = view_of(azimuth, elevation);
    Reconstruction result;
    {
      py::gil_scoped_release release;
      result = reconstruct_single_view(net(), target, kind, view, config);
    }
    return py::make_tuple(to_numpy(result.code.full()), result.loss, result.best_trial);
  }

  py::array_t<float> transfer(const FloatArray& source, const FloatArray& reference, const std::string& which) {
    return to_numpy(transfer_codes(code_of(source), code_of(reference), parse_transfer(which)).full());
  }
};

std::vector<Vec3> points_of(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  require(a.ndim() == 2 && a.shape(1) == 3, "invalid_points", "expected an N x 3 array");
  std::vector<Vec3> out(a.shape(0));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[i] = {r(i, 0), r(i, 1), r(i, 2)};
  return out;
}

}  // namespace

PYBIND11_MODULE(_shapeforge, m) {
  m.doc() = "Multi-modal latent shape model: data, training, editing and evaluation.";

  static py::exception<Error> error_type(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetObject(error_type.ptr(), py::make_tuple(e.code(), e.what()).ptr());
    }
  });

  m.def(
      "make_dataset",
      [](const fs::path& out, int instances_per_category, int resolution, int views, int n_near, int n_uniform,
         int ambiguous_pairs, uint64_t seed) {
        DatasetConfig config;
        config.instances_per_category = instances_per_category;
        config.resolution = resolution;
        config.views = views;
        config.n_near = n_near;
        config.n_uniform = n_uniform;
        config.ambiguous_pairs = ambiguous_pairs;
        config.seed = seed;
        auto dataset = make_dataset(config);
        write_dataset(dataset, out);
        return dataset.records.size();
      },
      py::arg("out"), py::arg("instances_per_category") = 64, py::arg("resolution") = 64, py::arg("views") = 8,
      py::arg("n_near") = 4096, py::arg("n_uniform") = 2048, py::arg("ambiguous_pairs") = 0, py::arg("seed") = 0,
      "Generate a procedural corpus and write it to `out`. Returns the instance count.");

  m.def(
      "train",
      [](const fs::path& dataset_dir, const fs::path& checkpoint_dir, std::optional<int64_t> steps,
         std::optional<fs::path> config_path, std::optional<uint64_t> seed) {
        Settings settings;
        if (config_path) apply_config(read_config(*config_path), settings);
        if (steps) settings.train.steps = *steps;
        if (seed) settings.train.seed = *seed;
        auto dataset = read_dataset(dataset_dir);
        settings.train.model.resolution = dataset.config.resolution;
        Checkpoint ck;
        {
          py::gil_scoped_release release;
          ck = train(dataset, settings.train);
        }
        save_checkpoint(ck, checkpoint_dir);
        py::list history;
        for (const auto& h : ck.history) {
          py::dict d;
          d["step"] = h.step;
          d["l_c"] = h.l_c;
          d["l_s"] = h.l_s;
          d["l_r"] = h.l_r;
          d["kl"] = h.kl;
          d["total"] = h.total;
          d["smoothed_total"] = h.smoothed_total;
          history.append(d);
        }
        return history;
      },
      py::arg("dataset_dir"), py::arg("checkpoint_dir"), py::arg("steps") = py::none(), py::arg("config") = py::none(),
      py::arg("seed") = py::none(), "Train on a dataset directory and save a checkpoint. Returns the loss history.");

  m.def(
      "view_ring",
      [](int count) {
        std::vector<std::pair<double, double>> out;
        for (const auto& v : view_ring(count)) out.emplace_back(v.azimuth, v.elevation);
        return out;
      },
      py::arg("count") = 8, "Training viewpoints as (azimuth, elevation) pairs in radians.");

  m.def(
      "chamfer",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
        return chamfer(points_of(a), points_of(b));
      },
      py::arg("a"), py::arg("b"), "Symmetric mean squared nearest-neighbour distance.");

  py::class_<Model>(m, "Model")
      .def(py::init<const fs::path&>(), py::arg("checkpoint_dir"))
      .def_property_readonly("shape_dim", [](Model& self) { return self.dims().shape; })
      .def_property_readonly("color_dim", [](Model& self) { return self.dims().color; })
      .def_property_readonly("resolution", [](Model& self) { return self.net()->config().resolution; })
      .def_property_readonly("instances", [](Model& self) { return self.checkpoint.codebook->size(); })
      .def_property_readonly("iteration", [](Model& self) { return self.checkpoint.iteration; })
      .def("instance_code", &Model::instance_code, py::arg("id"))
      .def("sample", &Model::sample, py::arg("seed"))
      .def("sketch", &Model::sketch, py::arg("code"), py::arg("azimuth"), py::arg("elevation"))
      .def("render", &Model::render, py::arg("code"), py::arg("azimuth"), py::arg("elevation"))
      .def("mesh", &Model::mesh, py::arg("code"), py::arg("resolution") = 64)
      .def("edit", &Model::edit, py::arg("code"), py::arg("modality"), py::arg("azimuth"), py::arg("elevation"),
           py::arg("target"), py::arg("mask"), py::arg("subspace") = py::none(), py::arg("steps") = 5)
      .def("reconstruct", &Model::reconstruct, py::arg("image"), py::arg("modality"), py::arg("azimuth"),
           py::arg("elevation"), py::arg("trials") = 8, py::arg("steps") = 300, py::arg("seed") = 0)
      .def("transfer", &Model::transfer, py::arg("source"), py::arg("reference"), py::arg("which"));
}
