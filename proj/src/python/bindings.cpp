// SPDX-License-Identifier: Apache-2.0
// Python bindings: corpus generation, training, evaluation, tree export and
// the loss/metric primitives, with numpy arrays for matrices.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "tce/dataset.hpp"
#include "tce/error.hpp"
#include "tce/gradient_suite.hpp"
#include "tce/joint_space.hpp"
#include "tce/metrics.hpp"
#include "tce/model.hpp"
#include "tce/trainer.hpp"

namespace py = pybind11;
using namespace tce;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  Tensor t = Tensor::matrix(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::memcpy(t.data().data(), a.data(), t.size() * sizeof(double));
  return t;
}

Array to_array(const Tensor& t) {
  Array a({t.rows(), t.cols()});
  std::memcpy(a.mutable_data(), t.data().data(), t.size() * sizeof(double));
  return a;
}

py::dict metrics_dict(const RetrievalResult& r) {
  py::dict d;
  d["ranks"] = r.ranks;
  d["r1"] = r.r1;
  d["r5"] = r.r5;
  d["r10"] = r.r10;
  d["medr"] = r.medr;
  return d;
}

RunConfig make_config(const py::dict& overrides) {
  RunConfig cfg;
  for (const auto& [k, v] : overrides) cfg.set(py::str(k).cast<std::string>(), py::str(v).cast<std::string>());
  return cfg;
}

TceModel fresh_model(RunConfig cfg, const std::filesystem::path& dir, const Dataset& data) {
  cfg.validate();
  if (cfg.frame_dim == 0) cfg.frame_dim = data.frame_dim();
  return TceModel(std::move(cfg), dataset_vocabulary(dir, data));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Tree-augmented cross-modal encoding";

  static py::exception<Error> base(m, "TceError", PyExc_RuntimeError);
  static py::exception<ShapeError> shape(m, "ShapeError", base.ptr());
  static py::exception<NumericalError> numerical(m, "NumericalError", base.ptr());
  static py::exception<FormatError> format(m, "FormatError", base.ptr());
  static py::exception<ConfigError> config(m, "ConfigError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ShapeError& e) {
      shape(e.what());
    } catch (const NumericalError& e) {
      numerical(e.what());
    } catch (const FormatError& e) {
      format(e.what());
    } catch (const ConfigError& e) {
      config(e.what());
    } catch (const Error& e) {
      base(e.what());
    }
  });

  m.def(
      "generate_synthetic",
      [](const std::filesystem::path& out, std::size_t pairs, std::size_t vocab_size, std::size_t frame_dim,
         double noise, std::uint64_t seed) {
        SyntheticOptions opt;
        opt.pairs = pairs;
        opt.vocab_size = vocab_size;
        opt.frame_dim = frame_dim;
        opt.frame_noise = noise;
        opt.seed = seed;
        generate_synthetic(out, opt);
      },
      py::arg("out"), py::arg("pairs") = 32, py::arg("vocab_size") = 50, py::arg("frame_dim") = 32,
      py::arg("noise") = 0.3, py::arg("seed") = 7);

  m.def(
      "ranking_loss",
      [](const Array& s, double margin, std::size_t n_hard) {
        Graph g;
        return ranking_loss(g.constant(to_tensor(s)), margin, n_hard).value().scalar_value();
      },
      py::arg("similarity"), py::arg("margin") = 0.2, py::arg("n_hard") = 5);

  m.def(
      "rank_scores",
      [](const Array& s, const std::vector<std::size_t>& targets) { return metrics_dict(rank_scores(to_tensor(s), targets)); },
      py::arg("scores"), py::arg("targets"));
  m.def("retrieval_metrics", [](const std::vector<std::size_t>& ranks) { return metrics_dict(retrieval_metrics(ranks)); });

  m.def(
      "gradcheck",
      [](std::uint64_t seed, std::size_t count) {
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = 0; i < count; ++i) seeds.push_back(seed + i);
        py::dict worst;
        for (const auto& e : run_gradient_suite(seeds)) {
          const double prev = worst.contains(e.module.c_str()) ? worst[e.module.c_str()].cast<double>() : 0.0;
          worst[e.module.c_str()] = std::max(prev, e.report.max_rel_error);
        }
        return worst;
      },
      py::arg("seed") = 1, py::arg("seeds") = 5);

  py::class_<TceModel>(m, "Model")
      .def_static(
          "create",
          [](const std::filesystem::path& data_dir, const py::dict& config) {
            const Dataset data = load_dataset_dir(data_dir);
            return fresh_model(make_config(config), data_dir, data);
          },
          py::arg("data_dir"), py::arg("config") = py::dict())
      .def_static("load", &TceModel::load, py::arg("checkpoint"))
      .def(
          "save",
          [](const TceModel& model, const std::filesystem::path& dir, bool f32) {
            model.save(dir, f32 ? StoragePrecision::f32 : StoragePrecision::f64);
          },
          py::arg("checkpoint"), py::arg("f32") = false)
      .def("config", [](const TceModel& model) { return model.config().to_text(); })
      .def(
          "train",
          [](TceModel& model, const std::filesystem::path& data_dir) {
            const Dataset data = load_dataset_dir(data_dir);
            const DatasetSplit split = split_dataset(data, model.config().val_fraction);
            TrainResult r;
            {
              py::gil_scoped_release release;
              r = train(model, split.train, split.val);
            }
            py::dict d;
            d["losses"] = r.losses;
            d["best_epoch"] = r.best_epoch;
            d["epochs"] = r.epochs.size();
            d["best"] = metrics_dict(r.best);
            return d;
          },
          py::arg("data_dir"))
      .def(
          "evaluate",
          [](TceModel& model, const std::filesystem::path& data_dir) {
            return metrics_dict(evaluate(model, load_dataset_dir(data_dir)));
          },
          py::arg("data_dir"))
      .def(
          "query_embeddings",
          [](TceModel& model, const std::vector<std::string>& queries) { return to_array(model.query_embeddings(queries)); },
          py::arg("queries"))
      .def(
          "video_embeddings",
          [](TceModel& model, const std::vector<Array>& videos) {
            std::vector<FrameFeatures> clips;
            for (const auto& v : videos) clips.push_back(model.fit(to_tensor(v)));
            return to_array(model.video_embeddings(clips));
          },
          py::arg("frames"))
      .def("tree", [](TceModel& model, const std::string& query) { return export_tree(model, query); },
           py::arg("query"));
}
