// Python bindings. Configs and scene specs cross the boundary as JSON text;
// the nbvsplat package wraps that in dicts. Images come back as float64
// arrays of shape (H, W, C), label maps as int32 (H, W).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nbvsplat/experiment.hpp"
#include "nbvsplat/io.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace nbv;

namespace {

py::array_t<double> to_array(const Image& img) {
  py::array_t<double> out({img.height, img.width, img.channels});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

py::array_t<int> to_array(const LabelMap& labels) {
  py::array_t<int> out({labels.height, labels.width});
  std::copy(labels.data.begin(), labels.data.end(), out.mutable_data());
  return out;
}

py::dict frame_dict(const Frame& f) {
  py::dict d;
  d["id"] = f.id;
  d["camera"] = f.camera;
  d["timestep"] = f.timestep;
  d["time"] = f.view.timestamp;
  d["rgb"] = to_array(f.rgb);
  d["features"] = to_array(f.features);
  d["labels"] = to_array(f.labels);
  return d;
}

py::dict metrics_dict(const EvalMetrics& m) {
  py::dict d;
  d["psnr"] = m.psnr;
  d["ssim"] = m.ssim;
  d["miou"] = m.miou;
  d["macc"] = m.macc;
  d["views"] = m.views;
  return d;
}

py::dict run_dict(const RunResult& r) {
  py::dict d;
  d["strategy"] = strategy_name(r.strategy);
  d["seed"] = r.seed;
  d["ok"] = r.ok;
  d["error"] = r.error;
  d["n_views"] = r.n_views;
  d["metrics"] = metrics_dict(r.metrics);
  py::list curve;
  for (const StagePoint& p : r.curve) {
    py::dict s = metrics_dict(p.metrics);
    s["stage"] = p.stage;
    s["iteration"] = p.iteration;
    s["views"] = p.views;
    curve.append(s);
  }
  d["curve"] = curve;
  py::list chosen;
  for (const SelectionRecord& rec : r.records) chosen.append(rec.winner);
  d["chosen"] = chosen;
  return d;
}

ExperimentConfig experiment_from(const std::string& text, const std::string& output_dir) {
  ExperimentConfig cfg = json::parse(text).get<ExperimentConfig>();
  if (!output_dir.empty()) cfg.output_dir = output_dir;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Next-best-view selection for semantic Gaussian splatting";

  // Register the base first so the subclasses can name it.
  auto& base = py::register_exception<Error>(m, "NbvError", PyExc_RuntimeError);
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<SpecError>(m, "SpecError", base.ptr());
  py::register_exception<DivisionGuardError>(m, "DivisionGuardError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<SyntheticData>(m, "Dataset")
      .def_property_readonly("spec_json", [](const SyntheticData& d) { return json(d.spec).dump(); })
      .def_property_readonly("timesteps", [](const SyntheticData& d) { return d.spec.timesteps; })
      .def_property_readonly("pool_size", [](const SyntheticData& d) { return d.pool.size(); })
      .def_property_readonly("test_size", [](const SyntheticData& d) { return d.test.size(); })
      .def_property_readonly("classes", [](const SyntheticData& d) { return d.classes; })
      .def(
          "pool_frame",
          [](const SyntheticData& d, int camera, int timestep) { return frame_dict(d.pool_frame(camera, timestep)); },
          py::arg("camera"), py::arg("timestep") = 0)
      .def(
          "test_frame",
          [](const SyntheticData& d, std::size_t i) {
            if (i >= d.test.size()) throw py::index_error("test frame index out of range");
            return frame_dict(d.test[i]);
          },
          py::arg("index"))
      .def(
          "write", [](const SyntheticData& d, const std::string& dir) { write_dataset(d, dir); }, py::arg("directory"));

  m.def(
      "_generate", [](const std::string& spec) { return generate(json::parse(spec).get<SceneSpec>()); },
      py::arg("spec_json"));

  m.def(
      "_run_single",
      [](const std::string& cfg, const std::string& strategy, std::uint64_t seed, const std::string& out_dir) {
        const ExperimentConfig c = experiment_from(cfg, "");
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_single(c, strategy_from_name(strategy), seed, out_dir);
        }
        return run_dict(r);
      },
      py::arg("config_json"), py::arg("strategy"), py::arg("seed"), py::arg("output_dir") = "");

  m.def(
      "_run_experiment",
      [](const std::string& cfg, const std::string& out_dir) {
        const ExperimentConfig c = experiment_from(cfg, out_dir);
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(c);
        }
        py::list runs;
        for (const RunResult& run : r.runs) runs.append(run_dict(run));
        return runs;
      },
      py::arg("config_json"), py::arg("output_dir") = "");

  m.def(
      "_run_oracle_study",
      [](const std::string& cfg) {
        const OracleStudyConfig c = json::parse(cfg).get<OracleStudyConfig>();
        OracleStudyResult r;
        {
          py::gil_scoped_release release;
          r = run_oracle_study(c);
        }
        py::dict d;
        d["candidates"] = r.candidate_ids;
        d["scores"] = r.scores;
        d["drops"] = r.drops;
        d["median_score"] = r.median_score;
        d["median_drop"] = r.median_drop;
        d["spearman"] = r.spearman;
        return d;
      },
      py::arg("config_json"));

  m.def(
      "checkpoint_heatmap",
      [](const std::string& path, int view, int timestep) {
        return to_array(checkpoint_heatmap(path, view, timestep));
      },
      py::arg("checkpoint"), py::arg("view"), py::arg("timestep") = 0,
      "Unscaled Fisher heatmap (H, W, 1) of a saved run at one pool camera and timestep.");

  m.def(
      "eig",
      [](const std::vector<double>& candidate, const std::vector<double>& train, double lambda) {
        const auto wrap = [](const std::vector<double>& v) {
          return FisherDiagonal{Eigen::Map<const Vec<double>>(v.data(), Index(v.size()))};
        };
        return eig(wrap(candidate), wrap(train), lambda);
      },
      py::arg("candidate"), py::arg("train"), py::arg("lam") = kDefaultFisherLambda,
      "Expected information gain of a diagonal candidate Fisher against a diagonal training Fisher.");

  m.def(
      "spearman",
      [](const std::vector<double>& a, const std::vector<double>& b) { return spearman(a, b); }, py::arg("a"),
      py::arg("b"));

  m.def("strategies", [] {
    std::vector<std::string> names;
    for (Strategy s : all_strategies()) names.emplace_back(strategy_name(s));
    return names;
  });

  m.attr("DEFAULT_FISHER_LAMBDA") = kDefaultFisherLambda;
}
