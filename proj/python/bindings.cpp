#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <spdlog/spdlog.h>

#include "rmf/attacks.hpp"
#include "rmf/dataset.hpp"
#include "rmf/error.hpp"
#include "rmf/metrics.hpp"
#include "rmf/pipeline.hpp"
#include "rmf/runner.hpp"
#include "rmf/selftest.hpp"
#include "rmf/telemetry.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const rmf::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::memcpy(out.mutable_data(), t.data(), t.size() * sizeof(double));
  return out;
}

rmf::Tensor from_numpy(const Array& a) {
  std::vector<std::size_t> shape(a.shape(), a.shape() + a.ndim());
  return rmf::Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::dict metrics_dict(const rmf::MetricsBundle& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["avg_precision"] = m.avg_precision;
  d["avg_recall"] = m.avg_recall;
  d["f1"] = m.f1;
  return d;
}

rmf::TriggerPattern make_trigger(const std::string& kind, std::size_t size, double intensity,
                                 const std::string& position) {
  rmf::TriggerPattern t;
  if (kind == "checkerboard") {
    t.kind = rmf::TriggerKind::checkerboard;
  } else if (kind != "corner_square") {
    throw rmf::ConfigError("unknown trigger kind '" + kind + "'");
  }
  if (position == "top_left") {
    t.position = rmf::TriggerPosition::top_left;
  } else if (position != "bottom_right") {
    throw rmf::ConfigError("unknown trigger position '" + position + "'");
  }
  t.size = size;
  t.intensity = intensity;
  return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Risk measurement for poisoning attacks on image classifiers";

  // Same default as the CLI: warnings and up unless RMF_LOG_LEVEL says otherwise.
  const char* level = std::getenv("RMF_LOG_LEVEL");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);

  // Translators run newest first, so the subclasses are registered after the base.
  auto& base = py::register_exception<rmf::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<rmf::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<rmf::DataError>(m, "DataError", base.ptr());
  py::register_exception<rmf::DivergenceError>(m, "DivergenceError", base.ptr());
  py::register_exception<rmf::ReportWriteError>(m, "ReportWriteError", base.ptr());

  m.def("version", [] { return std::string(rmf::engine_version()); });

  m.def(
      "extent_of_damage",
      [](double accuracy, double avg_precision, double avg_recall, double f1) {
        return rmf::extent_of_damage({accuracy, avg_precision, avg_recall, f1});
      },
      py::arg("accuracy"), py::arg("avg_precision"), py::arg("avg_recall"), py::arg("f1"));

  m.def(
      "classify",
      [](double damage_normalized, double critical_threshold, double major_threshold) {
        rmf::DerivedMeasures d;
        d.damage_normalized = damage_normalized;
        d.extent_of_damage = 4.0 * damage_normalized;
        return std::string(rmf::to_string(rmf::classify(d, {critical_threshold, major_threshold, {}})));
      },
      py::arg("damage_normalized"), py::arg("critical_threshold") = 0.6, py::arg("major_threshold") = 0.3);

  m.def(
      "ledger_total",
      [](std::uint64_t knowledge, std::uint64_t goal, std::uint64_t specificity) {
        return rmf::ledger_total({knowledge, goal, specificity});
      },
      py::arg("knowledge"), py::arg("goal"), py::arg("specificity"));

  m.def(
      "compute_metrics",
      [](const std::vector<int>& truth, const std::vector<int>& predicted, std::size_t class_count) {
        return metrics_dict(rmf::compute_metrics(rmf::confusion(truth, predicted, class_count)));
      },
      py::arg("truth"), py::arg("predicted"), py::arg("class_count"));

  m.def(
      "generate_synthetic",
      [](std::size_t class_count, std::size_t per_class_train, std::size_t per_class_test, std::uint64_t seed) {
        rmf::SyntheticSpec spec;
        spec.class_count = class_count;
        spec.per_class_train = per_class_train;
        spec.per_class_test = per_class_test;
        spec.seed = seed;
        const auto split = rmf::generate_synthetic(spec);
        return py::make_tuple(to_numpy(split.train.images), split.train.labels, to_numpy(split.test.images),
                              split.test.labels);
      },
      py::arg("class_count") = 10, py::arg("per_class_train") = 60, py::arg("per_class_test") = 20,
      py::arg("seed") = 0);

  m.def(
      "apply_trigger",
      [](const Array& images, const std::string& kind, std::size_t size, double intensity,
         const std::string& position) {
        return to_numpy(rmf::apply_trigger(from_numpy(images), make_trigger(kind, size, intensity, position)));
      },
      py::arg("images"), py::arg("kind") = "corner_square", py::arg("size") = 3, py::arg("intensity") = 1.0,
      py::arg("position") = "bottom_right");

  // Reports cross the boundary as JSON text; the Python wrapper decodes them.
  m.def(
      "run_measurement_json",
      [](const std::string& config_json, bool write_outputs) {
        const auto cfg = rmf::parse_config(nlohmann::json::parse(config_json));
        rmf::RunOptions opts;
        opts.write_outputs = write_outputs;
        rmf::RiskReport report;
        {
          py::gil_scoped_release release;
          report = rmf::run_measurement(cfg, opts);
        }
        return rmf::to_json(report).dump();
      },
      py::arg("config_json"), py::arg("write_outputs") = false);

  m.def(
      "print_report_json",
      [](const std::string& report_json) {
        return rmf::print_report(rmf::report_from_json(nlohmann::json::parse(report_json)));
      },
      py::arg("report_json"));

  m.def("selftest", [] {
    std::vector<std::tuple<std::string, bool, std::string>> out;
    for (const auto& line : rmf::run_selftest()) out.emplace_back(line.name, line.passed, line.detail);
    return out;
  });
}
