#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <sstream>

#include "hyperadapt/checkpoint.hpp"
#include "hyperadapt/experiment.hpp"
#include "hyperadapt/ops.hpp"

namespace py = pybind11;
using namespace hyperadapt;

namespace {

std::string value_text(const py::handle& v) {
  if (py::isinstance<py::bool_>(v)) return v.cast<bool>() ? "true" : "false";
  if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
    std::string out;
    for (auto item : v) out += (out.empty() ? "" : ",") + py::str(item).cast<std::string>();
    return out;
  }
  return py::str(v).cast<std::string>();
}

// Keys follow the checkpoint header; "placement" takes a preset name.
ModelSpec spec_from_dict(const py::dict& d) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::optional<std::string> preset;
  for (auto [k, v] : d) {
    const auto key = k.cast<std::string>();
    if (key == "placement") preset = value_text(v);
    else kv.emplace_back(key, value_text(v));
  }
  ModelSpec s = ModelSpec::from_kv(kv);
  if (preset) {
    const PlacementPreset p = parse_placement(*preset);
    s.placement = p == PlacementPreset::none ? std::nullopt : std::optional(ExpertPlacement::preset(p, s.n_blocks));
    s.validate();
  }
  return s;
}

py::dict spec_to_dict(const ModelSpec& s) {
  py::dict d;
  for (const auto& [k, v] : s.to_kv()) d[py::str(k)] = v;
  return d;
}

py::dict audit_dict(const AuditReport& r) {
  py::list rows;
  for (const auto& row : r.rows) {
    py::dict d;
    d["component"] = row.component;
    d["direct"] = row.direct;
    d["hypernet"] = row.hypernet;
    d["generated"] = row.generated;
    rows.append(d);
  }
  py::dict d;
  d["rows"] = rows;
  d["direct"] = r.direct;
  d["hypernet"] = r.hypernet;
  d["generated"] = r.generated;
  d["trainable"] = r.trainable();
  d["static_baseline"] = r.static_baseline;
  d["adapter_expert"] = r.adapter_expert;
  d["full_generation"] = r.full_generation;
  d["adapter_generated"] = r.adapter_generated;
  d["full_generated"] = r.full_generated;
  return d;
}

Batch make_batch(py::array_t<double, py::array::c_style | py::array::forcecast> vision,
                 py::array_t<int, py::array::c_style | py::array::forcecast> text,
                 std::optional<py::array_t<int, py::array::c_style | py::array::forcecast>> targets) {
  if (vision.ndim() != 3) throw ShapeError("vision must be [batch, n_v, d_v]");
  if (text.ndim() != 2) throw ShapeError("text must be [batch, n_t]");
  Batch b;
  b.size = vision.shape(0);
  b.n_v = vision.shape(1);
  b.d_v = vision.shape(2);
  b.n_t = text.shape(1);
  if (static_cast<std::size_t>(text.shape(0)) != b.size) throw ShapeError("vision and text batch sizes differ");
  b.vision.assign(vision.data(), vision.data() + vision.size());
  b.text_ids.assign(text.data(), text.data() + text.size());
  if (targets) {
    if (targets->ndim() != 2 || targets->shape(0) != text.shape(0) || targets->shape(1) != text.shape(1)) {
      throw ShapeError("targets must match text");
    }
    b.target_ids.assign(targets->data(), targets->data() + targets->size());
  } else {
    b.target_ids.assign(b.text_ids.size(), kIgnoreIndex);
  }
  b.validate();
  return b;
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict result_dict(const PointResult& r) {
  py::dict d;
  d["name"] = r.point.name;
  d["variant"] = std::string(to_string(r.point.variant));
  d["placement"] = r.point.placement;
  d["seed"] = r.point.seed;
  d["trainable_params"] = r.trainable_params;
  d["align_final_loss"] = r.align_final_loss ? py::cast(*r.align_final_loss) : py::none();
  d["instruct_final_loss"] = r.instruct_final_loss;
  d["aborted"] = r.aborted;
  return d;
}

}  // namespace

PYBIND11_MODULE(_hyperadapt, m) {
  m.doc() = "Hypernetwork-generated adapters on a toy multimodal transformer";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("adapter_flat_size", [](std::size_t d, std::size_t r) {
    return GenerationTarget::make_adapter(0, d, r).flat_size();
  }, py::arg("d"), py::arg("rank"));
  m.def("full_matrix_flat_size", [](std::size_t n_in, std::size_t n_out) {
    return GenerationTarget::make_full_matrix(0, n_in, n_out).flat_size();
  }, py::arg("n_in"), py::arg("n_out"));
  m.def("default_spec", [] { return spec_to_dict(ModelSpec{}); });
  m.def("normalize_spec", [](const py::dict& d) { return spec_to_dict(spec_from_dict(d)); }, py::arg("spec"));
  m.def("audit", [](const py::dict& d) { return audit_dict(audit_params(spec_from_dict(d))); }, py::arg("spec"));

  m.def("parse_config", [](const std::string& text, const std::vector<std::string>& overrides) {
    return emit_config(parse_config_with_overrides(text, "<string>", overrides));
  }, py::arg("text"), py::arg("overrides") = std::vector<std::string>{},
     "Parses a config and returns its canonical form.");
  m.def("run", [](const std::string& text, const std::filesystem::path& out_dir, std::size_t threads,
                  const std::vector<std::string>& overrides) {
    const ExperimentConfig c = parse_config_with_overrides(text, "<string>", overrides);
    ExperimentReport r;
    {
      py::gil_scoped_release release;
      r = run_experiment(c, out_dir, threads);
    }
    py::list results;
    for (const auto& p : r.results) results.append(result_dict(p));
    py::dict d;
    d["results"] = results;
    d["notes"] = r.notes;
    d["placement_inversion"] = r.placement_inversion;
    return d;
  }, py::arg("config"), py::arg("out_dir"), py::arg("threads") = 1, py::arg("overrides") = std::vector<std::string>{});
  m.def("inspect", [](const std::filesystem::path& path, std::uint64_t sample_seed) {
    return format_inspect(inspect_checkpoint(load_checkpoint(path), sample_seed));
  }, py::arg("path"), py::arg("sample_seed") = 0);

  py::class_<Model>(m, "Model")
      .def(py::init([](const py::dict& spec, std::uint64_t seed) {
             return std::make_unique<Model>(spec_from_dict(spec), seed);
           }),
           py::arg("spec"), py::arg("seed") = 0)
      .def_property_readonly("spec", [](const Model& self) { return spec_to_dict(self.spec()); })
      .def_property_readonly("num_params", [](const Model& self) { return self.params().scalar_count(); })
      .def("parameter_names", [](const Model& self) {
        std::vector<std::string> names;
        for (const auto& e : self.params().entries()) names.push_back(e.name);
        return names;
      })
      .def("zero_generators", &Model::zero_generators)
      .def("forward", [](const Model& self, py::array_t<double, py::array::c_style | py::array::forcecast> vision,
                         py::array_t<int, py::array::c_style | py::array::forcecast> text) {
        const Batch b = make_batch(vision, text, std::nullopt);
        NoGradGuard guard;
        return to_array(self.forward(b));
      }, py::arg("vision"), py::arg("text"), "Logits [batch, n_v + n_t, vocab].")
      .def("loss", [](const Model& self, py::array_t<double, py::array::c_style | py::array::forcecast> vision,
                      py::array_t<int, py::array::c_style | py::array::forcecast> text,
                      py::array_t<int, py::array::c_style | py::array::forcecast> targets) {
        const Batch b = make_batch(vision, text, targets);
        NoGradGuard guard;
        return loss(self.forward(b), b).item();
      }, py::arg("vision"), py::arg("text"), py::arg("targets"), "Masked next-token NLL; -100 marks ignored targets.");

  m.attr("IGNORE_INDEX") = kIgnoreIndex;
  m.attr("EXIT_OK") = kExitOk;
  m.attr("EXIT_CONFIG_ERROR") = kExitConfigError;
  m.attr("EXIT_NUMERIC_ABORT") = kExitNumericAbort;
}
