// Copyright 2026 The SPNN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "spnn/error.h"
#include "spnn/fixedpoint.h"
#include "spnn/harness.h"
#include "spnn/protocol.h"

namespace py = pybind11;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

spnn::Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw spnn::Error(spnn::ErrorCode::kShapeMismatch, "expected a 2-d array");
  spnn::Tensor t(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), t.data().begin());
  return t;
}

Array to_array(const spnn::Tensor& t) {
  Array a({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

spnn::ExperimentConfig parse_config(const std::string& text) {
  try {
    return spnn::ExperimentConfig::from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw spnn::Error(spnn::ErrorCode::kParseError, e.what());
  }
}

py::dict hidden_result(const spnn::FirstHiddenResult& r) {
  py::dict d;
  d["pre"] = to_array(r.pre);
  d["post"] = to_array(r.post);
  d["bytes"] = spnn::total_bytes(r.links, true);
  return d;
}

}  // namespace

PYBIND11_MODULE(_spnn, m) {
  m.doc() = "Split neural network training over vertically partitioned data";

  // Raised errors carry the library's error name in `.code`.
  static py::exception<spnn::Error> error(m, "SpnnError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const spnn::Error& e) {
      py::object inst = py::reinterpret_borrow<py::object>(error.ptr())(std::string(e.what()));
      inst.attr("code") = std::string(spnn::error_code_name(e.code()));
      PyErr_SetObject(error.ptr(), inst.ptr());
    }
  });

  // Reports travel as JSON text; the Python package converts to dicts.
  m.def("run_experiment", [](const std::string& cfg) { return spnn::run_experiment(parse_config(cfg)).dump(); },
        py::arg("config_json"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "bandwidth_sweep",
      [](const std::string& cfg, const std::vector<double>& bws) {
        return spnn::bandwidth_sweep(parse_config(cfg), bws).dump();
      },
      py::arg("config_json"), py::arg("bandwidths"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "scale_sweep",
      [](const std::string& cfg, const std::vector<double>& fractions, const std::vector<std::string>& modes) {
        std::vector<spnn::ProtocolMode> ms;
        for (const auto& s : modes) ms.push_back(spnn::parse_mode(s));
        return spnn::scale_sweep(parse_config(cfg), fractions, ms).dump();
      },
      py::arg("config_json"), py::arg("fractions"), py::arg("modes"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "run_attack",
      [](const std::string& cfg, const std::string& property) {
        spnn::AttackSetup setup;
        setup.property_column = property;
        return spnn::run_attack(parse_config(cfg), setup).dump();
      },
      py::arg("config_json"), py::arg("property") = "amount", py::call_guard<py::gil_scoped_release>());
  m.def("report_hash", [](const std::string& report) { return spnn::report_hash(json::parse(report)); });

  m.def(
      "gen_synth",
      [](std::size_t rows, std::size_t features_a, std::size_t features_b, std::uint64_t seed) {
        spnn::SynthConfig c;
        c.rows = rows;
        c.features_a = features_a;
        c.features_b = features_b;
        c.seed = seed;
        const spnn::Dataset ds = spnn::gen_synth(c);
        return py::make_tuple(to_array(ds.features), ds.labels, ds.columns);
      },
      py::arg("rows") = 20000, py::arg("features_a") = 14, py::arg("features_b") = 14, py::arg("seed") = 1);

  m.def(
      "load_csv",
      [](const std::string& path, const std::string& label) {
        const spnn::Dataset ds = spnn::load_csv(path, label);
        py::dict d;
        d["features"] = to_array(ds.features);
        d["labels"] = ds.labels;
        d["columns"] = ds.columns;
        d["mean"] = ds.mean;
        d["std"] = ds.stddev;
        d["dropped_rows"] = ds.dropped_rows;
        return d;
      },
      py::arg("path"), py::arg("label_column") = "label");

  m.def(
      "split_graph",
      [](std::size_t input_a, std::size_t input_b, const std::vector<std::size_t>& hidden,
         const std::string& activation, std::size_t classes) {
        spnn::NetSpec spec{input_a, input_b, hidden,
                           std::vector<spnn::Activation>(hidden.size(), spnn::parse_activation(activation)), classes,
                           false};
        return spnn::split_graph(spec).to_json();
      },
      py::arg("input_a"), py::arg("input_b"), py::arg("hidden"), py::arg("activation") = "sigmoid",
      py::arg("classes") = 2);

  m.def(
      "first_hidden_ss",
      [](const Array& xa, const Array& xb, const Array& ta, const Array& tb, std::uint64_t seed) {
        return hidden_result(spnn::first_hidden_ss(to_tensor(xa), to_tensor(xb), to_tensor(ta), to_tensor(tb),
                                                   spnn::Activation::kIdentity, seed));
      },
      py::arg("xa"), py::arg("xb"), py::arg("theta_a"), py::arg("theta_b"), py::arg("seed") = 1);
  m.def(
      "first_hidden_he",
      [](const Array& xa, const Array& xb, const Array& ta, const Array& tb, std::uint64_t seed, int key_bits,
         bool packing) {
        return hidden_result(spnn::first_hidden_he(to_tensor(xa), to_tensor(xb), to_tensor(ta), to_tensor(tb),
                                                   spnn::Activation::kIdentity, seed, key_bits, packing));
      },
      py::arg("xa"), py::arg("xb"), py::arg("theta_a"), py::arg("theta_b"), py::arg("seed") = 1,
      py::arg("key_bits") = 2048, py::arg("packing") = true);

  m.def(
      "encode",
      [](double x, int frac_bits) { return spnn::FixedPointCodec(64, frac_bits).encode(x).value; },
      py::arg("x"), py::arg("frac_bits") = 16);
  m.def(
      "decode",
      [](std::uint64_t v, int frac_bits) { return spnn::FixedPointCodec(64, frac_bits).decode({v}); },
      py::arg("value"), py::arg("frac_bits") = 16);
}
