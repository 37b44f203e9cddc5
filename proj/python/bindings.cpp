/*
 * Copyright 2026 The elflow Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "elf/config.hpp"
#include "elf/eval.hpp"
#include "elf/flow.hpp"
#include "elf/sampler.hpp"
#include "elf/trainer.hpp"

namespace py = pybind11;

namespace {

using NumpyArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

elf::Array from_numpy(const NumpyArray& a) {
  elf::Shape shape(a.shape(), a.shape() + a.ndim());
  return elf::Array(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

NumpyArray to_numpy(const elf::Array& a) {
  NumpyArray out(std::vector<py::ssize_t>(a.shape().begin(), a.shape().end()));
  std::copy(a.data(), a.data() + a.size(), out.mutable_data());
  return out;
}

py::dict counters_dict(const elf::TrainCounters& c) {
  py::dict d;
  d["step"] = c.step;
  d["denoise_steps"] = c.denoise_steps;
  d["decode_steps"] = c.decode_steps;
  d["condition_draws"] = c.condition_draws;
  d["condition_dropped"] = c.condition_dropped;
  d["adam_t"] = c.adam_t;
  return d;
}

}  // namespace

PYBIND11_MODULE(_elflow, m) {
  m.doc() = "Embedded language flows: flow-matching language models on synthetic corpora";

  py::register_exception<elf::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<elf::CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<elf::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<elf::RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", &elf::RunConfig::parse, py::arg("text"))
      .def_static("load", &elf::RunConfig::load, py::arg("path"))
      .def_static("keys", &elf::RunConfig::keys)
      .def("get", &elf::RunConfig::get, py::arg("key"))
      .def("set", &elf::RunConfig::set, py::arg("key"), py::arg("value"))
      .def("__getitem__", &elf::RunConfig::get)
      .def("__setitem__", &elf::RunConfig::set)
      .def("to_text", &elf::RunConfig::to_text)
      .def("fingerprint", &elf::RunConfig::fingerprint)
      .def("training_fingerprint", &elf::RunConfig::training_fingerprint)
      .def("validate", &elf::RunConfig::validate)
      .def("copy", [](const elf::RunConfig& c) { return c; })
      .def("__repr__", [](const elf::RunConfig& c) { return "<RunConfig " + c.fingerprint() + ">"; });

  py::class_<elf::Checkpoint>(m, "Checkpoint")
      .def_static("load", &elf::Checkpoint::load, py::arg("path"))
      .def_static("from_bytes", [](const py::bytes& b) { return elf::Checkpoint::deserialize(std::string(b)); })
      .def("save", &elf::Checkpoint::save, py::arg("path"))
      .def("to_bytes", [](const elf::Checkpoint& c) { return py::bytes(c.serialize()); })
      .def("config", &elf::Checkpoint::config)
      .def_readonly("config_echo", &elf::Checkpoint::config_echo)
      .def_property_readonly("counters", [](const elf::Checkpoint& c) { return counters_dict(c.counters); })
      .def_property_readonly("parameter_names", [](const elf::Checkpoint& c) { return c.params.names(); })
      .def("parameter", [](const elf::Checkpoint& c, const std::string& name, bool ema) {
            return to_numpy(ema ? c.ema[name] : c.params[name]);
          }, py::arg("name"), py::arg("ema") = false);

  py::class_<elf::StepRecord>(m, "StepRecord")
      .def_readonly("step", &elf::StepRecord::step)
      .def_property_readonly("branch", [](const elf::StepRecord& r) { return elf::to_string(r.branch); })
      .def_readonly("loss", &elf::StepRecord::loss)
      .def_readonly("lr", &elf::StepRecord::lr)
      .def_readonly("grad_norm", &elf::StepRecord::grad_norm);

  py::class_<elf::Trainer>(m, "Trainer")
      .def(py::init<elf::RunConfig, std::string>(), py::arg("config"), py::arg("echo") = "")
      .def(py::init<const elf::Checkpoint&>(), py::arg("checkpoint"))
      .def("step", &elf::Trainer::step, py::call_guard<py::gil_scoped_release>())
      .def("run", [](elf::Trainer& t, std::size_t steps) {
            std::vector<elf::StepRecord> out;
            {
              py::gil_scoped_release release;
              t.run(steps, [&](const elf::StepRecord& r) { out.push_back(r); });
            }
            return out;
          }, py::arg("steps"))
      .def("checkpoint", &elf::Trainer::checkpoint)
      .def("learning_rate", &elf::Trainer::learning_rate)
      .def_property_readonly("counters", [](const elf::Trainer& t) { return counters_dict(t.counters()); })
      .def_property_readonly("config", &elf::Trainer::config);

  py::class_<elf::Model>(m, "Model")
      .def_static("from_checkpoint", &elf::Model::from_checkpoint, py::arg("checkpoint"), py::arg("use_ema") = true)
      .def_static("from_trainer", &elf::Model::from_trainer, py::arg("trainer"), py::arg("use_ema") = true)
      .def_readonly("config", &elf::Model::config)
      .def_readonly("decode_trained", &elf::Model::decode_trained);

  m.def("generate", [](const elf::Model& model, const elf::RunConfig& run,
                       std::optional<std::vector<elf::TokenSequence>> conditions) {
          elf::GenerateResult r;
          {
            py::gil_scoped_release release;
            r = elf::generate(model, run.sample, conditions ? &*conditions : nullptr);
          }
          py::dict d;
          d["tokens"] = r.tokens;
          d["warnings"] = r.warnings;
          d["grid"] = r.grid.times;
          return d;
        }, py::arg("model"), py::arg("config"), py::arg("conditions") = py::none(),
        "Samples config.sample.n sequences; returns tokens, warnings and the time grid.");

  m.def("train_cached", &elf::train_cached, py::arg("config"), py::arg("cache_dir"),
        py::arg("on_step") = std::function<void(const elf::StepRecord&)>{},
        py::call_guard<py::gil_scoped_release>());

  // Corpus and oracle.
  py::class_<elf::MarkovSource>(m, "MarkovSource")
      .def_static("from_config", &elf::build_source, py::arg("config"))
      .def_static("uniform", &elf::MarkovSource::uniform, py::arg("vocab"), py::arg("order"))
      .def_property_readonly("vocab_size", &elf::MarkovSource::vocab_size)
      .def_property_readonly("order", &elf::MarkovSource::order)
      .def("entropy_rate", &elf::MarkovSource::entropy_rate)
      .def("unigram_entropy", &elf::MarkovSource::unigram_entropy)
      .def("unigram", &elf::MarkovSource::unigram)
      .def("sample", [](const elf::MarkovSource& s, std::size_t n, std::size_t length, std::uint64_t seed) {
            elf::Rng rng(seed);
            return elf::sample_corpus(s, n, length, rng);
          }, py::arg("n"), py::arg("length"), py::arg("seed") = 0);

  m.def("oracle_perplexity", [](const elf::MarkovSource& s, const std::vector<elf::TokenSequence>& seqs) {
    return elf::oracle_perplexity(s, seqs);
  }, py::arg("source"), py::arg("sequences"));
  m.def("unigram_entropy", [](const std::vector<elf::TokenSequence>& seqs, std::size_t vocab) {
    return elf::unigram_entropy(seqs, vocab);
  }, py::arg("sequences"), py::arg("vocab"));
  m.def("distinct_fraction", [](const std::vector<elf::TokenSequence>& seqs) { return elf::distinct_fraction(seqs); },
        py::arg("sequences"));
  m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return elf::spearman(x, y); },
        py::arg("x"), py::arg("y"));

  // Flow algebra on numpy arrays.
  m.def("interpolate", [](const NumpyArray& x, const NumpyArray& eps, double t, double noise_scale) {
    return to_numpy(elf::interpolate(from_numpy(x), from_numpy(eps), t, noise_scale));
  }, py::arg("x"), py::arg("eps"), py::arg("t"), py::arg("noise_scale"));
  m.def("x_to_v", [](const NumpyArray& x_pred, const NumpyArray& z, double t) {
    return to_numpy(elf::x_to_v(from_numpy(x_pred), from_numpy(z), t));
  }, py::arg("x_pred"), py::arg("z"), py::arg("t"));
  m.def("v_to_x", [](const NumpyArray& v, const NumpyArray& z, double t) {
    return to_numpy(elf::v_to_x(from_numpy(v), from_numpy(z), t));
  }, py::arg("v"), py::arg("z"), py::arg("t"));
  m.def("cfg_target", [](const NumpyArray& v, const NumpyArray& vc, const NumpyArray& vu, double omega) {
    return to_numpy(elf::cfg_target(from_numpy(v), from_numpy(vc), from_numpy(vu), omega));
  }, py::arg("v"), py::arg("v_cond"), py::arg("v_uncond"), py::arg("omega"));
  m.def("sample_time", [](double p_mean, double p_std, std::size_t n, std::uint64_t seed) {
    elf::Rng rng(seed);
    std::vector<double> out(n);
    for (auto& t : out) t = elf::sample_time(elf::ScheduleParams{p_mean, p_std}, rng);
    return out;
  }, py::arg("p_mean"), py::arg("p_std"), py::arg("n"), py::arg("seed") = 0);
  m.def("time_grid", [](const elf::RunConfig& run) { return elf::build_grid(run.sample).times; }, py::arg("config"));
}
