#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "davlab/config.hpp"
#include "davlab/errors.hpp"
#include "davlab/experiment.hpp"

namespace py = pybind11;
using namespace davlab;
using config::json;

namespace {

config::ExperimentConfig cfg_of(const std::string& text) { return config::parse_config(json::parse(text)); }

py::dict record_dict(const eval::ElboRecord& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["estimator"] = eval::to_string(r.estimator);
  d["elbo"] = r.elbo;
  d["mean_reward"] = r.mean_reward;
  d["reward_std"] = r.reward_std;
  d["diversity"] = r.diversity;
  d["mode_coverage"] = r.mode_coverage;
  d["posterior_mean_reward"] = r.posterior_mean_reward;
  d["weight_entropy"] = r.weight_entropy;
  d["fallback_count"] = r.fallback_count;
  d["loss_before"] = r.loss_before;
  d["loss_after"] = r.loss_after;
  d["samples"] = r.samples;
  return d;
}

py::dict run_dict(const exp::RunResult& r) {
  py::list recs;
  for (const auto& rec : r.records) recs.append(record_dict(rec));
  py::dict d;
  d["records"] = recs;
  d["csv"] = r.csv;
  d["theta"] = r.theta;
  d["theta0"] = r.theta0;
  return d;
}

exp::RunOptions options(const std::string& out, const std::string& resume, int stop_after) {
  exp::RunOptions o;
  o.out_dir = out;
  o.resume = resume;
  o.stop_after = stop_after;
  return o;
}

}  // namespace

PYBIND11_MODULE(_davlab, m) {
  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<OracleUnavailable>(m, "OracleUnavailable", base.ptr());
  py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.attr("CSV_HEADER") = exp::kCsvHeader;

  m.def("resolve_config", [](const std::string& text) { return config::to_json(cfg_of(text)).dump(); });
  m.def("config_hash", [](const std::string& text) { return config::config_hash(cfg_of(text)); });

  m.def(
      "align",
      [](const std::string& text, const std::string& out, const std::string& resume, int stop_after) {
        const auto cfg = cfg_of(text);
        py::gil_scoped_release nogil;
        auto r = exp::run_align(cfg, options(out, resume, stop_after));
        py::gil_scoped_acquire gil;
        return run_dict(r);
      },
      py::arg("config"), py::arg("out_dir") = "", py::arg("resume") = "", py::arg("stop_after") = -1);

  m.def(
      "ablate",
      [](const std::string& variant, const std::string& text, const std::string& out) {
        const auto cfg = cfg_of(text);
        const auto alg = config::algorithm_from_string(variant);
        py::gil_scoped_release nogil;
        auto r = exp::run_ablation(alg, cfg, options(out, "", -1));
        py::gil_scoped_acquire gil;
        return run_dict(r);
      },
      py::arg("variant"), py::arg("config"), py::arg("out_dir") = "");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, int n, std::uint64_t seed, const std::string& out) {
        exp::EvalResult e;
        {
          py::gil_scoped_release nogil;
          e = exp::run_eval(checkpoint, n, seed, out);
        }
        py::dict d;
        d["samples"] = e.samples;
        d["amortized_mean_reward"] = e.amortized_mean_reward;
        d["amortized_reward_std"] = e.amortized_reward_std;
        d["posterior_mean_reward"] = e.posterior_mean_reward;
        d["posterior_reward_std"] = e.posterior_reward_std;
        d["diversity"] = e.diversity;
        d["mode_coverage"] = e.mode_coverage;
        d["amortized_samples"] = e.amortized_dump;
        d["posterior_samples"] = e.posterior_dump;
        return d;
      },
      py::arg("checkpoint"), py::arg("n") = 256, py::arg("seed") = 0, py::arg("out_dir") = "");

  m.def(
      "oracle",
      [](const std::string& text, bool corrupt, int repeats) {
        exp::OracleOptions o;
        o.corrupt_table = corrupt;
        o.repeats = repeats;
        const auto rep = exp::run_oracle(cfg_of(text), o);
        py::list out;
        for (const auto& c : rep.checks) out.append(py::make_tuple(c.name, c.pass, c.detail));
        return out;
      },
      py::arg("config"), py::arg("corrupt") = false, py::arg("repeats") = 10000);

  m.def(
      "pretrain",
      [](const std::string& text, const std::string& out) {
        const auto rep = exp::run_pretrain(cfg_of(text), out);
        py::dict d;
        d["heldout_loss_before"] = rep.heldout_loss_before;
        d["heldout_loss_after"] = rep.heldout_loss_after;
        d["train_loss_before"] = rep.train_loss_before;
        d["train_loss_after"] = rep.train_loss_after;
        d["epochs"] = rep.epochs;
        return d;
      },
      py::arg("config"), py::arg("out_dir"));
}
