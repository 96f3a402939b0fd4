#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tmvol/cli.hpp"
#include "tmvol/errors.hpp"
#include "tmvol/evaluation.hpp"
#include "tmvol/mixture.hpp"
#include "tmvol/orderbook.hpp"
#include "tmvol/synthgen.hpp"
#include "tmvol/training.hpp"
#include "tmvol/volatility.hpp"

namespace py = pybind11;
using namespace tmvol;

namespace {

std::vector<double> features(const std::string& record) {
  return orderbook::extract_features(orderbook::parse_snapshot(record)).values();
}

std::vector<double> hourly_volatility(const std::vector<double>& prices, int bucket_size) {
  volatility::PriceSeries p;
  p.prices = prices;
  for (std::size_t i = 0; i < prices.size(); ++i) p.timestamps.push_back(static_cast<std::int64_t>(i));
  p.validate();
  const auto r = volatility::returns(p);
  return volatility::realized_volatility(r, bucket_size).values;
}

py::dict synth(int hours, std::uint64_t seed, double regime_persistence, double ob_gain) {
  synthgen::SynthConfig c;
  c.hours = hours;
  c.seed = seed;
  c.regime_persistence = regime_persistence;
  c.ob_gain = ob_gain;
  const auto out = synthgen::generate(c);
  std::vector<std::string> snapshots;
  snapshots.reserve(out.snapshots.size());
  for (const auto& s : out.snapshots) snapshots.push_back(orderbook::format_snapshot(s));
  py::dict d;
  d["prices"] = out.prices.prices;
  d["snapshots"] = snapshots;
  d["labels"] = out.regime_labels;
  d["planted_volatility"] = out.planted_volatility;
  return d;
}

std::string synth_dataset(int hours, std::uint64_t seed, int l_v, int l_b, int horizon) {
  synthgen::SynthConfig c;
  c.hours = hours;
  c.seed = seed;
  volatility::AlignOptions opts;
  opts.dims.l_v = l_v;
  opts.dims.l_b = l_b;
  opts.horizon = horizon;
  return volatility::dataset_to_json(synthgen::to_dataset(synthgen::generate(c), opts)).dump();
}

mixture::Kind kind_of(const std::string& s) { return mixture::kind_from_string(s); }

std::string fit(const std::string& dataset_json, const std::string& kind, double lambda, std::uint64_t seed) {
  const auto data = volatility::dataset_from_json(nlohmann::json::parse(dataset_json));
  training::TrainConfig cfg;
  cfg.lambda = lambda;
  cfg.seed = seed;
  return mixture::to_json(training::fit(kind_of(kind), data, cfg).first).dump();
}

std::vector<double> predict(const std::string& model_json, const std::string& dataset_json) {
  const auto m = mixture::from_json(nlohmann::json::parse(model_json));
  const auto data = volatility::dataset_from_json(nlohmann::json::parse(dataset_json));
  std::vector<double> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out.push_back(mixture::predict(m, data.histories[i], data.features[i]));
  return out;
}

std::tuple<int, std::string, std::string> run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"tmvol"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Temporal mixture volatility models over order-book features.";
  m.attr("__version__") = cli::kVersion;

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def("feature_names", &orderbook::FeatureVector::names, "Names of the eleven order-book features, in output order.");
  m.def("features", &features, py::arg("record"),
        "Features of one snapshot record 'ts;B price,amount ...;A price,amount ...'.");
  m.def("realized_volatility", &hourly_volatility, py::arg("prices"), py::arg("bucket_size") = 60,
        "Population std of simple returns per bucket of consecutive returns.");
  m.def("rmse", [](const std::vector<double>& p, const std::vector<double>& a) { return evaluation::rmse(p, a); });
  m.def("mae", [](const std::vector<double>& p, const std::vector<double>& a) { return evaluation::mae(p, a); });
  m.def(
      "ks_two_sample",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const auto r = evaluation::ks_two_sample(a, b);
        return std::make_pair(r.d, r.p);
      },
      "Two-sample KS statistic D and asymptotic p-value.");
  m.def("auc", [](const std::vector<double>& s, const std::vector<int>& y) { return evaluation::auc(s, y); });
  m.def("synth", &synth, py::arg("hours") = 2000, py::arg("seed") = 1, py::arg("regime_persistence") = 0.8,
        py::arg("ob_gain") = 0.006, "Synthetic regime-switching prices, snapshots and labels.");
  m.def("synth_dataset", &synth_dataset, py::arg("hours") = 500, py::arg("seed") = 1, py::arg("lv") = 16,
        py::arg("lb") = 30, py::arg("horizon") = 1, "Aligned dataset (JSON) built from a synthetic run.");
  m.def("fit", &fit, py::arg("dataset_json"), py::arg("kind") = "tm-g", py::arg("lam") = 1e-3, py::arg("seed") = 0,
        "Fit a mixture model on an aligned dataset (JSON); returns the model checkpoint JSON.");
  m.def("predict", &predict, py::arg("model_json"), py::arg("dataset_json"));
  m.def("run_cli", &run_cli, py::arg("args"), "Run a tmvol command; returns (exit code, stdout, stderr).");
}
