#include "tmvol/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tmvol/baselines.hpp"
#include "tmvol/errors.hpp"
#include "tmvol/format.hpp"
#include "tmvol/orderbook.hpp"

namespace tmvol::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kMaxMalformedShare = 0.001;

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  if (!parse_double(value, out)) throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
  return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& value) {
  Int out{};
  if (!parse_int(value, out)) throw ConfigError("config: '" + key + "' expects an integer, got '" + value + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + value + "'");
}

std::vector<double> to_doubles(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& item : split_list(value)) out.push_back(to_double(key, item));
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::ifstream open_in(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing input path: ") + what);
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " '" + path + "'");
  return in;
}

class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
  }

  std::ofstream open(const std::string& name) {
    const fs::path p = dir_ / name;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + p.string() + "'");
    written_.push_back(name);
    return f;
  }

  void write_json(const std::string& name, const json& j) { open(name) << j.dump(2) << '\n'; }

  const std::vector<std::string>& written() const { return written_; }

 private:
  fs::path dir_;
  std::vector<std::string> written_;
};

void write_manifest(OutputDir& dir, const std::string& command, const RunConfig& cfg, json extra = json::object()) {
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                       std::to_string(EIGEN_MINOR_VERSION);
  m["config_hash"] = hex64(config_hash(cfg));
  m["seed"] = cfg.train.seed;
  m["config"] = cfg.canonical();
  m["outputs"] = dir.written();
  for (auto& [k, v] : extra.items()) m[k] = v;
  dir.write_json("manifest.json", m);
}

struct FeatureLoad {
  std::vector<orderbook::FeatureVector> features;
  std::size_t lines = 0;
  std::vector<std::pair<std::size_t, std::string>> malformed;
};

// Streams snapshot records through the feature extractor, collecting bad lines.
FeatureLoad load_snapshot_features(std::istream& in) {
  FeatureLoad out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++out.lines;
    try {
      out.features.push_back(orderbook::extract_features(orderbook::parse_snapshot(line, line_no)));
    } catch (const ParseError& e) {
      out.malformed.emplace_back(line_no, e.what());
    } catch (const ValidationError& e) {
      out.malformed.emplace_back(line_no, e.what());
    }
  }
  return out;
}

void check_malformed(const FeatureLoad& load, std::ostream& err) {
  if (load.malformed.empty()) return;
  const double share = static_cast<double>(load.malformed.size()) / static_cast<double>(load.lines);
  const std::size_t shown = std::min<std::size_t>(load.malformed.size(), 5);
  for (std::size_t i = 0; i < shown; ++i) {
    err << "line " << load.malformed[i].first << ": " << load.malformed[i].second << '\n';
  }
  err << load.malformed.size() << " of " << load.lines << " snapshot lines malformed\n";
  if (share > kMaxMalformedShare) {
    throw ValidationError("too many malformed snapshot lines (first at line " +
                              std::to_string(load.malformed.front().first) + ")",
                          0);
  }
}

std::vector<orderbook::FeatureVector> load_features(const RunConfig& cfg, std::ostream& err) {
  if (!cfg.features.empty()) {
    auto in = open_in(cfg.features, "feature CSV");
    return orderbook::read_feature_csv(in);
  }
  auto in = open_in(cfg.snapshots, "snapshot file");
  FeatureLoad load = load_snapshot_features(in);
  check_malformed(load, err);
  return std::move(load.features);
}

volatility::AlignedDataset load_dataset(const RunConfig& cfg, std::ostream& err) {
  if (!cfg.dataset.empty()) {
    auto in = open_in(cfg.dataset, "dataset");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ParseError(std::string("dataset JSON: ") + e.what(), 0);
    }
    return volatility::dataset_from_json(j);
  }
  auto price_in = open_in(cfg.prices, "price CSV");
  const auto prices = volatility::read_price_csv(price_in);
  const auto features = load_features(cfg, err);
  const auto rv = volatility::realized_volatility(volatility::returns(prices), cfg.bucket_size);
  volatility::AlignOptions opts;
  opts.dims = cfg.dims;
  opts.horizon = cfg.horizon;
  opts.max_gap = cfg.max_gap;
  return volatility::align_dataset(rv, features, opts);
}

}  // namespace

std::string display_name(const std::string& id) {
  if (id == "tm-g") return "TM-G";
  if (id == "tm-log") return "TM-LOG";
  if (id == "ar") return "AR";
  if (id == "arx") return "ARX";
  if (id == "ewma") return "EWMA";
  throw ConfigError("unknown model '" + id + "' (expected tm-g, tm-log, ar, arx, ewma)");
}

evaluation::ModelSpec make_spec(const std::string& id, const RunConfig& cfg) {
  const std::string name = display_name(id);
  if (id == "tm-g") return evaluation::mixture_spec(name, mixture::Kind::kGaussian, cfg.train, cfg.lambda_grid);
  if (id == "tm-log") return evaluation::mixture_spec(name, mixture::Kind::kLogNormal, cfg.train, cfg.lambda_grid);
  if (id == "ar") return evaluation::ar_spec(name, cfg.ridge_grid);
  if (id == "arx") return evaluation::arx_spec(name, cfg.ridge_grid);
  return evaluation::ewma_spec(name, baselines::default_ewma_grid());
}

namespace {

std::vector<double> read_error_column(const std::string& path) {
  auto in = open_in(path, "error CSV");
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  std::size_t column = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (line_no == 1) {
      const auto it = std::find(cells.begin(), cells.end(), "error");
      double probe = 0.0;
      if (it != cells.end()) {
        column = static_cast<std::size_t>(it - cells.begin());
        continue;
      }
      if (!parse_double(cells.front(), probe)) continue;  // some other header
    }
    double v = 0.0;
    if (column >= cells.size() || !parse_double(cells[column], v)) throw ParseError("error CSV: bad value", line_no);
    values.push_back(v);
  }
  return values;
}

// ---------------------------------------------------------------- commands

int cmd_features(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  auto in = open_in(cfg.snapshots, "snapshot file");
  const FeatureLoad load = load_snapshot_features(in);
  check_malformed(load, err);
  OutputDir dir(cfg.out);
  {
    auto f = dir.open("features.csv");
    f << orderbook::feature_csv_header() << '\n';
    for (const auto& fv : load.features) f << orderbook::feature_csv_row(fv) << '\n';
  }
  write_manifest(dir, "features", cfg,
                 {{"snapshot_lines", load.lines}, {"malformed_lines", load.malformed.size()}});
  out << "wrote " << load.features.size() << " feature rows to " << (fs::path(cfg.out) / "features.csv").string()
      << '\n';
  return kOk;
}

int cmd_dataset(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  auto price_in = open_in(cfg.prices, "price CSV");
  const auto prices = volatility::read_price_csv(price_in);
  const auto rv = volatility::realized_volatility(volatility::returns(prices), cfg.bucket_size);
  const auto data = load_dataset(cfg, err);
  OutputDir dir(cfg.out);
  {
    auto f = dir.open("volatility.csv");
    volatility::write_volatility_csv(f, rv);
  }
  dir.write_json("dataset.json", volatility::dataset_to_json(data));
  write_manifest(dir, "dataset", cfg, {{"samples", data.size()}, {"hours", rv.hours()}});
  out << "aligned " << data.size() << " samples from " << rv.hours() << " hours\n";
  return kOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto all = load_dataset(cfg, err);
  const std::size_t n = all.size();
  const auto cut = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(n)));
  const std::size_t purge = all.horizon > 1 ? static_cast<std::size_t>(all.horizon - 1) : 0;
  if (cut <= purge || cut >= n) throw InsufficientDataError("train: need samples on both sides of the validation cut");
  const auto scaled = volatility::restandardize(all, {0, cut});
  const auto train = volatility::slice(scaled, {0, cut - purge});
  const auto validation = volatility::slice(scaled, {cut, n});

  const auto [model, report] = training::fit(cfg.kind, train, cfg.train);
  std::vector<double> pred;
  pred.reserve(validation.size());
  for (std::size_t i = 0; i < validation.size(); ++i) {
    pred.push_back(mixture::predict(model, validation.histories[i], validation.features[i]));
  }
  const double val_rmse = evaluation::rmse(pred, validation.targets);
  const double val_mae = evaluation::mae(pred, validation.targets);

  OutputDir dir(cfg.out);
  dir.write_json("model.json", mixture::to_json(model));
  json rep = training::to_json(report);
  rep["config"] = training::to_json(cfg.train);
  rep["kind"] = mixture::to_string(cfg.kind);
  rep["train_samples"] = train.size();
  rep["validation_samples"] = validation.size();
  rep["validation_rmse"] = val_rmse;
  rep["validation_mae"] = val_mae;
  dir.write_json("train_report.json", rep);
  dir.write_json("validation_dataset.json", volatility::dataset_to_json(validation));
  write_manifest(dir, "train", cfg,
                 {{"validation_rmse", val_rmse},
                  {"validation_mae", val_mae},
                  {"converged", report.converged},
                  {"stalled", report.stalled},
                  {"rounds_used", report.rounds_used}});
  out << "trained " << mixture::to_string(cfg.kind) << " on " << train.size() << " samples in " << report.rounds_used
      << " rounds; validation RMSE " << format_double(val_rmse) << '\n';
  return kOk;
}

int cmd_predict(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  auto model_in = open_in(cfg.model, "model checkpoint");
  json mj;
  try {
    mj = json::parse(model_in);
  } catch (const json::exception& e) {
    throw ParseError(std::string("model JSON: ") + e.what(), 0);
  }
  const auto model = mixture::from_json(mj);
  const auto data = load_dataset(cfg, err);
  if (data.dims != model.dims) throw DimensionError("predict: model and dataset dims differ");
  std::vector<double> pred;
  pred.reserve(data.size());
  OutputDir dir(cfg.out);
  {
    auto p = dir.open("predictions.csv");
    auto g = dir.open("gates.csv");
    p << "h,prediction,actual\n";
    g << "h,g,one_minus_g\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double y = mixture::predict(model, data.histories[i], data.features[i]);
      const double gate = mixture::effective_gate(model, data.histories[i], data.features[i]);
      pred.push_back(y);
      p << data.hours[i] << ',' << format_double(y) << ',' << format_double(data.targets[i]) << '\n';
      g << data.hours[i] << ',' << format_double(gate) << ',' << format_double(1.0 - gate) << '\n';
    }
  }
  const double r = evaluation::rmse(pred, data.targets);
  const double a = evaluation::mae(pred, data.targets);
  write_manifest(dir, "predict", cfg, {{"rmse", r}, {"mae", a}, {"samples", data.size()}});
  out << "predicted " << data.size() << " samples; RMSE " << format_double(r) << " MAE " << format_double(a) << '\n';
  return kOk;
}

int cmd_backtest(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto data = load_dataset(cfg, err);
  std::size_t length = cfg.interval_length;
  if (length == 0) {
    if (cfg.intervals < 1) throw ConfigError("backtest: intervals must be positive");
    length = data.size() / static_cast<std::size_t>(cfg.lookback + cfg.intervals);
  }
  const auto plan = evaluation::make_splits(data.size(), length, cfg.lookback, cfg.procedure, cfg.validation_fraction);
  std::vector<evaluation::ModelSpec> specs;
  for (const auto& id : cfg.models) specs.push_back(make_spec(id, cfg));
  evaluation::BacktestOptions opts;
  opts.reference = cfg.reference.empty() ? "" : display_name(cfg.reference);
  opts.workers = cfg.workers;
  const auto report = evaluation::backtest(specs, data, plan, opts);

  OutputDir dir(cfg.out);
  {
    auto f = dir.open("report.csv");
    evaluation::write_report_csv(f, report);
  }
  {
    auto f = dir.open("report.txt");
    evaluation::write_report_table(f, report);
  }
  std::size_t missing = 0;
  {
    auto f = dir.open("failures.csv");
    f << "model,interval,message\n";
    for (std::size_t m = 0; m < report.models.size(); ++m) {
      for (std::size_t t = 0; t < report.intervals.size(); ++t) {
        if (report.cells[m][t]) continue;
        ++missing;
        std::string msg = report.failures[m][t];
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        f << report.models[m] << ',' << report.intervals[t] << ',' << msg << '\n';
      }
    }
  }
  if (cfg.dump_errors) {
    for (std::size_t m = 0; m < report.models.size(); ++m) {
      for (std::size_t t = 0; t < report.intervals.size(); ++t) {
        if (!report.cells[m][t]) continue;
        auto f = dir.open("errors/" + report.models[m] + "_" + std::to_string(report.intervals[t]) + ".csv");
        evaluation::write_cell_errors_csv(f, *report.cells[m][t]);
      }
    }
  }
  write_manifest(dir, "backtest", cfg,
                 {{"samples", data.size()},
                  {"interval_length", length},
                  {"test_intervals", plan.intervals.size()},
                  {"missing_cells", missing}});
  evaluation::write_report_table(out, report);
  if (missing) err << missing << " (model, interval) cells failed; see failures.csv\n";
  return kOk;
}

int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const auto data = synthgen::generate(cfg.synth);
  OutputDir dir(cfg.out);
  {
    auto f = dir.open("prices.csv");
    volatility::write_price_csv(f, data.prices);
  }
  {
    auto f = dir.open("snapshots.txt");
    synthgen::write_snapshots(f, data.snapshots);
  }
  {
    auto f = dir.open("labels.csv");
    synthgen::write_labels_csv(f, data.regime_labels);
  }
  write_manifest(dir, "synth", cfg, {{"hours", cfg.synth.hours}, {"snapshots", data.snapshots.size()}});
  out << "generated " << cfg.synth.hours << " hours (" << data.snapshots.size() << " snapshots) in " << cfg.out << '\n';
  return kOk;
}

int cmd_kstest(const std::string& a, const std::string& b, std::ostream& out) {
  const auto xa = read_error_column(a);
  const auto xb = read_error_column(b);
  const auto ks = evaluation::ks_two_sample(xa, xb);
  out << "D=" << format_double(ks.d) << " p=" << format_double(ks.p) << '\n';
  return kOk;
}

}  // namespace

void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key);
  const std::string value = trim(raw_value);
  if (key == "prices") prices = value;
  else if (key == "snapshots") snapshots = value;
  else if (key == "features") features = value;
  else if (key == "labels") labels = value;
  else if (key == "dataset") dataset = value;
  else if (key == "model") model = value;
  else if (key == "out") out = value;
  else if (key == "lv") dims.l_v = to_int<int>(key, value);
  else if (key == "lb") dims.l_b = to_int<int>(key, value);
  else if (key == "horizon") horizon = to_int<int>(key, value);
  else if (key == "bucket_size") bucket_size = to_int<int>(key, value);
  else if (key == "max_gap") max_gap = to_int<int>(key, value);
  else if (key == "kind") kind = mixture::kind_from_string(value);
  else if (key == "learning_rate") train.learning_rate = to_double(key, value);
  else if (key == "max_rounds") train.max_rounds = to_int<int>(key, value);
  else if (key == "steps_per_block") train.steps_per_block = to_int<int>(key, value);
  else if (key == "tol_rel_loss") train.tol_rel_loss = to_double(key, value);
  else if (key == "lambda") train.lambda = to_double(key, value);
  else if (key == "alpha") train.alpha = to_double(key, value);
  else if (key == "delta") train.delta = to_double(key, value);
  else if (key == "seed") {
    train.seed = to_int<std::uint64_t>(key, value);
    synth.seed = train.seed;
  } else if (key == "grad_check") train.grad_check = to_bool(key, value);
  else if (key == "variance_mode") {
    if (value == "constant") train.variance_mode = mixture::VarianceMode::kConstant;
    else if (value == "linear") train.variance_mode = mixture::VarianceMode::kLinear;
    else throw ConfigError("config: variance_mode must be constant or linear");
  } else if (key == "optimizer") {
    if (value == "fisher") train.optimizer = training::Optimizer::kFisher;
    else if (value == "plain") train.optimizer = training::Optimizer::kPlain;
    else throw ConfigError("config: optimizer must be fisher or plain");
  } else if (key == "unit_scaling") train.unit_scaling = to_bool(key, value);
  else if (key == "train_fraction") train_fraction = to_double(key, value);
  else if (key == "interval_length") interval_length = to_int<std::size_t>(key, value);
  else if (key == "intervals") intervals = to_int<int>(key, value);
  else if (key == "lookback") lookback = to_int<int>(key, value);
  else if (key == "procedure") procedure = evaluation::procedure_from_string(value);
  else if (key == "validation_fraction") validation_fraction = to_double(key, value);
  else if (key == "models") {
    models = split_list(value);
    for (const auto& m : models) display_name(m);
    if (models.empty()) throw ConfigError("config: models must not be empty");
  } else if (key == "lambda_grid") lambda_grid = to_doubles(key, value);
  else if (key == "ridge_grid") ridge_grid = to_doubles(key, value);
  else if (key == "reference") reference = value;
  else if (key == "workers") workers = to_int<int>(key, value);
  else if (key == "dump_errors") dump_errors = to_bool(key, value);
  else if (key == "synth.hours") synth.hours = to_int<int>(key, value);
  else if (key == "synth.regime_persistence") synth.regime_persistence = to_double(key, value);
  else if (key == "synth.ar_coefficients") synth.ar_coefficients = to_doubles(key, value);
  else if (key == "synth.ob_gain") synth.ob_gain = to_double(key, value);
  else if (key == "synth.noise_scale") synth.noise_scale = to_double(key, value);
  else if (key == "synth.book_levels") synth.book_levels = to_int<int>(key, value);
  else if (key == "synth.base_volatility") synth.base_volatility = to_double(key, value);
  else if (key == "synth.regime1_share") synth.regime1_share = to_double(key, value);
  else if (key == "synth.imbalance_level") synth.imbalance_level = to_double(key, value);
  else if (key == "synth.imbalance_spread") synth.imbalance_spread = to_double(key, value);
  else if (key == "synth.start_price") synth.start_price = to_double(key, value);
  else if (key == "synth.price_reversion") synth.price_reversion = to_double(key, value);
  else if (key == "synth.shift_hour") {
    if (value.empty() || value == "none") synth.shift_hour.reset();
    else synth.shift_hour = to_int<int>(key, value);
  } else if (key == "synth.shifted_regime1_share") synth.shifted_regime1_share = to_double(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

std::map<std::string, std::string> RunConfig::canonical() const {
  auto num = [](double x) { return format_double(x); };
  std::map<std::string, std::string> c;
  c["prices"] = prices;
  c["snapshots"] = snapshots;
  c["features"] = features;
  c["labels"] = labels;
  c["dataset"] = dataset;
  c["model"] = model;
  c["out"] = out;
  c["lv"] = std::to_string(dims.l_v);
  c["lb"] = std::to_string(dims.l_b);
  c["horizon"] = std::to_string(horizon);
  c["bucket_size"] = std::to_string(bucket_size);
  c["max_gap"] = std::to_string(max_gap);
  c["kind"] = mixture::to_string(kind);
  c["learning_rate"] = num(train.learning_rate);
  c["max_rounds"] = std::to_string(train.max_rounds);
  c["steps_per_block"] = std::to_string(train.steps_per_block);
  c["tol_rel_loss"] = num(train.tol_rel_loss);
  c["lambda"] = num(train.lambda);
  c["alpha"] = num(train.alpha);
  c["delta"] = num(train.delta);
  c["seed"] = std::to_string(train.seed);
  c["grad_check"] = train.grad_check ? "true" : "false";
  c["variance_mode"] = train.variance_mode == mixture::VarianceMode::kConstant ? "constant" : "linear";
  c["optimizer"] = train.optimizer == training::Optimizer::kFisher ? "fisher" : "plain";
  c["unit_scaling"] = train.unit_scaling ? "true" : "false";
  c["train_fraction"] = num(train_fraction);
  c["interval_length"] = std::to_string(interval_length);
  c["intervals"] = std::to_string(intervals);
  c["lookback"] = std::to_string(lookback);
  c["procedure"] = evaluation::to_string(procedure);
  c["validation_fraction"] = num(validation_fraction);
  c["models"] = join(models);
  c["lambda_grid"] = join(lambda_grid);
  c["ridge_grid"] = join(ridge_grid);
  c["reference"] = reference;
  c["workers"] = std::to_string(workers);
  c["dump_errors"] = dump_errors ? "true" : "false";
  c["synth.hours"] = std::to_string(synth.hours);
  c["synth.regime_persistence"] = num(synth.regime_persistence);
  c["synth.ar_coefficients"] = join(synth.ar_coefficients);
  c["synth.ob_gain"] = num(synth.ob_gain);
  c["synth.noise_scale"] = num(synth.noise_scale);
  c["synth.book_levels"] = std::to_string(synth.book_levels);
  c["synth.base_volatility"] = num(synth.base_volatility);
  c["synth.regime1_share"] = num(synth.regime1_share);
  c["synth.imbalance_level"] = num(synth.imbalance_level);
  c["synth.imbalance_spread"] = num(synth.imbalance_spread);
  c["synth.start_price"] = num(synth.start_price);
  c["synth.price_reversion"] = num(synth.price_reversion);
  c["synth.shift_hour"] = synth.shift_hour ? std::to_string(*synth.shift_hour) : "none";
  c["synth.shifted_regime1_share"] = num(synth.shifted_regime1_share);
  return c;
}

void parse_config_text(RunConfig& cfg, std::istream& in, const std::string& origin) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      cfg.set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

RunConfig load_config_file(const std::string& path) {
  RunConfig cfg;
  auto in = open_in(path, "config file");
  parse_config_text(cfg, in, path);
  return cfg;
}

std::uint64_t config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [k, v] : cfg.canonical()) {
    // The output location does not change what a run computes.
    if (k == "out") continue;
    feed(k);
    feed("=");
    feed(v);
    feed("\n");
  }
  return h;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporal mixture volatility forecasting tools", "tmvol"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir, kind, procedure, prices, snapshots, features, labels, dataset, model;
  std::optional<int> lv, lb, horizon, lookback;
  std::vector<std::string> ks_files;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key = value config file");
    sub->add_option("--set", sets, "override one config key (key=value); repeatable");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--kind", kind, "mixture kind: tm-g or tm-log");
    sub->add_option("--lv", lv, "volatility history length");
    sub->add_option("--lb", lb, "order-book window in minutes");
    sub->add_option("--horizon", horizon, "forecast horizon D in hours");
    sub->add_option("--procedure", procedure, "rolling or incremental");
    sub->add_option("--lookback", lookback, "training intervals N");
    sub->add_option("--prices", prices, "price CSV (ts,price)");
    sub->add_option("--snapshots", snapshots, "order-book snapshot file");
    sub->add_option("--features", features, "feature CSV (instead of snapshots)");
    sub->add_option("--labels", labels, "regime labels CSV (h,z)");
    sub->add_option("--dataset", dataset, "aligned dataset JSON");
    sub->add_option("--model", model, "model checkpoint JSON");
  };
  auto* features_cmd = app.add_subcommand("features", "extract order-book features from snapshots");
  auto* dataset_cmd = app.add_subcommand("dataset", "align volatility and features into a dataset");
  auto* train_cmd = app.add_subcommand("train", "fit a mixture model");
  auto* predict_cmd = app.add_subcommand("predict", "predict with a trained model");
  auto* backtest_cmd = app.add_subcommand("backtest", "rolling or incremental backtest");
  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic two-regime data");
  auto* kstest_cmd = app.add_subcommand("kstest", "two-sample KS test of two error files");
  for (auto* sub : {features_cmd, dataset_cmd, train_cmd, predict_cmd, backtest_cmd, synth_cmd, kstest_cmd}) {
    add_common(sub);
  }
  features_cmd->add_option("input", snapshots, "snapshot file");
  kstest_cmd->add_option("files", ks_files, "two error CSV files")->expected(2)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return kUsage;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config_file(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (out_dir) cfg.out = *out_dir;
    if (kind) cfg.set("kind", *kind);
    if (lv) cfg.dims.l_v = *lv;
    if (lb) cfg.dims.l_b = *lb;
    if (horizon) cfg.horizon = *horizon;
    if (procedure) cfg.set("procedure", *procedure);
    if (lookback) cfg.lookback = *lookback;
    if (prices) cfg.prices = *prices;
    if (snapshots) cfg.snapshots = *snapshots;
    if (features) cfg.features = *features;
    if (labels) cfg.labels = *labels;
    if (dataset) cfg.dataset = *dataset;
    if (model) cfg.model = *model;
    if (cfg.dims.l_v < 1 || cfg.dims.l_b < 1 || cfg.horizon < 1) {
      throw ConfigError("lv, lb and horizon must be positive");
    }
    cfg.train.validate();

    if (*features_cmd) return cmd_features(cfg, out, err);
    if (*dataset_cmd) return cmd_dataset(cfg, out, err);
    if (*train_cmd) return cmd_train(cfg, out, err);
    if (*predict_cmd) return cmd_predict(cfg, out, err);
    if (*backtest_cmd) return cmd_backtest(cfg, out, err);
    if (*synth_cmd) return cmd_synth(cfg, out, err);
    return cmd_kstest(ks_files.at(0), ks_files.at(1), out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    err << "data error: " << e.what();
    if (e.line()) err << " (line " << e.line() << ")";
    err << '\n';
    return kDataError;
  } catch (const ValidationError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const AlignmentError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const InsufficientDataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const DimensionError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const Error& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kNumericalError;
  }
}

}  // namespace tmvol::cli
