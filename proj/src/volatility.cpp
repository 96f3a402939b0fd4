#include "tmvol/volatility.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include "tmvol/errors.hpp"
#include "tmvol/format.hpp"

namespace tmvol::volatility {

void PriceSeries::validate() const {
  if (timestamps.size() != prices.size()) throw DimensionError("price series: timestamp/price length mismatch");
  for (std::size_t i = 0; i < prices.size(); ++i) {
    if (!(prices[i] > 0.0) || !std::isfinite(prices[i])) {
      throw ValidationError("price series: non-positive price", timestamps[i]);
    }
    if (i > 0 && timestamps[i] <= timestamps[i - 1]) {
      throw ValidationError("price series: timestamps not strictly increasing", timestamps[i]);
    }
  }
}

std::vector<double> returns(const PriceSeries& p) {
  if (p.prices.size() < 2) throw InsufficientDataError("returns need at least two prices");
  std::vector<double> r(p.prices.size() - 1);
  for (std::size_t t = 1; t < p.prices.size(); ++t) {
    r[t - 1] = (p.prices[t] - p.prices[t - 1]) / p.prices[t - 1];
  }
  return r;
}

VolatilitySeries realized_volatility(std::span<const double> r, int bucket_size) {
  if (bucket_size < 2) throw ConfigError("bucket_size must be at least 2");
  if (r.size() < static_cast<std::size_t>(bucket_size)) {
    throw InsufficientDataError("fewer returns than one volatility bucket");
  }
  VolatilitySeries out;
  out.bucket_size = bucket_size;
  const std::size_t hours = r.size() / bucket_size;
  out.values.resize(hours);
  for (std::size_t h = 0; h < hours; ++h) {
    auto bucket = r.subspan(h * bucket_size, bucket_size);
    double mean = std::accumulate(bucket.begin(), bucket.end(), 0.0) / bucket_size;
    double ss = 0.0;
    for (double x : bucket) ss += (x - mean) * (x - mean);
    out.values[h] = std::sqrt(ss / bucket_size);
  }
  return out;
}

void FeatureScaler::apply(Eigen::MatrixXd& x) const {
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    x.row(r).array() = (x.row(r).array() - mean[r]) / scale[r];
  }
}

void FeatureScaler::invert(Eigen::MatrixXd& z) const {
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    z.row(r).array() = z.row(r).array() * scale[r] + mean[r];
  }
}

void AlignedDataset::check_consistent() const {
  const std::size_t n_samples = targets.size();
  if (hours.size() != n_samples || histories.size() != n_samples || features.size() != n_samples) {
    throw DimensionError("dataset: per-sample arrays differ in length");
  }
  for (std::size_t i = 0; i < n_samples; ++i) {
    if (histories[i].size() != dims.l_v) throw DimensionError("dataset: history length differs from l_v");
    if (features[i].rows() != dims.n || features[i].cols() != dims.l_b) {
      throw DimensionError("dataset: feature matrix shape differs from n x l_b");
    }
  }
  if (!scaler.empty() && (scaler.mean.size() != static_cast<std::size_t>(dims.n) ||
                          scaler.scale.size() != static_cast<std::size_t>(dims.n))) {
    throw DimensionError("dataset: scaler size differs from n");
  }
}

FeatureScaler fit_scaler(std::span<const Eigen::MatrixXd> raw, IndexRange range) {
  if (range.size() == 0 || range.end > raw.size()) throw InsufficientDataError("scaler fit range is empty");
  const Eigen::Index rows = raw[range.begin].rows();
  const double count = static_cast<double>(range.size() * raw[range.begin].cols());
  FeatureScaler s;
  s.mean.assign(rows, 0.0);
  s.scale.assign(rows, 1.0);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::size_t i = range.begin; i < range.end; ++i) sum += raw[i].row(r).sum();
    const double mean = sum / count;
    double ss = 0.0;
    for (std::size_t i = range.begin; i < range.end; ++i) ss += (raw[i].row(r).array() - mean).square().sum();
    const double var = ss / count;
    s.mean[r] = mean;
    // Constant rows are only shifted.
    s.scale[r] = var > 1e-24 * std::max(1.0, mean * mean) ? std::sqrt(var) : 1.0;
  }
  return s;
}

AlignedDataset align_dataset(const VolatilitySeries& v, std::span<const orderbook::FeatureVector> features,
                             const AlignOptions& opts) {
  const auto& dims = opts.dims;
  if (dims.l_v < 1 || dims.l_b < 1 || opts.horizon < 1) throw ConfigError("l_v, l_b and D must be positive");
  if (dims.n != orderbook::kFeatureCount) throw DimensionError("feature dimension must be 11");
  if (opts.max_gap < 0) throw ConfigError("max_gap must be non-negative");

  const std::int64_t H = static_cast<std::int64_t>(v.hours());
  const std::int64_t ratio = v.bucket_size;
  const std::int64_t minutes = index_map(H, ratio);

  // Forward-filled feature index per minute 1..minutes; -1 marks an unfillable gap.
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return features[a].timestamp < features[b].timestamp; });
  std::vector<long> at_minute(static_cast<std::size_t>(minutes + 1), -1);
  {
    std::size_t cursor = 0;
    long last = -1;
    for (std::int64_t m = 1; m <= minutes; ++m) {
      while (cursor < order.size() && features[order[cursor]].timestamp <= m) {
        last = static_cast<long>(order[cursor]);
        ++cursor;
      }
      if (last >= 0 && m - features[last].timestamp <= opts.max_gap) at_minute[m] = last;
    }
  }

  AlignedDataset out;
  out.dims = dims;
  out.horizon = opts.horizon;
  out.bucket_size = v.bucket_size;

  const std::int64_t first_h = std::max<std::int64_t>(dims.l_v, 1);
  for (std::int64_t h = first_h; h + opts.horizon <= H; ++h) {
    const std::int64_t end_minute = index_map(h, ratio);
    if (end_minute - dims.l_b + 1 < 1) continue;
    Eigen::MatrixXd window(dims.n, dims.l_b);
    bool complete = true;
    for (int j = 0; j < dims.l_b && complete; ++j) {
      const long idx = at_minute[end_minute - j];
      if (idx < 0) {
        complete = false;
        break;
      }
      const auto vals = features[idx].values();
      for (int r = 0; r < dims.n; ++r) window(r, j) = vals[r];
    }
    if (!complete) continue;
    Eigen::VectorXd history(dims.l_v);
    for (int j = 0; j < dims.l_v; ++j) history[j] = v.at(h - j);
    out.hours.push_back(h);
    out.targets.push_back(v.at(h + opts.horizon));
    out.histories.push_back(std::move(history));
    out.features.push_back(std::move(window));
  }
  if (out.empty()) throw InsufficientDataError("no admissible samples for the requested l_v, l_b, D");

  IndexRange fit_range = opts.train_range.value_or(IndexRange{0, out.size()});
  fit_range.end = std::min(fit_range.end, out.size());
  out.scaler = fit_scaler(out.features, fit_range);
  for (auto& x : out.features) out.scaler.apply(x);
  return out;
}

AlignedDataset restandardize(const AlignedDataset& data, IndexRange fit_range) {
  AlignedDataset out = data;
  if (!data.scaler.empty()) {
    for (auto& x : out.features) data.scaler.invert(x);
  }
  out.scaler = fit_scaler(out.features, fit_range);
  for (auto& x : out.features) out.scaler.apply(x);
  return out;
}

AlignedDataset slice(const AlignedDataset& data, IndexRange range) {
  if (range.end > data.size() || range.begin > range.end) throw DimensionError("slice range out of bounds");
  AlignedDataset out;
  out.dims = data.dims;
  out.horizon = data.horizon;
  out.bucket_size = data.bucket_size;
  out.scaler = data.scaler;
  auto b = static_cast<std::ptrdiff_t>(range.begin);
  auto e = static_cast<std::ptrdiff_t>(range.end);
  out.hours.assign(data.hours.begin() + b, data.hours.begin() + e);
  out.targets.assign(data.targets.begin() + b, data.targets.begin() + e);
  out.histories.assign(data.histories.begin() + b, data.histories.begin() + e);
  out.features.assign(data.features.begin() + b, data.features.begin() + e);
  return out;
}

PriceSeries read_price_csv(std::istream& in) {
  PriceSeries p;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("ts", 0) == 0) continue;
    auto comma = line.find(',');
    std::int64_t ts = 0;
    double price = 0.0;
    if (comma == std::string::npos || !parse_int(std::string_view(line).substr(0, comma), ts) ||
        !parse_double(std::string_view(line).substr(comma + 1), price)) {
      throw ParseError("malformed price row", line_no);
    }
    p.timestamps.push_back(ts);
    p.prices.push_back(price);
  }
  p.validate();
  return p;
}

void write_price_csv(std::ostream& out, const PriceSeries& p) {
  out << "ts,price\n";
  for (std::size_t i = 0; i < p.prices.size(); ++i) out << p.timestamps[i] << ',' << format_double(p.prices[i]) << '\n';
}

void write_volatility_csv(std::ostream& out, const VolatilitySeries& v) {
  out << "h,v\n";
  for (std::size_t i = 0; i < v.values.size(); ++i) out << (i + 1) << ',' << format_double(v.values[i]) << '\n';
}

nlohmann::json dataset_to_json(const AlignedDataset& d) {
  nlohmann::json j;
  j["kind"] = "dataset";
  j["dims"] = {{"l_v", d.dims.l_v}, {"l_b", d.dims.l_b}, {"n", d.dims.n}};
  j["horizon"] = d.horizon;
  j["bucket_size"] = d.bucket_size;
  j["scaler"] = {{"mean", d.scaler.mean}, {"scale", d.scaler.scale}};
  j["hours"] = d.hours;
  j["targets"] = d.targets;
  auto histories = nlohmann::json::array();
  auto features = nlohmann::json::array();
  for (std::size_t i = 0; i < d.size(); ++i) {
    histories.push_back(std::vector<double>(d.histories[i].data(), d.histories[i].data() + d.histories[i].size()));
    std::vector<double> flat;
    flat.reserve(d.features[i].size());
    for (Eigen::Index r = 0; r < d.features[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < d.features[i].cols(); ++c) flat.push_back(d.features[i](r, c));
    }
    features.push_back(std::move(flat));
  }
  j["histories"] = std::move(histories);
  j["features"] = std::move(features);
  return j;
}

AlignedDataset dataset_from_json(const nlohmann::json& j) {
  AlignedDataset d;
  try {
    d.dims.l_v = j.at("dims").at("l_v").get<int>();
    d.dims.l_b = j.at("dims").at("l_b").get<int>();
    d.dims.n = j.at("dims").at("n").get<int>();
    d.horizon = j.at("horizon").get<int>();
    d.bucket_size = j.at("bucket_size").get<int>();
    d.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
    d.scaler.scale = j.at("scaler").at("scale").get<std::vector<double>>();
    d.hours = j.at("hours").get<std::vector<std::int64_t>>();
    d.targets = j.at("targets").get<std::vector<double>>();
    for (const auto& h : j.at("histories")) {
      auto vals = h.get<std::vector<double>>();
      d.histories.push_back(Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size())));
    }
    for (const auto& f : j.at("features")) {
      auto vals = f.get<std::vector<double>>();
      if (vals.size() != static_cast<std::size_t>(d.dims.n) * d.dims.l_b) {
        throw DimensionError("dataset JSON: feature array has wrong length");
      }
      Eigen::MatrixXd x(d.dims.n, d.dims.l_b);
      for (int r = 0; r < d.dims.n; ++r) {
        for (int c = 0; c < d.dims.l_b; ++c) x(r, c) = vals[static_cast<std::size_t>(r) * d.dims.l_b + c];
      }
      d.features.push_back(std::move(x));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset JSON: ") + e.what(), 0);
  }
  d.check_consistent();
  return d;
}

}  // namespace tmvol::volatility
