#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tmvol/orderbook.hpp"

namespace tmvol::volatility {

/// Minutely prices; timestamps strictly increasing, prices positive.
struct PriceSeries {
  std::vector<std::int64_t> timestamps;
  std::vector<double> prices;

  void validate() const;
};

/// Hourly realized volatility. `values[h - 1]` is v_h, the volatility of the
/// bucket of returns ending at minute `bucket_size * h`.
struct VolatilitySeries {
  std::vector<double> values;
  int bucket_size = 60;

  std::size_t hours() const { return values.size(); }
  double at(std::int64_t h) const { return values.at(static_cast<std::size_t>(h - 1)); }
};

std::vector<double> returns(const PriceSeries& p);
VolatilitySeries realized_volatility(std::span<const double> returns, int bucket_size = 60);

/// Last snapshot index at or before the start of volatility index h.
constexpr std::int64_t index_map(std::int64_t h, std::int64_t ratio) { return h * ratio; }

struct Dims {
  int l_v = 16;
  int l_b = 30;
  int n = orderbook::kFeatureCount;

  bool operator==(const Dims&) const = default;
};

/// Per-feature-row affine normalization: z = (x - mean) / scale.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  bool empty() const { return mean.empty(); }
  void apply(Eigen::MatrixXd& x) const;
  void invert(Eigen::MatrixXd& z) const;
};

/// Half-open sample index range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end > begin ? end - begin : 0; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const IndexRange&) const = default;
};

/// Supervised samples ordered by hour. Sample i predicts `targets[i]` = v_{h+D}
/// from `histories[i]` = (v_h, v_{h-1}, ..., v_{h-l_v+1}) and `features[i]`, an
/// n x l_b matrix whose column j is the standardized feature vector at minute
/// i(h) - j.
struct AlignedDataset {
  Dims dims;
  int horizon = 1;
  int bucket_size = 60;
  std::vector<std::int64_t> hours;
  std::vector<double> targets;
  std::vector<Eigen::VectorXd> histories;
  std::vector<Eigen::MatrixXd> features;
  FeatureScaler scaler;

  std::size_t size() const { return targets.size(); }
  bool empty() const { return targets.empty(); }
  void check_consistent() const;
};

struct AlignOptions {
  Dims dims;
  int horizon = 1;
  int max_gap = 5;  // minutes of forward fill tolerated in the feature series
  /// Sample range the scaler is fit on; nullopt fits on every sample.
  std::optional<IndexRange> train_range;
};

AlignedDataset align_dataset(const VolatilitySeries& v, std::span<const orderbook::FeatureVector> features,
                             const AlignOptions& opts);

/// Recovers raw features through the stored scaler and re-standardizes them
/// with a scaler fit on `fit_range` only.
AlignedDataset restandardize(const AlignedDataset& data, IndexRange fit_range);
FeatureScaler fit_scaler(std::span<const Eigen::MatrixXd> raw, IndexRange range);

AlignedDataset slice(const AlignedDataset& data, IndexRange range);

PriceSeries read_price_csv(std::istream& in);
void write_price_csv(std::ostream& out, const PriceSeries& p);
void write_volatility_csv(std::ostream& out, const VolatilitySeries& v);

nlohmann::json dataset_to_json(const AlignedDataset& d);
AlignedDataset dataset_from_json(const nlohmann::json& j);

}  // namespace tmvol::volatility
