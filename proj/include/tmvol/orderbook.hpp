#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace tmvol::orderbook {

struct Order {
  double price = 0.0;   // quote currency per BTC
  double amount = 0.0;  // BTC
};

enum class Side { kAsk, kBid };

/// One exchange poll. Bids strictly descending, asks strictly ascending,
/// best bid < best ask. Construct through `make_snapshot` or the parsers.
struct OrderBookSnapshot {
  std::int64_t timestamp = 0;  // minutes since dataset epoch
  std::vector<Order> bids;
  std::vector<Order> asks;

  const std::vector<Order>& side(Side s) const { return s == Side::kAsk ? asks : bids; }
  double best_bid() const { return bids.front().price; }
  double best_ask() const { return asks.front().price; }
  double mid_price() const { return 0.5 * (bids.front().price + asks.front().price); }
};

inline constexpr int kFeatureCount = 11;

/// The eleven per-snapshot features, in the column order of the feature CSV.
struct FeatureVector {
  std::int64_t timestamp = 0;
  double spread = 0.0;
  double ask_depth = 0.0;
  double bid_depth = 0.0;
  double depth_difference = 0.0;
  double ask_volume = 0.0;
  double bid_volume = 0.0;
  double volume_difference = 0.0;
  double weighted_spread = 0.0;
  double ask_slope = 0.0;
  double bid_slope = 0.0;
  double mid_price = 0.0;

  /// Feature values in canonical order (timestamp excluded).
  std::vector<double> values() const;
  static FeatureVector from_values(std::int64_t ts, const std::vector<double>& v);
  static const std::vector<std::string>& names();
};

/// Sorts both sides, merges duplicate price levels by summing amounts and
/// validates every snapshot invariant. Throws ValidationError on failure.
OrderBookSnapshot make_snapshot(std::int64_t timestamp, std::vector<Order> bids, std::vector<Order> asks);

/// Parses one record in either the `ts;B p,a ...;A p,a ...` text form or the
/// one-object-per-line JSON form. `line_no` is reported in ParseError.
OrderBookSnapshot parse_snapshot(std::string_view record, std::size_t line_no = 0);

std::string format_snapshot(const OrderBookSnapshot& s);

double spread(const OrderBookSnapshot& s);
int depth(const OrderBookSnapshot& s, Side side);
double volume(const OrderBookSnapshot& s, Side side);
double weighted_spread(const OrderBookSnapshot& s);
double slope(const OrderBookSnapshot& s, Side side);

/// Number of orders making up "10% of depth": ceil(0.1 * depth), at least one.
int tenth_of_depth(int depth);

inline constexpr double kPriceEpsilon = 1e-9;

FeatureVector extract_features(const OrderBookSnapshot& s);

/// CSV header line for feature output (no trailing newline).
std::string feature_csv_header();
std::string feature_csv_row(const FeatureVector& f);
/// Parses a feature CSV produced by `feature_csv_row`; header line required.
std::vector<FeatureVector> read_feature_csv(std::istream& in);

}  // namespace tmvol::orderbook
