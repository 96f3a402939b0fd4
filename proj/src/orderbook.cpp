#include "tmvol/orderbook.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <sstream>

#include <json.hpp>

#include "tmvol/errors.hpp"
#include "tmvol/format.hpp"

namespace tmvol::orderbook {

namespace {

// Sort best-first and merge equal prices by summing amounts in input order.
std::vector<Order> normalize_side(std::vector<Order> orders, Side side, std::int64_t ts) {
  for (const auto& o : orders) {
    if (!(o.price > 0.0) || !std::isfinite(o.price)) throw ValidationError("non-positive price", ts);
    if (!(o.amount > 0.0) || !std::isfinite(o.amount)) throw ValidationError("non-positive amount", ts);
  }
  if (side == Side::kBid) {
    std::stable_sort(orders.begin(), orders.end(), [](const Order& a, const Order& b) { return a.price > b.price; });
  } else {
    std::stable_sort(orders.begin(), orders.end(), [](const Order& a, const Order& b) { return a.price < b.price; });
  }
  std::vector<Order> merged;
  merged.reserve(orders.size());
  for (const auto& o : orders) {
    if (!merged.empty() && merged.back().price == o.price) {
      merged.back().amount += o.amount;
    } else {
      merged.push_back(o);
    }
  }
  return merged;
}

std::vector<Order> parse_ladder(std::string_view text, char tag, std::size_t line_no) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  if (text.empty() || text.front() != tag) {
    throw ParseError(std::string("expected side tag '") + tag + "'", line_no);
  }
  text.remove_prefix(1);
  std::vector<Order> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t' || text[pos] == '\r')) ++pos;
    if (pos >= text.size()) break;
    std::size_t end = pos;
    while (end < text.size() && text[end] != ' ' && text[end] != '\t' && text[end] != '\r') ++end;
    std::string_view token = text.substr(pos, end - pos);
    auto comma = token.find(',');
    Order o;
    if (comma == std::string_view::npos || !parse_double(token.substr(0, comma), o.price) ||
        !parse_double(token.substr(comma + 1), o.amount)) {
      throw ParseError("malformed order '" + std::string(token) + "'", line_no);
    }
    out.push_back(o);
    pos = end;
  }
  return out;
}

OrderBookSnapshot parse_json_record(std::string_view record, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(record);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
  }
  auto read_side = [&](const char* key) {
    std::vector<Order> side;
    if (!j.contains(key) || !j[key].is_array()) throw ParseError(std::string("missing array '") + key + "'", line_no);
    for (const auto& level : j[key]) {
      if (!level.is_array() || level.size() != 2 || !level[0].is_number() || !level[1].is_number()) {
        throw ParseError(std::string("malformed level in '") + key + "'", line_no);
      }
      side.push_back({level[0].get<double>(), level[1].get<double>()});
    }
    return side;
  };
  if (!j.is_object() || !j.contains("ts") || !j["ts"].is_number_integer()) {
    throw ParseError("missing integer field 'ts'", line_no);
  }
  auto ts = j["ts"].get<std::int64_t>();
  return make_snapshot(ts, read_side("bids"), read_side("asks"));
}

double sum_prices(const std::vector<Order>& side, int k) {
  double s = 0.0;
  for (int i = 0; i < k; ++i) s += side[i].price;
  return s;
}

}  // namespace

std::vector<double> FeatureVector::values() const {
  return {spread,     ask_depth,         bid_depth,       depth_difference, ask_volume, bid_volume,
          volume_difference, weighted_spread, ask_slope,       bid_slope,        mid_price};
}

FeatureVector FeatureVector::from_values(std::int64_t ts, const std::vector<double>& v) {
  if (v.size() != kFeatureCount) throw DimensionError("feature vector needs 11 values");
  FeatureVector f;
  f.timestamp = ts;
  f.spread = v[0];
  f.ask_depth = v[1];
  f.bid_depth = v[2];
  f.depth_difference = v[3];
  f.ask_volume = v[4];
  f.bid_volume = v[5];
  f.volume_difference = v[6];
  f.weighted_spread = v[7];
  f.ask_slope = v[8];
  f.bid_slope = v[9];
  f.mid_price = v[10];
  return f;
}

const std::vector<std::string>& FeatureVector::names() {
  static const std::vector<std::string> kNames = {"spread",  "ask_depth", "bid_depth",       "depth_diff",
                                                  "ask_vol", "bid_vol",   "vol_diff",        "weighted_spread",
                                                  "ask_slope", "bid_slope", "mid_price"};
  return kNames;
}

OrderBookSnapshot make_snapshot(std::int64_t timestamp, std::vector<Order> bids, std::vector<Order> asks) {
  OrderBookSnapshot s;
  s.timestamp = timestamp;
  s.bids = normalize_side(std::move(bids), Side::kBid, timestamp);
  s.asks = normalize_side(std::move(asks), Side::kAsk, timestamp);
  if (s.bids.empty()) throw ValidationError("empty bid side", timestamp);
  if (s.asks.empty()) throw ValidationError("empty ask side", timestamp);
  if (!(s.best_bid() < s.best_ask())) throw ValidationError("crossed book", timestamp);
  return s;
}

OrderBookSnapshot parse_snapshot(std::string_view record, std::size_t line_no) {
  while (!record.empty() && (record.front() == ' ' || record.front() == '\t')) record.remove_prefix(1);
  while (!record.empty() && (record.back() == '\r' || record.back() == ' ' || record.back() == '\n')) {
    record.remove_suffix(1);
  }
  if (record.empty()) throw ParseError("empty record", line_no);
  if (record.front() == '{') return parse_json_record(record, line_no);

  auto first = record.find(';');
  if (first == std::string_view::npos) throw ParseError("expected 'ts;B ...;A ...'", line_no);
  auto second = record.find(';', first + 1);
  if (second == std::string_view::npos) throw ParseError("missing ask section", line_no);
  if (record.find(';', second + 1) != std::string_view::npos) throw ParseError("too many sections", line_no);

  std::int64_t ts = 0;
  if (!parse_int(record.substr(0, first), ts)) throw ParseError("malformed timestamp", line_no);
  auto bids = parse_ladder(record.substr(first + 1, second - first - 1), 'B', line_no);
  auto asks = parse_ladder(record.substr(second + 1), 'A', line_no);
  return make_snapshot(ts, std::move(bids), std::move(asks));
}

std::string format_snapshot(const OrderBookSnapshot& s) {
  std::string out = std::to_string(s.timestamp) + ";B";
  for (const auto& o : s.bids) out += " " + format_double(o.price) + "," + format_double(o.amount);
  out += ";A";
  for (const auto& o : s.asks) out += " " + format_double(o.price) + "," + format_double(o.amount);
  return out;
}

double spread(const OrderBookSnapshot& s) { return s.best_ask() - s.best_bid(); }

int depth(const OrderBookSnapshot& s, Side side) { return static_cast<int>(s.side(side).size()); }

double volume(const OrderBookSnapshot& s, Side side) {
  double v = 0.0;
  for (const auto& o : s.side(side)) v += o.amount;
  return v;
}

int tenth_of_depth(int depth) {
  int k = static_cast<int>(std::ceil(0.1 * depth));
  return std::max(k, 1);
}

double weighted_spread(const OrderBookSnapshot& s) {
  const int k_ask = tenth_of_depth(depth(s, Side::kAsk));
  const int k_bid = tenth_of_depth(depth(s, Side::kBid));
  const double ask_sum = sum_prices(s.asks, k_ask);
  const double bid_sum = sum_prices(s.bids, k_bid);
  if (k_ask == k_bid) return ask_sum - bid_sum;
  // Unequal counts: compare per-order means so the result is still a price gap.
  return ask_sum / k_ask - bid_sum / k_bid;
}

double slope(const OrderBookSnapshot& s, Side side) {
  const auto& orders = s.side(side);
  const int k = tenth_of_depth(static_cast<int>(orders.size()));
  double cumulative = 0.0;
  for (int i = 0; i < k; ++i) cumulative += orders[i].amount;
  const double offset = std::abs(orders[k - 1].price - s.mid_price());
  return cumulative / std::max(offset, kPriceEpsilon);
}

FeatureVector extract_features(const OrderBookSnapshot& s) {
  FeatureVector f;
  f.timestamp = s.timestamp;
  f.spread = spread(s);
  f.ask_depth = depth(s, Side::kAsk);
  f.bid_depth = depth(s, Side::kBid);
  f.depth_difference = f.ask_depth - f.bid_depth;
  f.ask_volume = volume(s, Side::kAsk);
  f.bid_volume = volume(s, Side::kBid);
  f.volume_difference = f.ask_volume - f.bid_volume;
  f.weighted_spread = weighted_spread(s);
  f.ask_slope = slope(s, Side::kAsk);
  f.bid_slope = slope(s, Side::kBid);
  f.mid_price = s.mid_price();
  return f;
}

std::string feature_csv_header() {
  return "ts,spread,ask_depth,bid_depth,depth_diff,ask_vol,bid_vol,vol_diff,weighted_spread,ask_slope,bid_slope,"
         "mid_price";
}

std::string feature_csv_row(const FeatureVector& f) {
  std::string row = std::to_string(f.timestamp);
  for (double x : f.values()) row += "," + format_double(x);
  return row;
}

std::vector<FeatureVector> read_feature_csv(std::istream& in) {
  std::vector<FeatureVector> out;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) return out;
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != feature_csv_header()) throw ParseError("unexpected feature CSV header", line_no);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    std::size_t pos;
    while ((pos = rest.find(',')) != std::string_view::npos) {
      cells.push_back(rest.substr(0, pos));
      rest.remove_prefix(pos + 1);
    }
    cells.push_back(rest);
    if (cells.size() != kFeatureCount + 1) throw ParseError("expected 12 columns", line_no);
    std::int64_t ts = 0;
    if (!parse_int(cells[0], ts)) throw ParseError("malformed timestamp", line_no);
    std::vector<double> vals(kFeatureCount);
    for (int i = 0; i < kFeatureCount; ++i) {
      if (!parse_double(cells[i + 1], vals[i])) throw ParseError("malformed value", line_no);
    }
    out.push_back(FeatureVector::from_values(ts, vals));
  }
  return out;
}

}  // namespace tmvol::orderbook
