#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "tmvol/orderbook.hpp"
#include "tmvol/volatility.hpp"

namespace tmvol::synthgen {

struct SynthConfig {
  int hours = 2000;
  std::uint64_t seed = 1;
  double regime_persistence = 0.8;  // self-transition probability of the hourly regime chain
  std::vector<double> ar_coefficients{0.55, 0.3};
  double ob_gain = 0.006;    // regime-1 volatility per unit of order-book imbalance
  double noise_scale = 0.1;  // volatility noise, as a fraction of base_volatility
  int book_levels = 10;

  double base_volatility = 0.002;  // long-run regime-0 level of minutely return std
  double regime1_share = 0.5;      // stationary share of regime-1 hours
  double imbalance_level = 0.45;   // mean imbalance in hours leading into regime 1
  double imbalance_spread = 0.15;  // hour-to-hour std of that level
  double start_price = 400.0;
  /// Per-minute pull of log price back toward log(start_price). Keeps the
  /// mid-price feature stationary; 0 gives a pure random walk.
  double price_reversion = 5e-4;
  /// Optional regime-frequency shift: from this hour on the chain uses
  /// `shifted_regime1_share` as its stationary share.
  std::optional<int> shift_hour;
  double shifted_regime1_share = 0.5;

  void validate() const;
};

struct SynthOutput {
  volatility::PriceSeries prices;                  // 60 * hours + 1 minutely prices
  std::vector<orderbook::OrderBookSnapshot> snapshots;  // one per minute 1..60 * hours
  std::vector<int> regime_labels;                  // regime_labels[h - 1] = z_h
  std::vector<double> planted_volatility;          // hourly target std of returns
  std::vector<double> imbalance;                   // per snapshot, (bid - ask) / total volume
};

SynthOutput generate(const SynthConfig& cfg);

/// Features, realized volatility and aligned samples of a generated run.
volatility::AlignedDataset to_dataset(const SynthOutput& out, const volatility::AlignOptions& opts);

/// Regime of each sample's target hour, h + horizon.
std::vector<int> label_alignment(std::span<const int> labels, const volatility::AlignedDataset& data);

void write_snapshots(std::ostream& out, std::span<const orderbook::OrderBookSnapshot> snapshots);
void write_labels_csv(std::ostream& out, std::span<const int> labels);
std::vector<int> read_labels_csv(std::istream& in);

}  // namespace tmvol::synthgen
