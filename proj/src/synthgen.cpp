#include "tmvol/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>
#include <string>

#include "tmvol/errors.hpp"
#include "tmvol/format.hpp"

namespace tmvol::synthgen {

namespace {

constexpr int kMinutesPerHour = 60;
constexpr double kQuietImbalanceStd = 0.03;
constexpr double kImbalanceReversion = 0.2;  // per minute pull toward the hour's level
constexpr double kImbalanceJitter = 0.01;
constexpr double kMaxImbalance = 0.9;
constexpr double kSpread = 0.1;  // quote currency
constexpr double kTick = 0.04;
constexpr double kTotalVolume = 100.0;

double transition_to_one(double persistence, double share) { return 2.0 * (1.0 - persistence) * share; }
double transition_to_zero(double persistence, double share) { return 2.0 * (1.0 - persistence) * (1.0 - share); }

}  // namespace

void SynthConfig::validate() const {
  if (hours < 1) throw ConfigError("synth: hours must be positive");
  if (!(regime_persistence > 0.0 && regime_persistence <= 1.0)) {
    throw ConfigError("synth: regime_persistence must lie in (0, 1]");
  }
  if (!(noise_scale > 0.0)) throw ConfigError("synth: noise_scale must be positive");
  if (book_levels < 5) throw ConfigError("synth: book_levels must be at least 5");
  if (!(base_volatility > 0.0) || !(start_price > 0.0)) throw ConfigError("synth: base volatility and price must be positive");
  if (!std::isfinite(ob_gain)) throw ConfigError("synth: ob_gain must be finite");
  for (double share : {regime1_share, shifted_regime1_share}) {
    if (!(share >= 0.0 && share <= 1.0)) throw ConfigError("synth: regime shares must lie in [0, 1]");
    if (transition_to_one(regime_persistence, share) > 1.0 || transition_to_zero(regime_persistence, share) > 1.0) {
      throw ConfigError("synth: regime share unreachable at this persistence");
    }
  }
  if (!(price_reversion >= 0.0 && price_reversion < 1.0)) throw ConfigError("synth: price_reversion must lie in [0, 1)");
  if (!(imbalance_spread >= 0.0)) throw ConfigError("synth: imbalance_spread must be non-negative");
}

SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  if (cfg.hours < 100) std::clog << "synth: warning: fewer than 100 hours requested\n";

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const auto H = static_cast<std::size_t>(cfg.hours);

  // z[h] for h = 1..H+1; the book in hour h carries the signature of z[h+1].
  std::vector<int> z(H + 2, 0);
  for (std::size_t h = 2; h <= H + 1; ++h) {
    const double share = cfg.shift_hour && static_cast<int>(h) >= *cfg.shift_hour ? cfg.shifted_regime1_share
                                                                                   : cfg.regime1_share;
    const double flip = z[h - 1] == 0 ? transition_to_one(cfg.regime_persistence, share)
                                      : transition_to_zero(cfg.regime_persistence, share);
    z[h] = uniform(rng) < flip ? 1 - z[h - 1] : z[h - 1];
  }
  // Without coupling the regimes leave no trace in the book.
  const bool signature = cfg.ob_gain != 0.0;

  SynthOutput out;
  out.regime_labels.assign(z.begin() + 1, z.begin() + 1 + static_cast<std::ptrdiff_t>(H));
  out.planted_volatility.resize(H);
  out.imbalance.reserve(H * kMinutesPerHour);
  out.snapshots.reserve(H * kMinutesPerHour);
  out.prices.timestamps.reserve(H * kMinutesPerHour + 1);
  out.prices.prices.reserve(H * kMinutesPerHour + 1);
  out.prices.timestamps.push_back(0);
  out.prices.prices.push_back(cfg.start_price);

  const double level0 = cfg.base_volatility;
  std::vector<double> realized;  // realized[h - 1]
  realized.reserve(H);
  double previous_mean_imbalance = 0.0;
  double s = previous_mean_imbalance;
  double price = cfg.start_price;
  std::vector<double> hour_returns(kMinutesPerHour);

  for (std::size_t h = 1; h <= H; ++h) {
    double v;
    if (z[h] == 0) {
      v = level0;
      for (std::size_t j = 0; j < cfg.ar_coefficients.size(); ++j) {
        const double past = h > j + 1 ? realized[h - j - 2] : level0;
        v += cfg.ar_coefficients[j] * (past - level0);
      }
    } else {
      v = cfg.ob_gain * previous_mean_imbalance;
    }
    v += cfg.noise_scale * level0 * normal(rng);
    v = std::max(v, 0.1 * level0);
    out.planted_volatility[h - 1] = v;

    const bool active = signature && z[h + 1] == 1;
    // Buyers dominate the book ahead of book-driven hours and sellers otherwise.
    double hour_level = kQuietImbalanceStd * normal(rng);
    if (signature) {
      const double level = cfg.imbalance_level + cfg.imbalance_spread * normal(rng);
      hour_level = active ? std::max(0.0, level) : std::min(0.0, -level);
    }
    double imbalance_sum = 0.0;
    for (int m = 0; m < kMinutesPerHour; ++m) {
      const std::int64_t t = static_cast<std::int64_t>((h - 1) * kMinutesPerHour) + m + 1;
      const double r = v * normal(rng) - cfg.price_reversion * std::log(price / cfg.start_price);
      hour_returns[static_cast<std::size_t>(m)] = r;
      price *= 1.0 + r;
      out.prices.timestamps.push_back(t);
      out.prices.prices.push_back(price);

      s += kImbalanceReversion * (hour_level - s) + kImbalanceJitter * normal(rng);
      s = std::clamp(s, -kMaxImbalance, kMaxImbalance);
      imbalance_sum += s;
      out.imbalance.push_back(s);

      const double half_spread = 0.5 * kSpread * (active ? 2.0 : 1.0) * (1.0 + 0.1 * uniform(rng));
      const double tick = kTick;
      const double total = kTotalVolume * (1.0 + 0.05 * normal(rng));
      auto build_side = [&](double best, double direction, double side_volume) {
        const int levels = cfg.book_levels + static_cast<int>(uniform(rng) * 6.0);
        std::vector<double> weights(static_cast<std::size_t>(levels));
        double weight_sum = 0.0;
        for (auto& w : weights) weight_sum += (w = 0.5 + uniform(rng));
        std::vector<orderbook::Order> orders;
        orders.reserve(weights.size());
        double p = best;
        for (double w : weights) {
          // Exchange precision: cents and 1e-4 BTC.
          orders.push_back({std::round(p * 100.0) / 100.0,
                            std::max(1e-4, std::round(side_volume * w / weight_sum * 1e4) / 1e4)});
          p += direction * tick * (0.5 + uniform(rng));
        }
        return orders;
      };
      auto bids = build_side(price - half_spread, -1.0, 0.5 * total * (1.0 + s));
      auto asks = build_side(price + half_spread, 1.0, 0.5 * total * (1.0 - s));
      out.snapshots.push_back(orderbook::make_snapshot(t, std::move(bids), std::move(asks)));
    }
    previous_mean_imbalance = imbalance_sum / kMinutesPerHour;

    double mean = 0.0;
    for (double r : hour_returns) mean += r;
    mean /= kMinutesPerHour;
    double ss = 0.0;
    for (double r : hour_returns) ss += (r - mean) * (r - mean);
    realized.push_back(std::sqrt(ss / kMinutesPerHour));
  }
  return out;
}

volatility::AlignedDataset to_dataset(const SynthOutput& out, const volatility::AlignOptions& opts) {
  std::vector<orderbook::FeatureVector> features;
  features.reserve(out.snapshots.size());
  for (const auto& s : out.snapshots) features.push_back(orderbook::extract_features(s));
  const auto rv = volatility::realized_volatility(volatility::returns(out.prices), kMinutesPerHour);
  return volatility::align_dataset(rv, features, opts);
}

std::vector<int> label_alignment(std::span<const int> labels, const volatility::AlignedDataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (std::int64_t h : data.hours) {
    const std::int64_t target_hour = h + data.horizon;
    if (target_hour < 1 || target_hour > static_cast<std::int64_t>(labels.size())) {
      throw AlignmentError("labels do not cover target hour " + std::to_string(target_hour));
    }
    out.push_back(labels[static_cast<std::size_t>(target_hour - 1)]);
  }
  return out;
}

void write_snapshots(std::ostream& out, std::span<const orderbook::OrderBookSnapshot> snapshots) {
  for (const auto& s : snapshots) out << orderbook::format_snapshot(s) << '\n';
}

void write_labels_csv(std::ostream& out, std::span<const int> labels) {
  out << "h,z\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out << i + 1 << ',' << labels[i] << '\n';
}

std::vector<int> read_labels_csv(std::istream& in) {
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("h,", 0) == 0)) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("labels: expected h,z", line_no);
    std::int64_t h = 0;
    int z = 0;
    if (!parse_int(std::string_view(line).substr(0, comma), h) ||
        !parse_int(std::string_view(line).substr(comma + 1), z) || (z != 0 && z != 1)) {
      throw ParseError("labels: malformed row", line_no);
    }
    if (h != static_cast<std::int64_t>(labels.size()) + 1) throw ParseError("labels: hours must run 1, 2, ...", line_no);
    labels.push_back(z);
  }
  return labels;
}

}  // namespace tmvol::synthgen
