#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "tmvol/baselines.hpp"
#include "tmvol/errors.hpp"
#include "tmvol/evaluation.hpp"
#include "tmvol/synthgen.hpp"
#include "tmvol/training.hpp"

using namespace tmvol;
using namespace tmvol::synthgen;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

SynthConfig small(int hours, std::uint64_t seed) {
  SynthConfig c;
  c.hours = hours;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Synth, ShapesAndValidity) {
  auto out = generate(small(120, 3));
  EXPECT_EQ(out.prices.prices.size(), 60u * 120 + 1);
  EXPECT_EQ(out.snapshots.size(), 60u * 120);
  EXPECT_EQ(out.regime_labels.size(), 120u);
  EXPECT_EQ(out.planted_volatility.size(), 120u);
  EXPECT_NO_THROW(out.prices.validate());
  for (std::size_t i = 0; i < out.snapshots.size(); ++i) {
    const auto& s = out.snapshots[i];
    EXPECT_EQ(s.timestamp, static_cast<std::int64_t>(i + 1));
    EXPECT_GE(s.bids.size(), 10u);
    auto again = orderbook::parse_snapshot(orderbook::format_snapshot(s));
    EXPECT_EQ(again.bids.size(), s.bids.size());
    EXPECT_EQ(again.asks.size(), s.asks.size());
  }
  for (int z : out.regime_labels) EXPECT_TRUE(z == 0 || z == 1);
}

TEST(Synth, Deterministic) {
  auto a = generate(small(150, 9)), b = generate(small(150, 9));
  EXPECT_EQ(a.prices.prices, b.prices.prices);
  EXPECT_EQ(a.regime_labels, b.regime_labels);
  std::ostringstream sa, sb;
  write_snapshots(sa, a.snapshots);
  write_snapshots(sb, b.snapshots);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_NE(generate(small(150, 10)).prices.prices, a.prices.prices);
}

TEST(Synth, FullPersistenceStaysInRegimeZero) {
  auto c = small(300, 4);
  c.regime_persistence = 1.0;
  for (int z : generate(c).regime_labels) EXPECT_EQ(z, 0);
}

TEST(Synth, RealizedVolatilityTracksPlanted) {
  auto out = generate(small(2000, 5));
  auto rv = volatility::realized_volatility(volatility::returns(out.prices));
  ASSERT_EQ(rv.hours(), 2000u);
  EXPECT_GT(pearson(rv.values, out.planted_volatility), 0.8);
}

TEST(Synth, ImbalanceRecoverableFromFeatures) {
  auto out = generate(small(400, 6));
  std::vector<double> planted, measured;
  for (int h = 0; h < 400; ++h) {
    double p = 0, m = 0;
    for (int k = 0; k < 60; ++k) {
      p += out.imbalance[60 * h + k] / 60.0;
      m += orderbook::extract_features(out.snapshots[60 * h + k]).volume_difference / 60.0;
    }
    planted.push_back(p);
    measured.push_back(m);
  }
  const double r = pearson(planted, measured);
  EXPECT_GT(r * r, 0.9);
}

TEST(Synth, ZeroGainRemovesTheBookSignature) {
  auto c = small(1000, 7);
  c.ob_gain = 0.0;
  auto out = generate(c);
  double sum[2] = {0, 0}, cnt[2] = {0, 0};
  for (int h = 1; h < 1000; ++h) {
    // the book in hour h anticipates the regime of hour h + 1
    const int z = out.regime_labels[h];
    for (int k = 0; k < 60; ++k) sum[z] += out.imbalance[60 * (h - 1) + k], cnt[z] += 1;
  }
  ASSERT_GT(cnt[0], 0);
  ASSERT_GT(cnt[1], 0);
  EXPECT_LT(std::fabs(sum[0] / cnt[0] - sum[1] / cnt[1]), 0.02);
}

TEST(Synth, ConfigValidation) {
  auto c = small(100, 1);
  c.book_levels = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(100, 1);
  c.noise_scale = -1;
  EXPECT_THROW(generate(c), ConfigError);
  c = small(0, 1);
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(Labels, Alignment) {
  // H = 20, l_v = 16, D = 1: samples h = 16..19, labels of hours 17..20
  volatility::AlignedDataset d;
  d.horizon = 1;
  d.hours = {16, 17, 18, 19};
  std::vector<int> alternating(20);
  for (int h = 1; h <= 20; ++h) alternating[h - 1] = h % 2;
  EXPECT_EQ(label_alignment(alternating, d), (std::vector<int>{1, 0, 1, 0}));
  std::vector<int> zeros(20, 0);
  EXPECT_EQ(label_alignment(zeros, d), std::vector<int>(4, 0));
  d.horizon = 2;
  EXPECT_THROW(label_alignment(alternating, d), AlignmentError);
}

TEST(Labels, CsvRoundTrip) {
  std::vector<int> z = {0, 1, 1, 0, 1};
  std::stringstream ss;
  write_labels_csv(ss, z);
  EXPECT_EQ(ss.str().rfind("h,z\n1,0\n", 0), 0u);
  EXPECT_EQ(read_labels_csv(ss), z);
}

TEST(Synth, SingleRegimeArMatchesMixture) {
  auto c = small(600, 8);
  c.regime_persistence = 1.0;
  volatility::AlignOptions o;
  o.dims = {8, 6, orderbook::kFeatureCount};
  auto out = generate(c);
  auto all = to_dataset(out, o);
  // 60/20/20 train/validation/test; lambda and ridge chosen on validation as in backtests
  const std::size_t a = all.size() * 3 / 5, b = all.size() * 4 / 5;
  auto scaled = volatility::restandardize(all, {0, b});
  auto train = volatility::slice(scaled, {0, a}), val = volatility::slice(scaled, {a, b}),
       test = volatility::slice(scaled, {b, all.size()});
  auto tm = evaluation::mixture_spec("TM-G", mixture::Kind::kGaussian, {}, evaluation::default_lambda_grid());
  auto ar = evaluation::ar_spec("AR", evaluation::default_ridge_grid());
  const auto pm = tm.run(train, val, test), pa = ar.run(train, val, test);
  const double rm = evaluation::rmse(pm, test.targets), ra = evaluation::rmse(pa, test.targets);
  EXPECT_LT(std::fabs(rm - ra), 0.1 * ra);
}
