#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "tmvol/errors.hpp"
#include "tmvol/evaluation.hpp"

using namespace tmvol;
using namespace tmvol::evaluation;

namespace {

std::vector<double> normals(std::uint64_t seed, std::size_t n, double mean) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(mean, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = z(rng);
  return v;
}

ModelSpec oracle_spec() {
  return {"oracle", [](const AlignedDataset&, const AlignedDataset&, const AlignedDataset& test) { return test.targets; }};
}

ModelSpec last_value_spec(std::string name) {
  return {std::move(name), [](const AlignedDataset&, const AlignedDataset&, const AlignedDataset& test) {
            std::vector<double> p;
            for (const auto& h : test.histories) p.push_back(h[0]);
            return p;
          }};
}

}  // namespace

TEST(Splits, RollingExample) {
  auto p = make_splits(50, 10, 2, Procedure::kRolling, 0.2);
  ASSERT_EQ(p.intervals.size(), 3u);
  EXPECT_EQ(p.intervals[0].index, 2u);
  EXPECT_EQ(p.intervals[0].train, (IndexRange{0, 16}));
  EXPECT_EQ(p.intervals[0].validation, (IndexRange{16, 20}));
  EXPECT_EQ(p.intervals[0].test, (IndexRange{20, 30}));
  EXPECT_EQ(p.intervals[2].train.begin, 20u);
}

TEST(Splits, IncrementalExample) {
  auto p = make_splits(50, 10, 2, Procedure::kIncremental, 0.2);
  ASSERT_EQ(p.intervals.size(), 3u);
  EXPECT_EQ(p.intervals[2].index, 4u);
  EXPECT_EQ(p.intervals[2].train.begin, 0u);
  EXPECT_EQ(p.intervals[2].validation.end, 40u);
  EXPECT_EQ(p.intervals[2].validation.size(), 8u);
}

TEST(Splits, PaperShape) {
  auto p = make_splits(15 * 30, 30, 3, Procedure::kRolling);
  EXPECT_EQ(p.intervals.size(), 12u);
  auto tail = make_splits(15 * 30 + 29, 30, 3, Procedure::kRolling);
  EXPECT_EQ(tail.intervals.size(), 12u);
}

TEST(Splits, NoLeakageAndMatchingTests) {
  for (std::size_t total : {100u, 457u, 1000u}) {
    for (int n : {1, 3, 5}) {
      const std::size_t len = total / (n + 4);
      auto r = make_splits(total, len, n, Procedure::kRolling, 0.3);
      auto c = make_splits(total, len, n, Procedure::kIncremental, 0.3);
      ASSERT_EQ(r.intervals.size(), c.intervals.size());
      std::size_t prev_end = 0;
      for (std::size_t k = 0; k < r.intervals.size(); ++k) {
        EXPECT_EQ(r.intervals[k].test, c.intervals[k].test);
        for (const auto& iv : {r.intervals[k], c.intervals[k]}) {
          for (std::size_t i = iv.test.begin; i < iv.test.end; ++i) {
            EXPECT_FALSE(iv.train.contains(i));
            EXPECT_FALSE(iv.validation.contains(i));
          }
          EXPECT_LE(iv.validation.end, iv.test.begin);
          EXPECT_LE(iv.train.end, iv.validation.begin);
        }
        EXPECT_EQ(r.intervals[k].validation.end - r.intervals[k].train.begin, n * len);
        EXPECT_GE(r.intervals[k].test.begin, prev_end);
        prev_end = r.intervals[k].test.end;
      }
    }
  }
}

TEST(Splits, Infeasible) {
  EXPECT_THROW(make_splits(20, 10, 2, Procedure::kRolling), ConfigError);
  EXPECT_THROW(make_splits(100, 0, 2, Procedure::kRolling), ConfigError);
  EXPECT_THROW(make_splits(100, 10, 2, Procedure::kRolling, 0.6), ConfigError);
  EXPECT_THROW(make_splits(100, 10, 0, Procedure::kRolling), ConfigError);
}

TEST(Metrics, Examples) {
  std::vector<double> a = {1.5, -2, 3};
  EXPECT_EQ(rmse(a, a), 0.0);
  EXPECT_EQ(mae(a, a), 0.0);
  std::vector<double> z = {0, 0}, t = {3, 4};
  EXPECT_EQ(rmse(z, t), std::sqrt(12.5));
  EXPECT_EQ(mae(z, t), 3.5);
  EXPECT_THROW(rmse(z, a), MetricError);
  EXPECT_THROW(mae(std::vector<double>{}, std::vector<double>{}), MetricError);
}

TEST(Metrics, Properties) {
  std::mt19937_64 rng(1);
  for (int s = 0; s < 50; ++s) {
    auto p = normals(s, 40, 0.0), q = normals(s + 100, 40, 0.3);
    EXPECT_GE(rmse(p, q), mae(p, q));
    std::vector<std::size_t> perm(p.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pp, qq;
    for (auto i : perm) pp.push_back(p[i]), qq.push_back(q[i]);
    EXPECT_NEAR(rmse(pp, qq), rmse(p, q), 1e-14);
    EXPECT_NEAR(mae(pp, qq), mae(p, q), 1e-14);
  }
}

TEST(Ks, Examples) {
  auto a = normals(1, 50, 0.0);
  auto same = ks_two_sample(a, a);
  EXPECT_EQ(same.d, 0.0);
  EXPECT_EQ(same.p, 1.0);
  std::vector<double> lo = {1, 2, 3, 4}, hi = {10, 20, 30, 40};
  auto r = ks_two_sample(lo, hi);
  EXPECT_EQ(r.d, 1.0);
  EXPECT_TRUE(r.small_sample);
  EXPECT_THROW(ks_two_sample(std::vector<double>{}, lo), MetricError);
}

TEST(Ks, ShiftDetected) {
  for (int s = 0; s < 10; ++s) EXPECT_LT(ks_two_sample(normals(s, 200, 0.0), normals(s + 50, 200, 5.0)).p, 0.01);
}

TEST(Ks, MatchesOracle) {
  for (int s = 0; s < 30; ++s) {
    auto a = normals(s, 20 + s, 0.0), b = normals(s + 1000, 35, 0.4);
    // ties across samples
    b[0] = a[0];
    b[1] = a[1];
    auto r = ks_two_sample(a, b);
    EXPECT_NEAR(r.d, oracle::ks_d(a, b), 1e-15);
    const double m = a.size(), n = b.size();
    EXPECT_NEAR(r.p, oracle::kolmogorov_q(r.d * std::sqrt(m * n / (m + n))), 1e-10);
  }
}

TEST(Ks, SurvivalMatchesSeries) {
  EXPECT_EQ(kolmogorov_survival(0.0), 1.0);
  for (double x = 0.05; x < 4.0; x += 0.05) EXPECT_NEAR(kolmogorov_survival(x), oracle::kolmogorov_q(x), 1e-12) << x;
  EXPECT_NEAR(kolmogorov_survival(1.358), 0.05, 1e-3);
}

TEST(Ks, SymmetryAndTranslation) {
  for (int s = 0; s < 20; ++s) {
    auto a = normals(s, 60, 0.0), b = normals(s + 7, 45, 0.5);
    auto ab = ks_two_sample(a, b), ba = ks_two_sample(b, a);
    EXPECT_EQ(ab.d, ba.d);
    EXPECT_EQ(ab.p, ba.p);
    // shift by a power of two so every sum is exact and order is preserved
    for (auto& x : a) x += 1024.0;
    for (auto& x : b) x += 1024.0;
    auto shifted = ks_two_sample(a, b);
    EXPECT_EQ(shifted.d, ab.d);
    EXPECT_EQ(shifted.p, ab.p);
  }
}

TEST(Auc, MatchesPairCounting) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> coin(0, 1), level(0, 9);
  for (int s = 0; s < 20; ++s) {
    std::vector<double> sc;
    std::vector<int> y;
    for (int i = 0; i < 80; ++i) {
      y.push_back(coin(rng));
      sc.push_back(level(rng) + 2.0 * y.back());  // ties on purpose
    }
    EXPECT_NEAR(auc(sc, y), oracle::auc_pairs(sc, y), 1e-12);
  }
  std::vector<double> perfect = {0.1, 0.2, 0.8, 0.9};
  std::vector<int> lab = {0, 0, 1, 1};
  EXPECT_EQ(auc(perfect, lab), 1.0);
  std::vector<int> one_class = {1, 1, 1, 1};
  EXPECT_THROW(auc(perfect, one_class), MetricError);
}

TEST(Stars, Thresholds) {
  EXPECT_EQ(significance_stars(0.2), "");
  EXPECT_EQ(significance_stars(0.04), "*");
  EXPECT_EQ(significance_stars(0.009), "**");
}

TEST(Backtest, OracleHasZeroErrors) {
  auto d = fixtures::random_dataset({3, 2, 2}, 100, 1);
  auto plan = make_splits(d.size(), 20, 2, Procedure::kRolling);
  std::vector<ModelSpec> specs = {oracle_spec()};
  auto r = backtest(specs, d, plan);
  ASSERT_EQ(r.cells[0].size(), 3u);
  for (const auto& c : r.cells[0]) {
    ASSERT_TRUE(c.has_value());
    EXPECT_EQ(c->rmse, 0.0);
    for (double e : c->errors) EXPECT_EQ(e, 0.0);
    EXPECT_EQ(c->errors.size(), 20u);
  }
}

TEST(Backtest, IdenticalSpecsHavePOne) {
  auto d = fixtures::random_dataset({3, 2, 2}, 100, 2);
  auto plan = make_splits(d.size(), 20, 2, Procedure::kIncremental);
  std::vector<ModelSpec> specs = {last_value_spec("a"), last_value_spec("b")};
  auto r = backtest(specs, d, plan);
  for (const auto& c : r.cells[1]) {
    EXPECT_EQ(c->ks_p, 1.0);
    EXPECT_EQ(c->stars, "");
  }
}

TEST(Backtest, FailuresBecomeMissingCells) {
  auto d = fixtures::random_dataset({3, 2, 2}, 100, 3);
  auto plan = make_splits(d.size(), 20, 2, Procedure::kRolling);
  ModelSpec boom{"boom", [](const AlignedDataset&, const AlignedDataset&, const AlignedDataset&) -> std::vector<double> {
                   throw SingularSystemError("nope");
                 }};
  std::vector<ModelSpec> specs = {last_value_spec("ok"), boom};
  auto r = backtest(specs, d, plan);
  for (const auto& c : r.cells[1]) EXPECT_FALSE(c.has_value());
  EXPECT_FALSE(r.failures.empty());
  std::ostringstream csv;
  write_report_csv(csv, r);
  EXPECT_NE(csv.str().find("—"), std::string::npos);
  EXPECT_EQ(csv.str().rfind("model,interval,rmse,mae,ks_d,ks_p,stars\n", 0), 0u);
}

TEST(Backtest, ModelsSeeOnlyTheirRanges) {
  auto d = fixtures::random_dataset({3, 2, 2}, 120, 4);
  auto plan = make_splits(d.size(), 20, 2, Procedure::kRolling);
  std::vector<std::vector<std::int64_t>> seen;
  ModelSpec spy{"spy", [&](const AlignedDataset& tr, const AlignedDataset& va, const AlignedDataset& te) {
                  for (auto h : te.hours) {
                    EXPECT_EQ(std::count(tr.hours.begin(), tr.hours.end(), h), 0);
                    EXPECT_EQ(std::count(va.hours.begin(), va.hours.end(), h), 0);
                  }
                  EXPECT_LT(tr.hours.back(), te.hours.front());
                  return std::vector<double>(te.size(), 0.0);
                }};
  std::vector<ModelSpec> specs = {spy};
  backtest(specs, d, plan);
}

TEST(Backtest, WorkersDoNotChangeResults) {
  auto d = fixtures::random_dataset({3, 2, 2}, 200, 5);
  auto plan = make_splits(d.size(), 25, 3, Procedure::kRolling);
  std::vector<ModelSpec> specs = {ar_spec("AR", default_ridge_grid()), ewma_spec("EWMA", baselines::default_ewma_grid()),
                                  last_value_spec("LAST")};
  std::ostringstream a, b;
  write_report_csv(a, backtest(specs, d, plan, {"", 1}));
  write_report_csv(b, backtest(specs, d, plan, {"", 3}));
  EXPECT_EQ(a.str(), b.str());
}
