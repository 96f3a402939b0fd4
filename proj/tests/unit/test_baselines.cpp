#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "tmvol/baselines.hpp"
#include "tmvol/errors.hpp"

using namespace tmvol;
using namespace tmvol::baselines;

namespace {

const volatility::Dims kDims{5, 3, 2};

double rmse_of(const EwmaModel& m, const AlignedDataset& d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double e = ewma_predict(m, d.histories[i]) - d.targets[i];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(d.size()));
}

}  // namespace

TEST(Ewma, Examples) {
  std::vector<double> h = {4, 2, 7, 1};
  EXPECT_EQ(ewma_predict({1.0}, h), 4.0);
  std::vector<double> c(6, 3.25);
  for (double a : default_ewma_grid()) EXPECT_DOUBLE_EQ(ewma_predict({a}, c), 3.25);
  std::vector<double> two = {4, 2};
  EXPECT_EQ(ewma_predict({0.5}, two), 3.0);
  EXPECT_THROW(ewma_predict({0.5}, std::vector<double>{}), InsufficientDataError);
}

TEST(Ewma, WithinHistoryRange) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> h(1 + i % 20);
    for (auto& x : h) x = u(rng);
    const double p = ewma_predict({0.01 + 0.99 * u(rng) / 10.0}, h);
    EXPECT_GE(p, *std::min_element(h.begin(), h.end()) - 1e-12);
    EXPECT_LE(p, *std::max_element(h.begin(), h.end()) + 1e-12);
  }
}

TEST(Ewma, DefaultGrid) {
  auto g = default_ewma_grid();
  ASSERT_EQ(g.size(), 10u);
  EXPECT_EQ(g.front(), 0.01);
  EXPECT_NEAR(g.back(), 0.9, 1e-15);
}

TEST(Ewma, SelectionMatchesBruteForce) {
  auto grid = default_ewma_grid();
  for (int seed = 0; seed < 5; ++seed) {
    // white noise around a constant level
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(1.0, 0.2);
    // long histories so the smoothed level has settled for small alpha
    auto d = fixtures::random_dataset({16, 3, orderbook::kFeatureCount}, 300, seed);
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (auto& x : d.histories[i]) x = z(rng);
      d.targets[i] = z(rng);
    }
    const double chosen = ewma_select_alpha(d, grid).alpha;
    double best = grid[0], best_rmse = rmse_of({grid[0]}, d);
    for (double a : grid)
      if (rmse_of({a}, d) < best_rmse) best = a, best_rmse = rmse_of({a}, d);
    EXPECT_EQ(chosen, best);
    EXPECT_LE(chosen, 0.2);
  }
  auto d = fixtures::random_dataset(kDims, 100, 9);
  for (std::size_t i = 0; i < d.size(); ++i) d.targets[i] = d.histories[i][0];
  EXPECT_NEAR(ewma_select_alpha(d, grid).alpha, 0.9, 1e-15);
}

TEST(Ar, ExactRecovery) {
  auto d = fixtures::random_dataset(kDims, 100, 2);
  for (std::size_t i = 0; i < d.size(); ++i) d.targets[i] = 2.0 * d.histories[i][0];
  auto m = ar_fit(d, 0.0);
  EXPECT_NEAR(m.coefficients[0], 2.0, 1e-8);
  for (Eigen::Index j = 1; j < m.coefficients.size(); ++j) EXPECT_NEAR(m.coefficients[j], 0.0, 1e-8);
  EXPECT_NEAR(m.intercept, 0.0, 1e-8);
}

TEST(Ar, ConstantTarget) {
  auto d = fixtures::random_dataset(kDims, 100, 3);
  for (auto& t : d.targets) t = 1.75;
  auto m = ar_fit(d);
  EXPECT_NEAR(m.intercept, 1.75, 1e-4);
  EXPECT_LT(m.coefficients.cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Ar, ResidualsOrthogonal) {
  auto d = fixtures::random_dataset(kDims, 200, 4);
  auto m = ar_fit(d, 0.0);
  Eigen::VectorXd dot = Eigen::VectorXd::Zero(kDims.l_v + 1);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double r = d.targets[i] - ar_predict(m, d.histories[i]);
    dot[0] += r;
    dot.tail(kDims.l_v) += r * d.histories[i];
  }
  EXPECT_LT(dot.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Ar, SingularExactSolve) {
  auto d = fixtures::random_dataset(kDims, 50, 5);
  for (auto& h : d.histories) h.setConstant(1.0);  // collinear with the intercept
  EXPECT_THROW(ar_fit(d, 0.0), SingularSystemError);
  EXPECT_NO_THROW(ar_fit(d, 1e-6));
}

TEST(Arx, ZeroFeaturesEqualsAr) {
  auto d = fixtures::random_dataset(kDims, 120, 6);
  for (auto& x : d.features) x.setZero();
  auto a = ar_fit(d);
  auto b = arx_fit(d);
  EXPECT_NEAR(a.intercept, b.intercept, 1e-9);
  EXPECT_LT((a.coefficients - b.ar).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Arx, PredictReductions) {
  ArModel a{Eigen::VectorXd::Zero(3), 5.0};
  EXPECT_EQ(ar_predict(a, Eigen::Vector3d(1, 2, 3)), 5.0);
  a.coefficients = Eigen::Vector3d(1, -2, 0.5);
  a.intercept = 0.25;
  EXPECT_EQ(ar_predict(a, Eigen::Vector3d(2, 1, 4)), 0.25 + 2 - 2 + 2);
  ArxModel x{a.coefficients, a.intercept, Eigen::VectorXd::Zero(6)};
  Eigen::MatrixXd f = Eigen::MatrixXd::Ones(2, 3);
  EXPECT_EQ(arx_predict(x, Eigen::Vector3d(2, 1, 4), f), ar_predict(a, Eigen::Vector3d(2, 1, 4)));
  x.exog = Eigen::VectorXd::LinSpaced(6, 1, 6);
  EXPECT_EQ(arx_predict(x, Eigen::Vector3d(2, 1, 4), f), ar_predict(a, Eigen::Vector3d(2, 1, 4)) + 21.0);
  EXPECT_THROW(ar_predict(a, Eigen::Vector2d(1, 2)), DimensionError);
}

TEST(Arx, NeedsMoreSamplesThanParameters) {
  auto d = fixtures::random_dataset(kDims, 10, 7);  // 1 + 5 + 6 = 12 parameters
  EXPECT_THROW(arx_fit(d), InsufficientDataError);
}

TEST(Checkpoints, RoundTrip) {
  auto d = fixtures::random_dataset(kDims, 60, 8);
  auto x = arx_fit(d);
  auto back = arx_from_json(nlohmann::json::parse(to_json(x).dump()));
  EXPECT_EQ(back.ar, x.ar);
  EXPECT_EQ(back.exog, x.exog);
  EXPECT_EQ(back.intercept, x.intercept);
  auto a = ar_fit(d);
  EXPECT_EQ(ar_from_json(to_json(a)).coefficients, a.coefficients);
  EXPECT_EQ(ewma_from_json(to_json(EwmaModel{0.3})).alpha, 0.3);
}
