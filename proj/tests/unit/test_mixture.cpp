#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fixtures.hpp"
#include "tmvol/errors.hpp"
#include "tmvol/mixture.hpp"

using namespace tmvol;
using namespace tmvol::mixture;

namespace {

const Dims kSmall{3, 4, 2};

// Model whose gate score difference equals `d` for history (1, 0, 0).
MixtureModel gated(Kind kind, double d) {
  auto m = MixtureModel::zeros(kind, kSmall);
  m.gate.theta[0] = d;
  return m;
}

Eigen::VectorXd e1() { return Eigen::Vector3d(1, 0, 0); }
Eigen::MatrixXd zero_x() { return Eigen::MatrixXd::Zero(2, 4); }

double naive_gaussian(double v, double mu, double var) {
  return std::exp(-(v - mu) * (v - mu) / (2 * var)) / std::sqrt(2 * std::numbers::pi * var);
}

}  // namespace

TEST(ArMean, Examples) {
  HistoryComponent c;
  c.phi = Eigen::Vector3d(1, 0, 0);
  EXPECT_EQ(ar_mean(c, Eigen::Vector3d(7, 8, 9)), 7.0);
  c.phi.setZero();
  EXPECT_EQ(ar_mean(c, Eigen::Vector3d(7, 8, 9)), 0.0);
  c.phi = Eigen::Vector2d(0.5, 0.5);
  EXPECT_EQ(ar_mean(c, Eigen::Vector2d(2, 4)), 3.0);
  EXPECT_THROW(ar_mean(c, Eigen::Vector3d(1, 2, 3)), DimensionError);
}

TEST(BilinearMean, Examples) {
  OrderBookComponent c;
  Eigen::MatrixXd x(2, 2);
  x << 1, 2, 3, 4;
  c.u = Eigen::Vector2d(0, 1);
  c.v = Eigen::Vector2d(1, 0);
  EXPECT_EQ(bilinear_mean(c, x), 3.0);
  c.u.setZero();
  EXPECT_EQ(bilinear_mean(c, x), 0.0);
  c.u = Eigen::Vector2d(1, 1);
  c.v = Eigen::Vector2d(1, 1);
  EXPECT_EQ(bilinear_mean(c, x), 10.0);
  EXPECT_THROW(bilinear_mean(c, Eigen::MatrixXd::Zero(3, 2)), DimensionError);
}

TEST(Gate, Examples) {
  GateParams g{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(4)};
  EXPECT_EQ(gate(g, e1(), zero_x()), 0.5);
  g.theta[0] = 50.0;
  const double hi = gate(g, e1(), zero_x());
  EXPECT_LT(hi, 1.0);
  EXPECT_LE(1.0 - hi, 1e-15);
  g.theta[0] = std::log(3.0);
  EXPECT_NEAR(gate(g, e1(), zero_x()), 0.75, 1e-15);
}

TEST(Gate, Soundness) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-800.0, 800.0);
  for (int i = 0; i < 20000; ++i) {
    const double d = i % 2 ? u(rng) : u(rng) / 100.0;
    const double g = logistic(d), c = logistic_complement(d);
    ASSERT_GT(g, 0.0);
    ASSERT_LT(g, 1.0);
    ASSERT_EQ(g + c, 1.0) << d;
    if (std::fabs(d) < 30.0) {
      const double naive = std::exp(d) / (std::exp(d) + 1.0);
      ASSERT_NEAR(g, naive, 1e-9);
    }
  }
}

TEST(Gate, ShiftInvariance) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const double s0 = u(rng), s1 = u(rng), c = u(rng) * 100.0;
    EXPECT_NEAR(logistic((s0 + c) - (s1 + c)), logistic(s0 - s1), 1e-12);
  }
}

TEST(Variance, Examples) {
  EXPECT_EQ(component_variance(VarianceSpec::constant(0.0), Eigen::VectorXd()), 1.0);
  EXPECT_NEAR(component_variance(VarianceSpec::linear(Eigen::VectorXd::Zero(3), std::log(4.0)), Eigen::Vector3d(1, 2, 3)),
              4.0, 1e-15);
  EXPECT_GT(component_variance(VarianceSpec::constant(-800.0), Eigen::VectorXd()), 0.0);
  EXPECT_THROW(component_variance(VarianceSpec::linear(Eigen::VectorXd::Zero(3), 0.0), Eigen::Vector2d(1, 2)),
               DimensionError);
}

TEST(Predict, Examples) {
  auto m = gated(Kind::kGaussian, 50.0);
  m.history.phi = Eigen::Vector3d(2.0, 0, 0);
  m.orderbook.u = Eigen::Vector2d(1, 0);
  m.orderbook.v = Eigen::Vector4d(1, 0, 0, 0);
  Eigen::MatrixXd x = zero_x();
  x(0, 0) = 4.0;
  EXPECT_NEAR(predict(m, e1(), x), 2.0, 1e-12);
  m.gate.theta.setZero();
  EXPECT_EQ(predict(m, e1(), x), 3.0);

  auto l = gated(Kind::kLogNormal, 50.0);
  l.history.variance = VarianceSpec::constant(std::log(2.0));
  EXPECT_NEAR(predict(l, e1(), zero_x()), std::exp(1.0), 1e-12);
}

TEST(Predict, GaussianBetweenMeansLognormalPositive) {
  std::mt19937_64 rng(3);
  auto data = fixtures::random_dataset(kSmall, 200, 4);
  for (int s = 0; s < 20; ++s) {
    auto g = fixtures::random_model(Kind::kGaussian, kSmall, VarianceMode::kConstant, s);
    auto l = fixtures::random_model(Kind::kLogNormal, kSmall, VarianceMode::kLinear, s);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double m0 = ar_mean(g.history, data.histories[i]), m1 = bilinear_mean(g.orderbook, data.features[i]);
      const double p = predict(g, data.histories[i], data.features[i]);
      EXPECT_GE(p, std::min(m0, m1) - 1e-15);
      EXPECT_LE(p, std::max(m0, m1) + 1e-15);
      EXPECT_GT(predict(l, data.histories[i], data.features[i]), 0.0);
    }
  }
}

TEST(LogDensity, Examples) {
  const double half_log_2pi = 0.5 * std::log(2 * std::numbers::pi);
  auto m = gated(Kind::kGaussian, 50.0);
  m.history.phi = Eigen::Vector3d(1.5, 0, 0);
  EXPECT_NEAR(log_density(m, 1.5, e1(), zero_x()), -half_log_2pi, 1e-12);

  auto l = gated(Kind::kLogNormal, 50.0);
  EXPECT_NEAR(log_density(l, 1.0, e1(), zero_x()), -half_log_2pi, 1e-12);
  EXPECT_THROW(log_density(l, 0.0, e1(), zero_x()), DomainError);
  EXPECT_THROW(log_density(l, -1.0, e1(), zero_x()), DomainError);
}

TEST(LogDensity, IdenticalComponentsIgnoreGate) {
  for (double d : {-3.0, 0.0, 2.0, 40.0}) {
    auto m = gated(Kind::kGaussian, d);
    m.history.phi = Eigen::Vector3d(0.7, 0, 0);
    m.orderbook.u = Eigen::Vector2d(1, 0);
    m.orderbook.v = Eigen::Vector4d(1, 0, 0, 0);
    Eigen::MatrixXd x = zero_x();
    x(0, 0) = 0.7;
    EXPECT_NEAR(log_density(m, 1.1, e1(), x), std::log(naive_gaussian(1.1, 0.7, 1.0)), 1e-12);
  }
}

TEST(LogDensity, MatchesDirectEvaluation) {
  auto data = fixtures::random_dataset(kSmall, 100, 5);
  for (int s = 0; s < 10; ++s) {
    auto m = fixtures::random_model(Kind::kGaussian, kSmall, VarianceMode::kLinear, s);
    auto l = fixtures::random_model(Kind::kLogNormal, kSmall, VarianceMode::kConstant, s);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& h = data.histories[i];
      const auto& x = data.features[i];
      const double v = data.targets[i];
      const double g = gate(m.gate, h, x);
      const double mu0 = ar_mean(m.history, h), mu1 = bilinear_mean(m.orderbook, x);
      const double s0 = component_variance(m.history.variance, h);
      const double s1 = component_variance(m.orderbook.variance, flatten(x));
      const double direct = std::log(g * naive_gaussian(v, mu0, s0) + (1 - g) * naive_gaussian(v, mu1, s1));
      EXPECT_NEAR(log_density(m, v, h, x), direct, 1e-9 * std::fabs(direct) + 1e-12);

      const double gl = gate(l.gate, h, x);
      const double m0 = ar_mean(l.history, h), m1 = bilinear_mean(l.orderbook, x);
      const double q0 = component_variance(l.history.variance, h), q1 = component_variance(l.orderbook.variance, flatten(x));
      const double ld = std::log((gl * naive_gaussian(std::log(v), m0, q0) + (1 - gl) * naive_gaussian(std::log(v), m1, q1)) / v);
      EXPECT_NEAR(log_density(l, v, h, x), ld, 1e-9 * std::fabs(ld) + 1e-12);
    }
  }
}

TEST(Loss, Reductions) {
  auto data = fixtures::random_dataset(kSmall, 1, 6);
  auto m = fixtures::random_model(Kind::kGaussian, kSmall, VarianceMode::kConstant, 1);
  EXPECT_EQ(loss(m, data, {0, 0, 0}), -log_density(m, data.targets[0], data.histories[0], data.features[0]));

  // hinge: mu0 = -1, mu1 = 2 adds alpha * 1
  auto h = gated(Kind::kGaussian, 0.0);
  h.history.phi = Eigen::Vector3d(-1, 0, 0);
  h.orderbook.u = Eigen::Vector2d(1, 0);
  h.orderbook.v = Eigen::Vector4d(1, 0, 0, 0);
  volatility::AlignedDataset one;
  one.dims = kSmall;
  one.hours = {1};
  one.targets = {0.3};
  one.histories = {e1()};
  Eigen::MatrixXd x = zero_x();
  x(0, 0) = 2.0;
  one.features = {x};
  const double base = loss(h, one, {0, 0, 0});
  EXPECT_NEAR(loss(h, one, {0, 2.5, 0}) - base, 2.5, 1e-12);

  auto data2 = fixtures::random_dataset(kSmall, 30, 7);
  const double l1 = loss(m, data2, {0.1, 0, 0}), l2 = loss(m, data2, {0.2, 0, 0});
  EXPECT_NEAR(l2 - l1, 0.1 * l2_norm_squared(m), 1e-10);
}

TEST(Loss, L2ExcludesConstantVarianceBias) {
  auto m = MixtureModel::zeros(Kind::kGaussian, kSmall);
  m.history.variance = VarianceSpec::constant(5.0);
  EXPECT_EQ(l2_norm_squared(m), 0.0);
  m.history.variance = VarianceSpec::linear(Eigen::Vector3d(1, 2, 0), 7.0);
  EXPECT_EQ(l2_norm_squared(m), 5.0);
}

TEST(Loss, GateDegenerations) {
  auto data = fixtures::random_dataset(kSmall, 50, 8);
  auto m = fixtures::random_model(Kind::kGaussian, kSmall, VarianceMode::kConstant, 2);
  const Regularization reg{0.01, 0.0, 0.0};
  auto ar_only = m;
  ar_only.fixed_gate = 1.0;
  double nll = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double mu = ar_mean(m.history, data.histories[i]);
    nll -= std::log(naive_gaussian(data.targets[i], mu, std::exp(m.history.variance.bias)));
  }
  EXPECT_NEAR(loss(ar_only, data, reg), nll + reg.lambda * l2_norm_squared(m), 1e-9 * std::fabs(nll));
  auto ob_only = m;
  ob_only.fixed_gate = 0.0;
  nll = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double mu = bilinear_mean(m.orderbook, data.features[i]);
    nll -= std::log(naive_gaussian(data.targets[i], mu, std::exp(m.orderbook.variance.bias)));
  }
  EXPECT_NEAR(loss(ob_only, data, reg), nll + reg.lambda * l2_norm_squared(m), 1e-9 * std::fabs(nll));
}

TEST(Checkpoint, RoundTripIsExact) {
  for (auto mode : {VarianceMode::kConstant, VarianceMode::kLinear}) {
    auto m = fixtures::random_model(Kind::kLogNormal, kSmall, mode, 9);
    auto back = from_json(nlohmann::json::parse(to_json(m).dump()));
    EXPECT_EQ(back.history.phi, m.history.phi);
    EXPECT_EQ(back.orderbook.u, m.orderbook.u);
    EXPECT_EQ(back.orderbook.v, m.orderbook.v);
    EXPECT_EQ(back.gate.theta, m.gate.theta);
    EXPECT_EQ(back.gate.a, m.gate.a);
    EXPECT_EQ(back.gate.b, m.gate.b);
    EXPECT_EQ(back.history.variance.bias, m.history.variance.bias);
    EXPECT_EQ(back.orderbook.variance.weights, m.orderbook.variance.weights);
    EXPECT_EQ(back.kind, m.kind);
    EXPECT_EQ(to_json(back).dump(), to_json(m).dump());
  }
}

TEST(Kind, Names) {
  EXPECT_EQ(to_string(Kind::kGaussian), "tm-g");
  EXPECT_EQ(kind_from_string("tm-log"), Kind::kLogNormal);
  EXPECT_ANY_THROW(kind_from_string("tm-x"));
}
