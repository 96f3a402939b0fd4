#pragma once

#include <cstdint>
#include <random>

#include "tmvol/mixture.hpp"
#include "tmvol/volatility.hpp"

namespace fixtures {

using tmvol::mixture::Kind;
using tmvol::mixture::MixtureModel;
using tmvol::mixture::VarianceMode;
using tmvol::mixture::VarianceSpec;
using tmvol::volatility::AlignedDataset;
using tmvol::volatility::Dims;

inline Eigen::VectorXd uniform(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Positive volatility-like histories and targets, standard normal features.
inline AlignedDataset random_dataset(Dims dims, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  AlignedDataset d;
  d.dims = dims;
  for (std::size_t i = 0; i < n; ++i) {
    d.hours.push_back(static_cast<std::int64_t>(i + 1));
    d.histories.push_back(uniform(rng, dims.l_v, 0.5, 1.5));
    Eigen::MatrixXd x(dims.n, dims.l_b);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = z(rng);
    d.features.push_back(x);
    d.targets.push_back(0.5 + std::uniform_real_distribution<double>(0.0, 1.0)(rng));
  }
  return d;
}

inline MixtureModel random_model(Kind kind, Dims dims, VarianceMode mode, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MixtureModel m = MixtureModel::zeros(kind, dims);
  m.history.phi = uniform(rng, dims.l_v, -0.3, 0.3);
  m.orderbook.u = uniform(rng, dims.n, -0.3, 0.3);
  m.orderbook.v = uniform(rng, dims.l_b, -0.3, 0.3);
  m.gate.theta = uniform(rng, dims.l_v, -0.5, 0.5);
  m.gate.a = uniform(rng, dims.n, -0.5, 0.5);
  m.gate.b = uniform(rng, dims.l_b, -0.5, 0.5);
  const double b0 = uniform(rng, 1, -1.0, 0.5)[0], b1 = uniform(rng, 1, -1.0, 0.5)[0];
  if (mode == VarianceMode::kConstant) {
    m.history.variance = VarianceSpec::constant(b0);
    m.orderbook.variance = VarianceSpec::constant(b1);
  } else {
    m.history.variance = VarianceSpec::linear(uniform(rng, dims.l_v, -0.2, 0.2), b0);
    m.orderbook.variance = VarianceSpec::linear(uniform(rng, dims.n * dims.l_b, -0.05, 0.05), b1);
  }
  return m;
}

}  // namespace fixtures
