#pragma once

#include <optional>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "tmvol/volatility.hpp"

namespace tmvol::mixture {

using volatility::AlignedDataset;
using volatility::Dims;

enum class Kind { kGaussian, kLogNormal };

std::string to_string(Kind k);  // "tm-g" / "tm-log"
Kind kind_from_string(const std::string& s);

enum class VarianceMode { kConstant, kLinear };

/// log sigma^2 = weights . input + bias. Constant mode keeps `weights` empty,
/// so `bias` is the constant log-variance.
struct VarianceSpec {
  VarianceMode mode = VarianceMode::kConstant;
  Eigen::VectorXd weights;
  double bias = 0.0;

  static VarianceSpec constant(double log_sigma2) { return {VarianceMode::kConstant, {}, log_sigma2}; }
  static VarianceSpec linear(Eigen::VectorXd w, double b) { return {VarianceMode::kLinear, std::move(w), b}; }

  double log_variance(const Eigen::Ref<const Eigen::VectorXd>& input) const;
};

/// sigma^2 = exp(log sigma^2), always positive. Linear mode requires matching input.
double component_variance(const VarianceSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& input);

struct HistoryComponent {
  Eigen::VectorXd phi;  // length l_v
  VarianceSpec variance;
};

struct OrderBookComponent {
  Eigen::VectorXd u;  // length n, feature weights
  Eigen::VectorXd v;  // length l_b, lag weights
  VarianceSpec variance;
};

struct GateParams {
  Eigen::VectorXd theta;  // length l_v
  Eigen::VectorXd a;      // length n
  Eigen::VectorXd b;      // length l_b
};

struct MixtureModel {
  Kind kind = Kind::kGaussian;
  Dims dims;
  HistoryComponent history;
  OrderBookComponent orderbook;
  GateParams gate;
  /// When set, the gate is pinned to this value in [0, 1] and its parameters
  /// no longer influence the likelihood. Used for single-component fits.
  std::optional<double> fixed_gate;
  /// Volatility unit. Histories and targets are divided by it before they
  /// reach the parameters, predictions are multiplied back, and densities
  /// carry the matching -log(unit) Jacobian. 1 leaves values unchanged.
  double unit = 1.0;

  /// Zero-initialized model with constant unit variances.
  static MixtureModel zeros(Kind kind, Dims dims);
  void check_dims() const;
};

/// Order-book component input for linear variance: X flattened column-major.
inline Eigen::Map<const Eigen::VectorXd> flatten(const Eigen::MatrixXd& x) {
  return {x.data(), x.size()};
}

double ar_mean(const HistoryComponent& c, const Eigen::Ref<const Eigen::VectorXd>& history);
double bilinear_mean(const OrderBookComponent& c, const Eigen::MatrixXd& x);

/// Logistic of the score difference, clamped to the open interval so that
/// 0 < g < 1 holds for every finite input.
double logistic(double d);
/// 1 - logistic(d), computed so that logistic(d) + logistic_complement(d) == 1.
double logistic_complement(double d);

struct GateScores {
  double history = 0.0;    // theta . v_hist
  double orderbook = 0.0;  // A^T X B
  double difference() const { return history - orderbook; }
};
GateScores gate_scores(const GateParams& g, const Eigen::Ref<const Eigen::VectorXd>& history,
                       const Eigen::MatrixXd& x);
double gate(const GateParams& g, const Eigen::Ref<const Eigen::VectorXd>& history, const Eigen::MatrixXd& x);

/// Everything the likelihood needs from one sample, collapsed to six scalars.
/// Means and log-variances are in model units (see MixtureModel::unit).
struct SampleState {
  double score_diff = 0.0;  // s0 - s1
  double mu0 = 0.0;
  double mu1 = 0.0;
  double log_var0 = 0.0;
  double log_var1 = 0.0;
};

SampleState sample_state(const MixtureModel& m, const Eigen::Ref<const Eigen::VectorXd>& history,
                         const Eigen::MatrixXd& x);

/// Log-likelihood of one target and its partial derivatives with respect to
/// the SampleState scalars.
struct LikelihoodTerms {
  double log_lik = 0.0;
  double d_score_diff = 0.0;
  double d_mu0 = 0.0;
  double d_mu1 = 0.0;
  double d_log_var0 = 0.0;
  double d_log_var1 = 0.0;
  double resp0 = 0.0;  // posterior P(z = 0 | v)
};

LikelihoodTerms likelihood_terms(Kind kind, const SampleState& s, double target, std::optional<double> fixed_gate,
                                 bool want_derivatives = true);

double predict(const MixtureModel& m, const Eigen::Ref<const Eigen::VectorXd>& history, const Eigen::MatrixXd& x);
/// Gate value used by `predict` (honours fixed_gate).
double effective_gate(const MixtureModel& m, const Eigen::Ref<const Eigen::VectorXd>& history,
                      const Eigen::MatrixXd& x);

double log_density(const MixtureModel& m, double target, const Eigen::Ref<const Eigen::VectorXd>& history,
                   const Eigen::MatrixXd& x);

struct Regularization {
  double lambda = 0.0;
  double alpha = 0.0;  // hinge weight, gaussian kind only
  double delta = 0.0;  // hinge margin
};

/// Squared L2 norm over phi, u, v, theta, a, b and variance weights.
double l2_norm_squared(const MixtureModel& m);

double loss(const MixtureModel& m, const AlignedDataset& data, const Regularization& reg);

nlohmann::json to_json(const MixtureModel& m);
MixtureModel from_json(const nlohmann::json& j);

}  // namespace tmvol::mixture
