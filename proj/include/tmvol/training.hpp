#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tmvol/mixture.hpp"

namespace tmvol::training {

using mixture::Kind;
using mixture::MixtureModel;
using mixture::Regularization;
using mixture::VarianceMode;
using volatility::AlignedDataset;

/// Which parameters a fit may move. The restricted scopes pin the gate so the
/// model reduces to a single component.
enum class FitScope { kFull, kHistoryOnly, kOrderBookOnly };

/// Step direction inside a block. kPlain follows the raw gradient; kFisher
/// scales it by the block's expected-information matrix (computed once per
/// block visit), which removes the wildly different parameter scales.
enum class Optimizer { kFisher, kPlain };

struct TrainConfig {
  double learning_rate = 0.01;
  int max_rounds = 200;
  int steps_per_block = 25;
  double tol_rel_loss = 1e-6;
  double lambda = 1e-3;
  double alpha = 1.0;
  double delta = 0.0;
  std::uint64_t seed = 0;
  bool grad_check = false;
  VarianceMode variance_mode = VarianceMode::kConstant;
  FitScope scope = FitScope::kFull;
  Optimizer optimizer = Optimizer::kFisher;
  /// fit() sets the model unit to the mean absolute training target.
  bool unit_scaling = true;

  Regularization regularization() const { return {lambda, alpha, delta}; }
  void validate() const;
};

struct TrainReport {
  std::vector<double> loss_trace;  // initial loss, then one entry per block
  int rounds_used = 0;
  double final_loss = 0.0;
  bool converged = false;
  bool stalled = false;
  std::optional<double> grad_check_max_rel_err;
};

nlohmann::json to_json(const TrainReport& r);
nlohmann::json to_json(const TrainConfig& c);

/// Parameter groups. Each variance group is [weights..., bias]; the bias is
/// not L2-penalized.
enum class Block { kTheta, kA, kB, kPhi, kU, kV, kVar0, kVar1 };
inline constexpr std::array<Block, 8> kAllBlocks = {Block::kTheta, Block::kA, Block::kB,    Block::kPhi,
                                                    Block::kU,     Block::kV, Block::kVar0, Block::kVar1};
std::string_view block_name(Block b);

Eigen::VectorXd get_block(const MixtureModel& m, Block b);
void set_block(MixtureModel& m, Block b, const Eigen::VectorXd& values);

struct GateGradient {
  Eigen::VectorXd theta, a, b;
};

struct ComponentGradient {
  Eigen::VectorXd phi, u, v;
  Eigen::VectorXd var0;  // [weights..., bias] of the history variance
  Eigen::VectorXd var1;  // [weights..., bias] of the order-book variance
};

GateGradient grad_gate(const MixtureModel& m, const AlignedDataset& data, double lambda);
ComponentGradient grad_components(const MixtureModel& m, const AlignedDataset& data, const Regularization& reg);

/// Analytic gradient of the loss for one block.
Eigen::VectorXd block_gradient(const MixtureModel& m, const AlignedDataset& data, const Regularization& reg, Block b);

struct FiniteDifferenceResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_near_kink = 0;
};

/// Central differences of `loss` against the analytic gradient over every
/// parameter. Relative error uses max(|analytic|, |numeric|, 1e-8).
FiniteDifferenceResult finite_difference_check(const MixtureModel& m, const AlignedDataset& data,
                                               const Regularization& reg, double eps);

/// phi from a ridge-stabilized least-squares AR fit, remaining weights uniform
/// in [-0.01, 0.01]. The history log-variance starts at the log target variance
/// (log targets for tm-log); the order-book one at the log mean square, since
/// that component's mean starts at zero.
MixtureModel init_params(Kind kind, const AlignedDataset& data, std::uint64_t seed,
                         VarianceMode variance_mode = VarianceMode::kConstant);

/// Alternating block gradient descent from `init_params`.
std::pair<MixtureModel, TrainReport> fit(Kind kind, const AlignedDataset& data, const TrainConfig& cfg);
/// Same procedure starting from a given model.
std::pair<MixtureModel, TrainReport> fit_from(MixtureModel start, const AlignedDataset& data, const TrainConfig& cfg);

}  // namespace tmvol::training
