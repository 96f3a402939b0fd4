#include "tmvol/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "tmvol/errors.hpp"

namespace tmvol::training {

namespace {

using mixture::LikelihoodTerms;
using mixture::SampleState;

constexpr int kMaxHalvings = 30;
constexpr double kStepGrowth = 2.0;

enum class Slot { kScoreDiff, kMu0, kMu1, kLogVar0, kLogVar1 };

Slot slot_of(Block b) {
  switch (b) {
    case Block::kTheta:
    case Block::kA:
    case Block::kB:
      return Slot::kScoreDiff;
    case Block::kPhi:
      return Slot::kMu0;
    case Block::kU:
    case Block::kV:
      return Slot::kMu1;
    case Block::kVar0:
      return Slot::kLogVar0;
    case Block::kVar1:
      return Slot::kLogVar1;
  }
  return Slot::kScoreDiff;
}

double& slot_ref(SampleState& s, Slot slot) {
  switch (slot) {
    case Slot::kScoreDiff:
      return s.score_diff;
    case Slot::kMu0:
      return s.mu0;
    case Slot::kMu1:
      return s.mu1;
    case Slot::kLogVar0:
      return s.log_var0;
    case Slot::kLogVar1:
      return s.log_var1;
  }
  return s.score_diff;
}

// Derivative of the per-sample objective (negative log-likelihood plus hinge)
// with respect to one slot.
double slot_derivative(const LikelihoodTerms& t, const SampleState& s, Slot slot, bool hinge,
                       const Regularization& reg) {
  switch (slot) {
    case Slot::kScoreDiff:
      return -t.d_score_diff;
    case Slot::kMu0:
      return -t.d_mu0 - ((hinge && reg.delta - s.mu0 > 0.0) ? reg.alpha : 0.0);
    case Slot::kMu1:
      return -t.d_mu1 - ((hinge && reg.delta - s.mu1 > 0.0) ? reg.alpha : 0.0);
    case Slot::kLogVar0:
      return -t.d_log_var0;
    case Slot::kLogVar1:
      return -t.d_log_var1;
  }
  return 0.0;
}

bool uses_hinge(const MixtureModel& m, const Regularization& reg) {
  return m.kind == Kind::kGaussian && reg.alpha != 0.0;
}

double hinge_value(const SampleState& s, const Regularization& reg) {
  return std::max(0.0, reg.delta - s.mu0) + std::max(0.0, reg.delta - s.mu1);
}

Eigen::VectorXd variance_block(const mixture::VarianceSpec& s) {
  Eigen::VectorXd out(s.weights.size() + 1);
  out.head(s.weights.size()) = s.weights;
  out[s.weights.size()] = s.bias;
  return out;
}

void set_variance_block(mixture::VarianceSpec& s, const Eigen::VectorXd& values) {
  if (values.size() != s.weights.size() + 1) throw DimensionError("variance block: length mismatch");
  s.weights = values.head(values.size() - 1);
  s.bias = values[values.size() - 1];
}

Eigen::VectorXd penalty_mask(Block b, Eigen::Index size) {
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(size);
  if (b == Block::kVar0 || b == Block::kVar1) mask[size - 1] = 0.0;
  return mask;
}

// Row i of the design matrix: the coefficient vector mapping this block's
// parameters to the block's slot for sample i, all other blocks held fixed.
Eigen::MatrixXd design_matrix(const MixtureModel& m, const AlignedDataset& data, Block b) {
  const auto n_samples = static_cast<Eigen::Index>(data.size());
  const auto k = get_block(m, b).size();
  Eigen::MatrixXd z(n_samples, k);
  for (Eigen::Index i = 0; i < n_samples; ++i) {
    const auto& h = data.histories[i];
    const auto& x = data.features[i];
    switch (b) {
      case Block::kTheta:
        z.row(i) = h.transpose();
        break;
      case Block::kA:
        z.row(i) = -(x * m.gate.b).transpose();
        break;
      case Block::kB:
        z.row(i) = -(x.transpose() * m.gate.a).transpose();
        break;
      case Block::kPhi:
        z.row(i) = h.transpose();
        break;
      case Block::kU:
        z.row(i) = (x * m.orderbook.v).transpose();
        break;
      case Block::kV:
        z.row(i) = (x.transpose() * m.orderbook.u).transpose();
        break;
      case Block::kVar0:
        if (k > 1) z.row(i).head(k - 1) = h.transpose();
        z(i, k - 1) = 1.0;
        break;
      case Block::kVar1:
        if (k > 1) z.row(i).head(k - 1) = mixture::flatten(x).transpose();
        z(i, k - 1) = 1.0;
        break;
    }
  }
  return z;
}

// The loss restricted to one block, with every other block frozen.
class BlockObjective {
 public:
  BlockObjective(const MixtureModel& m, const AlignedDataset& data, const Regularization& reg, Block b)
      : kind_(m.kind),
        fixed_gate_(m.fixed_gate),
        reg_(reg),
        hinge_(uses_hinge(m, reg)),
        slot_(slot_of(b)),
        targets_(data.targets),
        design_(design_matrix(m, data, b)),
        mask_(penalty_mask(b, design_.cols())) {
    base_.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      base_.push_back(mixture::sample_state(m, data.histories[i], data.features[i]));
    }
    const Eigen::VectorXd own = get_block(m, b);
    // slot = offset + Z p; the offset carries the frozen part (the other gate score).
    const Eigen::VectorXd q0 = design_ * own;
    offset_.resize(q0.size());
    for (Eigen::Index i = 0; i < q0.size(); ++i) offset_[i] = slot_ref(base_[i], slot_) - q0[i];
    other_penalty_ = mixture::l2_norm_squared(m) - own.cwiseProduct(mask_).squaredNorm();
  }

  /// Expected information of the block at the base point, plus the L2 term.
  Eigen::MatrixXd information() const {
    Eigen::VectorXd w(static_cast<Eigen::Index>(base_.size()));
    for (std::size_t i = 0; i < base_.size(); ++i) {
      const SampleState& s = base_[i];
      const LikelihoodTerms t = mixture::likelihood_terms(kind_, s, targets_[i], fixed_gate_, true);
      double wi = 0.0;
      switch (slot_) {
        case Slot::kScoreDiff:
          if (!fixed_gate_) {
            const double g = mixture::logistic(s.score_diff);
            wi = g * (1.0 - g);
          }
          break;
        case Slot::kMu0:
          wi = t.resp0 * std::exp(-s.log_var0);
          break;
        case Slot::kMu1:
          wi = (1.0 - t.resp0) * std::exp(-s.log_var1);
          break;
        case Slot::kLogVar0:
          wi = 0.5 * t.resp0;
          break;
        case Slot::kLogVar1:
          wi = 0.5 * (1.0 - t.resp0);
          break;
      }
      w[static_cast<Eigen::Index>(i)] = wi;
    }
    Eigen::MatrixXd info = design_.transpose() * w.asDiagonal() * design_;
    info.diagonal() += 2.0 * reg_.lambda * mask_;
    const double scale = info.diagonal().cwiseAbs().maxCoeff();
    info.diagonal().array() += 1e-10 * (scale > 0.0 ? scale : 1.0);
    return info;
  }

  /// Loss at `p`; fills `grad` when non-null.
  double evaluate(const Eigen::VectorXd& p, Eigen::VectorXd* grad) const {
    const Eigen::VectorXd q = design_ * p + offset_;
    Eigen::VectorXd dq;
    if (grad) dq.resize(q.size());
    double total = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      SampleState s = base_[i];
      slot_ref(s, slot_) = q[i];
      const LikelihoodTerms t = mixture::likelihood_terms(kind_, s, targets_[i], fixed_gate_, grad != nullptr);
      total -= t.log_lik;
      if (hinge_) total += reg_.alpha * hinge_value(s, reg_);
      if (grad) dq[i] = slot_derivative(t, s, slot_, hinge_, reg_);
    }
    total += reg_.lambda * (other_penalty_ + p.cwiseProduct(mask_).squaredNorm());
    if (grad) *grad = design_.transpose() * dq + 2.0 * reg_.lambda * mask_.cwiseProduct(p);
    return total;
  }

 private:
  Kind kind_;
  std::optional<double> fixed_gate_;
  Regularization reg_;
  bool hinge_;
  Slot slot_;
  const std::vector<double>& targets_;
  Eigen::MatrixXd design_;
  Eigen::VectorXd mask_;
  std::vector<SampleState> base_;
  Eigen::VectorXd offset_;
  double other_penalty_ = 0.0;
};

struct BlockOutcome {
  double loss = 0.0;
  bool stalled = false;
};

// Backtracking gradient descent on one block. `step` persists across rounds.
// `reference` is the loss recorded before this block; a step is accepted only
// if it is no larger than both the reference and the block's own start value,
// so recorded losses never increase even when re-evaluation rounds differently.
BlockOutcome descend_block(MixtureModel& m, const AlignedDataset& data, const TrainConfig& cfg, Block b,
                           double& step, double reference) {
  const BlockObjective objective(m, data, cfg.regularization(), b);
  Eigen::VectorXd p = get_block(m, b);
  Eigen::VectorXd grad;
  double current = std::min(objective.evaluate(p, &grad), reference);
  BlockOutcome out{current, false};
  const bool fisher = cfg.optimizer == Optimizer::kFisher;
  Eigen::LDLT<Eigen::MatrixXd> info;
  if (fisher) {
    info.compute(objective.information());
    step = 1.0;  // a scored step has its natural length at every visit
  }
  for (int s = 0; s < cfg.steps_per_block; ++s) {
    if (!grad.allFinite() || grad.squaredNorm() == 0.0) break;
    const Eigen::VectorXd direction = fisher ? Eigen::VectorXd(info.solve(grad)) : grad;
    if (!direction.allFinite()) break;
    bool accepted = false;
    for (int halving = 0; halving <= kMaxHalvings; ++halving) {
      Eigen::VectorXd trial = p - step * direction;
      Eigen::VectorXd trial_grad;
      const double value = objective.evaluate(trial, &trial_grad);
      if (std::isfinite(value) && value <= current) {
        p = std::move(trial);
        grad = std::move(trial_grad);
        current = value;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // Restore a usable step for later rounds; halving exhausted counts as a stall.
      step *= std::ldexp(1.0, kMaxHalvings);
      out.stalled = true;
      break;
    }
    step *= kStepGrowth;
    if (fisher) step = std::min(step, 1.0);
  }
  set_block(m, b, p);
  out.loss = current;
  return out;
}

std::vector<Block> gate_blocks(FitScope scope) {
  if (scope != FitScope::kFull) return {};
  return {Block::kTheta, Block::kA, Block::kB};
}

std::vector<Block> component_blocks(FitScope scope) {
  switch (scope) {
    case FitScope::kHistoryOnly:
      return {Block::kPhi, Block::kVar0};
    case FitScope::kOrderBookOnly:
      return {Block::kU, Block::kV, Block::kVar1};
    case FitScope::kFull:
      break;
  }
  return {Block::kPhi, Block::kU, Block::kV, Block::kVar0, Block::kVar1};
}

// x^T y is unchanged by x -> c x, y -> y / c; choosing c so that |x| == |y|
// minimizes |x|^2 + |y|^2. Returns the drop in that sum. Alternating block
// steps cannot make this move on their own and creep along it for hundreds of rounds.
double rebalance(Eigen::VectorXd& x, Eigen::VectorXd& y) {
  const double nx = x.norm();
  const double ny = y.norm();
  if (!(nx > 0.0) || !(ny > 0.0)) return 0.0;
  const double c = std::sqrt(ny / nx);
  const double before = nx * nx + ny * ny;
  x *= c;
  y /= c;
  return std::max(0.0, before - 2.0 * nx * ny);
}

// Copy of `data` divided by `unit`, the dataset a unit-1 model sees.
AlignedDataset in_units(const AlignedDataset& data, double unit) {
  AlignedDataset out = data;
  for (auto& t : out.targets) t /= unit;
  for (auto& h : out.histories) h /= unit;
  return out;
}

// alpha max(0, delta - unit mu) == (alpha unit) max(0, delta / unit - mu)
Regularization in_units(Regularization reg, double unit) {
  reg.alpha *= unit;
  reg.delta /= unit;
  return reg;
}

MixtureModel with_unit(MixtureModel m, double unit) {
  m.unit = unit;
  return m;
}

double mean_abs_target(const AlignedDataset& data) {
  double sum = 0.0;
  for (double t : data.targets) sum += std::abs(t);
  const double mean = sum / static_cast<double>(data.size());
  return std::isfinite(mean) && mean > 0.0 ? mean : 1.0;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (max_rounds < 1) throw ConfigError("max_rounds must be at least 1");
  if (steps_per_block < 1) throw ConfigError("steps_per_block must be at least 1");
  if (!(tol_rel_loss > 0.0)) throw ConfigError("tol_rel_loss must be positive");
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
  if (alpha < 0.0) throw ConfigError("alpha must be non-negative");
}

nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json j;
  j["loss_trace"] = r.loss_trace;
  j["rounds_used"] = r.rounds_used;
  j["final_loss"] = r.final_loss;
  j["converged"] = r.converged;
  j["stalled"] = r.stalled;
  j["grad_check_max_rel_err"] =
      r.grad_check_max_rel_err ? nlohmann::json(*r.grad_check_max_rel_err) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const TrainConfig& c) {
  const char* scope = c.scope == FitScope::kFull          ? "full"
                      : c.scope == FitScope::kHistoryOnly ? "history_only"
                                                          : "orderbook_only";
  return {{"learning_rate", c.learning_rate},
          {"max_rounds", c.max_rounds},
          {"steps_per_block", c.steps_per_block},
          {"tol_rel_loss", c.tol_rel_loss},
          {"lambda", c.lambda},
          {"alpha", c.alpha},
          {"delta", c.delta},
          {"seed", c.seed},
          {"grad_check", c.grad_check},
          {"variance_mode", c.variance_mode == VarianceMode::kConstant ? "constant" : "linear"},
          {"scope", scope},
          {"optimizer", c.optimizer == Optimizer::kFisher ? "fisher" : "plain"},
          {"unit_scaling", c.unit_scaling}};
}

std::string_view block_name(Block b) {
  switch (b) {
    case Block::kTheta:
      return "theta";
    case Block::kA:
      return "a";
    case Block::kB:
      return "b";
    case Block::kPhi:
      return "phi";
    case Block::kU:
      return "u";
    case Block::kV:
      return "v";
    case Block::kVar0:
      return "var0";
    case Block::kVar1:
      return "var1";
  }
  return "?";
}

Eigen::VectorXd get_block(const MixtureModel& m, Block b) {
  switch (b) {
    case Block::kTheta:
      return m.gate.theta;
    case Block::kA:
      return m.gate.a;
    case Block::kB:
      return m.gate.b;
    case Block::kPhi:
      return m.history.phi;
    case Block::kU:
      return m.orderbook.u;
    case Block::kV:
      return m.orderbook.v;
    case Block::kVar0:
      return variance_block(m.history.variance);
    case Block::kVar1:
      return variance_block(m.orderbook.variance);
  }
  return {};
}

void set_block(MixtureModel& m, Block b, const Eigen::VectorXd& values) {
  auto assign = [&](Eigen::VectorXd& dst) {
    if (dst.size() != values.size()) throw DimensionError("set_block: length mismatch");
    dst = values;
  };
  switch (b) {
    case Block::kTheta:
      assign(m.gate.theta);
      break;
    case Block::kA:
      assign(m.gate.a);
      break;
    case Block::kB:
      assign(m.gate.b);
      break;
    case Block::kPhi:
      assign(m.history.phi);
      break;
    case Block::kU:
      assign(m.orderbook.u);
      break;
    case Block::kV:
      assign(m.orderbook.v);
      break;
    case Block::kVar0:
      set_variance_block(m.history.variance, values);
      break;
    case Block::kVar1:
      set_variance_block(m.orderbook.variance, values);
      break;
  }
}

GateGradient grad_gate(const MixtureModel& m, const AlignedDataset& data, double lambda) {
  m.check_dims();
  if (data.dims != m.dims) throw DimensionError("grad_gate: model and dataset dims differ");
  if (m.unit != 1.0) return grad_gate(with_unit(m, 1.0), in_units(data, m.unit), lambda);
  GateGradient g{Eigen::VectorXd::Zero(m.dims.l_v), Eigen::VectorXd::Zero(m.dims.n), Eigen::VectorXd::Zero(m.dims.l_b)};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& h = data.histories[i];
    const auto& x = data.features[i];
    const SampleState s = mixture::sample_state(m, h, x);
    const double d = mixture::likelihood_terms(m.kind, s, data.targets[i], m.fixed_gate).d_score_diff;
    // score_diff = theta.h - A^T X B
    g.theta -= d * h;
    g.a += d * (x * m.gate.b);
    g.b += d * (x.transpose() * m.gate.a);
  }
  g.theta += 2.0 * lambda * m.gate.theta;
  g.a += 2.0 * lambda * m.gate.a;
  g.b += 2.0 * lambda * m.gate.b;
  return g;
}

ComponentGradient grad_components(const MixtureModel& m, const AlignedDataset& data, const Regularization& reg) {
  m.check_dims();
  if (data.dims != m.dims) throw DimensionError("grad_components: model and dataset dims differ");
  if (m.unit != 1.0) return grad_components(with_unit(m, 1.0), in_units(data, m.unit), in_units(reg, m.unit));
  const bool hinge = uses_hinge(m, reg);
  ComponentGradient g;
  g.phi = Eigen::VectorXd::Zero(m.dims.l_v);
  g.u = Eigen::VectorXd::Zero(m.dims.n);
  g.v = Eigen::VectorXd::Zero(m.dims.l_b);
  g.var0 = Eigen::VectorXd::Zero(m.history.variance.weights.size() + 1);
  g.var1 = Eigen::VectorXd::Zero(m.orderbook.variance.weights.size() + 1);
  const auto k0 = g.var0.size() - 1;
  const auto k1 = g.var1.size() - 1;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& h = data.histories[i];
    const auto& x = data.features[i];
    const SampleState s = mixture::sample_state(m, h, x);
    const LikelihoodTerms t = mixture::likelihood_terms(m.kind, s, data.targets[i], m.fixed_gate);
    const double d_mu0 = slot_derivative(t, s, Slot::kMu0, hinge, reg);
    const double d_mu1 = slot_derivative(t, s, Slot::kMu1, hinge, reg);
    g.phi += d_mu0 * h;
    g.u += d_mu1 * (x * m.orderbook.v);
    g.v += d_mu1 * (x.transpose() * m.orderbook.u);
    const double d_ls0 = -t.d_log_var0;
    const double d_ls1 = -t.d_log_var1;
    if (k0 > 0) g.var0.head(k0) += d_ls0 * h;
    g.var0[k0] += d_ls0;
    if (k1 > 0) g.var1.head(k1) += d_ls1 * mixture::flatten(x);
    g.var1[k1] += d_ls1;
  }
  g.phi += 2.0 * reg.lambda * m.history.phi;
  g.u += 2.0 * reg.lambda * m.orderbook.u;
  g.v += 2.0 * reg.lambda * m.orderbook.v;
  if (k0 > 0) g.var0.head(k0) += 2.0 * reg.lambda * m.history.variance.weights;
  if (k1 > 0) g.var1.head(k1) += 2.0 * reg.lambda * m.orderbook.variance.weights;
  return g;
}

Eigen::VectorXd block_gradient(const MixtureModel& m, const AlignedDataset& data, const Regularization& reg,
                               Block b) {
  switch (b) {
    case Block::kTheta:
      return grad_gate(m, data, reg.lambda).theta;
    case Block::kA:
      return grad_gate(m, data, reg.lambda).a;
    case Block::kB:
      return grad_gate(m, data, reg.lambda).b;
    case Block::kPhi:
      return grad_components(m, data, reg).phi;
    case Block::kU:
      return grad_components(m, data, reg).u;
    case Block::kV:
      return grad_components(m, data, reg).v;
    case Block::kVar0:
      return grad_components(m, data, reg).var0;
    case Block::kVar1:
      return grad_components(m, data, reg).var1;
  }
  return {};
}

FiniteDifferenceResult finite_difference_check(const MixtureModel& m, const AlignedDataset& data,
                                               const Regularization& reg, double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite difference step must be positive");
  m.check_dims();
  if (m.unit != 1.0) return finite_difference_check(with_unit(m, 1.0), in_units(data, m.unit), in_units(reg, m.unit), eps);
  const GateGradient gg = grad_gate(m, data, reg.lambda);
  const ComponentGradient cg = grad_components(m, data, reg);
  auto analytic = [&](Block b) -> const Eigen::VectorXd& {
    switch (b) {
      case Block::kTheta:
        return gg.theta;
      case Block::kA:
        return gg.a;
      case Block::kB:
        return gg.b;
      case Block::kPhi:
        return cg.phi;
      case Block::kU:
        return cg.u;
      case Block::kV:
        return cg.v;
      case Block::kVar0:
        return cg.var0;
      case Block::kVar1:
        break;
    }
    return cg.var1;
  };
  const bool hinge = uses_hinge(m, reg);

  // A perturbation that carries some component mean across the hinge margin
  // (or lands within 1e-6 of it) has no meaningful derivative.
  auto near_kink = [&](const MixtureModel& lo, const MixtureModel& hi, Block b) {
    if (!hinge) return false;
    const Slot slot = slot_of(b);
    if (slot != Slot::kMu0 && slot != Slot::kMu1) return false;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double mlo = slot == Slot::kMu0 ? mixture::ar_mean(lo.history, data.histories[i])
                                            : mixture::bilinear_mean(lo.orderbook, data.features[i]);
      const double mhi = slot == Slot::kMu0 ? mixture::ar_mean(hi.history, data.histories[i])
                                            : mixture::bilinear_mean(hi.orderbook, data.features[i]);
      const double glo = reg.delta - mlo;
      const double ghi = reg.delta - mhi;
      if (glo * ghi <= 0.0 || std::abs(glo) < 1e-6 || std::abs(ghi) < 1e-6) return true;
    }
    return false;
  };

  FiniteDifferenceResult out;
  for (Block b : kAllBlocks) {
    const Eigen::VectorXd base = get_block(m, b);
    const Eigen::VectorXd& grad = analytic(b);
    for (Eigen::Index j = 0; j < base.size(); ++j) {
      MixtureModel plus = m;
      MixtureModel minus = m;
      Eigen::VectorXd p = base;
      p[j] = base[j] + eps;
      set_block(plus, b, p);
      p[j] = base[j] - eps;
      set_block(minus, b, p);
      if (near_kink(minus, plus, b)) {
        ++out.skipped_near_kink;
        continue;
      }
      const double numeric = (mixture::loss(plus, data, reg) - mixture::loss(minus, data, reg)) / (2.0 * eps);
      const double denom = std::max({std::abs(grad[j]), std::abs(numeric), 1e-8});
      out.max_rel_err = std::max(out.max_rel_err, std::abs(grad[j] - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

MixtureModel init_params(Kind kind, const AlignedDataset& data, std::uint64_t seed, VarianceMode variance_mode) {
  if (data.empty()) throw InsufficientDataError("init_params: empty dataset");
  const auto& dims = data.dims;
  MixtureModel m = MixtureModel::zeros(kind, dims);

  const auto n_samples = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd design(n_samples, dims.l_v);
  Eigen::VectorXd y(n_samples);
  for (Eigen::Index i = 0; i < n_samples; ++i) {
    design.row(i) = data.histories[i].transpose();
    const double t = data.targets[i];
    if (kind == Kind::kLogNormal && !(t > 0.0)) throw DomainError("log-normal fit needs positive targets");
    y[i] = kind == Kind::kLogNormal ? std::log(t) : t;
  }
  Eigen::MatrixXd normal = design.transpose() * design;
  normal.diagonal().array() += 1e-6;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  Eigen::VectorXd phi = ldlt.solve(design.transpose() * y);
  if (ldlt.info() != Eigen::Success || !phi.allFinite()) {
    phi = Eigen::VectorXd::Zero(dims.l_v);
    phi[0] = 1.0;
  }
  m.history.phi = phi;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-0.01, 0.01);
  auto draw = [&](Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = unif(rng);
  };
  draw(m.orderbook.u);
  draw(m.orderbook.v);
  draw(m.gate.theta);
  draw(m.gate.a);
  draw(m.gate.b);

  const double mean = y.mean();
  const double var = (y.array() - mean).square().mean();
  const double log_var = std::log(std::max(var, 1e-300));
  const double log_var1 = std::log(std::max(y.array().square().mean(), 1e-300));
  if (variance_mode == VarianceMode::kConstant) {
    m.history.variance = mixture::VarianceSpec::constant(log_var);
    m.orderbook.variance = mixture::VarianceSpec::constant(log_var1);
  } else {
    m.history.variance = mixture::VarianceSpec::linear(Eigen::VectorXd::Zero(dims.l_v), log_var);
    m.orderbook.variance =
        mixture::VarianceSpec::linear(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims.n) * dims.l_b), log_var1);
  }
  return m;
}

std::pair<MixtureModel, TrainReport> fit(Kind kind, const AlignedDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw InsufficientDataError("fit: empty dataset");
  if (!cfg.unit_scaling) return fit_from(init_params(kind, data, cfg.seed, cfg.variance_mode), data, cfg);
  const double unit = mean_abs_target(data);
  return fit_from(with_unit(init_params(kind, in_units(data, unit), cfg.seed, cfg.variance_mode), unit), data, cfg);
}

std::pair<MixtureModel, TrainReport> fit_from(MixtureModel m, const AlignedDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw InsufficientDataError("fit: empty dataset");
  m.check_dims();
  if (data.dims != m.dims) throw DimensionError("fit: model and dataset dims differ");
  if (m.unit != 1.0) {
    // Train in model units; reported losses shift by the constant Jacobian term.
    const double unit = m.unit;
    TrainConfig unit_cfg = cfg;
    unit_cfg.alpha *= unit;
    unit_cfg.delta /= unit;
    auto [fitted, report] = fit_from(with_unit(std::move(m), 1.0), in_units(data, unit), unit_cfg);
    const double shift = static_cast<double>(data.size()) * std::log(unit);
    for (double& l : report.loss_trace) l += shift;
    report.final_loss += shift;
    fitted.unit = unit;
    return {std::move(fitted), std::move(report)};
  }
  switch (cfg.scope) {
    case FitScope::kHistoryOnly:
      m.fixed_gate = 1.0;
      break;
    case FitScope::kOrderBookOnly:
      m.fixed_gate = 0.0;
      break;
    case FitScope::kFull:
      break;
  }

  const Regularization reg = cfg.regularization();
  TrainReport report;
  double current = mixture::loss(m, data, reg);
  if (!std::isfinite(current)) throw InitializationError("fit: loss is not finite at initialization");
  if (cfg.grad_check) report.grad_check_max_rel_err = finite_difference_check(m, data, reg, 1e-5).max_rel_err;
  report.loss_trace.push_back(current);

  std::array<double, kAllBlocks.size()> steps;
  steps.fill(cfg.optimizer == Optimizer::kFisher ? 1.0 : cfg.learning_rate);
  const std::vector<std::vector<Block>> groups = {gate_blocks(cfg.scope), component_blocks(cfg.scope)};

  for (int round = 0; round < cfg.max_rounds; ++round) {
    const double round_start = current;
    bool all_stalled = true;
    for (const auto& group : groups) {
      if (group.empty()) continue;
      for (Block b : group) {
        const BlockOutcome o = descend_block(m, data, cfg, b, steps[static_cast<std::size_t>(b)], current);
        current = o.loss;
        all_stalled = all_stalled && o.stalled;
      }
      const bool gate_group = group.front() == Block::kTheta;
      if (gate_group) {
        current -= cfg.lambda * rebalance(m.gate.a, m.gate.b);
      } else if (cfg.scope != FitScope::kHistoryOnly) {
        current -= cfg.lambda * rebalance(m.orderbook.u, m.orderbook.v);
      }
      report.loss_trace.push_back(current);
    }
    report.rounds_used = round + 1;
    if (all_stalled) {
      report.stalled = true;
      break;
    }
    const double rel = (round_start - current) / std::max(std::abs(round_start), 1e-300);
    if (rel < cfg.tol_rel_loss) {
      report.converged = true;
      break;
    }
  }
  report.final_loss = current;
  return {std::move(m), std::move(report)};
}

}  // namespace tmvol::training
