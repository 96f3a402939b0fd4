#include "tmvol/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "tmvol/errors.hpp"

namespace tmvol::mixture {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)
// Gate values are clamped to [2^-53, 1 - 2^-53] so they stay strictly inside (0, 1).
constexpr double kGateFloor = 0x1p-53;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// Unclamped logistic, accurate on both tails.
double raw_logistic(double d) {
  if (d >= 0.0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

void expect_size(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Index n, const char* what) {
  if (x.size() != n) throw DimensionError(std::string(what) + ": length mismatch");
}

Eigen::VectorXd read_vec(const nlohmann::json& j, const char* key) {
  auto v = j.at(key).get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

nlohmann::json variance_to_json(const VarianceSpec& s) {
  if (s.mode == VarianceMode::kConstant) return {{"mode", "constant"}, {"log_sigma2", s.bias}};
  return {{"mode", "linear"}, {"weights", to_std(s.weights)}, {"bias", s.bias}};
}

VarianceSpec variance_from_json(const nlohmann::json& j) {
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "constant") return VarianceSpec::constant(j.at("log_sigma2").get<double>());
  if (mode == "linear") return VarianceSpec::linear(read_vec(j, "weights"), j.at("bias").get<double>());
  throw ParseError("unknown variance mode '" + mode + "'", 0);
}

}  // namespace

std::string to_string(Kind k) { return k == Kind::kGaussian ? "tm-g" : "tm-log"; }

Kind kind_from_string(const std::string& s) {
  if (s == "tm-g" || s == "gaussian") return Kind::kGaussian;
  if (s == "tm-log" || s == "lognormal") return Kind::kLogNormal;
  throw ConfigError("unknown model kind '" + s + "' (expected tm-g or tm-log)");
}

double VarianceSpec::log_variance(const Eigen::Ref<const Eigen::VectorXd>& input) const {
  if (mode == VarianceMode::kConstant) return bias;
  if (weights.size() != input.size()) throw DimensionError("linear variance: input length mismatch");
  return weights.dot(input) + bias;
}

double component_variance(const VarianceSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& input) {
  return std::max(std::exp(spec.log_variance(input)), std::numeric_limits<double>::min());
}

MixtureModel MixtureModel::zeros(Kind kind, Dims dims) {
  MixtureModel m;
  m.kind = kind;
  m.dims = dims;
  m.history.phi = Eigen::VectorXd::Zero(dims.l_v);
  m.history.variance = VarianceSpec::constant(0.0);
  m.orderbook.u = Eigen::VectorXd::Zero(dims.n);
  m.orderbook.v = Eigen::VectorXd::Zero(dims.l_b);
  m.orderbook.variance = VarianceSpec::constant(0.0);
  m.gate.theta = Eigen::VectorXd::Zero(dims.l_v);
  m.gate.a = Eigen::VectorXd::Zero(dims.n);
  m.gate.b = Eigen::VectorXd::Zero(dims.l_b);
  return m;
}

void MixtureModel::check_dims() const {
  if (history.phi.size() != dims.l_v || gate.theta.size() != dims.l_v) throw DimensionError("model: l_v mismatch");
  if (orderbook.u.size() != dims.n || gate.a.size() != dims.n) throw DimensionError("model: n mismatch");
  if (orderbook.v.size() != dims.l_b || gate.b.size() != dims.l_b) throw DimensionError("model: l_b mismatch");
  if (history.variance.mode == VarianceMode::kLinear && history.variance.weights.size() != dims.l_v) {
    throw DimensionError("model: history variance weights mismatch");
  }
  if (orderbook.variance.mode == VarianceMode::kLinear &&
      orderbook.variance.weights.size() != static_cast<Eigen::Index>(dims.n) * dims.l_b) {
    throw DimensionError("model: order-book variance weights mismatch");
  }
  if (fixed_gate && !(*fixed_gate >= 0.0 && *fixed_gate <= 1.0)) throw DimensionError("model: fixed gate outside [0,1]");
  if (!(unit > 0.0) || !std::isfinite(unit)) throw DomainError("model: unit must be positive and finite");
}

double ar_mean(const HistoryComponent& c, const Eigen::Ref<const Eigen::VectorXd>& history) {
  expect_size(history, c.phi.size(), "ar_mean");
  return c.phi.dot(history);
}

double bilinear_mean(const OrderBookComponent& c, const Eigen::MatrixXd& x) {
  if (x.rows() != c.u.size() || x.cols() != c.v.size()) throw DimensionError("bilinear_mean: shape mismatch");
  return c.u.dot(x * c.v);
}

double logistic(double d) {
  if (d >= 0.0) return 1.0 - logistic_complement(d);
  return std::max(raw_logistic(d), kGateFloor);
}

double logistic_complement(double d) {
  if (d < 0.0) return 1.0 - logistic(d);
  return std::max(raw_logistic(-d), kGateFloor);
}

GateScores gate_scores(const GateParams& g, const Eigen::Ref<const Eigen::VectorXd>& history,
                       const Eigen::MatrixXd& x) {
  expect_size(history, g.theta.size(), "gate");
  if (x.rows() != g.a.size() || x.cols() != g.b.size()) throw DimensionError("gate: shape mismatch");
  return {g.theta.dot(history), g.a.dot(x * g.b)};
}

double gate(const GateParams& g, const Eigen::Ref<const Eigen::VectorXd>& history, const Eigen::MatrixXd& x) {
  return logistic(gate_scores(g, history, x).difference());
}

namespace {

// `history` is already in model units.
SampleState state_in_units(const MixtureModel& m, const Eigen::Ref<const Eigen::VectorXd>& history,
                           const Eigen::MatrixXd& x) {
  SampleState s;
  s.score_diff = gate_scores(m.gate, history, x).difference();
  s.mu0 = ar_mean(m.history, history);
  s.mu1 = bilinear_mean(m.orderbook, x);
  s.log_var0 = m.history.variance.log_variance(history);
  s.log_var1 = m.orderbook.variance.log_variance(flatten(x));
  return s;
}

}  // namespace

SampleState sample_state(const MixtureModel& m, const Eigen::Ref<const Eigen::VectorXd>& history,
                         const Eigen::MatrixXd& x) {
  if (m.unit == 1.0) return state_in_units(m, history, x);
  return state_in_units(m, history / m.unit, x);
}

LikelihoodTerms likelihood_terms(Kind kind, const SampleState& s, double target, std::optional<double> fixed_gate,
                                 bool want_derivatives) {
  double t = target;
  double jacobian = 0.0;
  if (kind == Kind::kLogNormal) {
    if (!(target > 0.0)) throw DomainError("log-normal density needs a positive target");
    t = std::log(target);
    jacobian = -t;
  }
  const double inv_var0 = std::exp(-s.log_var0);
  const double inv_var1 = std::exp(-s.log_var1);
  const double res0 = t - s.mu0;
  const double res1 = t - s.mu1;
  const double lp0 = -kHalfLog2Pi - 0.5 * s.log_var0 - 0.5 * res0 * res0 * inv_var0 + jacobian;
  const double lp1 = -kHalfLog2Pi - 0.5 * s.log_var1 - 0.5 * res1 * res1 * inv_var1 + jacobian;

  double log_g;
  double log_1mg;
  if (fixed_gate) {
    log_g = std::log(*fixed_gate);
    log_1mg = std::log1p(-*fixed_gate);
  } else {
    log_g = -softplus(-s.score_diff);
    log_1mg = -softplus(s.score_diff);
  }
  const double a0 = log_g + lp0;
  const double a1 = log_1mg + lp1;
  const double top = std::max(a0, a1);
  LikelihoodTerms out;
  out.log_lik = top + std::log(std::exp(a0 - top) + std::exp(a1 - top));
  const double r0 = std::exp(a0 - out.log_lik);
  const double r1 = std::exp(a1 - out.log_lik);
  out.resp0 = r0;
  if (!want_derivatives) return out;

  if (!fixed_gate) {
    // d/dd log[g p0 + (1-g) p1] = r0 (1 - g) - r1 g
    out.d_score_diff = r0 * raw_logistic(-s.score_diff) - r1 * raw_logistic(s.score_diff);
  }
  out.d_mu0 = r0 * res0 * inv_var0;
  out.d_mu1 = r1 * res1 * inv_var1;
  out.d_log_var0 = 0.5 * r0 * (res0 * res0 * inv_var0 - 1.0);
  out.d_log_var1 = 0.5 * r1 * (res1 * res1 * inv_var1 - 1.0);
  return out;
}

double effective_gate(const MixtureModel& m, const Eigen::Ref<const Eigen::VectorXd>& history,
                      const Eigen::MatrixXd& x) {
  if (m.fixed_gate) return *m.fixed_gate;
  if (m.unit == 1.0) return gate(m.gate, history, x);
  return gate(m.gate, history / m.unit, x);
}

double predict(const MixtureModel& m, const Eigen::Ref<const Eigen::VectorXd>& history, const Eigen::MatrixXd& x) {
  const SampleState s = sample_state(m, history, x);
  double g;
  double one_minus_g;
  if (m.fixed_gate) {
    g = *m.fixed_gate;
    one_minus_g = 1.0 - g;
  } else {
    g = logistic(s.score_diff);
    one_minus_g = logistic_complement(s.score_diff);
  }
  if (m.kind == Kind::kGaussian) return m.unit * (g * s.mu0 + one_minus_g * s.mu1);
  return m.unit *
         (g * std::exp(s.mu0 + 0.5 * std::exp(s.log_var0)) + one_minus_g * std::exp(s.mu1 + 0.5 * std::exp(s.log_var1)));
}

double log_density(const MixtureModel& m, double target, const Eigen::Ref<const Eigen::VectorXd>& history,
                   const Eigen::MatrixXd& x) {
  return likelihood_terms(m.kind, sample_state(m, history, x), target / m.unit, m.fixed_gate, false).log_lik -
         std::log(m.unit);
}

double l2_norm_squared(const MixtureModel& m) {
  return m.history.phi.squaredNorm() + m.orderbook.u.squaredNorm() + m.orderbook.v.squaredNorm() +
         m.gate.theta.squaredNorm() + m.gate.a.squaredNorm() + m.gate.b.squaredNorm() +
         m.history.variance.weights.squaredNorm() + m.orderbook.variance.weights.squaredNorm();
}

double loss(const MixtureModel& m, const AlignedDataset& data, const Regularization& reg) {
  m.check_dims();
  if (data.dims != m.dims) throw DimensionError("loss: model and dataset dims differ");
  double neg_ll = 0.0;
  double hinge = 0.0;
  const bool use_hinge = m.kind == Kind::kGaussian && reg.alpha != 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SampleState s = sample_state(m, data.histories[i], data.features[i]);
    neg_ll -= likelihood_terms(m.kind, s, data.targets[i] / m.unit, m.fixed_gate, false).log_lik - std::log(m.unit);
    // the hinge acts on the means in data units
    if (use_hinge) hinge += std::max(0.0, reg.delta - m.unit * s.mu0) + std::max(0.0, reg.delta - m.unit * s.mu1);
  }
  double total = neg_ll + reg.lambda * l2_norm_squared(m);
  if (use_hinge) total += reg.alpha * hinge;
  return total;
}

nlohmann::json to_json(const MixtureModel& m) {
  nlohmann::json j;
  j["kind"] = to_string(m.kind);
  j["dims"] = {{"l_v", m.dims.l_v}, {"l_b", m.dims.l_b}, {"n", m.dims.n}};
  j["phi"] = to_std(m.history.phi);
  j["u"] = to_std(m.orderbook.u);
  j["v"] = to_std(m.orderbook.v);
  j["theta"] = to_std(m.gate.theta);
  j["a"] = to_std(m.gate.a);
  j["b"] = to_std(m.gate.b);
  const bool same_mode = m.history.variance.mode == m.orderbook.variance.mode;
  j["variance"] = {
      {"mode", same_mode ? (m.history.variance.mode == VarianceMode::kConstant ? "constant" : "linear") : "mixed"},
      {"params", {{"history", variance_to_json(m.history.variance)},
                  {"orderbook", variance_to_json(m.orderbook.variance)}}}};
  if (m.fixed_gate) j["fixed_gate"] = *m.fixed_gate;
  j["unit"] = m.unit;
  return j;
}

MixtureModel from_json(const nlohmann::json& j) {
  MixtureModel m;
  try {
    m.kind = kind_from_string(j.at("kind").get<std::string>());
    m.dims.l_v = j.at("dims").at("l_v").get<int>();
    m.dims.l_b = j.at("dims").at("l_b").get<int>();
    m.dims.n = j.at("dims").at("n").get<int>();
    m.history.phi = read_vec(j, "phi");
    m.orderbook.u = read_vec(j, "u");
    m.orderbook.v = read_vec(j, "v");
    m.gate.theta = read_vec(j, "theta");
    m.gate.a = read_vec(j, "a");
    m.gate.b = read_vec(j, "b");
    const auto& params = j.at("variance").at("params");
    m.history.variance = variance_from_json(params.at("history"));
    m.orderbook.variance = variance_from_json(params.at("orderbook"));
    if (j.contains("fixed_gate")) m.fixed_gate = j.at("fixed_gate").get<double>();
    m.unit = j.value("unit", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model checkpoint: ") + e.what(), 0);
  }
  m.check_dims();
  return m;
}

}  // namespace tmvol::mixture
