#include "tmvol/baselines.hpp"

#include <cmath>
#include <limits>

#include "tmvol/errors.hpp"
#include "tmvol/mixture.hpp"

namespace tmvol::baselines {

namespace {

Eigen::VectorXd solve_least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, double ridge) {
  if (ridge < 0.0) throw ConfigError("ridge must be non-negative");
  if (design.rows() <= design.cols()) {
    throw InsufficientDataError("least squares needs more samples (" + std::to_string(design.rows()) +
                                ") than parameters (" + std::to_string(design.cols()) + ")");
  }
  if (ridge == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < design.cols()) throw SingularSystemError("least squares: design matrix is rank deficient");
    return qr.solve(y);
  }
  Eigen::MatrixXd normal = design.transpose() * design;
  normal.diagonal().array() += ridge;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  Eigen::VectorXd beta = ldlt.solve(design.transpose() * y);
  if (ldlt.info() != Eigen::Success || !beta.allFinite()) throw SingularSystemError("least squares: solve failed");
  return beta;
}

Eigen::VectorXd read_vec(const nlohmann::json& j, const char* key) {
  auto v = j.at(key).get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

void expect_kind(const nlohmann::json& j, const char* kind) {
  if (j.value("kind", std::string()) != kind) throw ParseError(std::string("checkpoint is not of kind ") + kind, 0);
}

}  // namespace

std::vector<double> default_ewma_grid() { return {0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

double ewma_predict(const EwmaModel& m, std::span<const double> history) {
  if (history.empty()) throw InsufficientDataError("ewma_predict: empty history");
  if (!(m.alpha > 0.0 && m.alpha <= 1.0)) throw ConfigError("ewma alpha must lie in (0, 1]");
  double s = history.back();
  for (std::size_t j = history.size() - 1; j-- > 0;) s = m.alpha * history[j] + (1.0 - m.alpha) * s;
  return s;
}

double ewma_predict(const EwmaModel& m, const Eigen::VectorXd& history) {
  return ewma_predict(m, std::span<const double>(history.data(), static_cast<std::size_t>(history.size())));
}

EwmaModel ewma_select_alpha(const AlignedDataset& validation, std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("ewma grid is empty");
  if (validation.empty()) throw InsufficientDataError("ewma_select_alpha: empty validation slice");
  EwmaModel best{grid.front()};
  double best_mse = std::numeric_limits<double>::infinity();
  for (double alpha : grid) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("ewma grid values must lie in (0, 1]");
    const EwmaModel m{alpha};
    double mse = 0.0;
    for (std::size_t i = 0; i < validation.size(); ++i) {
      const double e = ewma_predict(m, validation.histories[i]) - validation.targets[i];
      mse += e * e;
    }
    mse /= static_cast<double>(validation.size());
    if (mse < best_mse || (mse == best_mse && alpha < best.alpha)) {
      best_mse = mse;
      best = m;
    }
  }
  return best;
}

ArModel ar_fit(const AlignedDataset& data, double ridge) {
  const auto n_samples = static_cast<Eigen::Index>(data.size());
  const int p = data.dims.l_v;
  Eigen::MatrixXd design(n_samples, p + 1);
  Eigen::VectorXd y(n_samples);
  for (Eigen::Index i = 0; i < n_samples; ++i) {
    design(i, 0) = 1.0;
    design.row(i).tail(p) = data.histories[i].transpose();
    y[i] = data.targets[i];
  }
  const Eigen::VectorXd beta = solve_least_squares(design, y, ridge);
  return {beta.tail(p), beta[0]};
}

ArxModel arx_fit(const AlignedDataset& data, double ridge) {
  const auto n_samples = static_cast<Eigen::Index>(data.size());
  const int p = data.dims.l_v;
  const int q = data.dims.n * data.dims.l_b;
  Eigen::MatrixXd design(n_samples, 1 + p + q);
  Eigen::VectorXd y(n_samples);
  for (Eigen::Index i = 0; i < n_samples; ++i) {
    design(i, 0) = 1.0;
    design.row(i).segment(1, p) = data.histories[i].transpose();
    design.row(i).tail(q) = mixture::flatten(data.features[i]).transpose();
    y[i] = data.targets[i];
  }
  const Eigen::VectorXd beta = solve_least_squares(design, y, ridge);
  return {beta.segment(1, p), beta[0], beta.tail(q)};
}

double ar_predict(const ArModel& m, const Eigen::VectorXd& history) {
  if (history.size() != m.coefficients.size()) throw DimensionError("ar_predict: history length mismatch");
  return m.intercept + m.coefficients.dot(history);
}

double arx_predict(const ArxModel& m, const Eigen::VectorXd& history, const Eigen::MatrixXd& x) {
  if (history.size() != m.ar.size()) throw DimensionError("arx_predict: history length mismatch");
  if (x.size() != m.exog.size()) throw DimensionError("arx_predict: feature window size mismatch");
  return m.intercept + m.ar.dot(history) + m.exog.dot(mixture::flatten(x));
}

nlohmann::json to_json(const EwmaModel& m) { return {{"kind", "ewma"}, {"alpha", m.alpha}}; }

nlohmann::json to_json(const ArModel& m) {
  return {{"kind", "ar"}, {"coefficients", to_std(m.coefficients)}, {"intercept", m.intercept}};
}

nlohmann::json to_json(const ArxModel& m) {
  return {{"kind", "arx"}, {"ar", to_std(m.ar)}, {"intercept", m.intercept}, {"exog", to_std(m.exog)}};
}

EwmaModel ewma_from_json(const nlohmann::json& j) {
  expect_kind(j, "ewma");
  return {j.at("alpha").get<double>()};
}

ArModel ar_from_json(const nlohmann::json& j) {
  expect_kind(j, "ar");
  return {read_vec(j, "coefficients"), j.at("intercept").get<double>()};
}

ArxModel arx_from_json(const nlohmann::json& j) {
  expect_kind(j, "arx");
  return {read_vec(j, "ar"), j.at("intercept").get<double>(), read_vec(j, "exog")};
}

}  // namespace tmvol::baselines
