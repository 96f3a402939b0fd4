#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tmvol/volatility.hpp"

namespace tmvol::baselines {

using volatility::AlignedDataset;

struct EwmaModel {
  double alpha = 0.5;  // in (0, 1]
};

/// Smoothing grid {0.01, 0.1, 0.2, ..., 0.9}.
std::vector<double> default_ewma_grid();

/// `history` is ordered most-recent-first; smoothing runs oldest to newest.
double ewma_predict(const EwmaModel& m, std::span<const double> history);
double ewma_predict(const EwmaModel& m, const Eigen::VectorXd& history);

/// Grid value with the lowest RMSE over `validation`; ties go to the smaller alpha.
EwmaModel ewma_select_alpha(const AlignedDataset& validation, std::span<const double> grid);

struct ArModel {
  Eigen::VectorXd coefficients;
  double intercept = 0.0;
};

struct ArxModel {
  Eigen::VectorXd ar;
  double intercept = 0.0;
  Eigen::VectorXd exog;  // over the n x l_b window flattened column-major
};

/// Least squares on [1, history]. ridge * I is added to the normal matrix;
/// ridge == 0 solves exactly and throws SingularSystemError on rank deficiency.
ArModel ar_fit(const AlignedDataset& data, double ridge = 1e-6);
/// As `ar_fit`, regressing on [1, history, flattened features].
ArxModel arx_fit(const AlignedDataset& data, double ridge = 1e-6);

double ar_predict(const ArModel& m, const Eigen::VectorXd& history);
double arx_predict(const ArxModel& m, const Eigen::VectorXd& history, const Eigen::MatrixXd& x);

nlohmann::json to_json(const EwmaModel& m);
nlohmann::json to_json(const ArModel& m);
nlohmann::json to_json(const ArxModel& m);
EwmaModel ewma_from_json(const nlohmann::json& j);
ArModel ar_from_json(const nlohmann::json& j);
ArxModel arx_from_json(const nlohmann::json& j);

}  // namespace tmvol::baselines
