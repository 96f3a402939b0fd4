#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tmvol/baselines.hpp"
#include "tmvol/mixture.hpp"
#include "tmvol/training.hpp"
#include "tmvol/volatility.hpp"

namespace tmvol::evaluation {

using volatility::AlignedDataset;
using volatility::IndexRange;

enum class Procedure { kRolling, kIncremental };
std::string to_string(Procedure p);
Procedure procedure_from_string(const std::string& s);

struct SplitInterval {
  std::size_t index = 0;  // position of the test interval among all intervals
  IndexRange train;
  IndexRange validation;
  IndexRange test;
};

struct SplitPlan {
  Procedure procedure = Procedure::kRolling;
  int lookback = 3;  // N
  std::size_t interval_length = 0;
  std::vector<SplitInterval> intervals;
};

/// Cuts [0, total) into floor(total / interval_length) consecutive intervals
/// (a trailing remainder is dropped). Every interval from N on is tested once;
/// its train+validation span is the N preceding intervals (rolling) or all
/// preceding intervals (incremental), with the trailing `validation_fraction`
/// of that span held out for validation.
SplitPlan make_splits(std::size_t total_samples, std::size_t interval_length, int lookback, Procedure procedure,
                      double validation_fraction = 0.2);

double rmse(std::span<const double> pred, std::span<const double> actual);
double mae(std::span<const double> pred, std::span<const double> actual);

struct KsResult {
  double d = 0.0;
  double p = 1.0;
  bool small_sample = false;  // either sample shorter than 8: p-value unreliable
};

/// Asymptotic Kolmogorov survival function Q(x) = 2 sum (-1)^(k-1) exp(-2 k^2 x^2).
double kolmogorov_survival(double x);
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

/// Area under the ROC curve of `scores` against binary `labels` (ties count half).
double auc(std::span<const double> scores, std::span<const int> labels);

/// A model under test. `run` fits on `train`, may tune on `validation`, and
/// returns one prediction per `test` sample.
struct ModelSpec {
  std::string name;
  std::function<std::vector<double>(const AlignedDataset& train, const AlignedDataset& validation,
                                    const AlignedDataset& test)>
      run;
};

/// Mixture model with lambda chosen on the validation slice (first grid value
/// when the slice is empty).
ModelSpec mixture_spec(std::string name, mixture::Kind kind, training::TrainConfig cfg,
                       std::vector<double> lambda_grid);
ModelSpec ar_spec(std::string name, std::vector<double> ridge_grid);
ModelSpec arx_spec(std::string name, std::vector<double> ridge_grid);
ModelSpec ewma_spec(std::string name, std::vector<double> alpha_grid);

std::vector<double> default_lambda_grid();  // {1e-4, 1e-3, 1e-2, 1e-1, 1}
std::vector<double> default_ridge_grid();

struct Cell {
  std::vector<std::int64_t> hours;
  std::vector<double> predictions;
  std::vector<double> actuals;
  std::vector<double> errors;  // prediction - actual
  double rmse = 0.0;
  double mae = 0.0;
  double ks_d = 0.0;
  double ks_p = 1.0;
  std::string stars;
};

struct BacktestReport {
  std::vector<std::string> models;
  std::vector<std::size_t> intervals;  // SplitInterval::index per column
  std::string reference;
  /// cells[model][interval]; nullopt when that fit failed.
  std::vector<std::vector<std::optional<Cell>>> cells;
  std::vector<std::vector<std::string>> failures;

  const std::optional<Cell>& cell(const std::string& model, std::size_t column) const;
};

struct BacktestOptions {
  std::string reference;  // defaults to the first model
  int workers = 1;
};

/// Significance marks: "**" for p < 0.01, "*" for p < 0.05.
std::string significance_stars(double p);

/// For each test interval: re-fit the feature scaler on train+validation,
/// run every model, record errors and a two-sample KS test of each model's
/// absolute errors against the reference model's. The last D-1 samples before
/// each validation and test range are purged so no target overlaps the next range.
BacktestReport backtest(std::span<const ModelSpec> models, const AlignedDataset& data, const SplitPlan& plan,
                        const BacktestOptions& opts = {});

void write_report_csv(std::ostream& out, const BacktestReport& r);
void write_report_table(std::ostream& out, const BacktestReport& r);
void write_cell_errors_csv(std::ostream& out, const Cell& c);

}  // namespace tmvol::evaluation
