#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tmvol/evaluation.hpp"
#include "tmvol/synthgen.hpp"
#include "tmvol/training.hpp"

namespace tmvol::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericalError = 3 };

inline constexpr const char* kVersion = "0.1.0";

/// Everything a command may read. Loaded from a flat `key = value` file,
/// then overridden by command-line flags.
struct RunConfig {
  // Paths.
  std::string prices;
  std::string snapshots;
  std::string features;
  std::string labels;
  std::string dataset;
  std::string model;
  std::string out = "out";

  volatility::Dims dims;
  int horizon = 1;
  int bucket_size = 60;
  int max_gap = 5;
  mixture::Kind kind = mixture::Kind::kGaussian;
  training::TrainConfig train;
  double train_fraction = 0.8;  // chronological train/validation cut for `train`

  // Backtest.
  std::size_t interval_length = 0;  // 0: derive from `intervals`
  int intervals = 12;               // number of test intervals when deriving
  int lookback = 3;
  evaluation::Procedure procedure = evaluation::Procedure::kRolling;
  double validation_fraction = 0.2;
  std::vector<std::string> models{"tm-g", "ar", "arx", "ewma"};
  std::vector<double> lambda_grid = evaluation::default_lambda_grid();
  std::vector<double> ridge_grid = evaluation::default_ridge_grid();
  std::string reference;
  int workers = 1;
  bool dump_errors = false;

  synthgen::SynthConfig synth;

  /// Applies one `key = value` setting; throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Canonical `key=value` lines, sorted by key; the input to the config hash.
  std::map<std::string, std::string> canonical() const;
};

RunConfig load_config_file(const std::string& path);
void parse_config_text(RunConfig& cfg, std::istream& in, const std::string& origin);

/// 64-bit FNV-1a of the canonical config.
std::uint64_t config_hash(const RunConfig& cfg);

/// Display name for a model id (tm-g, tm-log, ar, arx, ewma).
std::string display_name(const std::string& id);
/// Backtest model for a model id, configured from `cfg`.
evaluation::ModelSpec make_spec(const std::string& id, const RunConfig& cfg);

/// Entry point shared by the executable and the tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tmvol::cli
