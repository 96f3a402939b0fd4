#include "tmvol/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <thread>

#include "tmvol/errors.hpp"
#include "tmvol/format.hpp"

namespace tmvol::evaluation {

namespace {

void check_pair(std::span<const double> pred, std::span<const double> actual) {
  if (pred.empty() || actual.empty()) throw MetricError("metric on empty input");
  if (pred.size() != actual.size()) throw MetricError("metric inputs differ in length");
}

std::vector<double> abs_values(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return std::abs(x); });
  return out;
}

// Best validation RMSE over a hyperparameter grid; first grid value wins ties.
template <typename Fit, typename Predict>
auto select_on_validation(const std::vector<double>& grid, const AlignedDataset& train,
                          const AlignedDataset& validation, Fit fit, Predict predict) {
  using Model = decltype(fit(train, grid.front()));
  std::optional<Model> best;
  double best_rmse = std::numeric_limits<double>::infinity();
  std::string last_error;
  for (double value : grid) {
    try {
      Model m = fit(train, value);
      if (validation.empty()) return m;
      std::vector<double> pred;
      pred.reserve(validation.size());
      for (std::size_t i = 0; i < validation.size(); ++i) pred.push_back(predict(m, validation, i));
      const double score = rmse(pred, validation.targets);
      if (!best || score < best_rmse) {
        best = std::move(m);
        best_rmse = score;
      }
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  if (!best) throw Error("no grid value produced a usable fit: " + last_error);
  return *best;
}

std::string format_fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, x);
  return buf;
}

const char* kMissing = "\xE2\x80\x94";  // em dash

}  // namespace

std::string to_string(Procedure p) { return p == Procedure::kRolling ? "rolling" : "incremental"; }

Procedure procedure_from_string(const std::string& s) {
  if (s == "rolling") return Procedure::kRolling;
  if (s == "incremental") return Procedure::kIncremental;
  throw ConfigError("unknown procedure '" + s + "' (expected rolling or incremental)");
}

SplitPlan make_splits(std::size_t total_samples, std::size_t interval_length, int lookback, Procedure procedure,
                      double validation_fraction) {
  if (interval_length == 0) throw ConfigError("interval_length must be positive");
  if (lookback < 1) throw ConfigError("lookback N must be at least 1");
  if (!(validation_fraction >= 0.0 && validation_fraction <= 0.5)) {
    throw ConfigError("validation_fraction must lie in [0, 0.5]");
  }
  const std::size_t count = total_samples / interval_length;
  if (count < static_cast<std::size_t>(lookback) + 1) {
    throw ConfigError("need at least (N+1) * interval_length samples: have " + std::to_string(total_samples));
  }
  SplitPlan plan;
  plan.procedure = procedure;
  plan.lookback = lookback;
  plan.interval_length = interval_length;
  for (std::size_t t = lookback; t < count; ++t) {
    const std::size_t first = procedure == Procedure::kRolling ? t - lookback : 0;
    const std::size_t span_begin = first * interval_length;
    const std::size_t span_end = t * interval_length;
    const auto held_out =
        static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(span_end - span_begin)));
    SplitInterval s;
    s.index = t;
    s.train = {span_begin, span_end - held_out};
    s.validation = {span_end - held_out, span_end};
    s.test = {span_end, span_end + interval_length};
    plan.intervals.push_back(s);
  }
  return plan;
}

double rmse(std::span<const double> pred, std::span<const double> actual) {
  check_pair(pred, actual);
  double ss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) ss += (pred[i] - actual[i]) * (pred[i] - actual[i]);
  return std::sqrt(ss / static_cast<double>(pred.size()));
}

double mae(std::span<const double> pred, std::span<const double> actual) {
  check_pair(pred, actual);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - actual[i]);
  return s / static_cast<double>(pred.size());
}

double kolmogorov_survival(double x) {
  if (!(x > 0.0)) return 1.0;
  if (x < 1.18) {
    // The alternating series converges poorly for small x; use the
    // equivalent theta-function form 1 - sqrt(2 pi)/x sum exp(-(2k-1)^2 pi^2 / (8 x^2)).
    const double w = std::numbers::pi * std::numbers::pi / (8.0 * x * x);
    double sum = 0.0;
    for (int k = 1; k < 100; ++k) {
      const double odd = 2.0 * k - 1.0;
      const double term = std::exp(-odd * odd * w);
      sum += term;
      if (term < 1e-17 * sum) break;
    }
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / x * sum, 0.0, 1.0);
  }
  double q = 0.0;
  for (int k = 1; k < 1000; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    q += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-12) break;
  }
  return std::clamp(q, 0.0, 1.0);
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw MetricError("ks_two_sample: empty sample");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double m = static_cast<double>(x.size());
  const double n = static_cast<double>(y.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / m - static_cast<double>(j) / n));
  }
  KsResult r;
  r.d = d;
  r.p = kolmogorov_survival(d * std::sqrt(m * n / (m + n)));
  r.small_sample = x.size() < 8 || y.size() < 8;
  return r;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return scores[l] < scores[r]; });
  // Mann-Whitney U with average ranks for ties.
  double rank_sum = 0.0;
  double positives = 0.0;
  std::size_t k = 0;
  while (k < order.size()) {
    std::size_t end = k;
    while (end < order.size() && scores[order[end]] == scores[order[k]]) ++end;
    const double avg_rank = 0.5 * static_cast<double>(k + 1 + end);
    for (std::size_t q = k; q < end; ++q) {
      if (labels[order[q]]) {
        rank_sum += avg_rank;
        positives += 1.0;
      }
    }
    k = end;
  }
  const double negatives = static_cast<double>(scores.size()) - positives;
  if (positives == 0.0 || negatives == 0.0) throw MetricError("auc: needs both classes");
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

std::vector<double> default_lambda_grid() { return {0.0001, 0.001, 0.01, 0.1, 1.0}; }
std::vector<double> default_ridge_grid() { return {1e-6, 1e-3, 1e-1, 1.0, 10.0, 100.0, 1000.0}; }

ModelSpec mixture_spec(std::string name, mixture::Kind kind, training::TrainConfig cfg,
                       std::vector<double> lambda_grid) {
  if (lambda_grid.empty()) lambda_grid = {cfg.lambda};
  return {std::move(name), [kind, cfg, lambda_grid](const AlignedDataset& train, const AlignedDataset& validation,
                                                    const AlignedDataset& test) {
            auto model = select_on_validation(
                lambda_grid, train, validation,
                [&](const AlignedDataset& d, double lambda) {
                  training::TrainConfig c = cfg;
                  c.lambda = lambda;
                  return training::fit(kind, d, c).first;
                },
                [](const mixture::MixtureModel& m, const AlignedDataset& d, std::size_t i) {
                  return mixture::predict(m, d.histories[i], d.features[i]);
                });
            std::vector<double> out;
            out.reserve(test.size());
            for (std::size_t i = 0; i < test.size(); ++i) {
              out.push_back(mixture::predict(model, test.histories[i], test.features[i]));
            }
            return out;
          }};
}

ModelSpec ar_spec(std::string name, std::vector<double> ridge_grid) {
  return {std::move(name), [ridge_grid](const AlignedDataset& train, const AlignedDataset& validation,
                                        const AlignedDataset& test) {
            auto model = select_on_validation(
                ridge_grid, train, validation,
                [](const AlignedDataset& d, double ridge) { return baselines::ar_fit(d, ridge); },
                [](const baselines::ArModel& m, const AlignedDataset& d, std::size_t i) {
                  return baselines::ar_predict(m, d.histories[i]);
                });
            std::vector<double> out;
            for (std::size_t i = 0; i < test.size(); ++i) out.push_back(baselines::ar_predict(model, test.histories[i]));
            return out;
          }};
}

ModelSpec arx_spec(std::string name, std::vector<double> ridge_grid) {
  return {std::move(name), [ridge_grid](const AlignedDataset& train, const AlignedDataset& validation,
                                        const AlignedDataset& test) {
            auto model = select_on_validation(
                ridge_grid, train, validation,
                [](const AlignedDataset& d, double ridge) { return baselines::arx_fit(d, ridge); },
                [](const baselines::ArxModel& m, const AlignedDataset& d, std::size_t i) {
                  return baselines::arx_predict(m, d.histories[i], d.features[i]);
                });
            std::vector<double> out;
            for (std::size_t i = 0; i < test.size(); ++i) {
              out.push_back(baselines::arx_predict(model, test.histories[i], test.features[i]));
            }
            return out;
          }};
}

ModelSpec ewma_spec(std::string name, std::vector<double> alpha_grid) {
  return {std::move(name), [alpha_grid](const AlignedDataset&, const AlignedDataset& validation,
                                        const AlignedDataset& test) {
            const baselines::EwmaModel model = validation.empty() ? baselines::EwmaModel{alpha_grid.front()}
                                                                  : baselines::ewma_select_alpha(validation, alpha_grid);
            std::vector<double> out;
            for (std::size_t i = 0; i < test.size(); ++i) out.push_back(baselines::ewma_predict(model, test.histories[i]));
            return out;
          }};
}

std::string significance_stars(double p) {
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

const std::optional<Cell>& BacktestReport::cell(const std::string& model, std::size_t column) const {
  auto it = std::find(models.begin(), models.end(), model);
  if (it == models.end()) throw ConfigError("unknown model '" + model + "'");
  return cells[static_cast<std::size_t>(it - models.begin())].at(column);
}

BacktestReport backtest(std::span<const ModelSpec> models, const AlignedDataset& data, const SplitPlan& plan,
                        const BacktestOptions& opts) {
  if (models.empty()) throw ConfigError("backtest: no models");
  BacktestReport report;
  for (const auto& m : models) report.models.push_back(m.name);
  report.reference = opts.reference.empty() ? models.front().name : opts.reference;
  const auto ref_it = std::find(report.models.begin(), report.models.end(), report.reference);
  if (ref_it == report.models.end()) throw ConfigError("backtest: unknown reference model '" + report.reference + "'");
  const auto ref_index = static_cast<std::size_t>(ref_it - report.models.begin());

  const std::size_t purge = data.horizon > 1 ? static_cast<std::size_t>(data.horizon - 1) : 0;
  struct IntervalData {
    AlignedDataset train, validation, test;
  };
  std::vector<IntervalData> prepared;
  for (const auto& s : plan.intervals) {
    if (s.test.end > data.size()) throw ConfigError("backtest: plan exceeds dataset size");
    report.intervals.push_back(s.index);
    const AlignedDataset scaled = volatility::restandardize(data, {s.train.begin, s.validation.end});
    auto trimmed = [&](IndexRange r, std::size_t next_begin) {
      r.end = std::min(r.end, next_begin > purge ? next_begin - purge : 0);
      r.end = std::max(r.end, r.begin);
      return r;
    };
    const IndexRange train = trimmed(s.train, s.validation.size() ? s.validation.begin : s.test.begin);
    const IndexRange validation = trimmed(s.validation, s.test.begin);
    prepared.push_back({volatility::slice(scaled, train), volatility::slice(scaled, validation),
                        volatility::slice(scaled, s.test)});
  }

  const std::size_t n_models = models.size();
  const std::size_t n_intervals = prepared.size();
  report.cells.assign(n_models, std::vector<std::optional<Cell>>(n_intervals));
  report.failures.assign(n_models, std::vector<std::string>(n_intervals));

  auto run_cell = [&](std::size_t idx) {
    const std::size_t mi = idx / n_intervals;
    const std::size_t ti = idx % n_intervals;
    const auto& d = prepared[ti];
    try {
      Cell c;
      c.predictions = models[mi].run(d.train, d.validation, d.test);
      if (c.predictions.size() != d.test.size()) throw Error("model returned wrong number of predictions");
      c.actuals = d.test.targets;
      c.hours = d.test.hours;
      c.errors.resize(c.actuals.size());
      for (std::size_t i = 0; i < c.actuals.size(); ++i) c.errors[i] = c.predictions[i] - c.actuals[i];
      c.rmse = rmse(c.predictions, c.actuals);
      c.mae = mae(c.predictions, c.actuals);
      if (!std::isfinite(c.rmse)) throw Error("non-finite predictions");
      report.cells[mi][ti] = std::move(c);
    } catch (const std::exception& e) {
      report.failures[mi][ti] = e.what();
    }
  };

  const std::size_t total = n_models * n_intervals;
  const int workers = std::max(1, opts.workers);
  if (workers == 1) {
    for (std::size_t idx = 0; idx < total; ++idx) run_cell(idx);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t idx = next++; idx < total; idx = next++) run_cell(idx);
      });
    }
    for (auto& t : pool) t.join();
  }

  for (std::size_t ti = 0; ti < n_intervals; ++ti) {
    const auto& ref = report.cells[ref_index][ti];
    for (std::size_t mi = 0; mi < n_models; ++mi) {
      auto& c = report.cells[mi][ti];
      if (!c || !ref) continue;
      const KsResult ks = ks_two_sample(abs_values(c->errors), abs_values(ref->errors));
      c->ks_d = ks.d;
      c->ks_p = ks.p;
      c->stars = mi == ref_index ? "" : significance_stars(ks.p);
    }
  }
  return report;
}

void write_report_csv(std::ostream& out, const BacktestReport& r) {
  out << "model,interval,rmse,mae,ks_d,ks_p,stars\n";
  for (std::size_t mi = 0; mi < r.models.size(); ++mi) {
    for (std::size_t ti = 0; ti < r.intervals.size(); ++ti) {
      const auto& c = r.cells[mi][ti];
      out << r.models[mi] << ',' << r.intervals[ti] << ',';
      if (!c) {
        out << kMissing << ',' << kMissing << ',' << kMissing << ',' << kMissing << ",\n";
        continue;
      }
      out << format_double(c->rmse) << ',' << format_double(c->mae) << ',' << format_double(c->ks_d) << ','
          << format_double(c->ks_p) << ',' << c->stars << '\n';
    }
  }
}

void write_report_table(std::ostream& out, const BacktestReport& r) {
  std::size_t name_width = 8;
  for (const auto& m : r.models) name_width = std::max(name_width, m.size());
  constexpr std::size_t kCol = 12;
  auto pad = [](std::string s, std::size_t w) {
    // Display width: count UTF-8 code points.
    std::size_t len = 0;
    for (unsigned char ch : s) len += (ch & 0xC0) != 0x80;
    if (len < w) s.append(w - len, ' ');
    return s;
  };
  out << pad("Interval", name_width) << " |";
  for (auto t : r.intervals) out << ' ' << pad(std::to_string(t), kCol - 1) << '|';
  out << '\n' << std::string(name_width, '-') << "-+" ;
  for (std::size_t i = 0; i < r.intervals.size(); ++i) out << std::string(kCol, '-') << '+';
  out << '\n';
  for (std::size_t mi = 0; mi < r.models.size(); ++mi) {
    out << pad(r.models[mi], name_width) << " |";
    for (std::size_t ti = 0; ti < r.intervals.size(); ++ti) {
      const auto& c = r.cells[mi][ti];
      const std::string text = c ? format_fixed(c->rmse, 4) + c->stars : kMissing;
      out << ' ' << pad(text, kCol - 1) << '|';
    }
    out << '\n';
  }
  out << "RMSE per test interval; * p<0.05, ** p<0.01 (two-sample KS on absolute errors vs " << r.reference
      << ")\n";
}

void write_cell_errors_csv(std::ostream& out, const Cell& c) {
  out << "h,prediction,actual,error\n";
  for (std::size_t i = 0; i < c.errors.size(); ++i) {
    out << c.hours[i] << ',' << format_double(c.predictions[i]) << ',' << format_double(c.actuals[i]) << ','
        << format_double(c.errors[i]) << '\n';
  }
}

}  // namespace tmvol::evaluation
