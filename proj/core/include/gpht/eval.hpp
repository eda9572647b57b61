#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gpht/checkpoint.hpp"
#include "gpht/data.hpp"
#include "gpht/train.hpp"

namespace gpht {

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
};

// Means over all scalars; shapes must match.
Metrics metrics(std::span<const double> pred, std::span<const double> truth);
Metrics metrics(const std::vector<std::vector<double>>& pred,
                const std::vector<std::vector<double>>& truth);

struct NaiveForecasts {
  std::vector<double> persistence;     // last value repeated
  std::vector<double> seasonal_naive;  // last full season repeated
};

NaiveForecasts naive_baselines(std::span<const double> lookback, std::size_t horizon,
                               std::size_t season_period);

struct EvalRow {
  std::string dataset;
  std::size_t horizon = 0;
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;

  bool operator==(const EvalRow&) const = default;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string fingerprint;
};

// Maps univariate lookbacks (equal length) to horizon-length forecasts.
using Forecaster = std::function<std::vector<std::vector<double>>(
    std::span<const std::span<const double>> lookbacks, std::size_t horizon)>;

struct EvalOptions {
  std::vector<std::size_t> horizons{96, 192, 336, 720};
  std::size_t lookback = 0;  // 0 selects the model context length
  std::size_t stride = 1;
  std::size_t batch_size = 256;
  std::size_t threads = 1;
};

// Slides windows of lookback + horizon points over the test range of every
// channel. Each start decodes once for the longest requested horizon that
// fits and scores every shorter horizon on its prefix.
EvalReport evaluate_forecaster(const Forecaster& forecaster, const MultivariateSeries& series,
                               const Range& test, const EvalOptions& opts);

EvalReport evaluate(const Checkpoint& ckpt, const MultivariateSeries& series,
                    const DatasetSplit& split, const EvalOptions& opts);

// Refuses datasets recorded among the checkpoint's pretraining sources.
EvalReport zero_shot_protocol(const Checkpoint& ckpt, const MultivariateSeries& series,
                              const DatasetSplit& split, const EvalOptions& opts);

struct FewShotResult {
  EvalReport report;
  Checkpoint tuned;
};

// Fine-tunes the heads on the most recent fraction of the training range,
// then evaluates on the full test range.
FewShotResult few_shot_protocol(const Checkpoint& ckpt, const MultivariateSeries& series,
                                const DatasetSplit& split, double fraction,
                                const TrainConfig& train, const EvalOptions& opts);

std::string report_to_csv(const EvalReport& report);
EvalReport parse_report_csv(const std::string& text);
void print_report_table(std::ostream& os, const EvalReport& report);

}  // namespace gpht
