#include "gpht/preprocess.hpp"

#include <cmath>
#include <string>

#include "gpht/error.hpp"

namespace gpht {

std::vector<std::vector<double>> flatten_channels(const std::vector<std::vector<double>>& window) {
  for (const auto& ch : window) {
    if (ch.size() != window.front().size()) throw DimensionError("flatten_channels: ragged channels");
  }
  return window;
}

std::vector<std::vector<double>> concat_channels(const std::vector<std::vector<double>>& windows) {
  return flatten_channels(windows);
}

TokenGrid tokenize(std::span<const double> window, std::size_t token_len) {
  if (token_len == 0) throw ConfigError("token length must be >= 1");
  if (window.size() < token_len) {
    throw DataError("input of length " + std::to_string(window.size()) +
                    " is shorter than one token (" + std::to_string(token_len) + ")");
  }
  const std::size_t n = window.size() / token_len;
  const std::size_t drop = window.size() - n * token_len;
  TokenGrid grid;
  grid.num_tokens = n;
  grid.token_len = token_len;
  grid.values.assign(window.begin() + drop, window.end());
  return grid;
}

std::vector<double> detokenize(const TokenGrid& grid) { return grid.values; }

std::pair<std::vector<double>, NormStats> instance_normalize(std::span<const double> window,
                                                             double eps) {
  if (window.empty()) throw DataError("cannot normalize an empty window");
  const auto n = static_cast<double>(window.size());
  double mean = 0.0;
  for (double v : window) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : window) var += (v - mean) * (v - mean);
  var /= n;
  NormStats stats{mean, std::sqrt(var), eps};
  return {normalize_with(window, stats), stats};
}

std::vector<double> normalize_with(std::span<const double> values, const NormStats& stats) {
  std::vector<double> out(values.size());
  const double s = stats.scale();
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - stats.mu) / s;
  return out;
}

std::vector<double> denormalize(std::span<const double> pred, const NormStats& stats) {
  std::vector<double> out(pred.size());
  const double s = stats.scale();
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] * s + stats.mu;
  return out;
}

}  // namespace gpht
