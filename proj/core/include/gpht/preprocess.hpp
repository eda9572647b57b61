#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace gpht {

inline constexpr double kNormEps = 1e-5;

// One channel reshaped into num_tokens consecutive tokens of token_len points.
struct TokenGrid {
  std::size_t num_tokens = 0;
  std::size_t token_len = 0;
  std::vector<double> values;  // num_tokens * token_len, oldest token first

  std::span<const double> token(std::size_t j) const {
    return std::span<const double>(values).subspan(j * token_len, token_len);
  }
};

struct NormStats {
  double mu = 0.0;
  double sigma = 0.0;  // population standard deviation
  double eps = kNormEps;

  double scale() const { return sigma + eps; }
};

// Splits a channel-major C x L window into C univariate windows and back.
std::vector<std::vector<double>> flatten_channels(const std::vector<std::vector<double>>& window);
std::vector<std::vector<double>> concat_channels(const std::vector<std::vector<double>>& windows);

// Drops the oldest L mod T points when T does not divide L.
// Throws DataError when L < T.
TokenGrid tokenize(std::span<const double> window, std::size_t token_len);
std::vector<double> detokenize(const TokenGrid& grid);

// (x - mu) / (sigma + eps) with the window's own mean and population std.
std::pair<std::vector<double>, NormStats> instance_normalize(std::span<const double> window,
                                                             double eps = kNormEps);
std::vector<double> normalize_with(std::span<const double> values, const NormStats& stats);
// pred * (sigma + eps) + mu
std::vector<double> denormalize(std::span<const double> pred, const NormStats& stats);

}  // namespace gpht
