#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gpht/model.hpp"
#include "gpht/preprocess.hpp"

namespace gpht {

struct ForecastRequest {
  std::vector<std::vector<double>> lookback;  // C x L, series units
  std::size_t horizon = 0;
};

struct ForecastResult {
  std::vector<std::vector<double>> predictions;  // C x H, series units
  std::size_t decode_steps = 0;
  std::vector<NormStats> stats;  // one per channel
};

std::size_t decode_steps_for(std::size_t horizon, std::size_t token_len);

// The most recent min(n, max_tokens) tokens, order preserved.
TokenGrid context_window(const TokenGrid& tokens, std::size_t max_tokens);

// Decodes every univariate lookback independently. All lookbacks must share
// one length. Only the most recent min(floor(L/T), L_m) tokens are used;
// normalization statistics come from exactly those points and stay fixed
// while decoding. stats_out, when given, receives one entry per lookback.
std::vector<std::vector<double>> forecast_batch(const ModelParams& params,
                                                std::span<const std::span<const double>> lookbacks,
                                                std::size_t horizon,
                                                std::vector<NormStats>* stats_out = nullptr);

ForecastResult ar_forecast(const ModelParams& params, const ForecastRequest& request);

// Channels never interact; the result rows follow the input channel order.
std::vector<std::vector<double>> forecast_multivariate(const ModelParams& params,
                                                       const std::vector<std::vector<double>>& lookback,
                                                       std::size_t horizon);

}  // namespace gpht
