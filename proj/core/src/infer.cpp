#include "gpht/infer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gpht/error.hpp"

namespace gpht {

std::size_t decode_steps_for(std::size_t horizon, std::size_t token_len) {
  return (horizon + token_len - 1) / token_len;
}

TokenGrid context_window(const TokenGrid& tokens, std::size_t max_tokens) {
  const std::size_t keep = std::min(tokens.num_tokens, max_tokens);
  TokenGrid out;
  out.num_tokens = keep;
  out.token_len = tokens.token_len;
  out.values.assign(tokens.values.end() - static_cast<std::ptrdiff_t>(keep * tokens.token_len),
                    tokens.values.end());
  return out;
}

std::vector<std::vector<double>> forecast_batch(const ModelParams& params,
                                                std::span<const std::span<const double>> lookbacks,
                                                std::size_t horizon,
                                                std::vector<NormStats>* stats_out) {
  if (horizon == 0) throw ConfigError("forecast horizon must be >= 1");
  if (lookbacks.empty()) return {};
  const auto& mc = params.config;
  const std::size_t T = mc.token_len;
  const std::size_t L = lookbacks.front().size();
  if (L < T) {
    throw DataError("lookback of " + std::to_string(L) + " points is shorter than one token (" +
                    std::to_string(T) + ")");
  }
  const std::size_t effective = std::min(L / T, mc.max_tokens) * T;
  const std::size_t B = lookbacks.size();

  // contexts[b] holds the normalized token stream of window b, newest last.
  std::vector<std::vector<double>> contexts(B);
  std::vector<NormStats> stats(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto lb = lookbacks[b];
    if (lb.size() != L) throw DimensionError("forecast_batch: lookbacks differ in length");
    for (double v : lb) {
      if (!std::isfinite(v)) throw DataError("lookback contains a non-finite value");
    }
    auto [normalized, st] = instance_normalize(lb.subspan(L - effective));
    contexts[b] = std::move(normalized);
    stats[b] = st;
  }

  NoGradGuard no_grad;
  const std::size_t steps = decode_steps_for(horizon, T);
  std::vector<std::vector<double>> generated(B);
  for (std::size_t step = 0; step < steps; ++step) {
    const std::size_t n = std::min(contexts.front().size() / T, mc.max_tokens);
    std::vector<double> input;
    input.reserve(B * n * T);
    for (const auto& ctx : contexts) input.insert(input.end(), ctx.end() - static_cast<std::ptrdiff_t>(n * T), ctx.end());
    const auto out = model_forward(params, Array::from({B, n, T}, std::move(input)));
    const auto y = out.y_pred.values();
    for (std::size_t b = 0; b < B; ++b) {
      auto next = y.subspan((b * n + n - 1) * T, T);
      generated[b].insert(generated[b].end(), next.begin(), next.end());
      contexts[b].insert(contexts[b].end(), next.begin(), next.end());
      if (contexts[b].size() > mc.max_tokens * T) {
        contexts[b].erase(contexts[b].begin(),
                          contexts[b].end() - static_cast<std::ptrdiff_t>(mc.max_tokens * T));
      }
    }
  }

  std::vector<std::vector<double>> result(B);
  for (std::size_t b = 0; b < B; ++b) {
    generated[b].resize(horizon);
    result[b] = denormalize(generated[b], stats[b]);
  }
  if (stats_out) *stats_out = std::move(stats);
  return result;
}

ForecastResult ar_forecast(const ModelParams& params, const ForecastRequest& request) {
  if (request.lookback.empty()) throw DataError("forecast request has no channels");
  std::vector<std::span<const double>> views(request.lookback.begin(), request.lookback.end());
  ForecastResult result;
  result.predictions = forecast_batch(params, views, request.horizon, &result.stats);
  result.decode_steps = decode_steps_for(request.horizon, params.config.token_len);
  return result;
}

std::vector<std::vector<double>> forecast_multivariate(const ModelParams& params,
                                                       const std::vector<std::vector<double>>& lookback,
                                                       std::size_t horizon) {
  return ar_forecast(params, {lookback, horizon}).predictions;
}

}  // namespace gpht
