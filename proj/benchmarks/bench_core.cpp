#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "gpht/infer.hpp"
#include "gpht/model.hpp"
#include "gpht/train.hpp"

namespace {

using namespace gpht;

Array random_array(std::vector<std::size_t> shape, std::uint64_t seed) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return Array::from(std::move(shape), std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Array a = random_array({n, n}, 1), b = random_array({n, n}, 2);
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_DeskForwardBackward(benchmark::State& state) {
  const auto params = init_model(ModelConfig::desk());
  const auto& c = params.config;
  const auto batch = static_cast<std::size_t>(state.range(0));
  const Array tokens = random_array({batch, c.max_tokens, c.token_len}, 3);
  for (auto _ : state) {
    for (auto& np : params.named()) np.value.zero_grad();
    const Array y = model_forward(params, tokens).y_pred;
    const Array loss = mse(y, std::vector<double>(y.size(), 0.0));
    backward(loss);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_DeskForwardBackward)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ArForecast(benchmark::State& state) {
  const auto params = init_model(ModelConfig::desk());
  const auto horizon = static_cast<std::size_t>(state.range(0));
  std::vector<double> x(params.config.context_len());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.26 * static_cast<double>(i));
  for (auto _ : state) benchmark::DoNotOptimize(ar_forecast(params, {{x}, horizon}));
}
BENCHMARK(BM_ArForecast)->Arg(96)->Arg(720)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
