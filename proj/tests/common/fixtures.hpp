#pragma once

#include <random>
#include <vector>

#include "gpht/model.hpp"
#include "gpht/synth.hpp"
#include "gpht/train.hpp"

namespace gpht::testing {

// Two stages, about 1.1k parameters.
inline ModelConfig tiny_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.num_stages = 2;
  c.pool_kernels = {2, 1};
  c.token_len = 4;
  c.max_tokens = 3;
  c.width = 8;
  c.layers_per_stage = 1;
  c.heads = 2;
  c.ff_width = 8;
  c.seed = seed;
  return c;
}

inline Array random_tokens(std::size_t batch, std::size_t num_tokens, std::size_t token_len,
                           std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(batch * num_tokens * token_len);
  for (auto& x : v) x = n(rng);
  return Array::from({batch, num_tokens, token_len}, std::move(v));
}

// Single noisy sine segment for loss tests.
inline MixedDataset sine_dataset(std::size_t length, double period, std::uint64_t seed) {
  auto s = synth_generate({length, 1, {SynthComponent::sine(period, 2.0), SynthComponent::trend(0.01),
                                       SynthComponent::noise(0.1)},
                           true},
                          seed, "sine");
  MixedDataset m;
  m.segments.push_back({"sine", 0, s.channels[0]});
  return m;
}

}  // namespace gpht::testing
