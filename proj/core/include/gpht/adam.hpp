#pragma once

#include <cstdint>
#include <vector>

#include "gpht/numerics.hpp"

namespace gpht {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Per-parameter Adam moments. Moments start at zero; step counts updates.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;

  AdamState() = default;
  AdamState(std::size_t size, const AdamOptions& opts);
};

// Bias-corrected Adam update applied to param's values in place.
// Throws UsageError when param carries no gradient.
void adam_step(Array& param, AdamState& state);

}  // namespace gpht
