#include "gpht/adam.hpp"

#include <cmath>

#include "gpht/error.hpp"

namespace gpht {

AdamState::AdamState(std::size_t size, const AdamOptions& opts)
    : first_moment(size, 0.0),
      second_moment(size, 0.0),
      beta1(opts.beta1),
      beta2(opts.beta2),
      epsilon(opts.epsilon),
      learning_rate(opts.learning_rate) {}

void adam_step(Array& param, AdamState& state) {
  if (!param.has_grad()) throw UsageError("adam_step: parameter has no gradient");
  auto values = param.mutable_values();
  auto grad = param.grad();
  if (state.first_moment.size() != values.size() || state.second_moment.size() != values.size()) {
    throw DimensionError("adam_step: optimizer state sized " +
                         std::to_string(state.first_moment.size()) + " for parameter of " +
                         std::to_string(values.size()) + " values");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double g = grad[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    values[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

}  // namespace gpht
