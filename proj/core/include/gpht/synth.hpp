#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gpht/data.hpp"

namespace gpht {

struct SynthComponent {
  enum class Kind { sine, trend, noise };
  Kind kind = Kind::sine;
  double period = 0.0;
  double amplitude = 1.0;
  double phase = 0.0;
  double slope = 0.0;
  double sigma = 0.0;

  static SynthComponent sine(double period, double amplitude = 1.0, double phase = 0.0);
  static SynthComponent trend(double slope);
  static SynthComponent noise(double sigma);
};

struct SynthSpec {
  std::size_t length = 0;
  std::size_t channels = 1;
  std::vector<SynthComponent> components;
  // Adds an independent uniform [0, 2pi) phase per channel to every sine.
  bool random_phase = false;
};

// "sine:<period>[:<amplitude>[:<phase>]]", "trend:<slope>", "noise:<sigma>"
SynthComponent parse_synth_component(std::string_view text);
std::string format_synth_component(const SynthComponent& c);

// Sum of the listed components per channel, reproducible from seed.
MultivariateSeries synth_generate(const SynthSpec& spec, std::uint64_t seed,
                                  std::string name = "synth");

}  // namespace gpht
