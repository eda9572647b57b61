#include "gpht/synth.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <random>

#include "gpht/error.hpp"

namespace gpht {

namespace {

double parse_number(std::string_view s, std::string_view context) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError("bad number '" + std::string(s) + "' in synthetic component '" +
                      std::string(context) + "'");
  }
  return v;
}

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void validate(const SynthSpec& spec) {
  if (spec.length == 0) throw ConfigError("synthetic length must be positive");
  if (spec.channels == 0) throw ConfigError("synthetic channel count must be positive");
  for (const auto& c : spec.components) {
    if (c.kind == SynthComponent::Kind::sine && !(c.period > 0.0)) {
      throw ConfigError("sine period must be positive, got " + num(c.period));
    }
    if (c.kind == SynthComponent::Kind::noise && c.sigma < 0.0) {
      throw ConfigError("noise sigma must be nonnegative, got " + num(c.sigma));
    }
  }
}

}  // namespace

SynthComponent SynthComponent::sine(double period, double amplitude, double phase) {
  SynthComponent c;
  c.kind = Kind::sine;
  c.period = period;
  c.amplitude = amplitude;
  c.phase = phase;
  return c;
}

SynthComponent SynthComponent::trend(double slope) {
  SynthComponent c;
  c.kind = Kind::trend;
  c.slope = slope;
  return c;
}

SynthComponent SynthComponent::noise(double sigma) {
  SynthComponent c;
  c.kind = Kind::noise;
  c.sigma = sigma;
  return c;
}

SynthComponent parse_synth_component(std::string_view text) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(':', start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  const auto kind = parts.front();
  if (kind == "sine" && parts.size() >= 2 && parts.size() <= 4) {
    return SynthComponent::sine(parse_number(parts[1], text),
                                parts.size() > 2 ? parse_number(parts[2], text) : 1.0,
                                parts.size() > 3 ? parse_number(parts[3], text) : 0.0);
  }
  if (kind == "trend" && parts.size() == 2) return SynthComponent::trend(parse_number(parts[1], text));
  if (kind == "noise" && parts.size() == 2) return SynthComponent::noise(parse_number(parts[1], text));
  throw ConfigError("unrecognized synthetic component '" + std::string(text) +
                    "' (expected sine:P[:A[:phi]], trend:S or noise:SIGMA)");
}

std::string format_synth_component(const SynthComponent& c) {
  switch (c.kind) {
    case SynthComponent::Kind::sine:
      return "sine:" + num(c.period) + ":" + num(c.amplitude) + ":" + num(c.phase);
    case SynthComponent::Kind::trend: return "trend:" + num(c.slope);
    case SynthComponent::Kind::noise: return "noise:" + num(c.sigma);
  }
  return {};
}

MultivariateSeries synth_generate(const SynthSpec& spec, std::uint64_t seed, std::string name) {
  validate(spec);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);

  MultivariateSeries out;
  out.name = std::move(name);
  for (std::size_t ch = 0; ch < spec.channels; ++ch) {
    out.channel_names.push_back("ch" + std::to_string(ch));
    std::vector<double> jitter(spec.components.size(), 0.0);
    if (spec.random_phase) {
      for (std::size_t i = 0; i < spec.components.size(); ++i) {
        if (spec.components[i].kind == SynthComponent::Kind::sine) jitter[i] = phase_dist(rng);
      }
    }
    std::vector<double> values(spec.length, 0.0);
    for (std::size_t i = 0; i < spec.components.size(); ++i) {
      const auto& c = spec.components[i];
      switch (c.kind) {
        case SynthComponent::Kind::sine:
          for (std::size_t t = 0; t < spec.length; ++t) {
            values[t] += c.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) /
                                                    c.period + c.phase + jitter[i]);
          }
          break;
        case SynthComponent::Kind::trend:
          for (std::size_t t = 0; t < spec.length; ++t) values[t] += c.slope * static_cast<double>(t);
          break;
        case SynthComponent::Kind::noise:
          if (c.sigma > 0.0) {
            std::normal_distribution<double> noise(0.0, c.sigma);
            for (auto& v : values) v += noise(rng);
          }
          break;
      }
    }
    out.channels.push_back(std::move(values));
  }
  return out;
}

}  // namespace gpht
