#pragma once

// Sectioned key=value run configuration:
//
//   [model]   ModelConfig keys (stages, pool_kernels, token_len, ...)
//   [train]   TrainConfig keys (epochs, batch_size, learning_rate, ...)
//   [data]    sources = synth:NAME | csv:PATH | PATH, ...; split = auto | a,b,c
//   [synth]   synthetic spec for the synth command
//   [synth.NAME]  named synthetic sources referenced from [data]
//   [eval]    protocol, fraction, horizons, lookback, stride
//
// Unknown sections and keys are rejected. '#' and ';' start comments.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gpht/data.hpp"
#include "gpht/model.hpp"
#include "gpht/synth.hpp"
#include "gpht/train.hpp"

namespace gpht::cli {

enum class Preset { none, paper };

struct SynthSection {
  SynthSpec spec;
  std::uint64_t seed = 0;
};

struct SourceRef {
  enum class Kind { synth, csv };
  Kind kind = Kind::csv;
  std::string name;             // dataset name (synth section name or CSV stem)
  std::filesystem::path path;   // csv only
};

struct DataSection {
  std::vector<SourceRef> sources;
  // Unset means "auto": ETT* datasets use 6:2:2, everything else 7:1:2.
  std::optional<SplitRatios> split;

  SplitRatios ratios_for(const std::string& dataset) const;
};

enum class Protocol { standard, zero_shot, few_shot };

struct EvalSection {
  Protocol protocol = Protocol::standard;
  std::optional<double> fraction;
  std::vector<std::size_t> horizons{96, 192, 336, 720};
  std::size_t lookback = 0;  // 0 = model context length
  std::size_t stride = 1;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataSection data;
  std::optional<SynthSection> synth;
  std::map<std::string, SynthSection> named_synth;
  EvalSection eval;
  // True when [train] sets scope explicitly.
  bool train_scope_given = false;

  // Every section with defaults filled in; parsing it reproduces *this.
  std::string resolved_text() const;
};

struct ConfigOverrides {
  Preset preset = Preset::none;
  std::optional<std::uint64_t> seed;
};

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir,
                           const ConfigOverrides& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

// Loads or generates every [data] source in order.
std::vector<MultivariateSeries> load_sources(const RunConfig& config);

}  // namespace gpht::cli
