#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace gpht::cli {

// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericAbort = 4,
  kProtocolViolation = 5,
};

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool force = false;
  Preset preset = Preset::none;
};

int cmd_pretrain(const std::filesystem::path& config, const std::filesystem::path& out_dir,
                 const GlobalOptions& g, std::ostream& log);
int cmd_finetune(const std::filesystem::path& ckpt, const std::filesystem::path& config,
                 const std::filesystem::path& out_dir, bool full_tune, const GlobalOptions& g,
                 std::ostream& log);
int cmd_forecast(const std::filesystem::path& ckpt, const std::filesystem::path& input,
                 std::size_t horizon, const std::filesystem::path& out_csv, const GlobalOptions& g,
                 std::ostream& log);
int cmd_evaluate(const std::filesystem::path& ckpt, const std::filesystem::path& config,
                 const std::filesystem::path& out_dir, const GlobalOptions& g, std::ostream& out,
                 std::ostream& log);
int cmd_synth(const std::filesystem::path& config, const std::filesystem::path& out_csv,
              const GlobalOptions& g, std::ostream& log);
int cmd_inspect(const std::filesystem::path& ckpt, std::ostream& out, std::ostream& log);

// Parses argv and dispatches; never throws.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& log);

}  // namespace gpht::cli
