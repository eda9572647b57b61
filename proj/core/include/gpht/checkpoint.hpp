#pragma once

// Binary checkpoint layout (all integers little-endian):
//
//   "GPHT"                      magic
//   u32 version                 currently 1
//   u64 n, n bytes              UTF-8 key=value lines (model.*, meta.*, dtype)
//   u32 array count
//   per array, ordered by name:
//     u16 n, n bytes            name
//     u8                        scope (0 non-head, 1 head)
//     u8 rank, rank x u32       dims
//     prod(dims) x f64          row-major values

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gpht/model.hpp"

namespace gpht {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingMeta {
  std::size_t epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  // Datasets seen during pretraining; zero-shot evaluation refuses these.
  std::vector<std::string> sources;
  std::vector<std::string> finetune_sources;

  bool operator==(const TrainingMeta&) const = default;
};

struct Checkpoint {
  ModelParams params;
  TrainingMeta meta;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
// Throws FormatError (with byte offset) or VersionError.
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

// Writes through a temporary file so a failed save leaves no partial file.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the serialized bytes.
std::uint64_t checkpoint_fingerprint(const Checkpoint& ckpt);

}  // namespace gpht
