#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gpht {

// C channels of equal length, stored channel-major.
struct MultivariateSeries {
  std::string name;
  std::vector<std::string> channel_names;
  std::vector<std::vector<double>> channels;

  std::size_t num_channels() const { return channels.size(); }
  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
  std::span<const double> channel(std::size_t c) const { return channels.at(c); }
};

// Half-open index range [begin, end) on the time axis.
struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool operator==(const Range&) const = default;
};

enum class Role { train, validation, test };
std::string_view role_name(Role role);

struct DatasetSplit {
  Range train;
  Range validation;
  Range test;

  const Range& range(Role role) const;
  bool operator==(const DatasetSplit&) const = default;
};

struct SplitRatios {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;
};

inline constexpr SplitRatios kEttRatios{0.6, 0.2, 0.2};
inline constexpr SplitRatios kDefaultRatios{0.7, 0.1, 0.2};

// Reads a header + numeric-column CSV. A leading column named "date" is
// skipped. Non-finite or unparseable cells and ragged rows throw DataError
// naming the offending row and column.
MultivariateSeries load_csv_dataset(const std::filesystem::path& path, std::string name);
void save_csv(const MultivariateSeries& series, const std::filesystem::path& path);

// Boundaries at floor(r_train * n) and floor((r_train + r_val) * n).
DatasetSplit chronological_split(std::size_t length, const SplitRatios& ratios);

// The most recent floor(fraction * size) points of range.
Range recent_fraction(const Range& range, double fraction);

struct SourceSplit {
  const MultivariateSeries* series = nullptr;
  DatasetSplit split;
};

// One univariate slice of one source's role range.
struct Segment {
  std::string source;
  std::size_t channel = 0;
  std::vector<double> values;
};

struct MixedDataset {
  Role role = Role::train;
  std::vector<Segment> segments;
  std::size_t skipped_empty = 0;

  // Distinct source names in first-seen order.
  std::vector<std::string> sources() const;
};

// Every channel of every source's role range becomes its own segment,
// ordered by (source, channel).
MixedDataset build_mixed_dataset(std::span<const SourceSplit> sources, Role role);

// Views into a MixedDataset; valid while the dataset lives.
struct WindowPair {
  std::span<const double> lookback;
  std::span<const double> target;
  std::string_view source;
  std::size_t segment = 0;
  std::size_t offset = 0;
};

struct SampleOptions {
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  std::size_t stride = 1;
  std::uint64_t seed = 0;
  bool shuffle = true;
  // Max windows kept per source after shuffling; 0 keeps everything.
  std::size_t per_source_cap = 0;
};

std::vector<WindowPair> sample_windows(const MixedDataset& mixed, const SampleOptions& opts);

}  // namespace gpht
