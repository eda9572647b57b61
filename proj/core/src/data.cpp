#include "gpht/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "gpht/error.hpp"

namespace gpht {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_row(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

bool iequals(std::string_view a, std::string_view b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(),
                    [](char x, char y) { return std::tolower(x) == std::tolower(y); });
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

std::string_view role_name(Role role) {
  switch (role) {
    case Role::train: return "train";
    case Role::validation: return "validation";
    case Role::test: return "test";
  }
  return "unknown";
}

const Range& DatasetSplit::range(Role role) const {
  switch (role) {
    case Role::train: return train;
    case Role::validation: return validation;
    case Role::test: return test;
  }
  return test;
}

MultivariateSeries load_csv_dataset(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());

  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw DataError(path.string() + ": missing header row");
  }
  auto header = split_row(line);
  const std::size_t first = (!header.empty() && iequals(header.front(), "date")) ? 1 : 0;
  if (header.size() <= first) throw DataError(path.string() + ": no numeric columns in header");

  MultivariateSeries series;
  series.name = std::move(name);
  for (std::size_t c = first; c < header.size(); ++c) series.channel_names.emplace_back(header[c]);
  series.channels.resize(header.size() - first);

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw DataError(path.string() + ": row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(header.size()));
    }
    for (std::size_t c = first; c < cells.size(); ++c) {
      double v = 0.0;
      auto cell = cells[c];
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw DataError(path.string() + ": bad numeric cell '" + std::string(cell) + "' at row " +
                        std::to_string(row) + ", column " + std::to_string(c + 1) + " (" +
                        std::string(header[c]) + ")");
      }
      series.channels[c - first].push_back(v);
    }
  }
  if (series.length() == 0) throw DataError(path.string() + ": no data rows");
  return series;
}

void save_csv(const MultivariateSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t c = 0; c < series.num_channels(); ++c) {
    if (c) out << ',';
    out << (c < series.channel_names.size() ? series.channel_names[c] : "ch" + std::to_string(c));
  }
  out << '\n';
  for (std::size_t t = 0; t < series.length(); ++t) {
    for (std::size_t c = 0; c < series.num_channels(); ++c) {
      if (c) out << ',';
      out << format_double(series.channels[c][t]);
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

DatasetSplit chronological_split(std::size_t length, const SplitRatios& r) {
  if (r.train <= 0.0 || r.validation <= 0.0 || r.test <= 0.0) {
    throw ConfigError("split ratios must be positive");
  }
  if (std::abs(r.train + r.validation + r.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1, got " +
                      format_double(r.train + r.validation + r.test));
  }
  // The small slack absorbs products like 0.6 * 17420 = 10451.999...
  const auto n = static_cast<double>(length);
  const auto train_end = static_cast<std::size_t>(std::floor(r.train * n + 1e-9));
  const auto val_end =
      std::min(length, static_cast<std::size_t>(std::floor((r.train + r.validation) * n + 1e-9)));
  return {{0, train_end}, {train_end, val_end}, {val_end, length}};
}

Range recent_fraction(const Range& range, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ConfigError("fraction must lie in (0, 1], got " + format_double(fraction));
  }
  const auto keep = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(range.size()) + 1e-9));
  return {range.end - keep, range.end};
}

std::vector<std::string> MixedDataset::sources() const {
  std::vector<std::string> names;
  for (const auto& s : segments) {
    if (std::find(names.begin(), names.end(), s.source) == names.end()) names.push_back(s.source);
  }
  return names;
}

MixedDataset build_mixed_dataset(std::span<const SourceSplit> sources, Role role) {
  if (sources.empty()) throw ConfigError("build_mixed_dataset: no sources given");
  MixedDataset mixed;
  mixed.role = role;
  for (const auto& src : sources) {
    if (!src.series) throw UsageError("build_mixed_dataset: null series");
    const Range& r = src.split.range(role);
    if (r.empty()) {
      mixed.skipped_empty += src.series->num_channels();
      continue;
    }
    if (r.end > src.series->length()) {
      throw ConfigError("split of " + src.series->name + " exceeds its length");
    }
    for (std::size_t c = 0; c < src.series->num_channels(); ++c) {
      auto ch = src.series->channel(c);
      mixed.segments.push_back(
          {src.series->name, c, std::vector<double>(ch.begin() + r.begin, ch.begin() + r.end)});
    }
  }
  return mixed;
}

std::vector<WindowPair> sample_windows(const MixedDataset& mixed, const SampleOptions& opts) {
  if (opts.stride == 0) throw ConfigError("window stride must be >= 1");
  const std::size_t span = opts.lookback + opts.horizon;
  std::vector<WindowPair> windows;
  for (std::size_t s = 0; s < mixed.segments.size(); ++s) {
    const auto& seg = mixed.segments[s];
    if (span == 0 || seg.values.size() < span) continue;
    std::span<const double> v = seg.values;
    for (std::size_t off = 0; off + span <= v.size(); off += opts.stride) {
      windows.push_back({v.subspan(off, opts.lookback), v.subspan(off + opts.lookback, opts.horizon),
                         seg.source, s, off});
    }
  }
  if (opts.shuffle) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(windows.begin(), windows.end(), rng);
  }
  if (opts.per_source_cap > 0) {
    std::map<std::string_view, std::size_t> taken;
    std::erase_if(windows, [&](const WindowPair& w) { return ++taken[w.source] > opts.per_source_cap; });
  }
  return windows;
}

}  // namespace gpht
