#include "gpht/eval.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "gpht/error.hpp"
#include "gpht/infer.hpp"

namespace gpht {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

struct Window {
  std::size_t channel;
  std::size_t start;
};

struct Accum {
  double sq = 0.0;
  double abs = 0.0;
  std::size_t points = 0;
  std::size_t windows = 0;
};

}  // namespace

Metrics metrics(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw DimensionError("metrics: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " truth values");
  }
  Metrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    m.mse += d * d;
    m.mae += std::abs(d);
  }
  m.mse /= static_cast<double>(pred.size());
  m.mae /= static_cast<double>(pred.size());
  return m;
}

Metrics metrics(const std::vector<std::vector<double>>& pred,
                const std::vector<std::vector<double>>& truth) {
  if (pred.size() != truth.size()) {
    throw DimensionError("metrics: " + std::to_string(pred.size()) + " vs " +
                         std::to_string(truth.size()) + " channels");
  }
  std::vector<double> p, t;
  for (std::size_t c = 0; c < pred.size(); ++c) {
    if (pred[c].size() != truth[c].size()) throw DimensionError("metrics: channel lengths differ");
    p.insert(p.end(), pred[c].begin(), pred[c].end());
    t.insert(t.end(), truth[c].begin(), truth[c].end());
  }
  return metrics(p, t);
}

NaiveForecasts naive_baselines(std::span<const double> lookback, std::size_t horizon,
                               std::size_t season_period) {
  if (lookback.empty()) throw DataError("naive_baselines: empty lookback");
  if (season_period == 0 || season_period > lookback.size()) {
    throw ConfigError("season period " + std::to_string(season_period) +
                      " exceeds lookback length " + std::to_string(lookback.size()));
  }
  NaiveForecasts out;
  out.persistence.assign(horizon, lookback.back());
  const auto season = lookback.subspan(lookback.size() - season_period);
  out.seasonal_naive.resize(horizon);
  for (std::size_t h = 0; h < horizon; ++h) out.seasonal_naive[h] = season[h % season_period];
  return out;
}

EvalReport evaluate_forecaster(const Forecaster& forecaster, const MultivariateSeries& series,
                               const Range& test, const EvalOptions& opts) {
  if (opts.horizons.empty()) throw ConfigError("no evaluation horizons given");
  if (opts.stride == 0 || opts.batch_size == 0) throw ConfigError("eval stride and batch must be positive");
  if (opts.lookback == 0) throw ConfigError("evaluation lookback must be positive");
  std::vector<std::size_t> horizons = opts.horizons;
  std::sort(horizons.begin(), horizons.end());
  horizons.erase(std::unique(horizons.begin(), horizons.end()), horizons.end());
  if (horizons.front() == 0) throw ConfigError("horizons must be positive");
  const std::size_t L = opts.lookback;
  const std::size_t required = L + horizons.back();
  if (test.end > series.length() || test.size() < required) {
    throw ConfigError("test range of " + series.name + " too short: need " +
                      std::to_string(required) + " points (lookback " + std::to_string(L) +
                      " + horizon " + std::to_string(horizons.back()) + "), have " +
                      std::to_string(test.size()));
  }

  // Group windows by the longest horizon that fits after their start.
  std::map<std::size_t, std::vector<Window>> groups;
  for (std::size_t s = test.begin; s + L + horizons.front() <= test.end; s += opts.stride) {
    std::size_t longest = 0;
    for (auto h : horizons) {
      if (s + L + h <= test.end) longest = h;
    }
    for (std::size_t c = 0; c < series.num_channels(); ++c) groups[longest].push_back({c, s});
  }

  struct Job {
    std::size_t horizon;
    std::vector<Window> windows;
  };
  std::vector<Job> jobs;
  for (auto& [h, ws] : groups) {
    for (std::size_t i = 0; i < ws.size(); i += opts.batch_size) {
      jobs.push_back({h, std::vector<Window>(ws.begin() + i, ws.begin() + std::min(ws.size(), i + opts.batch_size))});
    }
  }

  std::vector<std::vector<std::vector<double>>> outputs(jobs.size());
  auto run = [&](std::size_t j) {
    std::vector<std::span<const double>> views;
    for (const auto& w : jobs[j].windows) views.push_back(series.channel(w.channel).subspan(w.start, L));
    outputs[j] = forecaster(views, jobs[j].horizon);
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opts.threads, jobs.size()));
  if (threads == 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) run(j);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  // Reduction runs in job order so the report is independent of threading.
  std::map<std::size_t, Accum> acc;
  std::map<std::size_t, std::size_t> starts;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    for (std::size_t i = 0; i < jobs[j].windows.size(); ++i) {
      const auto& w = jobs[j].windows[i];
      const auto& pred = outputs[j].at(i);
      if (pred.size() != jobs[j].horizon) throw DimensionError("forecaster returned wrong horizon");
      auto truth = series.channel(w.channel).subspan(w.start + L, jobs[j].horizon);
      for (auto h : horizons) {
        if (h > jobs[j].horizon) break;
        auto& a = acc[h];
        for (std::size_t t = 0; t < h; ++t) {
          const double d = pred[t] - truth[t];
          a.sq += d * d;
          a.abs += std::abs(d);
        }
        a.points += h;
        if (w.channel == 0) ++a.windows;
      }
    }
  }

  EvalReport report;
  for (auto h : horizons) {
    const auto& a = acc[h];
    report.rows.push_back({series.name, h, a.sq / static_cast<double>(a.points),
                           a.abs / static_cast<double>(a.points), a.windows});
  }
  return report;
}

EvalReport evaluate(const Checkpoint& ckpt, const MultivariateSeries& series,
                    const DatasetSplit& split, const EvalOptions& opts) {
  EvalOptions o = opts;
  if (o.lookback == 0) o.lookback = ckpt.params.config.context_len();
  const ModelParams& params = ckpt.params;
  Forecaster model = [&params](std::span<const std::span<const double>> lookbacks, std::size_t h) {
    return forecast_batch(params, lookbacks, h);
  };
  auto report = evaluate_forecaster(model, series, split.test, o);
  report.fingerprint = hex64(checkpoint_fingerprint(ckpt));
  return report;
}

EvalReport zero_shot_protocol(const Checkpoint& ckpt, const MultivariateSeries& series,
                              const DatasetSplit& split, const EvalOptions& opts) {
  const auto& src = ckpt.meta.sources;
  if (std::find(src.begin(), src.end(), series.name) != src.end()) {
    throw ProtocolError("zero-shot target '" + series.name +
                        "' was part of the checkpoint's pretraining sources");
  }
  return evaluate(ckpt, series, split, opts);
}

FewShotResult few_shot_protocol(const Checkpoint& ckpt, const MultivariateSeries& series,
                                const DatasetSplit& split, double fraction,
                                const TrainConfig& train, const EvalOptions& opts) {
  DatasetSplit reduced = split;
  reduced.train = recent_fraction(split.train, fraction);
  const auto& mc = ckpt.params.config;
  const std::size_t need = mc.context_len() + mc.token_len;
  if (reduced.train.size() < need) {
    throw ConfigError("few-shot training range of " + std::to_string(reduced.train.size()) +
                      " points is shorter than one window (" + std::to_string(need) + ")");
  }
  const SourceSplit source{&series, reduced};
  const auto train_set = build_mixed_dataset(std::span(&source, 1), Role::train);
  const auto val_set = build_mixed_dataset(std::span(&source, 1), Role::validation);
  TrainConfig cfg = train;
  cfg.scope = TrainScope::head_only;
  FewShotResult result;
  result.tuned = finetune_heads(ckpt, cfg, train_set, val_set).checkpoint;
  result.report = evaluate(result.tuned, series, split, opts);
  return result;
}

std::string report_to_csv(const EvalReport& report) {
  std::string out = "dataset,horizon,mse,mae,windows\n";
  for (const auto& r : report.rows) {
    out += r.dataset + "," + std::to_string(r.horizon) + "," + fmt_double(r.mse) + "," +
           fmt_double(r.mae) + "," + std::to_string(r.windows) + "\n";
  }
  return out;
}

EvalReport parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "dataset,horizon,mse,mae,windows") {
    throw DataError("report CSV: unexpected header");
  }
  EvalReport report;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw DataError("report CSV: row " + std::to_string(row) + " malformed");
    EvalRow r;
    r.dataset = cells[0];
    auto parse = [&](const std::string& s, auto& v) {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) {
        throw DataError("report CSV: bad value '" + s + "' in row " + std::to_string(row));
      }
    };
    parse(cells[1], r.horizon);
    parse(cells[2], r.mse);
    parse(cells[3], r.mae);
    parse(cells[4], r.windows);
    report.rows.push_back(std::move(r));
  }
  return report;
}

void print_report_table(std::ostream& os, const EvalReport& report) {
  std::size_t width = 7;
  for (const auto& r : report.rows) width = std::max(width, r.dataset.size());
  os << std::left << std::setw(static_cast<int>(width)) << "dataset" << std::right << std::setw(9)
     << "horizon" << std::setw(12) << "mse" << std::setw(12) << "mae" << std::setw(10) << "windows"
     << '\n';
  os << std::fixed << std::setprecision(6);
  for (const auto& r : report.rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.dataset << std::right << std::setw(9)
       << r.horizon << std::setw(12) << r.mse << std::setw(12) << r.mae << std::setw(10) << r.windows
       << '\n';
  }
  os << std::defaultfloat;
}

}  // namespace gpht
