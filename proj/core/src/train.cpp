#include "gpht/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "gpht/error.hpp"

namespace gpht {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("train." + key + ": cannot parse '" + text + "'");
  }
  return v;
}

ScopeFilter to_filter(TrainScope scope) {
  return scope == TrainScope::all ? ScopeFilter::all : ScopeFilter::head;
}

TrainResult fit(ModelParams params, const TrainConfig& cfg, const MixedDataset& train,
                const MixedDataset& validation, TrainingMeta meta, const EpochCallback& on_epoch) {
  const auto& mc = params.config;
  SampleOptions sampling{mc.context_len(), mc.token_len, cfg.stride, cfg.seed, true,
                         cfg.per_source_cap};
  {
    auto probe = sample_windows(train, {sampling.lookback, sampling.horizon, cfg.stride, 0, false, 0});
    if (probe.empty()) {
      throw ConfigError("training data yields no windows of length " +
                        std::to_string(sampling.lookback + sampling.horizon));
    }
  }

  TrainResult result;
  result.checkpoint.params = params.clone();
  meta.seed = cfg.seed;

  Optimizer opt(params, to_filter(cfg.scope), cfg.adam);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  ForwardOptions fwd{true, &dropout_rng};
  const std::size_t val_stride = cfg.val_stride ? cfg.val_stride : cfg.stride;

  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    sampling.seed = cfg.seed + epoch;
    const auto windows = sample_windows(train, sampling);
    std::span<const WindowPair> all(windows);
    double total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < windows.size(); start += cfg.batch_size, ++batch_index) {
      auto chunk = all.subspan(start, std::min(cfg.batch_size, windows.size() - start));
      const double loss = opt.step(make_ar_batch(chunk, mc.token_len), fwd);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index) + ", learning rate " +
                           fmt_double(cfg.adam.learning_rate));
      }
      total += loss * static_cast<double>(chunk.size());
    }
    EpochLog entry{epoch, total / static_cast<double>(windows.size()),
                   evaluate_ar_loss(params, validation, val_stride)};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    // Without validation windows, selection falls back to the training loss.
    const double score = std::isfinite(entry.val_mse) ? entry.val_mse : entry.train_mse;
    if (score < best) {
      best = score;
      stale = 0;
      result.checkpoint.params = params.clone();
      meta.epoch = epoch;
      meta.best_val_loss = score;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  result.checkpoint.params.set_requires_grad(ScopeFilter::all);
  result.checkpoint.meta = std::move(meta);
  return result;
}

}  // namespace

// ---- TrainConfig -----------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (stride == 0) throw ConfigError("stride must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("adam_eps must be positive");
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_entries() const {
  return {
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"learning_rate", fmt_double(adam.learning_rate)},
      {"beta1", fmt_double(adam.beta1)},
      {"beta2", fmt_double(adam.beta2)},
      {"adam_eps", fmt_double(adam.epsilon)},
      {"stride", std::to_string(stride)},
      {"val_stride", std::to_string(val_stride)},
      {"patience", std::to_string(patience)},
      {"seed", std::to_string(seed)},
      {"scope", scope == TrainScope::all ? "all" : "head"},
      {"per_source_cap", std::to_string(per_source_cap)},
  };
}

void TrainConfig::apply_entry(const std::string& key, const std::string& value) {
  if (key == "epochs") epochs = parse_value<std::size_t>(key, value);
  else if (key == "batch_size") batch_size = parse_value<std::size_t>(key, value);
  else if (key == "learning_rate") adam.learning_rate = parse_value<double>(key, value);
  else if (key == "beta1") adam.beta1 = parse_value<double>(key, value);
  else if (key == "beta2") adam.beta2 = parse_value<double>(key, value);
  else if (key == "adam_eps") adam.epsilon = parse_value<double>(key, value);
  else if (key == "stride") stride = parse_value<std::size_t>(key, value);
  else if (key == "val_stride") val_stride = parse_value<std::size_t>(key, value);
  else if (key == "patience") patience = parse_value<std::size_t>(key, value);
  else if (key == "seed") seed = parse_value<std::uint64_t>(key, value);
  else if (key == "per_source_cap") per_source_cap = parse_value<std::size_t>(key, value);
  else if (key == "scope") {
    if (value == "all") scope = TrainScope::all;
    else if (value == "head") scope = TrainScope::head_only;
    else throw ConfigError("train.scope must be 'all' or 'head', got '" + value + "'");
  } else {
    throw ConfigError("unknown train key '" + key + "'");
  }
}

// ---- batches and loss ------------------------------------------------

std::vector<double> ar_target(std::span<const double> tokens, std::span<const double> next_token) {
  const std::size_t T = next_token.size();
  if (T == 0 || tokens.size() < T || tokens.size() % T != 0) {
    throw DimensionError("ar_target: " + std::to_string(tokens.size()) +
                         " token values do not tile into tokens of length " + std::to_string(T));
  }
  std::vector<double> out(tokens.begin() + static_cast<std::ptrdiff_t>(T), tokens.end());
  out.insert(out.end(), next_token.begin(), next_token.end());
  return out;
}

ArBatch make_ar_batch(std::span<const WindowPair> windows, std::size_t token_len) {
  if (windows.empty()) throw UsageError("make_ar_batch: empty batch");
  const std::size_t lookback = windows.front().lookback.size();
  ArBatch batch;
  std::vector<double> tokens;
  std::size_t num_tokens = 0;
  for (const auto& w : windows) {
    if (w.lookback.size() != lookback || w.target.size() != token_len) {
      throw DimensionError("make_ar_batch: windows must share lookback length and carry one token of target");
    }
    auto [normalized, stats] = instance_normalize(w.lookback);
    const TokenGrid grid = tokenize(normalized, token_len);
    const TokenGrid raw = tokenize(w.lookback, token_len);
    num_tokens = grid.num_tokens;
    tokens.insert(tokens.end(), grid.values.begin(), grid.values.end());
    const auto target = ar_target(raw.values, w.target);
    batch.target.insert(batch.target.end(), target.begin(), target.end());
    batch.scales.push_back(stats.scale());
    batch.shifts.push_back(stats.mu);
  }
  batch.tokens = Array::from({windows.size(), num_tokens, token_len}, std::move(tokens));
  return batch;
}

Array ar_loss(const Array& y_pred, const ArBatch& batch) {
  if (y_pred.size() != batch.target.size()) {
    throw DimensionError("ar_loss: prediction " + shape_string(y_pred.shape()) + " vs " +
                         std::to_string(batch.target.size()) + " target values");
  }
  return mse(affine_by_batch(y_pred, batch.scales, batch.shifts), batch.target);
}

// ---- Optimizer -------------------------------------------------------

Optimizer::Optimizer(const ModelParams& params, ScopeFilter scope, const AdamOptions& opts)
    : params_(&params) {
  for (auto& p : params.named()) {
    const bool selected = scope == ScopeFilter::all ||
                          (scope == ScopeFilter::head && p.scope == Scope::head) ||
                          (scope == ScopeFilter::non_head && p.scope == Scope::non_head);
    p.value.set_requires_grad(selected);
    if (selected) {
      states_.emplace_back(p.value.size(), opts);
      trainable_.push_back(std::move(p));
    }
  }
}

double Optimizer::step(const ArBatch& batch, const ForwardOptions& fwd) {
  for (auto& p : trainable_) p.value.zero_grad();
  const auto out = model_forward(*params_, batch.tokens, fwd);
  const Array loss = ar_loss(out.y_pred, batch);
  const double value = loss.item();
  if (!std::isfinite(value)) return value;
  backward(loss);
  for (std::size_t i = 0; i < trainable_.size(); ++i) adam_step(trainable_[i].value, states_[i]);
  return value;
}

// ---- loops -----------------------------------------------------------

double evaluate_ar_loss(const ModelParams& params, const MixedDataset& data, std::size_t stride,
                        std::size_t batch_size) {
  NoGradGuard no_grad;
  const auto& mc = params.config;
  const auto windows = sample_windows(data, {mc.context_len(), mc.token_len, stride, 0, false, 0});
  if (windows.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::span<const WindowPair> all(windows);
  double total = 0.0;
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    auto chunk = all.subspan(start, std::min(batch_size, windows.size() - start));
    const auto batch = make_ar_batch(chunk, mc.token_len);
    total += ar_loss(model_forward(params, batch.tokens).y_pred, batch).item() *
             static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(windows.size());
}

TrainResult pretrain(const ModelConfig& model, const TrainConfig& cfg, const MixedDataset& train,
                     const MixedDataset& validation, const EpochCallback& on_epoch) {
  cfg.validate();
  if (cfg.scope != TrainScope::all) {
    throw ConfigError("head-only training requires a pretrained checkpoint");
  }
  if (train.segments.empty()) throw ConfigError("pretraining dataset is empty");
  TrainingMeta meta;
  meta.sources = train.sources();
  return fit(init_model(model), cfg, train, validation, std::move(meta), on_epoch);
}

TrainResult fine_tune(const Checkpoint& source, const TrainConfig& cfg, const MixedDataset& train,
                      const MixedDataset& validation, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.segments.empty()) throw ConfigError("fine-tuning dataset is empty");
  TrainingMeta meta = source.meta;
  for (const auto& s : train.sources()) {
    if (std::find(meta.finetune_sources.begin(), meta.finetune_sources.end(), s) ==
        meta.finetune_sources.end()) {
      meta.finetune_sources.push_back(s);
    }
  }
  if (cfg.epochs == 0) {
    TrainResult unchanged;
    unchanged.checkpoint = {source.params.clone(), source.meta};
    return unchanged;
  }
  return fit(source.params.clone(), cfg, train, validation, std::move(meta), on_epoch);
}

TrainResult finetune_heads(const Checkpoint& source, const TrainConfig& cfg,
                           const MixedDataset& train, const MixedDataset& validation,
                           const EpochCallback& on_epoch) {
  if (cfg.scope != TrainScope::head_only) {
    throw ConfigError("finetune_heads requires train.scope = head");
  }
  return fine_tune(source, cfg, train, validation, on_epoch);
}

void write_loss_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,train_mse,val_mse\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << fmt_double(e.train_mse) << ',' << fmt_double(e.val_mse) << '\n';
  }
}

}  // namespace gpht
