#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gpht/adam.hpp"
#include "gpht/checkpoint.hpp"
#include "gpht/data.hpp"
#include "gpht/model.hpp"
#include "gpht/preprocess.hpp"

namespace gpht {

enum class TrainScope { all, head_only };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  AdamOptions adam;
  std::size_t stride = 1;
  // Stride for validation windows; 0 reuses stride.
  std::size_t val_stride = 0;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  TrainScope scope = TrainScope::all;
  std::size_t per_source_cap = 0;

  void validate() const;
  std::vector<std::pair<std::string, std::string>> to_entries() const;
  void apply_entry(const std::string& key, const std::string& value);
};

// One batch of next-token training examples. Each lookback is normalized
// by its own statistics; targets stay in series units.
struct ArBatch {
  Array tokens;                // [B, L', T], normalized
  std::vector<double> target;  // B * L' * T, series units
  std::vector<double> scales;  // sigma + eps per window
  std::vector<double> shifts;  // mu per window
  std::size_t size() const { return scales.size(); }
};

// Input tokens 2..L' followed by the next token.
std::vector<double> ar_target(std::span<const double> tokens, std::span<const double> next_token);

// Windows must share lookback length; each target must hold one token.
ArBatch make_ar_batch(std::span<const WindowPair> windows, std::size_t token_len);

// MSE between de-normalized predictions and series-unit targets.
Array ar_loss(const Array& y_pred, const ArBatch& batch);

// Adam over the parameters selected by scope; non-selected arrays are
// never written.
class Optimizer {
 public:
  Optimizer(const ModelParams& params, ScopeFilter scope, const AdamOptions& opts);

  // Forward, backward and one update. Returns the pre-update loss.
  double step(const ArBatch& batch, const ForwardOptions& fwd = {});

 private:
  const ModelParams* params_;
  std::vector<NamedParam> trainable_;
  std::vector<AdamState> states_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Mean next-token loss over windows of length context_len + T, without
// building a gradient tape.
double evaluate_ar_loss(const ModelParams& params, const MixedDataset& data, std::size_t stride,
                        std::size_t batch_size = 256);

TrainResult pretrain(const ModelConfig& model, const TrainConfig& cfg, const MixedDataset& train,
                     const MixedDataset& validation, const EpochCallback& on_epoch = {});

// Continues training from a checkpoint under cfg.scope.
TrainResult fine_tune(const Checkpoint& source, const TrainConfig& cfg, const MixedDataset& train,
                      const MixedDataset& validation, const EpochCallback& on_epoch = {});

// fine_tune restricted to forecast heads; cfg.scope must be head_only.
TrainResult finetune_heads(const Checkpoint& source, const TrainConfig& cfg,
                           const MixedDataset& train, const MixedDataset& validation,
                           const EpochCallback& on_epoch = {});

void write_loss_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace gpht
