#pragma once

// Hierarchical decoder-only forecaster.
//
// Each stage max-pools every token by its kernel, embeds the pooled tokens,
// adds a learned position table and runs a pre-norm causal transformer. A
// linear forecast head maps each hidden state to T/k values which are
// linearly upsampled back to the token length. Stage i+1 sees the residual
// of stage i's input minus stage i's predictions shifted one token right
// (zero first token), and the model output is the sum of all stage outputs.
// Position j of the output predicts token j+1.

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gpht/numerics.hpp"
#include "gpht/preprocess.hpp"

namespace gpht {

enum class Scope : std::uint8_t { non_head = 0, head = 1 };
enum class ScopeFilter { all, head, non_head };

struct ModelConfig {
  std::size_t num_stages = 2;
  std::vector<std::size_t> pool_kernels{4, 1};  // coarse to fine
  std::size_t token_len = 24;
  std::size_t max_tokens = 7;
  std::size_t width = 64;
  std::size_t layers_per_stage = 2;
  std::size_t heads = 4;
  std::size_t ff_width = 128;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  // Throws ConfigError on any invariant violation.
  void validate() const;
  std::size_t context_len() const { return max_tokens * token_len; }

  static ModelConfig desk();
  // S=4, k=[8,4,2,1], T=48, L_m=7, three layers per stage.
  static ModelConfig paper(std::size_t width);

  // Flat key=value form used by config files and checkpoints.
  std::vector<std::pair<std::string, std::string>> to_entries() const;
  // Applies recognised keys onto *this; unknown keys throw ConfigError.
  void apply_entry(const std::string& key, const std::string& value);

  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Array ln1_gain, ln1_bias;
  Array wq, bq, wk, bk, wv, bv, wo, bo;
  Array ln2_gain, ln2_bias;
  Array ff1_w, ff1_b, ff2_w, ff2_b;
};

struct StageParams {
  std::size_t kernel = 1;
  Array embed_w, embed_b;
  Array pos;
  std::vector<LayerParams> layers;
  Array lnf_gain, lnf_bias;
  Array head_w, head_b;  // the only head-scope arrays
};

struct NamedParam {
  std::string name;
  Scope scope = Scope::non_head;
  Array value;
};

struct ModelParams {
  ModelConfig config;
  std::vector<StageParams> stages;

  // Every learnable array with its unique name, sorted by name. The Arrays
  // share storage with this object.
  std::vector<NamedParam> named() const;
  // Deep copy; the result shares no storage with *this.
  ModelParams clone() const;
  void set_requires_grad(ScopeFilter filter);
  void zero_grad();
};

ModelParams init_model(const ModelConfig& config);
std::size_t count_parameters(const ModelParams& params, ScopeFilter scope = ScopeFilter::all);

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout > 0
};

struct StageActivation {
  Array input;   // x_in of this stage, [B, L', T]
  Array pooled;  // [B, L', T/k]
  Array h_in;    // [B, L', d]
  Array h_out;   // [B, L', d]
  Array x_out;   // [B, L', T]
};

struct ModelOutput {
  Array y_pred;                         // [B, L', T]
  std::vector<StageActivation> stages;  // one per stage
  Array final_residual;                 // input of a hypothetical stage S+1
};

// h: [B, L', d]. Position p attends to positions <= p only.
Array causal_self_attention(const Array& h, const LayerParams& layer, std::size_t heads);

// tokens: [B, L', T] with L' <= max_tokens.
StageActivation stage_forward(const StageParams& stage, const ModelConfig& config,
                              const Array& tokens, const ForwardOptions& opts = {});
ModelOutput model_forward(const ModelParams& params, const Array& tokens,
                          const ForwardOptions& opts = {});

// Stacks equally sized token grids into a [B, L', T] constant array.
Array stack_tokens(const std::vector<const TokenGrid*>& grids);

}  // namespace gpht
