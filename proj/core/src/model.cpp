#include "gpht/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
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
    throw ConfigError("model." + key + ": cannot parse '" + text + "'");
  }
  return v;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    out.push_back(parse_value<std::size_t>(key, item));
  }
  return out;
}

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Array weight(std::size_t fan_in, std::size_t fan_out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(fan_in * fan_out);
    for (auto& x : v) x = dist(rng_);
    return Array::from({fan_in, fan_out}, std::move(v), true);
  }
  Array normal(std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = dist(rng_);
    return Array::from({rows, cols}, std::move(v), true);
  }
  static Array zeros(std::size_t n) { return Array::zeros({n}, true); }
  static Array ones(std::size_t n) { return Array::from({n}, std::vector<double>(n, 1.0), true); }

 private:
  std::mt19937_64 rng_;
};

Array linear(const Array& x, const Array& w, const Array& b) { return add_bias(matmul(x, w), b); }

}  // namespace

// ---- ModelConfig -----------------------------------------------------

void ModelConfig::validate() const {
  if (num_stages < 1) throw ConfigError("model needs at least one stage");
  if (pool_kernels.size() != num_stages) {
    throw ConfigError("expected " + std::to_string(num_stages) + " pool kernels, got " +
                      std::to_string(pool_kernels.size()));
  }
  if (token_len < 1) throw ConfigError("token length must be >= 1");
  for (auto k : pool_kernels) {
    if (k == 0 || token_len % k != 0) {
      throw ConfigError("pool kernel " + std::to_string(k) + " does not divide token length " +
                        std::to_string(token_len));
    }
  }
  if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  if (width < 1 || heads < 1 || width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (layers_per_stage < 1) throw ConfigError("layers_per_stage must be >= 1");
  if (ff_width < 1) throw ConfigError("ff_width must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper(std::size_t width) {
  ModelConfig c;
  c.num_stages = 4;
  c.pool_kernels = {8, 4, 2, 1};
  c.token_len = 48;
  c.max_tokens = 7;
  c.width = width;
  c.layers_per_stage = 3;
  c.heads = 8;
  c.ff_width = 4 * width;
  return c;
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_entries() const {
  std::string kernels;
  for (std::size_t i = 0; i < pool_kernels.size(); ++i) {
    if (i) kernels += ',';
    kernels += std::to_string(pool_kernels[i]);
  }
  return {
      {"stages", std::to_string(num_stages)},
      {"pool_kernels", kernels},
      {"token_len", std::to_string(token_len)},
      {"max_tokens", std::to_string(max_tokens)},
      {"width", std::to_string(width)},
      {"layers", std::to_string(layers_per_stage)},
      {"heads", std::to_string(heads)},
      {"ff_width", std::to_string(ff_width)},
      {"dropout", fmt_double(dropout)},
      {"upsample", "linear"},
      {"seed", std::to_string(seed)},
  };
}

void ModelConfig::apply_entry(const std::string& key, const std::string& value) {
  if (key == "stages") num_stages = parse_value<std::size_t>(key, value);
  else if (key == "pool_kernels") pool_kernels = parse_list(key, value);
  else if (key == "token_len") token_len = parse_value<std::size_t>(key, value);
  else if (key == "max_tokens") max_tokens = parse_value<std::size_t>(key, value);
  else if (key == "width") width = parse_value<std::size_t>(key, value);
  else if (key == "layers") layers_per_stage = parse_value<std::size_t>(key, value);
  else if (key == "heads") heads = parse_value<std::size_t>(key, value);
  else if (key == "ff_width") ff_width = parse_value<std::size_t>(key, value);
  else if (key == "dropout") dropout = parse_value<double>(key, value);
  else if (key == "seed") seed = parse_value<std::uint64_t>(key, value);
  else if (key == "upsample") {
    if (value != "linear") throw ConfigError("model.upsample: only 'linear' is supported");
  } else {
    throw ConfigError("unknown model key '" + key + "'");
  }
}

// ---- parameters ------------------------------------------------------

ModelParams init_model(const ModelConfig& config) {
  config.validate();
  Initializer init(config.seed);
  ModelParams params;
  params.config = config;
  const std::size_t d = config.width;
  for (std::size_t s = 0; s < config.num_stages; ++s) {
    StageParams st;
    st.kernel = config.pool_kernels[s];
    const std::size_t pooled = config.token_len / st.kernel;
    st.embed_w = init.weight(pooled, d);
    st.embed_b = Initializer::zeros(d);
    st.pos = init.normal(config.max_tokens, d, 0.02);
    for (std::size_t l = 0; l < config.layers_per_stage; ++l) {
      LayerParams ly;
      ly.ln1_gain = Initializer::ones(d);
      ly.ln1_bias = Initializer::zeros(d);
      ly.wq = init.weight(d, d);
      ly.bq = Initializer::zeros(d);
      ly.wk = init.weight(d, d);
      ly.bk = Initializer::zeros(d);
      ly.wv = init.weight(d, d);
      ly.bv = Initializer::zeros(d);
      ly.wo = init.weight(d, d);
      ly.bo = Initializer::zeros(d);
      ly.ln2_gain = Initializer::ones(d);
      ly.ln2_bias = Initializer::zeros(d);
      ly.ff1_w = init.weight(d, config.ff_width);
      ly.ff1_b = Initializer::zeros(config.ff_width);
      ly.ff2_w = init.weight(config.ff_width, d);
      ly.ff2_b = Initializer::zeros(d);
      st.layers.push_back(std::move(ly));
    }
    st.lnf_gain = Initializer::ones(d);
    st.lnf_bias = Initializer::zeros(d);
    st.head_w = init.weight(d, pooled);
    st.head_b = Initializer::zeros(pooled);
    params.stages.push_back(std::move(st));
  }
  return params;
}

std::vector<NamedParam> ModelParams::named() const {
  std::vector<NamedParam> out;
  auto add = [&out](std::string name, const Array& a, Scope scope = Scope::non_head) {
    out.push_back({std::move(name), scope, a});
  };
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const std::string p = "stage" + std::to_string(s) + ".";
    add(p + "embed.weight", st.embed_w);
    add(p + "embed.bias", st.embed_b);
    add(p + "pos", st.pos);
    for (std::size_t l = 0; l < st.layers.size(); ++l) {
      const auto& ly = st.layers[l];
      const std::string q = p + "layer" + std::to_string(l) + ".";
      add(q + "ln1.gain", ly.ln1_gain);
      add(q + "ln1.bias", ly.ln1_bias);
      add(q + "attn.q.weight", ly.wq);
      add(q + "attn.q.bias", ly.bq);
      add(q + "attn.k.weight", ly.wk);
      add(q + "attn.k.bias", ly.bk);
      add(q + "attn.v.weight", ly.wv);
      add(q + "attn.v.bias", ly.bv);
      add(q + "attn.out.weight", ly.wo);
      add(q + "attn.out.bias", ly.bo);
      add(q + "ln2.gain", ly.ln2_gain);
      add(q + "ln2.bias", ly.ln2_bias);
      add(q + "ff1.weight", ly.ff1_w);
      add(q + "ff1.bias", ly.ff1_b);
      add(q + "ff2.weight", ly.ff2_w);
      add(q + "ff2.bias", ly.ff2_b);
    }
    add(p + "final_ln.gain", st.lnf_gain);
    add(p + "final_ln.bias", st.lnf_bias);
    add(p + "head.weight", st.head_w, Scope::head);
    add(p + "head.bias", st.head_b, Scope::head);
  }
  std::sort(out.begin(), out.end(),
            [](const NamedParam& a, const NamedParam& b) { return a.name < b.name; });
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams copy;
  copy.config = config;
  for (const auto& st : stages) {
    StageParams c;
    c.kernel = st.kernel;
    c.embed_w = st.embed_w.clone();
    c.embed_b = st.embed_b.clone();
    c.pos = st.pos.clone();
    for (const auto& ly : st.layers) {
      c.layers.push_back({ly.ln1_gain.clone(), ly.ln1_bias.clone(), ly.wq.clone(), ly.bq.clone(),
                          ly.wk.clone(), ly.bk.clone(), ly.wv.clone(), ly.bv.clone(), ly.wo.clone(),
                          ly.bo.clone(), ly.ln2_gain.clone(), ly.ln2_bias.clone(), ly.ff1_w.clone(),
                          ly.ff1_b.clone(), ly.ff2_w.clone(), ly.ff2_b.clone()});
    }
    c.lnf_gain = st.lnf_gain.clone();
    c.lnf_bias = st.lnf_bias.clone();
    c.head_w = st.head_w.clone();
    c.head_b = st.head_b.clone();
    copy.stages.push_back(std::move(c));
  }
  return copy;
}

void ModelParams::set_requires_grad(ScopeFilter filter) {
  for (auto& p : named()) {
    const bool on = filter == ScopeFilter::all ||
                    (filter == ScopeFilter::head && p.scope == Scope::head) ||
                    (filter == ScopeFilter::non_head && p.scope == Scope::non_head);
    p.value.set_requires_grad(on);
  }
}

void ModelParams::zero_grad() {
  for (auto& p : named()) p.value.zero_grad();
}

std::size_t count_parameters(const ModelParams& params, ScopeFilter scope) {
  std::size_t n = 0;
  for (const auto& p : params.named()) {
    if (scope == ScopeFilter::all || (scope == ScopeFilter::head && p.scope == Scope::head) ||
        (scope == ScopeFilter::non_head && p.scope == Scope::non_head)) {
      n += p.value.size();
    }
  }
  return n;
}

// ---- forward ---------------------------------------------------------

Array causal_self_attention(const Array& h, const LayerParams& layer, std::size_t heads) {
  const std::size_t head_dim = h.shape().back() / heads;
  const Array q = split_heads(linear(h, layer.wq, layer.bq), heads);
  const Array k = split_heads(linear(h, layer.wk, layer.bk), heads);
  const Array v = split_heads(linear(h, layer.wv, layer.bv), heads);
  Array scores = scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(head_dim)));
  Array weights = softmax_lastdim(causal_mask(scores));
  Array context = merge_heads(matmul(weights, v));
  return linear(context, layer.wo, layer.bo);
}

StageActivation stage_forward(const StageParams& stage, const ModelConfig& config,
                              const Array& tokens, const ForwardOptions& opts) {
  if (tokens.rank() != 3 || tokens.dim(2) != config.token_len) {
    throw DimensionError("stage_forward: expected [B, L', " + std::to_string(config.token_len) +
                         "] tokens, got " + shape_string(tokens.shape()));
  }
  if (tokens.dim(1) > config.max_tokens) {
    throw UsageError("stage_forward: " + std::to_string(tokens.dim(1)) +
                     " tokens exceed the context limit of " + std::to_string(config.max_tokens));
  }
  const bool drop = opts.training && config.dropout > 0.0;
  if (drop && !opts.rng) throw UsageError("dropout during training needs an rng");

  StageActivation act;
  act.input = tokens;
  act.pooled = max_pool_within_token(tokens, stage.kernel);
  act.h_in = add_leading_rows(linear(act.pooled, stage.embed_w, stage.embed_b), stage.pos);

  Array h = act.h_in;
  for (const auto& layer : stage.layers) {
    Array attn = causal_self_attention(layer_norm(h, layer.ln1_gain, layer.ln1_bias, kNormEps), layer,
                                       config.heads);
    if (drop) attn = dropout(attn, config.dropout, *opts.rng);
    h = add(h, attn);
    Array ff = linear(gelu(linear(layer_norm(h, layer.ln2_gain, layer.ln2_bias, kNormEps),
                                  layer.ff1_w, layer.ff1_b)),
                      layer.ff2_w, layer.ff2_b);
    if (drop) ff = dropout(ff, config.dropout, *opts.rng);
    h = add(h, ff);
  }
  act.h_out = layer_norm(h, stage.lnf_gain, stage.lnf_bias, kNormEps);
  act.x_out = linear_interp_upsample(linear(act.h_out, stage.head_w, stage.head_b), config.token_len);
  return act;
}

ModelOutput model_forward(const ModelParams& params, const Array& tokens, const ForwardOptions& opts) {
  ModelOutput out;
  Array x_in = tokens;
  for (const auto& stage : params.stages) {
    auto act = stage_forward(stage, params.config, x_in, opts);
    out.y_pred = out.y_pred.defined() ? add(out.y_pred, act.x_out) : act.x_out;
    x_in = sub(x_in, shift_tokens_right(act.x_out));
    out.stages.push_back(std::move(act));
  }
  out.final_residual = x_in;
  return out;
}

Array stack_tokens(const std::vector<const TokenGrid*>& grids) {
  if (grids.empty()) throw UsageError("stack_tokens: no token grids");
  const std::size_t L = grids.front()->num_tokens;
  const std::size_t T = grids.front()->token_len;
  std::vector<double> values;
  values.reserve(grids.size() * L * T);
  for (const auto* g : grids) {
    if (g->num_tokens != L || g->token_len != T) {
      throw DimensionError("stack_tokens: token grids differ in shape");
    }
    values.insert(values.end(), g->values.begin(), g->values.end());
  }
  return Array::from({grids.size(), L, T}, std::move(values));
}

}  // namespace gpht
