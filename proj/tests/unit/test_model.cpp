#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "gpht/error.hpp"
#include "gpht/model.hpp"
#include "gradcheck.hpp"
#include "reference_transformer.hpp"

namespace gpht {
namespace {

using testing::random_tokens;
using testing::tiny_config;

std::vector<double> vec(const Array& a) { return {a.values().begin(), a.values().end()}; }

std::vector<double> token_slice(const Array& a, std::size_t b, std::size_t j) {
  const std::size_t L = a.dim(1), T = a.dim(2);
  auto v = a.values().subspan((b * L + j) * T, T);
  return {v.begin(), v.end()};
}

TEST(ModelConfig, Validation) {
  EXPECT_NO_THROW(ModelConfig::desk().validate());
  EXPECT_NO_THROW(ModelConfig::paper(256).validate());
  auto c = ModelConfig::desk();
  c.pool_kernels = {5, 1};
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::desk();
  c.pool_kernels = {4};
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::desk();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::desk();
  c.max_tokens = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::desk();
  EXPECT_THROW(c.apply_entry("upsample", "mlp"), ConfigError);
  EXPECT_NO_THROW(c.apply_entry("upsample", "linear"));
  EXPECT_THROW(c.apply_entry("colour", "blue"), ConfigError);
}

TEST(ModelConfig, EntriesRoundTrip) {
  auto c = ModelConfig::paper(320);
  c.dropout = 0.125;
  c.seed = 77;
  ModelConfig d;
  for (const auto& [k, v] : c.to_entries()) d.apply_entry(k, v);
  EXPECT_EQ(c, d);
}

TEST(InitModel, DeterministicFromSeed) {
  auto a = init_model(tiny_config(3)).named();
  auto b = init_model(tiny_config(3)).named();
  auto c = init_model(tiny_config(4)).named();
  ASSERT_EQ(a.size(), b.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(vec(a[i].value), vec(b[i].value));
    any_diff |= vec(a[i].value) != vec(c[i].value);
  }
  EXPECT_TRUE(any_diff);
}

TEST(InitModel, InitializationRules) {
  auto p = init_model(ModelConfig::desk());
  for (const auto& np : p.named()) {
    const auto& n = np.name;
    const auto v = vec(np.value);
    if (n.ends_with(".bias")) {
      for (double x : v) EXPECT_EQ(x, 0.0) << n;
    } else if (n.ends_with(".gain")) {
      for (double x : v) EXPECT_EQ(x, 1.0) << n;
    } else if (n.ends_with(".weight")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(np.value.dim(0)));
      for (double x : v) EXPECT_LE(std::abs(x), bound) << n;
    } else if (n.ends_with(".pos")) {
      double ss = 0;
      for (double x : v) ss += x * x;
      EXPECT_NEAR(std::sqrt(ss / v.size()), 0.02, 0.006) << n;
    }
  }
}

TEST(InitModel, HeadScopeIsExactlyTheForecastHeads) {
  auto p = init_model(ModelConfig::paper(256));
  std::size_t heads = 0;
  for (const auto& np : p.named()) {
    const bool is_head = np.name.find(".head.") != std::string::npos;
    EXPECT_EQ(np.scope == Scope::head, is_head) << np.name;
    heads += is_head;
  }
  EXPECT_EQ(heads, 8u);  // weight + bias per stage
}

TEST(CountParameters, HandExample) {
  ModelConfig c;
  c.num_stages = 1;
  c.pool_kernels = {1};
  c.token_len = 4;
  c.width = 8;
  c.heads = 2;
  c.ff_width = 16;
  auto p = init_model(c);
  EXPECT_EQ(count_parameters(p, ScopeFilter::head), 36u);
}

TEST(CountParameters, ScopesPartitionTheTotal) {
  for (auto cfg : {ModelConfig::desk(), ModelConfig::paper(256), tiny_config()}) {
    auto p = init_model(cfg);
    std::size_t total = 0;
    for (const auto& np : p.named()) total += np.value.size();
    EXPECT_EQ(count_parameters(p), total);
    EXPECT_EQ(count_parameters(p, ScopeFilter::head) + count_parameters(p, ScopeFilter::non_head), total);
  }
}

TEST(CountParameters, PaperHeadFractionBelowHalfPercent) {
  for (std::size_t width : {256u, 512u}) {
    auto p = init_model(ModelConfig::paper(width));
    const double frac = static_cast<double>(count_parameters(p, ScopeFilter::head)) /
                        static_cast<double>(count_parameters(p));
    EXPECT_LT(frac, 0.005) << "width " << width;
  }
}

TEST(Attention, UniformValuesGiveThatValue) {
  auto p = init_model(tiny_config());
  auto layer = p.stages[0].layers[0];
  // Zero value weights make every value vector equal to the bias.
  layer.wv = Array::zeros(layer.wv.shape());
  layer.bv = Array::from({8}, {0.3, -1, 2, 0.5, 0, 1, -0.25, 4});
  std::mt19937_64 rng(1);
  Array h = random_tokens(2, 3, 8, rng);
  auto out = vec(causal_self_attention(h, layer, 2));
  auto expect = testing::ref_linear({std::vector<double>(layer.bv.values().begin(), layer.bv.values().end())},
                                    layer.wo, layer.bo)[0];
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(out[r * 8 + c], expect[c], 1e-12);
  }
}

TEST(Attention, CausalAndSinglePosition) {
  auto p = init_model(tiny_config());
  const auto& layer = p.stages[0].layers[0];
  std::mt19937_64 rng(2);
  Array h = random_tokens(1, 3, 8, rng);
  auto base = vec(causal_self_attention(h, layer, 2));
  Array first = Array::from({1, 1, 8}, {h.values().begin(), h.values().begin() + 8});
  auto single = vec(causal_self_attention(first, layer, 2));
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(single[c], base[c]);

  for (std::size_t j = 0; j < 3; ++j) {
    Array g = h.clone();
    g.mutable_values()[j * 8 + 3] += 0.5;
    auto pert = vec(causal_self_attention(g, layer, 2));
    for (std::size_t i = 0; i < j * 8; ++i) EXPECT_EQ(pert[i], base[i]);
    EXPECT_NE(pert[j * 8], base[j * 8]);
  }
}

TEST(StageForward, FullPoolingBroadcastsOneValuePerToken) {
  ModelConfig c = tiny_config();
  c.pool_kernels = {4, 1};
  auto p = init_model(c);
  std::mt19937_64 rng(3);
  Array t = random_tokens(2, 3, 4, rng);
  auto act = stage_forward(p.stages[0], c, t);
  EXPECT_EQ(act.pooled.shape(), (Shape{2, 3, 1}));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t j = 0; j < 3; ++j) {
      auto tok = token_slice(act.x_out, b, j);
      for (double v : tok) EXPECT_EQ(v, tok[0]);
    }
  }
}

TEST(StageForward, RejectsTooManyTokens) {
  auto p = init_model(tiny_config());
  std::mt19937_64 rng(4);
  EXPECT_THROW(stage_forward(p.stages[0], p.config, random_tokens(1, 4, 4, rng)), UsageError);
  EXPECT_THROW(stage_forward(p.stages[0], p.config, random_tokens(1, 2, 5, rng)), DimensionError);
}

TEST(ModelForward, CausalAcrossTheWholeModel) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = tiny_config(seed);
    cfg.max_tokens = 5;
    auto p = init_model(cfg);
    std::mt19937_64 rng(seed + 100);
    Array t = random_tokens(1, 5, 4, rng);
    auto base = model_forward(p, t).y_pred;
    for (std::size_t j = 0; j < 5; ++j) {
      Array u = t.clone();
      for (std::size_t c = 0; c < 4; ++c) u.mutable_values()[j * 4 + c] += 1.0;
      auto pert = model_forward(p, u).y_pred;
      for (std::size_t i = 0; i < j; ++i) EXPECT_EQ(token_slice(pert, 0, i), token_slice(base, 0, i));
      EXPECT_NE(token_slice(pert, 0, j), token_slice(base, 0, j));
    }
  }
}

TEST(ModelForward, ResidualStructure) {
  auto cfg = tiny_config();
  cfg.num_stages = 3;
  cfg.pool_kernels = {4, 2, 1};
  auto p = init_model(cfg);
  std::mt19937_64 rng(5);
  Array t = random_tokens(3, 3, 4, rng);
  auto out = model_forward(p, t);
  ASSERT_EQ(out.stages.size(), 3u);
  for (const auto& st : out.stages) {
    for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(token_slice(st.input, b, 0), token_slice(t, b, 0));
  }
  auto shifted = vec(shift_tokens_right(out.y_pred));
  auto tokens = vec(t);
  auto residual = vec(out.final_residual);
  for (std::size_t i = 0; i < tokens.size(); ++i) EXPECT_NEAR(tokens[i] - shifted[i], residual[i], 1e-10);
}

TEST(ModelForward, SingleStageOutputIsTheStageOutput) {
  auto cfg = tiny_config();
  cfg.num_stages = 1;
  cfg.pool_kernels = {1};
  auto p = init_model(cfg);
  std::mt19937_64 rng(6);
  Array t = random_tokens(2, 3, 4, rng);
  auto out = model_forward(p, t);
  EXPECT_EQ(vec(out.y_pred), vec(out.stages[0].x_out));
}

TEST(ModelForward, ZeroHeadsGiveZeroOutput) {
  auto p = init_model(tiny_config());
  for (auto& st : p.stages) {
    for (auto& v : st.head_w.mutable_values()) v = 0.0;
  }
  std::mt19937_64 rng(7);
  Array t = random_tokens(2, 3, 4, rng);
  auto out = model_forward(p, t);
  for (double v : vec(out.y_pred)) EXPECT_EQ(v, 0.0);
  for (const auto& st : out.stages) EXPECT_EQ(vec(st.input), vec(t));
}

TEST(ModelForward, PlainTransformerFixture) {
  ModelConfig c;
  c.num_stages = 1;
  c.pool_kernels = {1};
  c.token_len = 6;
  c.max_tokens = 4;
  c.width = 12;
  c.layers_per_stage = 2;
  c.heads = 3;
  c.ff_width = 20;
  c.seed = 9;
  auto p = init_model(c);
  std::mt19937_64 rng(8);
  Array t = random_tokens(1, 4, 6, rng);
  testing::Mat rows(4);
  for (std::size_t j = 0; j < 4; ++j) rows[j] = token_slice(t, 0, j);
  auto ref = testing::reference_plain_transformer(p, rows);
  auto y = model_forward(p, t).y_pred;
  for (std::size_t j = 0; j < 4; ++j) {
    auto got = token_slice(y, 0, j);
    for (std::size_t c2 = 0; c2 < 6; ++c2) EXPECT_NEAR(got[c2], ref[j][c2], 1e-12);
  }
}

TEST(ModelForward, DeterministicWithoutDropout) {
  auto p = init_model(ModelConfig::desk());
  std::mt19937_64 rng(9);
  Array t = random_tokens(2, 7, 24, rng);
  ForwardOptions train_mode{true, nullptr};
  EXPECT_EQ(vec(model_forward(p, t).y_pred), vec(model_forward(p, t, train_mode).y_pred));
}

TEST(ModelForward, BatchRowsAreIndependent) {
  auto p = init_model(tiny_config());
  std::mt19937_64 rng(10);
  Array t = random_tokens(3, 3, 4, rng);
  auto all = model_forward(p, t).y_pred;
  for (std::size_t b = 0; b < 3; ++b) {
    auto v = t.values().subspan(b * 12, 12);
    Array one = Array::from({1, 3, 4}, {v.begin(), v.end()});
    auto y = model_forward(p, one).y_pred;
    for (std::size_t j = 0; j < 3; ++j) {
      auto a = token_slice(all, b, j), s = token_slice(y, 0, j);
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(a[c], s[c], 1e-12);
    }
  }
}

TEST(ModelForward, ParameterGradientsMatchFiniteDifferences) {
  auto p = init_model(tiny_config(11));
  ASSERT_LE(count_parameters(p), 2000u);
  std::mt19937_64 rng(11);
  Array t = random_tokens(2, 3, 4, rng);
  std::vector<Array> leaves;
  for (const auto& np : p.named()) leaves.push_back(np.value);
  const double err = testing::gradcheck([&] { return testing::weighted_sum(model_forward(p, t).y_pred); },
                                        leaves);
  EXPECT_LT(err, 1e-4);
}

}  // namespace
}  // namespace gpht
