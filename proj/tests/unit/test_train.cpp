#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "gpht/checkpoint.hpp"
#include "gpht/error.hpp"
#include "gpht/train.hpp"
#include "gradcheck.hpp"
#include "temp_dir.hpp"

namespace gpht {
namespace {

using testing::sine_dataset;
using testing::TempDir;
using testing::tiny_config;

std::vector<double> vec(const Array& a) { return {a.values().begin(), a.values().end()}; }

std::vector<WindowPair> tiny_windows(const MixedDataset& m, const ModelConfig& c, std::size_t count,
                                     std::uint64_t seed = 0) {
  auto w = sample_windows(m, {c.context_len(), c.token_len, 1, seed});
  w.resize(std::min(count, w.size()));
  return w;
}

TEST(ArTarget, ShiftsByOneTokenAndAppendsTheFuture) {
  std::vector<double> tokens{1, 2, 3, 4};
  std::vector<double> next{9, 8};
  EXPECT_EQ(ar_target(tokens, next), (std::vector<double>{3, 4, 9, 8}));
  std::vector<double> odd{1, 2, 3};
  EXPECT_THROW(ar_target(odd, next), DimensionError);
}

TEST(ArLoss, ZeroForThePerfectPrediction) {
  auto cfg = tiny_config();
  auto data = sine_dataset(200, 9, 1);
  auto windows = tiny_windows(data, cfg, 5);
  auto batch = make_ar_batch(windows, cfg.token_len);
  std::vector<double> perfect(batch.target.size());
  const std::size_t per = batch.target.size() / batch.size();
  for (std::size_t i = 0; i < perfect.size(); ++i) {
    perfect[i] = (batch.target[i] - batch.shifts[i / per]) / batch.scales[i / per];
  }
  Array y = Array::from(batch.tokens.shape(), perfect);
  EXPECT_LT(ar_loss(y, batch).item(), 1e-24);
}

TEST(ArLoss, MatchesHandComputedMse) {
  ModelConfig cfg = tiny_config();
  cfg.max_tokens = 2;
  MixedDataset m;
  m.segments.push_back({"s", 0, {0.5, -1, 2, 3, 1, 0, 4, -2, 7, 1, 1, 5}});
  auto windows = sample_windows(m, {8, 4, 4, 0, false});
  ASSERT_EQ(windows.size(), 1u);
  auto batch = make_ar_batch(windows, 4);
  // Target: second lookback token then the future token, in series units.
  EXPECT_EQ(batch.target, (std::vector<double>{1, 0, 4, -2, 7, 1, 1, 5}));
  std::vector<double> y{0.1, 0.2, -0.3, 0.4, 1.0, -1.0, 0.5, 0.0};
  double mu = 0, var = 0;
  for (int i = 0; i < 8; ++i) mu += m.segments[0].values[i];
  mu /= 8;
  for (int i = 0; i < 8; ++i) var += std::pow(m.segments[0].values[i] - mu, 2);
  const double s = std::sqrt(var / 8) + 1e-5;
  double expect = 0;
  for (int i = 0; i < 8; ++i) expect += std::pow(y[i] * s + mu - batch.target[i], 2);
  expect /= 8;
  EXPECT_NEAR(ar_loss(Array::from({1, 2, 4}, y), batch).item(), expect, 1e-12);
}

TEST(ArLoss, FullModelGradientMatchesFiniteDifferences) {
  auto params = init_model(tiny_config(5));
  ASSERT_LE(count_parameters(params), 2000u);
  auto data = sine_dataset(300, 11, 2);
  auto windows = tiny_windows(data, params.config, 4, 3);
  auto batch = make_ar_batch(windows, params.config.token_len);
  std::vector<Array> leaves;
  for (const auto& np : params.named()) leaves.push_back(np.value);
  const double err =
      testing::gradcheck([&] { return ar_loss(model_forward(params, batch.tokens).y_pred, batch); }, leaves);
  EXPECT_LT(err, 1e-3);
}

TEST(Optimizer, SmallStepDecreasesBatchLoss) {
  auto params = init_model(tiny_config(6));
  auto data = sine_dataset(400, 13, 4);
  auto batch = make_ar_batch(tiny_windows(data, params.config, 16, 5), params.config.token_len);
  AdamOptions opts;
  opts.learning_rate = 1e-4;
  Optimizer opt(params, ScopeFilter::all, opts);
  const double before = opt.step(batch);
  NoGradGuard g;
  const double after = ar_loss(model_forward(params, batch.tokens).y_pred, batch).item();
  EXPECT_LE(after, before + 1e-12);
}

TEST(Optimizer, RepeatedBatchLossIsMonotoneAfterWarmup) {
  auto params = init_model(tiny_config(7));
  auto data = sine_dataset(400, 10, 6);
  auto batch = make_ar_batch(tiny_windows(data, params.config, 16, 7), params.config.token_len);
  AdamOptions opts;
  opts.learning_rate = 1e-4;
  Optimizer opt(params, ScopeFilter::all, opts);
  std::vector<double> losses;
  for (int i = 0; i < 40; ++i) losses.push_back(opt.step(batch));
  for (std::size_t i = 6; i < losses.size(); ++i) EXPECT_LE(losses[i], losses[i - 1] + 1e-12) << "step " << i;
  EXPECT_LT(losses.back(), losses.front());
}

TEST(Optimizer, HeadScopeLeavesOtherArraysAlone) {
  auto params = init_model(tiny_config(8));
  auto before = params.clone();
  auto data = sine_dataset(300, 9, 8);
  auto batch = make_ar_batch(tiny_windows(data, params.config, 8), params.config.token_len);
  Optimizer opt(params, ScopeFilter::head, {});
  for (int i = 0; i < 3; ++i) opt.step(batch);
  auto a = params.named(), b = before.named();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].scope == Scope::non_head) EXPECT_EQ(vec(a[i].value), vec(b[i].value)) << a[i].name;
    else EXPECT_NE(vec(a[i].value), vec(b[i].value)) << a[i].name;
  }
}

TrainConfig quick_train(std::size_t epochs = 2) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 16;
  t.stride = 3;
  t.seed = 4;
  return t;
}

TEST(Pretrain, ConstantSeriesIsLearned) {
  MixedDataset train, val;
  train.segments.push_back({"flat", 0, std::vector<double>(200, 3.25)});
  val.segments.push_back({"flat", 0, std::vector<double>(60, 3.25)});
  auto r = pretrain(tiny_config(), quick_train(50), train, val);
  ASSERT_FALSE(r.log.empty());
  EXPECT_LT(r.checkpoint.meta.best_val_loss, 1e-8);
}

TEST(Pretrain, DeterministicBytes) {
  auto train = sine_dataset(300, 12, 1);
  auto val = sine_dataset(100, 12, 2);
  auto a = pretrain(tiny_config(), quick_train(), train, val);
  auto b = pretrain(tiny_config(), quick_train(), train, val);
  EXPECT_EQ(serialize_checkpoint(a.checkpoint), serialize_checkpoint(b.checkpoint));
  EXPECT_EQ(a.log.size(), 2u);
  EXPECT_EQ(a.checkpoint.meta.sources, (std::vector<std::string>{"sine"}));
}

TEST(Pretrain, Errors) {
  MixedDataset empty;
  auto val = sine_dataset(100, 12, 2);
  EXPECT_THROW(pretrain(tiny_config(), quick_train(), empty, val), ConfigError);
  auto head = quick_train();
  head.scope = TrainScope::head_only;
  EXPECT_THROW(pretrain(tiny_config(), head, sine_dataset(300, 12, 1), val), ConfigError);
  MixedDataset short_data;
  short_data.segments.push_back({"s", 0, std::vector<double>(10, 1.0)});
  EXPECT_THROW(pretrain(tiny_config(), quick_train(), short_data, val), ConfigError);
}

TEST(Pretrain, NonFiniteLossAbortsWithDiagnostics) {
  MixedDataset huge;
  std::vector<double> v(100);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i % 2 ? 1e200 : -1e200);
  huge.segments.push_back({"huge", 0, v});
  try {
    pretrain(tiny_config(), quick_train(), huge, huge);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("learning rate 0.001"), std::string::npos) << msg;
  }
}

Checkpoint small_checkpoint() {
  auto r = pretrain(tiny_config(), quick_train(1), sine_dataset(300, 12, 1), sine_dataset(100, 12, 2));
  return r.checkpoint;
}

TEST(FinetuneHeads, ZeroEpochsIsANoop) {
  auto ck = small_checkpoint();
  auto cfg = quick_train(0);
  cfg.scope = TrainScope::head_only;
  auto r = finetune_heads(ck, cfg, sine_dataset(200, 7, 3), sine_dataset(80, 7, 4));
  EXPECT_EQ(serialize_checkpoint(r.checkpoint), serialize_checkpoint(ck));
}

TEST(FinetuneHeads, OnlyHeadsChange) {
  auto ck = small_checkpoint();
  auto cfg = quick_train(2);
  cfg.scope = TrainScope::head_only;
  auto r = finetune_heads(ck, cfg, sine_dataset(200, 7, 3), sine_dataset(80, 7, 4));
  auto a = r.checkpoint.params.named(), b = ck.params.named();
  bool head_changed = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].scope == Scope::non_head) {
      EXPECT_EQ(vec(a[i].value), vec(b[i].value)) << a[i].name;
    } else {
      head_changed |= vec(a[i].value) != vec(b[i].value);
    }
  }
  EXPECT_TRUE(head_changed);
  EXPECT_EQ(r.checkpoint.meta.sources, ck.meta.sources);
  EXPECT_EQ(r.checkpoint.meta.finetune_sources, (std::vector<std::string>{"sine"}));
}

TEST(FinetuneHeads, ScopeMismatchIsConfigError) {
  auto ck = small_checkpoint();
  EXPECT_THROW(finetune_heads(ck, quick_train(1), sine_dataset(200, 7, 3), sine_dataset(80, 7, 4)),
               ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir;
  auto ck = small_checkpoint();
  ck.meta.finetune_sources = {"x", "y"};
  ck.meta.best_val_loss = 0.1 + 0.2;
  save_checkpoint(ck, dir / "m.ckpt");
  auto back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.params.config, ck.params.config);
  EXPECT_EQ(back.meta, ck.meta);
  auto a = back.params.named(), b = ck.params.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].scope, b[i].scope);
    EXPECT_EQ(a[i].value.shape(), b[i].value.shape());
    EXPECT_EQ(vec(a[i].value), vec(b[i].value));
  }
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));
  EXPECT_EQ(checkpoint_fingerprint(back), checkpoint_fingerprint(ck));
}

TEST(Checkpoint, LayoutHeader) {
  auto bytes = serialize_checkpoint({init_model(tiny_config()), {}});
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GPHT");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
}

TEST(Checkpoint, TruncatedFileIsFormatError) {
  auto bytes = serialize_checkpoint({init_model(tiny_config()), {}});
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + cut);
    try {
      parse_checkpoint(part);
      FAIL() << "cut " << cut;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
    }
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(parse_checkpoint(extra), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad_magic), FormatError);
}

TEST(Checkpoint, UnknownVersionIsVersionError) {
  auto bytes = serialize_checkpoint({init_model(tiny_config()), {}});
  bytes[4] = 999 & 0xff;
  bytes[5] = 999 >> 8;
  EXPECT_THROW(parse_checkpoint(bytes), VersionError);
  TempDir dir;
  {
    std::ofstream out(dir / "v.ckpt", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(load_checkpoint(dir / "v.ckpt"), VersionError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
}

TEST(LossCsv, Header) {
  TempDir dir;
  write_loss_csv({{1, 0.5, 0.25}, {2, 0.125, 0.0625}}, dir / "loss.csv");
  std::ifstream in(dir / "loss.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "epoch,train_mse,val_mse");
  EXPECT_EQ(row, "1,0.5,0.25");
}

TEST(TrainConfig, EntriesRoundTripAndValidation) {
  TrainConfig t;
  t.epochs = 7;
  t.adam.learning_rate = 3e-4;
  t.scope = TrainScope::head_only;
  t.per_source_cap = 9;
  TrainConfig u;
  for (const auto& [k, v] : t.to_entries()) u.apply_entry(k, v);
  EXPECT_EQ(u.to_entries(), t.to_entries());
  EXPECT_THROW(u.apply_entry("scope", "most"), ConfigError);
  EXPECT_THROW(u.apply_entry("epochs", "-1"), ConfigError);
  u.batch_size = 0;
  EXPECT_THROW(u.validate(), ConfigError);
}

}  // namespace
}  // namespace gpht
