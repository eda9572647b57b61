#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "gpht/adam.hpp"
#include "gpht/error.hpp"
#include "gpht/numerics.hpp"
#include "gradcheck.hpp"

namespace gpht {
namespace {

using testing::gradcheck;
using testing::random_array;
using testing::weighted_sum;

std::vector<double> vec(const Array& a) { return {a.values().begin(), a.values().end()}; }

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  std::mt19937_64 rng(1);
  Array eye = Array::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Array m = random_array({3, 3}, rng, -2, 2, false);
  EXPECT_EQ(vec(matmul(eye, m)), vec(m));
}

TEST(Matmul, HandExample) {
  Array a = Array::from({2, 2}, {1, 2, 3, 4});
  Array b = Array::from({2, 1}, {1, 1});
  Array c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(vec(c), (std::vector<double>{3, 7}));
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  Array a = random_array({4, 5}, rng);
  Array b = random_array({5, 2}, rng);
  EXPECT_LT(gradcheck([&] { return sum(matmul(a, b)); }, {a, b}), 1e-6);
}

TEST(Matmul, BatchedAndSharedRightOperand) {
  std::mt19937_64 rng(3);
  Array a = random_array({2, 3, 4, 5}, rng);
  Array b = random_array({2, 3, 5, 2}, rng);
  Array w = random_array({5, 3}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(matmul(a, b)); }, {a, b}), 1e-4);
  EXPECT_LT(gradcheck([&] { return weighted_sum(matmul(a, w)); }, {a, w}), 1e-4);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Array a = Array::zeros({2, 3});
  Array b = Array::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4, 2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(matmul(Array::zeros({2, 2, 3}), Array::zeros({3, 2, 1})), DimensionError);
}

TEST(Softmax, Examples) {
  EXPECT_EQ(vec(softmax_lastdim(Array::from({2}, {0, 0}))), (std::vector<double>{0.5, 0.5}));
  auto s = vec(softmax_lastdim(Array::from({3}, {1, 2, 3})));
  EXPECT_NEAR(s[0], 0.09003, 5e-6);
  EXPECT_NEAR(s[1], 0.24473, 5e-6);
  EXPECT_NEAR(s[2], 0.66524, 5e-6);
  auto big = vec(softmax_lastdim(Array::from({2}, {1000, 0})));
  EXPECT_DOUBLE_EQ(big[0], 1.0);
  EXPECT_GE(big[1], 0.0);
  EXPECT_LT(big[1], 1e-300);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(4);
  Array a = random_array({6, 9}, rng, -30, 30, false);
  auto s = vec(softmax_lastdim(a));
  for (std::size_t r = 0; r < 6; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 9; ++c) {
      const double v = s[r * 9 + c];
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Softmax, Gradient) {
  std::mt19937_64 rng(5);
  Array a = random_array({3, 7}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(softmax_lastdim(a)); }, {a}), 1e-4);
}

TEST(Softmax, MaskedRowsStayFinite) {
  Array a = Array::from({2, 2}, {0.3, 1.0, -1.0, 2.0}, true);
  Array y = softmax_lastdim(causal_mask(a));
  auto v = vec(y);
  EXPECT_DOUBLE_EQ(v[0], 1.0);
  EXPECT_DOUBLE_EQ(v[1], 0.0);
  for (double x : v) EXPECT_TRUE(std::isfinite(x));
  EXPECT_LT(gradcheck([&] { return weighted_sum(softmax_lastdim(causal_mask(a))); }, {a}), 1e-4);
  // The masked entry receives no gradient.
  a.zero_grad();
  backward(weighted_sum(softmax_lastdim(causal_mask(a))));
  EXPECT_EQ(a.grad()[1], 0.0);
}

TEST(LayerNorm, Examples) {
  Array gain = Array::from({2}, {1, 1});
  Array bias = Array::zeros({2});
  auto c = vec(layer_norm(Array::from({2}, {4, 4}), gain, bias, 1e-5));
  EXPECT_EQ(c, (std::vector<double>{0, 0}));
  auto two = vec(layer_norm(Array::from({2}, {1, 3}), gain, bias, 1e-14));
  EXPECT_NEAR(two[0], -1.0, 1e-12);
  EXPECT_NEAR(two[1], 1.0, 1e-12);
}

TEST(LayerNorm, Gradient) {
  std::mt19937_64 rng(6);
  Array a = random_array({2, 8}, rng);
  Array g = random_array({8}, rng);
  Array b = random_array({8}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(layer_norm(a, g, b, 1e-5)); }, {a, g, b}), 1e-4);
}

TEST(MaxPool, Examples) {
  Array t = Array::from({1, 4}, {1, 5, 2, 2}, true);
  Array p = max_pool_within_token(t, 2);
  EXPECT_EQ(vec(p), (std::vector<double>{5, 2}));
  backward(sum(p));
  EXPECT_EQ(std::vector<double>(t.grad().begin(), t.grad().end()), (std::vector<double>{0, 1, 1, 0}));

  Array x = Array::zeros({3, 48});
  EXPECT_EQ(max_pool_within_token(x, 8).shape(), (Shape{3, 6}));
  std::mt19937_64 rng(7);
  Array r = random_array({2, 3, 12}, rng, -2, 2, false);
  EXPECT_EQ(vec(max_pool_within_token(r, 1)), vec(r));
}

TEST(MaxPool, KernelMustDivideTokenLength) {
  EXPECT_THROW(max_pool_within_token(Array::zeros({2, 10}), 3), ConfigError);
  EXPECT_THROW(max_pool_within_token(Array::zeros({2, 10}), 0), ConfigError);
}

TEST(MaxPool, Gradient) {
  std::mt19937_64 rng(8);
  Array a = random_array({2, 3, 12}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(max_pool_within_token(a, 4)); }, {a}), 1e-4);
}

TEST(Upsample, Examples) {
  EXPECT_EQ(vec(linear_interp_upsample(Array::from({2}, {0, 3}), 4)), (std::vector<double>{0, 1, 2, 3}));
  EXPECT_EQ(vec(linear_interp_upsample(Array::from({1}, {2}), 5)), (std::vector<double>(5, 2.0)));
  std::mt19937_64 rng(9);
  Array v = random_array({3, 6}, rng, -2, 2, false);
  EXPECT_EQ(vec(linear_interp_upsample(v, 6)), vec(v));
  EXPECT_THROW(linear_interp_upsample(v, 5), ConfigError);
}

TEST(Upsample, PreservesBoundsAndGradient) {
  std::mt19937_64 rng(10);
  Array v = random_array({4, 6}, rng);
  auto up = vec(linear_interp_upsample(v, 48));
  for (std::size_t r = 0; r < 4; ++r) {
    auto row = v.values().subspan(r * 6, 6);
    const double lo = *std::min_element(row.begin(), row.end());
    const double hi = *std::max_element(row.begin(), row.end());
    for (std::size_t j = 0; j < 48; ++j) {
      EXPECT_GE(up[r * 48 + j], lo - 1e-15);
      EXPECT_LE(up[r * 48 + j], hi + 1e-15);
    }
    EXPECT_EQ(up[r * 48], row.front());
    EXPECT_EQ(up[r * 48 + 47], row.back());
  }
  EXPECT_LT(gradcheck([&] { return weighted_sum(linear_interp_upsample(v, 13)); }, {v}), 1e-4);
}

TEST(Mse, Examples) {
  Array p = Array::from({2}, {1, 2});
  std::vector<double> same{1, 2};
  EXPECT_EQ(mse(p, same).item(), 0.0);
  std::vector<double> zeros{0, 0};
  EXPECT_DOUBLE_EQ(mse(p, zeros).item(), 2.5);
  std::vector<double> wrong{1, 2, 3};
  EXPECT_THROW(mse(p, wrong), DimensionError);
}

TEST(Mse, Gradient) {
  std::mt19937_64 rng(11);
  for (Shape s : {Shape{5}, Shape{3, 4}, Shape{2, 3, 2}}) {
    Array p = random_array(s, rng);
    std::vector<double> t(p.size());
    std::uniform_real_distribution<double> u(-2, 2);
    for (auto& x : t) x = u(rng);
    EXPECT_LT(gradcheck([&] { return mse(p, t); }, {p}), 1e-6);
  }
}

TEST(Backward, AnalyticExamples) {
  Array x = Array::scalar(3.0, true);
  backward(mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);

  Array a = Array::scalar(2.0, true);
  Array b = Array::scalar(5.0, true);
  backward(mul(a, b));
  EXPECT_DOUBLE_EQ(a.grad()[0], 5.0);
  EXPECT_DOUBLE_EQ(b.grad()[0], 2.0);
}

TEST(Backward, AccumulatesUntilReset) {
  Array x = Array::scalar(3.0, true);
  backward(mul(x, x));
  backward(mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, RejectsNonScalarAndReleasedGraph) {
  Array x = Array::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), UsageError);
  Array loss = sum(mul(x, x));
  backward(loss);
  EXPECT_THROW(backward(loss), UsageError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Array x = Array::scalar(1.5, true);
  NoGradGuard guard;
  Array y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Primitives, ElementwiseGradients) {
  std::mt19937_64 rng(12);
  Array a = random_array({3, 4}, rng);
  Array b = random_array({3, 4}, rng);
  Array bias = random_array({4}, rng);
  Array table = random_array({5, 4}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(add(a, b)); }, {a, b}), 1e-4);
  EXPECT_LT(gradcheck([&] { return weighted_sum(sub(a, b)); }, {a, b}), 1e-4);
  EXPECT_LT(gradcheck([&] { return weighted_sum(mul(a, b)); }, {a, b}), 1e-4);
  EXPECT_LT(gradcheck([&] { return weighted_sum(scale(a, -1.7)); }, {a}), 1e-4);
  EXPECT_LT(gradcheck([&] { return weighted_sum(add_bias(a, bias)); }, {a, bias}), 1e-4);
  EXPECT_LT(gradcheck([&] { return weighted_sum(add_leading_rows(a, table)); }, {a, table}), 1e-4);
  EXPECT_LT(gradcheck([&] { return weighted_sum(gelu(a)); }, {a}), 1e-4);
  EXPECT_LT(gradcheck([&] { return weighted_sum(reshape(a, {2, 6})); }, {a}), 1e-4);
  EXPECT_LT(gradcheck([&] { return weighted_sum(transpose_last2(a)); }, {a}), 1e-4);
  const std::vector<double> scales{1.5, -0.5, 2.0};
  const std::vector<double> shifts{0.1, 0.2, -3.0};
  EXPECT_LT(gradcheck([&] { return weighted_sum(affine_by_batch(a, scales, shifts)); }, {a}), 1e-4);
}

TEST(Primitives, HeadAndTokenGradients) {
  std::mt19937_64 rng(13);
  Array h = random_array({2, 3, 8}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(merge_heads(split_heads(h, 2))); }, {h}), 1e-4);
  EXPECT_LT(gradcheck([&] { return weighted_sum(split_heads(h, 4)); }, {h}), 1e-4);
  EXPECT_LT(gradcheck([&] { return weighted_sum(shift_tokens_right(h)); }, {h}), 1e-4);
  EXPECT_EQ(vec(merge_heads(split_heads(h, 4))), vec(h));
}

TEST(Primitives, ShiftTokensRight) {
  Array t = Array::from({3, 2}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(vec(shift_tokens_right(t)), (std::vector<double>{0, 0, 1, 2, 3, 4}));
}

TEST(Primitives, GeluValues) {
  auto g = vec(gelu(Array::from({3}, {-1, 0, 1})));
  EXPECT_NEAR(g[0], -0.15865525393145707, 1e-14);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_NEAR(g[2], 0.8413447460685429, 1e-14);
}

TEST(Primitives, DropoutZeroRateIsIdentity) {
  std::mt19937_64 rng(14);
  Array a = random_array({4, 4}, rng, -2, 2, false);
  EXPECT_EQ(vec(dropout(a, 0.0, rng)), vec(a));
  auto d = vec(dropout(a, 0.5, rng));
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_TRUE(d[i] == 0.0 || d[i] == 2.0 * a.values()[i]);
  }
}

TEST(Adam, ZeroGradientLeavesParamUnchanged) {
  Array p = Array::from({3}, {1, -2, 3}, true);
  backward(scale(sum(p), 0.0));
  AdamState st(p.size(), {});
  adam_step(p, st);
  EXPECT_EQ(vec(p), (std::vector<double>{1, -2, 3}));
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepClosedForm) {
  Array p = Array::scalar(0.0, true);
  backward(p);
  AdamOptions opts;
  opts.learning_rate = 0.1;
  AdamState st(1, opts);
  adam_step(p, st);
  // m_hat = 1, v_hat = 1 after bias correction.
  EXPECT_NEAR(p.item(), -0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, MissingGradientIsUsageError) {
  Array p = Array::scalar(1.0, true);
  AdamState st(1, {});
  EXPECT_THROW(adam_step(p, st), UsageError);
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    std::mt19937_64 rng(15);
    Array p = random_array({6}, rng);
    AdamState st(p.size(), {});
    for (int i = 0; i < 10; ++i) {
      p.zero_grad();
      backward(sum(mul(p, mul(p, p))));
      adam_step(p, st);
    }
    return vec(p);
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace gpht
