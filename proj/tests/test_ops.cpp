#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "ternarylm/gradcheck.hpp"
#include "ternarylm/model.hpp"
#include "ternarylm/ops.hpp"
#include "ternarylm/random.hpp"

using namespace ternarylm;
using T64 = Tensor<double>;

namespace {

constexpr int kTrials = 100;
constexpr double kTol = 1e-4;

T64 rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return T64(std::move(shape), std::move(v), grad);
}

Shape rand_shape(Rng& rng) { return {1 + rng.index(4), 1 + rng.index(5)}; }

template <class Build>
void check_unary(std::uint64_t seed, Build build, double lo = -2.0, double hi = 2.0) {
  Rng rng(seed);
  for (int trial = 0; trial < kTrials; ++trial) {
    auto x = rand_tensor(rng, rand_shape(rng), lo, hi);
    Rng proj_rng(rng.next_u64());
    auto weights = rand_tensor(proj_rng, x.shape(), -1, 1, false);
    const double err = finite_diff_check<double>([&] { return sum(mul(build(x), weights)); }, x);
    ASSERT_LT(err, kTol) << "trial " << trial;
  }
}

}  // namespace

TEST(OpsGrad, Silu) { check_unary(1, [](const T64& x) { return silu(x); }); }
TEST(OpsGrad, Gelu) { check_unary(2, [](const T64& x) { return gelu(x); }); }
TEST(OpsGrad, Tanh) { check_unary(3, [](const T64& x) { return ternarylm::tanh(x); }); }
TEST(OpsGrad, Exp) { check_unary(4, [](const T64& x) { return ternarylm::exp(x); }); }
TEST(OpsGrad, Log) { check_unary(5, [](const T64& x) { return ternarylm::log(x); }, 0.2, 3.0); }
TEST(OpsGrad, Scale) { check_unary(6, [](const T64& x) { return scale(x, -1.7); }); }
TEST(OpsGrad, Mean) {
  Rng rng(7);
  for (int trial = 0; trial < kTrials; ++trial) {
    auto x = rand_tensor(rng, rand_shape(rng));
    ASSERT_LT(finite_diff_check<double>([&] { return mean(mul(x, x)); }, x), kTol) << "trial " << trial;
  }
}

TEST(OpsGrad, BinaryWithBroadcasts) {
  Rng rng(8);
  for (int trial = 0; trial < kTrials; ++trial) {
    const Shape s = rand_shape(rng);
    auto x = rand_tensor(rng, s);
    const int mode = trial % 3;
    auto y = mode == 0 ? rand_tensor(rng, s) : mode == 1 ? rand_tensor(rng, {1}) : rand_tensor(rng, {s.back()});
    auto w = rand_tensor(rng, s, -1, 1, false);
    auto f = [&] { return sum(mul(add(mul(x, y), sub(x, y)), w)); };
    const auto rep = finite_diff_check<double>(f, {{"x", x}, {"y", y}});
    ASSERT_LT(rep.max_rel_error(), kTol) << "trial " << trial << " mode " << mode;
  }
}

TEST(OpsGrad, Matmul) {
  Rng rng(9);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t m = 1 + rng.index(4), k = 1 + rng.index(5), n = 1 + rng.index(4);
    auto a = rand_tensor(rng, {m, k});
    auto b = rand_tensor(rng, {k, n});
    auto w = rand_tensor(rng, {m, n}, -1, 1, false);
    const auto rep = finite_diff_check<double>([&] { return sum(mul(matmul(a, b), w)); }, {{"a", a}, {"b", b}});
    ASSERT_LT(rep.max_rel_error(), kTol) << "trial " << trial;
  }
}

TEST(OpsGrad, Linear) {
  Rng rng(10);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t n = 1 + rng.index(4), in = 1 + rng.index(5), out = 1 + rng.index(4);
    auto x = rand_tensor(rng, {n, in});
    auto wt = rand_tensor(rng, {out, in});
    auto w = rand_tensor(rng, {n, out}, -1, 1, false);
    const auto rep = finite_diff_check<double>([&] { return sum(mul(linear(x, wt), w)); }, {{"x", x}, {"w", wt}});
    ASSERT_LT(rep.max_rel_error(), kTol) << "trial " << trial;
  }
}

TEST(OpsGrad, SoftmaxPlainAndMasked) {
  Rng rng(11);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t n = 1 + rng.index(5);
    auto x = rand_tensor(rng, {n, n}, -3, 3);
    auto w = rand_tensor(rng, {n, n}, -1, 1, false);
    std::optional<SoftmaxMask> mask;
    if (trial % 2) mask = SoftmaxMask::causal(n);
    const double err = finite_diff_check<double>([&] { return sum(mul(softmax_lastdim(x, mask), w)); }, x);
    ASSERT_LT(err, kTol) << "trial " << trial;
  }
}

TEST(OpsGrad, Embedding) {
  Rng rng(12);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t vocab = 2 + rng.index(5), dim = 1 + rng.index(4), n = 1 + rng.index(6);
    auto table = rand_tensor(rng, {vocab, dim});
    std::vector<std::int32_t> ids(n);
    for (auto& id : ids) id = static_cast<std::int32_t>(rng.index(vocab));
    auto w = rand_tensor(rng, {n, dim}, -1, 1, false);
    const double err = finite_diff_check<double>([&] { return sum(mul(embedding(table, ids), w)); }, table);
    ASSERT_LT(err, kTol) << "trial " << trial;
  }
}

TEST(OpsGrad, RmsNorm) {
  Rng rng(13);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t rows = 1 + rng.index(3), d = 2 + rng.index(5);
    auto x = rand_tensor(rng, {rows, d});
    auto g = rand_tensor(rng, {d}, 0.5, 1.5);
    auto w = rand_tensor(rng, {rows, d}, -1, 1, false);
    const auto rep =
        finite_diff_check<double>([&] { return sum(mul(rmsnorm(x, g, 1e-6), w)); }, {{"x", x}, {"gain", g}});
    ASSERT_LT(rep.max_rel_error(), kTol) << "trial " << trial;
  }
}

TEST(OpsGrad, LayerNorm) {
  Rng rng(14);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t rows = 1 + rng.index(3), d = 2 + rng.index(5);
    auto x = rand_tensor(rng, {rows, d});
    auto g = rand_tensor(rng, {d}, 0.5, 1.5);
    auto b = rand_tensor(rng, {d});
    auto w = rand_tensor(rng, {rows, d}, -1, 1, false);
    const auto rep = finite_diff_check<double>([&] { return sum(mul(layernorm(x, g, b, 1e-6), w)); },
                                               {{"x", x}, {"gain", g}, {"bias", b}});
    ASSERT_LT(rep.max_rel_error(), kTol) << "trial " << trial;
  }
}

TEST(OpsGrad, SmoothedCrossEntropy) {
  Rng rng(15);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t rows = 1 + rng.index(4), vocab = 2 + rng.index(6);
    auto z = rand_tensor(rng, {rows, vocab}, -3, 3);
    std::vector<std::int32_t> t(rows);
    for (auto& id : t) id = static_cast<std::int32_t>(rng.index(vocab));
    const double eps = (trial % 2) ? 0.1 : 0.0;
    const double err = finite_diff_check<double>([&] { return smoothed_cross_entropy(z, t, eps); }, z);
    ASSERT_LT(err, kTol) << "trial " << trial;
  }
}

TEST(OpsGrad, RopeHeads) {
  Rng rng(16);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t heads = 1 + rng.index(2), hd = 2 * (1 + rng.index(2)), seq = 1 + rng.index(4),
                      batch = 1 + rng.index(2);
    auto x = rand_tensor(rng, {batch * seq, heads * hd});
    auto w = rand_tensor(rng, {batch * seq, heads * hd}, -1, 1, false);
    const double err = finite_diff_check<double>([&] { return sum(mul(rope_heads(x, seq, heads, 100.0), w)); }, x);
    ASSERT_LT(err, kTol) << "trial " << trial;
  }
}

TEST(OpsGrad, CausalAttention) {
  Rng rng(17);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t heads = 1 + rng.index(2), hd = 1 + rng.index(3), seq = 1 + rng.index(4),
                      batch = 1 + rng.index(2);
    const Shape s{batch * seq, heads * hd};
    auto q = rand_tensor(rng, s);
    auto k = rand_tensor(rng, s);
    auto v = rand_tensor(rng, s);
    auto w = rand_tensor(rng, s, -1, 1, false);
    const auto rep = finite_diff_check<double>(
        [&] { return sum(mul(causal_attention(q, k, v, batch, seq, heads), w)); }, {{"q", q}, {"k", k}, {"v", v}});
    ASSERT_LT(rep.max_rel_error(), kTol) << "trial " << trial;
  }
}

TEST(Ops, BroadcastMismatchThrows) {
  auto x = T64::zeros({2, 3});
  auto y = T64::zeros({2});
  EXPECT_THROW(add(x, y), DimensionError);
  EXPECT_THROW(matmul(x, x), DimensionError);
  EXPECT_THROW(linear(x, T64::zeros({4, 2})), DimensionError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(20);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t rows = 1 + rng.index(4), cols = 1 + rng.index(8);
    auto x = rand_tensor(rng, {rows, cols}, -50, 50, false);
    auto shifted = add(x, T64::scalar(rng.uniform() * 100 - 50));
    const auto p = softmax_lastdim(x);
    const auto q = softmax_lastdim(shifted);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double v = p.data()[r * cols + c];
        ASSERT_GE(v, 0.0);
        ASSERT_NEAR(v, q.data()[r * cols + c], 1e-12);
        s += v;
      }
      ASSERT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, CausalMaskZeroesFuture) {
  auto x = T64::full({4, 4}, 0.0);
  const auto p = softmax_lastdim(x, SoftmaxMask::causal(4));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(p.data()[i * 4 + j], j <= i ? 1.0 / (i + 1) : 0.0);
  EXPECT_THROW(softmax_lastdim(T64::zeros({3, 4}), SoftmaxMask::causal(4)), DimensionError);
}

TEST(Rope, PreservesNorm) {
  Rng rng(21);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t hd = 2 * (1 + rng.index(8)), seq = 1 + rng.index(10);
    auto x = rand_tensor(rng, {seq, hd}, -1, 1, false);
    std::vector<std::size_t> pos(seq);
    for (auto& p : pos) p = rng.index(1000);
    const auto y = rope_apply(x, pos, 10000.0);
    for (std::size_t r = 0; r < seq; ++r) {
      double a = 0, b = 0;
      for (std::size_t c = 0; c < hd; ++c) {
        a += x.data()[r * hd + c] * x.data()[r * hd + c];
        b += y.data()[r * hd + c] * y.data()[r * hd + c];
      }
      ASSERT_NEAR(a, b, 1e-12);
    }
  }
}

TEST(Rope, ScoresDependOnRelativeOffset) {
  Rng rng(22);
  const std::size_t hd = 16;
  for (int trial = 0; trial < kTrials; ++trial) {
    auto q = rand_tensor(rng, {1, hd}, -1, 1, false);
    auto k = rand_tensor(rng, {1, hd}, -1, 1, false);
    const std::size_t m = rng.index(200), n = rng.index(200), shift = rng.index(300);
    auto score = [&](std::size_t pm, std::size_t pn) {
      const std::size_t a[] = {pm}, b[] = {pn};
      const auto rq = rope_apply(q, a, 10000.0);
      const auto rk = rope_apply(k, b, 10000.0);
      double s = 0;
      for (std::size_t c = 0; c < hd; ++c) s += rq.data()[c] * rk.data()[c];
      return s;
    };
    ASSERT_NEAR(score(m, n), score(m + shift, n + shift), 1e-9);
  }
}

TEST(Rope, PositionZeroIsIdentityAndRotationMatchesAngle) {
  const std::size_t hd = 4;
  T64 x({1, hd}, {1.0, 0.0, 1.0, 0.0}, false);
  const std::size_t p0[] = {0};
  const auto y0 = rope_apply(x, p0, 10000.0);
  for (std::size_t c = 0; c < hd; ++c) EXPECT_DOUBLE_EQ(y0.data()[c], x.data()[c]);
  const std::size_t p3[] = {3};
  const auto y = rope_apply(x, p3, 10000.0);
  // pair i rotates by pos * theta^(-2i/hd)
  EXPECT_NEAR(y.data()[0], std::cos(3.0), 1e-12);
  EXPECT_NEAR(y.data()[1], std::sin(3.0), 1e-12);
  const double f1 = std::pow(10000.0, -0.5);
  EXPECT_NEAR(y.data()[2], std::cos(3.0 * f1), 1e-12);
  EXPECT_NEAR(y.data()[3], std::sin(3.0 * f1), 1e-12);
}

TEST(Attention, FirstPositionCopiesValueAndUniformKeysAverage) {
  const std::size_t seq = 3, d = 2;
  T64 q = T64::zeros({seq, d});
  T64 k = T64::zeros({seq, d});
  T64 v({seq, d}, {1, 2, 3, 4, 5, 6});
  const auto o = causal_attention(q, k, v, 1, seq, 1);
  // zero scores: each row averages the visible values
  EXPECT_DOUBLE_EQ(o.data()[0], 1.0);
  EXPECT_DOUBLE_EQ(o.data()[1], 2.0);
  EXPECT_DOUBLE_EQ(o.data()[2], 2.0);
  EXPECT_DOUBLE_EQ(o.data()[3], 3.0);
  EXPECT_NEAR(o.data()[4], 3.0, 1e-15);
  EXPECT_NEAR(o.data()[5], 4.0, 1e-15);
}

TEST(Attention, FutureTokensDoNotLeak) {
  Rng rng(23);
  const std::size_t seq = 6, heads = 2, hd = 4;
  auto q = rand_tensor(rng, {seq, heads * hd}, -1, 1, false);
  auto k = rand_tensor(rng, {seq, heads * hd}, -1, 1, false);
  auto v = rand_tensor(rng, {seq, heads * hd}, -1, 1, false);
  const auto base = causal_attention(q, k, v, 1, seq, heads);
  for (std::size_t c = 0; c < heads * hd; ++c) {
    k.data()[(seq - 1) * heads * hd + c] += 5.0;
    v.data()[(seq - 1) * heads * hd + c] -= 3.0;
  }
  const auto changed = causal_attention(q, k, v, 1, seq, heads);
  for (std::size_t i = 0; i < (seq - 1) * heads * hd; ++i) EXPECT_EQ(base.data()[i], changed.data()[i]);
}

TEST(CrossEntropy, MatchesDirectSummation) {
  Rng rng(24);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t rows = 1 + rng.index(5), vocab = 2 + rng.index(10);
    auto z = rand_tensor(rng, {rows, vocab}, -4, 4, false);
    std::vector<std::int32_t> t(rows);
    for (auto& id : t) id = static_cast<std::int32_t>(rng.index(vocab));
    const double eps = rng.uniform() * 0.5;
    double expect = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < vocab; ++j) s += std::exp(z.data()[r * vocab + j]);
      for (std::size_t j = 0; j < vocab; ++j) {
        const double q = static_cast<std::int32_t>(j) == t[r] ? 1 - eps : eps / static_cast<double>(vocab - 1);
        expect -= q * std::log(std::exp(z.data()[r * vocab + j]) / s);
      }
    }
    expect /= static_cast<double>(rows);
    ASSERT_NEAR(smoothed_cross_entropy(z, t, eps).item(), expect, 1e-10);
  }
}

TEST(CrossEntropy, SmoothedLossBoundedBelowByTargetEntropy) {
  Rng rng(25);
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t vocab = 2 + rng.index(10);
    auto z = rand_tensor(rng, {1, vocab}, -6, 6, false);
    const std::int32_t t[] = {static_cast<std::int32_t>(rng.index(vocab))};
    const double eps = 0.1;
    const double off = eps / static_cast<double>(vocab - 1);
    const double entropy = -(1 - eps) * std::log(1 - eps) - eps * std::log(off);
    ASSERT_GE(smoothed_cross_entropy(z, t, eps).item(), entropy - 1e-12);
  }
  // Equality at the optimum: logits equal to log of the smoothed target.
  const std::size_t vocab = 5;
  const double eps = 0.1, off = eps / 4;
  std::vector<double> opt(vocab, std::log(off));
  opt[2] = std::log(1 - eps);
  T64 z({1, vocab}, opt);
  const std::int32_t t[] = {2};
  EXPECT_NEAR(smoothed_cross_entropy(z, t, eps).item(), -(1 - eps) * std::log(1 - eps) - eps * std::log(off),
              1e-12);
}

TEST(CrossEntropy, RejectsBadTargetsAndSmoothing) {
  auto z = T64::zeros({2, 3});
  const std::int32_t bad[] = {0, 3};
  EXPECT_THROW(smoothed_cross_entropy(z, bad, 0.1), DimensionError);
  const std::int32_t short_t[] = {0};
  EXPECT_THROW(smoothed_cross_entropy(z, short_t, 0.1), DimensionError);
  const std::int32_t ok[] = {0, 1};
  EXPECT_THROW(smoothed_cross_entropy(z, ok, 1.0), DimensionError);
}

TEST(Gelu, ExactErfForm) {
  for (double x : {-3.0, -1.0, -0.1, 0.0, 0.5, 2.0}) {
    T64 t({1}, {x});
    EXPECT_NEAR(gelu(t).item(), 0.5 * x * (1 + std::erf(x / std::numbers::sqrt2)), 1e-15);
  }
}

TEST(GradCheck, ReportsNamedEntriesAndDetectsWrongGradient) {
  Rng rng(26);
  auto x = rand_tensor(rng, {3, 2});
  const auto rep = finite_diff_check<double>([&] { return sum(mul(x, x)); }, {{"x", x}});
  ASSERT_EQ(rep.entries.size(), 1u);
  EXPECT_EQ(rep.entries[0].name, "x");
  EXPECT_LT(rep.max_rel_error(), 1e-7);

  // A primitive with a deliberately wrong backward must be flagged.
  auto wrong = [&] {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v = v * v;
    auto y = make_result<double>(x.shape(), std::move(out), {x}, "bad_square",
                                 [](TensorImpl<double>& o, std::span<const Tensor<double>::ImplPtr> in) {
                                   auto& a = *in[0];
                                   for (std::size_t i = 0; i < o.grad.size(); ++i) a.grad[i] += o.grad[i] * a.data[i];
                                 });
    return sum(y);
  };
  EXPECT_GT(finite_diff_check<double>(wrong, x), 0.1);
  auto no_grad = T64::zeros({2});
  EXPECT_THROW(finite_diff_check<double>([&] { return sum(no_grad); }, no_grad), GraphError);
}
