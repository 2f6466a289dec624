#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "wordlearn/autodiff.hpp"
#include "wordlearn/dropout.hpp"
#include "wordlearn/param_set.hpp"
#include "wordlearn/rng.hpp"

using namespace wordlearn;
using wordlearn::testing::central_difference;
using wordlearn::testing::relative_error;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (Real& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

}  // namespace

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_NE(x, c.next());
  }
}

TEST(Rng, PublishedXoshiroStream) {
  // xoshiro256** from state {1, 2, 3, 4}; values from the reference C code.
  Rng rng(0);
  rng.set_state({1, 2, 3, 4});
  EXPECT_EQ(rng.next(), 11520ULL);
  EXPECT_EQ(rng.next(), 0ULL);
  EXPECT_EQ(rng.next(), 1509978240ULL);
  EXPECT_EQ(rng.next(), 1215971899390074240ULL);
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
  Rng rng(7);
  auto s = rng.sample_without_replacement(50, 20);
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 20u);
  for (auto v : s) EXPECT_LT(v, 50u);
  EXPECT_THROW(rng.sample_without_replacement(3, 4), UsageError);
}

TEST(Grad, SumGivesOnes) {
  Tape tape;
  Rng rng(1);
  Tensor p = random_tensor({3, 4}, rng);
  Var v = tape.param("p", p);
  GradMap g = tape.gradients(ops::sum(v));
  for (Real x : g.at("p").values()) EXPECT_EQ(x, 1.0);
}

TEST(Grad, SquareAtThree) {
  Tape tape;
  Tensor p = Tensor::scalar(3.0);
  Var v = tape.param("p", p);
  GradMap g = tape.gradients(ops::mul(v, v));
  EXPECT_DOUBLE_EQ(g.at("p")[0], 6.0);
}

TEST(Grad, NonScalarLossRejected) {
  Tape tape;
  Tensor p(Shape{2}, 1.0);
  Var v = tape.param("p", p);
  EXPECT_THROW(tape.gradients(ops::scale(v, 2.0)), UsageError);
}

TEST(Grad, NanLossRejected) {
  Tape tape;
  Tensor p = Tensor::vector({std::nan(""), 1.0});
  Var v = tape.param("p", p);
  EXPECT_THROW(tape.gradients(ops::sum(v)), NumericalError);
}

TEST(Grad, NonFiniteGradientRejected) {
  // Forward value is finite but the backward product overflows.
  Tape tape;
  Tensor a = Tensor::scalar(1e300);
  Tensor c = Tensor::scalar(1e-310);
  Var va = tape.param("a", a);
  Var vc = tape.param("c", c);
  Var loss = ops::mul(va, ops::scale(vc, 1e10));
  EXPECT_THROW(tape.gradients(loss), NumericalError);
}

TEST(Grad, MaskedRowsAreExactlyZero) {
  Tape tape;
  Rng rng(3);
  Tensor table = random_tensor({5, 3}, rng);
  RowMask mask = RowMask::only(5, {2});
  Var t = tape.param("t", table, &mask);
  Var x = ops::gather_rows(t, {0, 2, 2, 4});
  GradMap g = tape.gradients(ops::sum(ops::mul(x, x)));
  const Tensor& gt = g.at("t");
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      if (r == 2) {
        EXPECT_DOUBLE_EQ(gt.at(r, c), 4 * table.at(r, c));
      } else {
        EXPECT_EQ(gt.at(r, c), 0.0);
      }
    }
}

// Random three-layer composition exercising every op, checked elementwise
// against central differences.
TEST(Grad, MatchesFiniteDifferencesOnRandomComposition) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    ParamSet ps;
    ps.add("emb", random_tensor({6, 4}, rng));
    ps.add("w1", random_tensor({8, 4}, rng));
    ps.add("b1", random_tensor({8}, rng));
    ps.add("w2", random_tensor({5, 4}, rng));
    ps.add("w3", random_tensor({4, 7}, rng));
    ps.add("b3", random_tensor({7}, rng));
    const std::vector<std::size_t> ids{1, 3, 3};
    const std::vector<std::size_t> targets{2, 6, 0, 4, 1, 5};
    const std::vector<Real> mask{1, 1, 0, 1, 1, 1};

    auto build = [&](Tape& tape) {
      Var emb = tape.param("emb", ps["emb"]);
      Var x = ops::gather_rows(emb, ids);  // 3x4
      Var a = ops::add_rowvec(ops::matmul_nt(x, tape.param("w1", ps["w1"])), tape.param("b1", ps["b1"]));  // 3x8
      Var left = ops::sigmoid(ops::slice_cols(a, 0, 4));
      Var right = ops::tanh(ops::slice_cols(a, 4, 4));
      Var h = ops::sub(ops::mul(left, right), ops::scale(x, 0.5));                  // 3x4
      Var w2 = tape.param("w2", ps["w2"]);
      Var hh = ops::stack_rows({h, ops::matmul(ops::matmul_nt(h, w2), w2)});       // 6x4
      Var logits = ops::add_rowvec(ops::matmul(hh, tape.param("w3", ps["w3"])), tape.param("b3", ps["b3"]));
      Var ce = ops::softmax_cross_entropy(logits, targets, mask);
      return ops::add(ce, ops::scale(ops::l2_norm({h, w2}), 0.1));
    };

    Tape tape;
    GradMap grads = tape.gradients(build(tape));
    auto loss_value = [&] {
      Tape t(false);
      return static_cast<double>(build(t).value().item());
    };
    std::size_t checked = 0;
    for (const auto& [name, g] : grads) {
      Tensor& p = ps[name];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double numeric = central_difference(loss_value, p[i], 1e-5);
        if (std::abs(g[i]) > 1e-8) {
          EXPECT_LT(relative_error(g[i], numeric), 1e-4) << name << "[" << i << "] seed " << seed;
          ++checked;
        } else {
          EXPECT_LT(std::abs(numeric), 1e-7);
        }
      }
    }
    EXPECT_GT(checked, 100u);
  }
}

TEST(ClipGlobalNorm, UnderThresholdUnchanged) {
  GradMap g{{"a", Tensor::vector({3, 4})}};
  GradMap out = clip_global_norm(g, 10);
  EXPECT_TRUE(bit_equal(out.at("a"), g.at("a")));
}

TEST(ClipGlobalNorm, ScalesToMaxNorm) {
  GradMap out = clip_global_norm({{"a", Tensor::vector({6, 8})}}, 5);
  EXPECT_DOUBLE_EQ(out.at("a")[0], 3.0);
  EXPECT_DOUBLE_EQ(out.at("a")[1], 4.0);
}

TEST(ClipGlobalNorm, TwoTensorsHalved) {
  // Combined norm: sqrt(12^2 + 16^2) = 20.
  GradMap g{{"a", Tensor::vector({12, 0})}, {"b", Tensor::vector({0, 16})}};
  GradMap out = clip_global_norm(g, 10);
  EXPECT_DOUBLE_EQ(out.at("a")[0], 6.0);
  EXPECT_DOUBLE_EQ(out.at("b")[1], 8.0);
  EXPECT_NEAR(global_norm(out), 10.0, 1e-12);
}

TEST(ClipGlobalNorm, ZeroGradientsPassThroughAndIdempotent) {
  GradMap zero{{"a", Tensor::vector({0, 0, 0})}};
  EXPECT_TRUE(bit_equal(clip_global_norm(zero, 1).at("a"), zero.at("a")));
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    GradMap g{{"a", random_tensor({7}, rng, 10)}, {"b", random_tensor({3, 2}, rng, 10)}};
    const Real max_norm = rng.uniform(0.1, 20);
    GradMap once = clip_global_norm(g, max_norm);
    GradMap twice = clip_global_norm(once, max_norm);
    for (const auto& [name, t] : once)
      for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(twice.at(name)[i], t[i], 1e-12 * std::abs(t[i]) + 1e-300);
  }
  EXPECT_THROW(clip_global_norm(zero, 0), UsageError);
}

TEST(SgdStep, OneArithmeticStep) {
  ParamSet ps;
  ps.add("w", Tensor::scalar(1.0));
  sgd_step(ps, {{"w", Tensor::scalar(0.5)}}, 0.01);
  EXPECT_DOUBLE_EQ(ps["w"][0], 0.995);
}

TEST(SgdStep, ZeroGradientBitIdentical) {
  Rng rng(5);
  ParamSet ps;
  ps.add("w", random_tensor({4, 3}, rng));
  const Tensor before = ps["w"];
  sgd_step(ps, {{"w", Tensor(Shape{4, 3}, 0.0)}}, 0.1);
  EXPECT_TRUE(bit_equal(ps["w"], before));
}

TEST(SgdStep, ShapeMismatchRejected) {
  ParamSet ps;
  ps.add("w", Tensor(Shape{2, 2}));
  EXPECT_THROW(sgd_step(ps, {{"w", Tensor(Shape{4})}}, 0.1), UsageError);
}

TEST(SgdStep, OnlyMaskedRowChangesOverManySteps) {
  Rng rng(11);
  ParamSet ps;
  ps.add("emb", random_tensor({10, 4}, rng));
  ps.set_mask("emb", RowMask::only(10, {7}));
  const Tensor before = ps["emb"];
  for (int step = 0; step < 100; ++step) sgd_step(ps, {{"emb", random_tensor({10, 4}, rng)}}, 0.05);
  for (std::size_t r = 0; r < 10; ++r) {
    const bool same = std::memcmp(ps["emb"].row(r).data(), before.row(r).data(), 4 * sizeof(Real)) == 0;
    EXPECT_EQ(same, r != 7) << "row " << r;
  }
}

TEST(SgdStep, FreezeInvarianceUnderRandomMasks) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet ps;
    const std::size_t rows = 1 + rng.below(12);
    ps.add("a", random_tensor({rows, 3}, rng));
    ps.add("b", random_tensor({rows}, rng));
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < rows; ++r)
      if (rng.bernoulli(0.3)) keep.push_back(r);
    ps.set_mask("a", RowMask::only(rows, keep));
    ps.set_mask("b", RowMask::all_except(rows, keep));
    const ParamSet before = ps;
    const int steps = 1 + static_cast<int>(rng.below(30));
    for (int s = 0; s < steps; ++s)
      sgd_step(ps, {{"a", random_tensor({rows, 3}, rng)}, {"b", random_tensor({rows}, rng)}}, 0.1);
    for (std::size_t r = 0; r < rows; ++r) {
      const bool in = std::find(keep.begin(), keep.end(), r) != keep.end();
      if (!in) {
        EXPECT_EQ(std::memcmp(ps["a"].row(r).data(), before["a"].row(r).data(), 3 * sizeof(Real)), 0);
      } else {
        EXPECT_EQ(std::memcmp(ps["b"].data() + r, before["b"].data() + r, sizeof(Real)), 0);
      }
    }
  }
}

TEST(Dropout, KeepOneIsIdentity) {
  Rng rng(1);
  Tensor x = random_tensor({5, 5}, rng);
  EXPECT_TRUE(bit_equal(dropout(x, 1.0, rng, true), x));
  EXPECT_TRUE(bit_equal(dropout(x, 1.0, rng, false), x));
}

TEST(Dropout, InferenceIsIdentity) {
  Rng rng(2);
  Tensor x = random_tensor({5, 5}, rng);
  EXPECT_TRUE(bit_equal(dropout(x, 0.35, rng, false), x));
}

TEST(Dropout, InvalidKeepRejected) {
  Rng rng(3);
  Tensor x(Shape{2});
  EXPECT_THROW(dropout(x, 0.0, rng, true), UsageError);
  EXPECT_THROW(dropout(x, -0.5, rng, true), UsageError);
}

TEST(Dropout, InvertedScalingPreservesMean) {
  Rng rng(4);
  Tensor x(Shape{1000000}, 1.0);
  Tensor y = dropout(x, 0.35, rng, true);
  double sum = 0;
  for (Real v : y.values()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.35) < 1e-12);
    sum += v;
  }
  EXPECT_NEAR(sum / 1e6, 1.0, 0.01);
}

TEST(Determinism, SameSeedSameOps) {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    ParamSet ps;
    ps.add("w", random_tensor({6, 6}, rng));
    for (int s = 0; s < 10; ++s) {
      Tape tape;
      Var w = tape.param("w", ps["w"]);
      Var x = ops::dropout(ops::tanh(w), 0.5, rng, true);
      sgd_step(ps, tape.gradients(ops::sum(ops::mul(x, x))), 0.1);
    }
    return ps["w"];
  };
  EXPECT_TRUE(bit_equal(run(77), run(77)));
  EXPECT_FALSE(bit_equal(run(77), run(78)));
}
