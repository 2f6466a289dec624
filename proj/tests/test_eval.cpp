#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "t_table.hpp"
#include "wordlearn/fewshot.hpp"

using namespace wordlearn;
using wordlearn::testing::kTTable;
using wordlearn::testing::tiny_world;

namespace {

RunResult result(const std::string& word, const std::string& strategy, std::size_t k, double pct_new) {
  RunResult r;
  r.word = word;
  r.strategy = strategy;
  r.init = "centroid";
  r.mode = "both";
  r.k = k;
  r.pct_new = pct_new;
  r.pct_full = pct_new / 100;
  r.ppl_new_before = 50;
  r.ppl_new_after = 50 * (1 + pct_new / 100);
  r.lp_target = -2;
  r.lp_insentence = -5;
  r.lp_irrelevant = -7;
  return r;
}

}  // namespace

TEST(StudentT, MatchesFrozenTable) {
  for (const auto& c : kTTable) EXPECT_NEAR(stats::student_t_two_sided(c.t, c.dof), c.p, 5e-5) << c.t << " " << c.dof;
}

TEST(StudentT, CdfSymmetricAndLimits) {
  EXPECT_DOUBLE_EQ(stats::student_t_cdf(0, 5), 0.5);
  EXPECT_NEAR(stats::student_t_cdf(1.3, 7) + stats::student_t_cdf(-1.3, 7), 1.0, 1e-14);
  EXPECT_EQ(stats::student_t_two_sided(INFINITY, 3), 0.0);
  EXPECT_THROW(stats::student_t_two_sided(1, 0), UsageError);
}

TEST(IncompleteBeta, MatchesScipy) {
  struct B {
    double a, b, x, v;
  };
  for (const B& c : {B{0.5, 0.5, 0.3, 0.369010119565545}, B{2, 3, 0.4, 0.5248}, B{5, 1.5, 0.9, 0.776172134316216},
                     B{10, 10, 0.5, 0.5}, B{1, 1, 0.25, 0.25}, B{0.7, 4.2, 0.05, 0.337242644712925}})
    EXPECT_NEAR(stats::incomplete_beta(c.a, c.b, c.x), c.v, 1e-10);
  EXPECT_THROW(stats::incomplete_beta(1, 1, 1.5), UsageError);
  EXPECT_THROW(stats::incomplete_beta(0, 1, 0.5), UsageError);
}

TEST(PairedT, MatchesScipyAndEdgeCases) {
  const std::vector<double> x{1.2, 3.4, 2.2, 5.0, 4.1, 3.3}, y{1.0, 3.9, 2.9, 5.8, 4.0, 4.4};
  auto r = stats::paired_t_test(x, y);
  EXPECT_NEAR(r.t, -2.213594362117866, 1e-12);
  EXPECT_NEAR(r.p, 0.07775208077043493, 5e-5);
  EXPECT_EQ(r.dof, 5);
  auto same = stats::paired_t_test(x, x);
  EXPECT_EQ(same.t, 0);
  EXPECT_EQ(same.p, 1);
  const std::vector<double> a{1, 2, 3, 4}, b{1.5, 2.5, 3.5, 4.5};
  EXPECT_THROW(stats::paired_t_test(a, b), NumericalError);
  EXPECT_THROW(stats::paired_t_test(std::vector<double>{1}, std::vector<double>{2}), UsageError);
}

TEST(Correlation, PearsonAndSpearmanWithTies) {
  const std::vector<double> a{1, 2, 3, 4, 5, 6}, b{2, 1, 4, 3, 7, 5};
  EXPECT_NEAR(stats::pearson(a, b), 0.7917946548886297, 1e-12);
  EXPECT_NEAR(stats::spearman(std::vector<double>{1, 2, 2, 3, 5}, std::vector<double>{2, 1, 4, 3, 3}),
              0.36842105263157904, 1e-12);
  EXPECT_NEAR(stats::pearson(a, a), 1.0, 1e-15);
  EXPECT_THROW(stats::pearson(a, std::vector<double>(6, 1.0)), NumericalError);
  // Spearman is invariant to monotone transforms.
  std::vector<double> e;
  for (double v : b) e.push_back(std::exp(v));
  EXPECT_NEAR(stats::spearman(a, e), stats::spearman(a, b), 1e-15);
}

TEST(PctChange, SignAndErrors) {
  EXPECT_DOUBLE_EQ(pct_change(200, 150), -25);
  EXPECT_DOUBLE_EQ(pct_change(10, 12), 20);
  EXPECT_THROW(pct_change(0, 1), UsageError);
}

TEST(Similarity, DotProductsWithExclusions) {
  const auto& w = tiny_world();
  const std::size_t word = w.ck.vocab.index(w.holdout.words[0].word);
  auto ex = default_exclusions(w.ck.vocab, word);
  auto m = similarity_map(w.ck.params, word, ex);
  EXPECT_EQ(m.indices.size(), w.ck.vocab.size() - ex.size());
  const auto& sw = w.ck.params[names::softmax_w];
  const std::size_t h = w.ck.config.hidden_size;
  for (std::size_t i = 0; i < m.indices.size(); ++i) {
    const std::size_t j = m.indices[i];
    EXPECT_NE(j, word);
    EXPECT_GE(j, 2 + w.ck.vocab.reserved().size());
    double d = 0;
    for (std::size_t c = 0; c < h; ++c) d += sw[word * h + c] * sw[j * h + c];
    EXPECT_NEAR(m.values[i], d, 1e-14);
  }
  EXPECT_NEAR(map_correlation(m, m), 1.0, 1e-12);
  auto smaller = similarity_map(w.ck.params, word, {m.indices.front()});
  EXPECT_THROW(map_correlation(m, smaller), UsageError);
}

TEST(LogProbBreakdown, UniformModelGivesFlatLogProbs) {
  const auto& w = tiny_world();
  Checkpoint ck = w.ck;
  ck.params[names::softmax_w].fill(0);
  ck.params[names::softmax_b].fill(0);
  const auto& hs = w.holdout.words[0];
  auto lp = logprob_breakdown(ck, hs.word, hs.test, w.irrelevant);
  const double flat = -std::log(static_cast<double>(ck.vocab.size()));
  EXPECT_NEAR(lp.target, flat, 1e-12);
  EXPECT_NEAR(lp.insentence, flat, 1e-12);
  EXPECT_NEAR(lp.irrelevant, flat, 1e-12);
}

TEST(LogProbBreakdown, MatchesScalarOracle) {
  const auto& w = tiny_world();
  const auto& hs = w.holdout.words[1];
  const std::size_t word = w.ck.vocab.index(hs.word);
  auto lp = logprob_breakdown(w.ck, hs.word, hs.test, w.irrelevant);
  wordlearn::testing::ScalarLm oracle(w.ck.params, w.ck.config.vocab_size, w.ck.config.hidden_size,
                                     w.ck.config.num_layers);
  double st = 0, so = 0, sr = 0;
  std::size_t nt = 0, no = 0, nr = 0;
  auto scan = [&](const std::vector<Sentence>& sents, bool relevant) {
    for (const auto& ids : w.ck.vocab.encode(sents)) {
      oracle.reset();
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        const double l = oracle.log_prob(oracle.step(ids[i]), word);
        if (!relevant) {
          sr += l;
          ++nr;
        } else if (ids[i + 1] == word) {
          st += l;
          ++nt;
        } else {
          so += l;
          ++no;
        }
      }
    }
  };
  scan(hs.test, true);
  scan(w.irrelevant, false);
  EXPECT_NEAR(lp.target, st / static_cast<double>(nt), 1e-10);
  EXPECT_NEAR(lp.insentence, so / static_cast<double>(no), 1e-10);
  EXPECT_NEAR(lp.irrelevant, sr / static_cast<double>(nr), 1e-10);
}

TEST(LogProbBreakdown, InvalidSetsRejected) {
  const auto& w = tiny_world();
  const auto& hs = w.holdout.words[0];
  EXPECT_THROW(logprob_breakdown(w.ck, hs.word, w.irrelevant, w.irrelevant), DataError);
  EXPECT_THROW(logprob_breakdown(w.ck, hs.word, hs.test, hs.test), DataError);
  EXPECT_THROW(default_irrelevant_set(w.irrelevant, 11), DataError);
}

TEST(WordEvaluator, CachedMatchesDirectAfterEdits) {
  const auto& w = tiny_world();
  const auto& hs = w.holdout.words[2];
  const std::size_t word = w.ck.vocab.index(hs.word);
  const auto test = w.ck.vocab.encode(hs.test);
  WordEvaluator ev(w.ck.params, w.ck.config, word, test, w.ck.vocab.encode(w.corpus.test),
                   w.ck.vocab.encode(w.irrelevant));
  ParamSet p = w.ck.params;
  Rng rng(4);
  NewWordParams np = NewWordParams::zeros(w.ck.config.hidden_size);
  for (Real& v : np.input_row) v = rng.uniform(-1, 1);
  for (Real& v : np.output_row) v = rng.uniform(-1, 1);
  np.output_bias = 0.7;
  for (TrainMode mode : {TrainMode::output_only, TrainMode::both}) {
    assign_trainable(p, word, np, mode);
    const WordMetrics m = ev.evaluate(p);
    EXPECT_NEAR(m.ppl_new, perplexity(p, w.ck.config, test, EvalMode::sentence), 1e-9 * m.ppl_new);
    EXPECT_NEAR(m.ppl_full, perplexity(p, w.ck.config, w.ck.vocab.encode(w.corpus.test), EvalMode::stream),
                1e-9 * m.ppl_full);
    const auto lp = logprob_breakdown(p, w.ck.config, word, test, w.ck.vocab.encode(w.irrelevant));
    EXPECT_NEAR(m.lp.target, lp.target, 1e-10);
    EXPECT_NEAR(m.lp.insentence, lp.insentence, 1e-10);
    EXPECT_NEAR(m.lp.irrelevant, lp.irrelevant, 1e-10);
  }
}

TEST(ResultsCsv, RoundTripPreservesEveryColumn) {
  RunResult r = result("w\"ord", "optimize", 3, -12.345678901234567);
  r.ppl_full_before = 1.0 / 3.0;
  r.ppl_full_after = std::numeric_limits<double>::quiet_NaN();
  r.seed = 0xFFFFFFFFFFFFFFFFULL;
  const std::string text = results_csv({r, result("b", "centroid", 10, 4)}, "abc");
  EXPECT_EQ(text.rfind("# plan=abc\n", 0), 0u);
  std::istringstream in(text);
  auto back = parse_results_csv(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].word, r.word);
  EXPECT_EQ(back[0].pct_new, r.pct_new);
  EXPECT_EQ(back[0].ppl_full_before, r.ppl_full_before);
  EXPECT_TRUE(std::isnan(back[0].ppl_full_after));
  EXPECT_EQ(back[0].seed, r.seed);
  EXPECT_EQ(results_csv(back, "abc"), text);
}

TEST(AggregateReport, CurvesScatterAndTTest) {
  std::vector<RunResult> rs;
  const std::vector<double> opt{-40, -55, -30}, cen{10, 20, 5};
  const std::vector<std::string> words{"a", "b", "c"};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k : {1, 10}) {
      rs.push_back(result(words[i], "optimize", k, opt[i] + 1));
      rs.push_back(result(words[i], "optimize", k, opt[i] - 1));
      rs.push_back(result(words[i], "centroid", k, cen[i]));
    }
  }
  Report rep = aggregate_report(rs);
  EXPECT_EQ(rep.curves.size(), 12u);
  ASSERT_EQ(rep.scatter.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(rep.scatter[i].k, 10u);
    EXPECT_DOUBLE_EQ(rep.scatter[i].optimize, opt[i]);
    EXPECT_DOUBLE_EQ(rep.scatter[i].centroid, cen[i]);
  }
  ASSERT_TRUE(rep.strategy_test);
  auto expect = stats::paired_t_test(opt, cen);
  EXPECT_DOUBLE_EQ(rep.strategy_test->t, expect.t);
  EXPECT_LT(rep.strategy_test->t, 0);
  EXPECT_THROW(aggregate_report({}), DataError);
}
