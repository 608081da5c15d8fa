#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "tes/metrics.hpp"
#include "tes/rng.hpp"

using namespace tes;

namespace {

// Expand a [truth][pred] confusion matrix into label lists.
void expand(const std::vector<std::vector<int>>& cm, std::vector<int>& preds, std::vector<int>& truth) {
  for (std::size_t t = 0; t < cm.size(); ++t)
    for (std::size_t p = 0; p < cm[t].size(); ++p)
      for (int k = 0; k < cm[t][p]; ++k) {
        truth.push_back(static_cast<int>(t));
        preds.push_back(static_cast<int>(p));
      }
}

}  // namespace

TEST(Openness, Endpoints) {
  EXPECT_EQ(openness(10, 10, 10), 0.0);
  EXPECT_NEAR(openness(10, 57, 10), 0.4536, 5e-4);
  EXPECT_NEAR(openness(10, 12, 10), 0.0465, 5e-4);
}

TEST(Openness, Preconditions) {
  EXPECT_THROW(openness(0, 2, 2), ValidationError);
  EXPECT_THROW(openness(3, 0, 0), ValidationError);
  EXPECT_THROW(openness(5, 3, 5), ValidationError);
}

TEST(Openness, Monotone) {
  for (int ct = 1; ct <= 8; ++ct)
    for (int ce = ct; ce <= 30; ++ce)
      for (int cr = ct; cr <= 12; ++cr) {
        const double o = openness(ct, ce, cr);
        EXPECT_GE(o, 0.0);
        EXPECT_LT(o, 1.0);
        EXPECT_GE(openness(ct, ce + 1, cr), o);
        EXPECT_GE(openness(ct, ce, cr + 1), o);
        if (ct > 1) {
          EXPECT_GE(openness(ct - 1, ce, cr), o);
        }
      }
}

TEST(MacroF1, HandComputedConfusion) {
  std::vector<int> preds, truth;
  expand({{8, 0, 2}, {1, 9, 0}, {1, 1, 9}}, preds, truth);
  const auto rep = macro_f1(preds, truth, 3);
  EXPECT_DOUBLE_EQ(rep.per_class[0].f1, 0.8);
  EXPECT_DOUBLE_EQ(rep.per_class[1].f1, 0.9);
  EXPECT_DOUBLE_EQ(rep.per_class[2].f1, 18.0 / 22.0);
  EXPECT_NEAR(rep.macro_f1, 0.8394, 5e-5);
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t row = 0;
    for (auto v : rep.confusion[c]) row += v;
    EXPECT_EQ(row, rep.per_class[c].support);
  }
}

TEST(MacroF1, PerfectAndAllUnknown) {
  const std::vector<int> truth{0, 1, 2, 2, 1, 0};
  EXPECT_EQ(macro_f1(truth, truth, 3).macro_f1, 1.0);
  const std::vector<int> known{0, 1, 0, 1};
  const std::vector<int> all_u(4, 2);
  const auto rep = macro_f1(all_u, known, 3);
  EXPECT_EQ(rep.macro_f1, 0.0);
  EXPECT_FALSE(rep.per_class[2].absent);
}

TEST(MacroF1, AbsentClassScoresZeroAndIsFlagged) {
  const std::vector<int> v{0, 1, 1, 0};
  const auto rep = macro_f1(v, v, 3);
  EXPECT_TRUE(rep.per_class[2].absent);
  EXPECT_EQ(rep.per_class[2].f1, 0.0);
  EXPECT_DOUBLE_EQ(rep.macro_f1, 2.0 / 3.0);
}

TEST(MacroF1, Errors) {
  EXPECT_THROW(macro_f1(std::vector<int>{0, 1}, std::vector<int>{0}, 2), ValidationError);
  EXPECT_THROW(macro_f1(std::vector<int>{0, 3}, std::vector<int>{0, 1}, 3), ValidationError);
  EXPECT_THROW(macro_f1(std::vector<int>{-1}, std::vector<int>{0}, 3), ValidationError);
}

TEST(MacroF1, PermutationAndRelabelInvariance) {
  Rng rng(11);
  std::uniform_int_distribution<int> lab(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial * 3);
    std::vector<int> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = lab(rng);
      t[i] = lab(rng);
    }
    const double base = macro_f1(p, t, 5).macro_f1;
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> ps(n), ts(n);
    for (std::size_t i = 0; i < n; ++i) {
      ps[i] = p[order[i]];
      ts[i] = t[order[i]];
    }
    EXPECT_DOUBLE_EQ(macro_f1(ps, ts, 5).macro_f1, base);

    // Relabel knowns 0..3 consistently; U (4) stays put.
    std::vector<int> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    auto relabel = [&](int v) { return v == 4 ? 4 : perm[static_cast<std::size_t>(v)]; };
    for (std::size_t i = 0; i < n; ++i) {
      ps[i] = relabel(p[i]);
      ts[i] = relabel(t[i]);
    }
    EXPECT_NEAR(macro_f1(ps, ts, 5).macro_f1, base, 1e-12);
  }
}

TEST(Auroc, WorkedExamples) {
  EXPECT_EQ(auroc(std::vector<double>{0.9, 0.8, 0.4, 0.2}, {true, true, false, false}), 1.0);
  EXPECT_EQ(auroc(std::vector<double>{0.6, 0.3, 0.5, 0.1}, {true, true, false, false}), 0.75);
  EXPECT_EQ(auroc(std::vector<double>(7, 0.3), {true, false, true, false, true, true, false}), 0.5);
  EXPECT_EQ(auroc(std::vector<double>{0.1, 0.9}, {true, false}), 0.0);
}

TEST(Auroc, Errors) {
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, {true, true}), ValidationError);
  EXPECT_THROW(auroc(std::vector<double>{0.1}, {true, false}), ValidationError);
  EXPECT_THROW(auroc(std::vector<double>{0.1, std::nan("")}, {true, false}), ValidationError);
}

TEST(Auroc, MatchesPairCountingOracle) {
  Rng rng(12);
  std::uniform_int_distribution<int> size(2, 500), coarse(0, 9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::bernoulli_distribution known(0.5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<std::size_t>(size(rng));
    std::vector<double> s(n);
    std::vector<bool> k(n);
    // Half the trials draw from a coarse grid so ties are frequent.
    for (std::size_t i = 0; i < n; ++i) s[i] = trial % 2 ? coarse(rng) / 10.0 : u(rng);
    for (std::size_t i = 0; i < n; ++i) k[i] = known(rng);
    k[0] = true;
    k[1] = false;
    EXPECT_EQ(auroc(s, k), oracle::auroc_pairs(s, k)) << "trial " << trial;
  }
}
