#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "fedfeed/losses.hpp"
#include "oracles.hpp"

using namespace fedfeed;

namespace {

const TransitionMatrix kSwap(2, {0.0, 1.0, 1.0, 0.0});

TransitionMatrix three_by_three() { return TransitionMatrix(3, {0.0, 0.6, 0.4, 0.5, 0.0, 0.5, 0.3, 0.7, 0.0}); }

}  // namespace

TEST(Cce, Values) {
  EXPECT_EQ(cce(std::vector<double>{0.0, 1.0, 0.0}, 1), 0.0);
  EXPECT_NEAR(cce(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 2), std::log(4.0), 1e-15);
  EXPECT_NEAR(cce(std::vector<double>{0.8, 0.2}, 0), 0.22314, 1e-5);
  EXPECT_NEAR(cce(std::vector<double>{1.0, 0.0}, 1), -std::log(1e-12), 1e-9);
  EXPECT_THROW(cce(std::vector<double>{0.5, 0.5}, 2), std::out_of_range);
}

TEST(ComplementaryPosterior, Examples) {
  const auto swapped = complementary_posterior(kSwap, std::vector<double>{0.7, 0.3});
  EXPECT_DOUBLE_EQ(swapped[0], 0.3);
  EXPECT_DOUBLE_EQ(swapped[1], 0.7);

  const auto q = three_by_three();
  const auto r = complementary_posterior(q, std::vector<double>{0.2, 0.5, 0.3});
  EXPECT_NEAR(r[0], 0.34, 1e-15);
  EXPECT_NEAR(r[1], 0.33, 1e-15);
  EXPECT_NEAR(r[2], 0.33, 1e-15);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> onehot(3, 0.0);
    onehot[c] = 1.0;
    const auto row = complementary_posterior(q, onehot);
    for (int d = 0; d < 3; ++d) EXPECT_EQ(row[d], q(c, d));
  }
}

TEST(ComplementaryPosterior, PreservesNormalisation) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 200; ++i) {
    const int C = 2 + i % 6;
    const auto r = complementary_posterior(oracle::random_transition(rng, C), oracle::random_posterior(rng, C));
    double s = 0.0;
    for (double v : r) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(ComplementaryLoss, Examples) {
  EXPECT_NEAR(complementary_loss(std::vector<double>{0.7, 0.3}, 0, kSwap), 1.20397, 1e-5);
  EXPECT_NEAR(complementary_loss(std::vector<double>{0.2, 0.5, 0.3}, 0, three_by_three()), 1.07881, 1e-5);
  // Complementary posterior one-hot at the complementary label.
  EXPECT_EQ(complementary_loss(std::vector<double>{0.0, 1.0}, 0, kSwap), 0.0);
}

TEST(ComplementaryLoss, BinaryEquivalenceWithCce) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const auto f = oracle::random_posterior(rng, 2, 0.0);
    EXPECT_NEAR(complementary_loss(f, i % 2, kSwap), cce(f, 1 - i % 2), 1e-12);
  }
}

TEST(Schedule, Alpha) {
  EXPECT_EQ(schedule_alpha(0.8, 0), 0.0);
  EXPECT_NEAR(schedule_alpha(0.8, 3), 0.488, 1e-15);
  EXPECT_GT(schedule_alpha(0.8, 200), 1.0 - 1e-15);
  for (double p : {0.3, 0.5, 0.9})
    for (int t = 0; t < 25; ++t) EXPECT_LT(schedule_alpha(p, t), schedule_alpha(p, t + 1));
}

TEST(ScheduledLoss, Examples) {
  const TransitionMatrix q = kSwap;
  const std::vector<LabeledPosterior> pos{{{0.8, 0.2}, 0}};
  const std::vector<LabeledPosterior> neg{{{0.7, 0.3}, 0}};
  EXPECT_NEAR(scheduled_loss(pos, neg, q, 0.8, 3), 0.70178, 1e-5);
  EXPECT_NEAR(scheduled_loss(pos, neg, q, 0.8, 0), cce(pos[0].probs, 0), 1e-15);
  EXPECT_NEAR(scheduled_loss(pos, {}, q, 0.8, 3), 0.512 * cce(pos[0].probs, 0), 1e-15);
  EXPECT_NEAR(scheduled_loss({}, neg, q, 0.8, 3), 0.488 * 1.2039728043259361, 1e-12);
  EXPECT_THROW(scheduled_loss({}, {}, q, 0.8, 3), UndefinedLossError);
}

TEST(Nce, Values) {
  EXPECT_NEAR(nce(std::vector<double>{0.2, 0.2, 0.2, 0.2, 0.2}, 3), 0.2, 1e-15);
  EXPECT_NEAR(nce(std::vector<double>{0.8, 0.2}, 0), 0.12177, 1e-5);
  EXPECT_LT(nce(std::vector<double>{1.0 - 1e-9, 1e-9}, 0), 1e-8);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 500; ++i) {
    const int C = 2 + i % 5;
    const double v = nce(oracle::random_posterior(rng, C, 0.0), i % C);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Rce, Values) {
  EXPECT_EQ(rce(std::vector<double>{0.0, 1.0}, 1, -4.0), 0.0);
  EXPECT_DOUBLE_EQ(rce(std::vector<double>{0.5, 0.5}, 0, -4.0), 2.0);
  EXPECT_NEAR(rce(std::vector<double>{0.9, 0.05, 0.05}, 0, -4.0), 0.4, 1e-15);
}

TEST(RobustLoss, Values) {
  EXPECT_EQ(robust_loss(std::vector<double>{1.0, 0.0}, 0, -4.0), 0.0);
  EXPECT_NEAR(robust_loss(std::vector<double>{0.8, 0.2}, 0, -4.0), 1.72177, 1e-5);
  EXPECT_NEAR(robust_loss(std::vector<double>{0.5, 0.5}, 1, -4.0), 4.5, 1e-15);
}

TEST(Losses, FiniteAndNonnegative) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 500; ++i) {
    const int C = 2 + i % 5;
    auto f = oracle::random_posterior(rng, C, 0.0);
    if (i % 7 == 0) std::fill(f.begin(), f.end(), 0.0), f[0] = 1.0;
    const auto q = oracle::random_transition(rng, C);
    const int y = (i * 3) % C;
    for (double v : {cce(f, y), complementary_loss(f, y, q), nce(f, y), rce(f, y, -4.0), robust_loss(f, y, -4.0)}) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
    }
  }
}

TEST(ProbabilityGradients, MatchFiniteDifferencesOnPosterior) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 100; ++i) {
    const int C = 2 + i % 4;
    const auto f = oracle::random_posterior(rng, C, 0.05);
    const auto q = oracle::random_transition(rng, C);
    const int y = i % C;
    using Fn = std::function<double(const std::vector<double>&)>;
    const std::vector<std::pair<LossValueGrad, Fn>> cases{
        {cce_grad(f, y), [&](const std::vector<double>& v) { return -std::log(v[y]); }},
        {robust_grad(f, y, -4.0),
         [&](const std::vector<double>& v) {
           double denom = 0.0;
           for (double x : v) denom -= std::log(x);
           return -std::log(v[y]) / denom + 8.0 * (1.0 - v[y]);
         }},
        {complementary_grad(f, y, q),
         [&](const std::vector<double>& v) {
           double r = 0.0;
           for (int c = 0; c < C; ++c) r += q(c, y) * v[c];
           return -std::log(r);
         }},
    };
    for (const auto& [analytic, fn] : cases)
      EXPECT_LT(oracle::max_relative_error(analytic.d_probs, oracle::numeric_gradient(fn, f)), 1e-6);
  }
}

TEST(EstimateTransition, HandComputedRow) {
  std::vector<std::pair<int, std::vector<double>>> scored{
      {0, {0.2, 0.5, 0.3}}, {0, {0.1, 0.3, 0.6}}, {1, {0.1, 0.8, 0.1}}};
  const auto q = estimate_transition_from_posteriors(3, scored);
  EXPECT_EQ(q(0, 0), 0.0);
  EXPECT_NEAR(q(0, 1), 0.47917, 1e-5);
  EXPECT_NEAR(q(0, 2), 0.52083, 1e-5);
  // Classes 1 and 2 have no misclassified examples: uniform fallback.
  EXPECT_DOUBLE_EQ(q(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(q(2, 1), 0.5);
  EXPECT_TRUE(q.is_valid());
}

TEST(EstimateTransition, BinaryIsSwapAndPerfectModelIsUniform) {
  std::vector<std::pair<int, std::vector<double>>> errs{{0, {0.3, 0.7}}, {1, {0.9, 0.1}}, {1, {0.2, 0.8}}};
  const auto q = estimate_transition_from_posteriors(2, errs);
  EXPECT_EQ(q.data(), kSwap.data());
  std::vector<std::pair<int, std::vector<double>>> right{{0, {0.9, 0.05, 0.05}}, {2, {0.1, 0.1, 0.8}}};
  const auto u = estimate_transition_from_posteriors(3, right);
  EXPECT_EQ(u.data(), TransitionMatrix::uniform_off_diagonal(3).data());
}

TEST(TransitionMatrix, JsonRoundTripAndValidation) {
  const auto q = three_by_three();
  EXPECT_EQ(transition_from_json(to_json(q)).data(), q.data());
  EXPECT_FALSE(TransitionMatrix(2, {0.5, 0.5, 1.0, 0.0}).is_valid());
  EXPECT_FALSE(TransitionMatrix(2, {0.0, 0.9, 1.0, 0.0}).is_valid());
  EXPECT_THROW(TransitionMatrix(2, {0.0, 1.0, 1.0}), ShapeError);
}

TEST(LossSpec, Validation) {
  EXPECT_NO_THROW(validate(LossSpec::scheduled(0.8, kSwap)));
  EXPECT_THROW(validate(LossSpec::scheduled(1.0, kSwap)), ConfigError);
  EXPECT_THROW(validate(LossSpec::robust(0.5)), ConfigError);
  EXPECT_THROW(validate(LossSpec::complementary_only(TransitionMatrix(2, {0.5, 0.5, 1.0, 0.0}))), ConfigError);
}
