#include <gtest/gtest.h>

#include <random>

#include "fedfeed/dataset.hpp"
#include "fedfeed/training.hpp"
#include "oracles.hpp"

using namespace fedfeed;

namespace {

std::vector<TrainSample> mixed_batch(std::mt19937_64& rng, int d, int C, int n_pos, int n_neg) {
  std::vector<TrainSample> out;
  for (int i = 0; i < n_pos; ++i) out.push_back({oracle::random_vector(rng, d, 1.0), i % C, SampleKind::positive});
  for (int i = 0; i < n_neg; ++i) out.push_back({oracle::random_vector(rng, d, 1.0), (i + 1) % C, SampleKind::complementary});
  return out;
}

std::vector<LabeledPosterior> posteriors(const ModelParams& p, const std::vector<TrainSample>& batch, SampleKind kind) {
  std::vector<LabeledPosterior> out;
  for (const auto& s : batch)
    if (s.kind == kind) out.push_back({forward(p, s.features).probs, s.label});
  return out;
}

}  // namespace

TEST(BatchLoss, ScheduledMatchesPosteriorLevelFormula) {
  std::mt19937_64 rng(4);
  const int d = 3, C = 4;
  ModelParams p{Architecture::linear(), d, C, oracle::random_vector(rng, parameter_count(Architecture::linear(), d, C), 0.8)};
  const auto q = oracle::random_transition(rng, C);
  const auto batch = mixed_batch(rng, d, C, 5, 3);
  for (int t : {0, 1, 3, 9}) {
    const auto lg = loss_and_gradient(p, batch, LossSpec::scheduled(0.7, q, t));
    const auto pos = posteriors(p, batch, SampleKind::positive), neg = posteriors(p, batch, SampleKind::complementary);
    EXPECT_NEAR(lg.loss.total, scheduled_loss(pos, neg, q, 0.7, t), 1e-12);
    EXPECT_EQ(lg.loss.n_pos, 5u);
    EXPECT_EQ(lg.loss.n_neg, 3u);
  }
}

TEST(BatchLoss, PlainKindsAreMeans) {
  std::mt19937_64 rng(5);
  const int d = 2, C = 3;
  ModelParams p{Architecture::linear(), d, C, oracle::random_vector(rng, parameter_count(Architecture::linear(), d, C), 0.8)};
  const auto batch = mixed_batch(rng, d, C, 4, 0);
  double cce_sum = 0.0, robust_sum = 0.0;
  for (const auto& s : batch) {
    const auto f = forward(p, s.features).probs;
    cce_sum += cce(f, s.label);
    robust_sum += robust_loss(f, s.label, -4.0);
  }
  EXPECT_NEAR(batch_loss(p, batch, LossSpec::cce_only()), cce_sum / 4.0, 1e-12);
  EXPECT_NEAR(batch_loss(p, batch, LossSpec::robust(-4.0)), robust_sum / 4.0, 1e-12);
}

TEST(BatchLoss, RobustScheduledUsesComplementaryPosterior) {
  std::mt19937_64 rng(6);
  const int d = 2, C = 3;
  ModelParams p{Architecture::linear(), d, C, oracle::random_vector(rng, parameter_count(Architecture::linear(), d, C), 0.8)};
  const auto q = oracle::random_transition(rng, C);
  const auto batch = mixed_batch(rng, d, C, 2, 2);
  double pos = 0.0, neg = 0.0;
  for (const auto& s : batch) {
    const auto f = forward(p, s.features).probs;
    if (s.kind == SampleKind::positive)
      pos += robust_loss(f, s.label, -4.0) / 2.0;
    else
      neg += robust_loss(complementary_posterior(q, f), s.label, -4.0) / 2.0;
  }
  const double alpha = 1.0 - 0.8 * 0.8;
  EXPECT_NEAR(batch_loss(p, batch, LossSpec::robust_scheduled(0.8, q, -4.0, 2)), (1 - alpha) * pos + alpha * neg, 1e-12);
}

TEST(BatchLoss, KindsRejectMismatchedSamples) {
  std::mt19937_64 rng(7);
  const auto p = init_params(2, 2, Architecture::linear(), InitSpec::zeros(), 0);
  const auto comp = mixed_batch(rng, 2, 2, 0, 1), pos = mixed_batch(rng, 2, 2, 1, 0);
  EXPECT_THROW(batch_loss(p, comp, LossSpec::cce_only()), ContractError);
  EXPECT_THROW(batch_loss(p, comp, LossSpec::robust()), ContractError);
  EXPECT_THROW(batch_loss(p, pos, LossSpec::complementary_only(TransitionMatrix::uniform_off_diagonal(2))), ContractError);
}

TEST(BatchLoss, ScheduledZeroAlphaIgnoresComplementaryGradient) {
  std::mt19937_64 rng(8);
  const int d = 3, C = 3;
  ModelParams p{Architecture::linear(), d, C, oracle::random_vector(rng, parameter_count(Architecture::linear(), d, C), 0.5)};
  const auto q = TransitionMatrix::uniform_off_diagonal(C);
  auto batch = mixed_batch(rng, d, C, 3, 4);
  std::vector<TrainSample> pos_only(batch.begin(), batch.begin() + 3);
  EXPECT_EQ(gradient(p, batch, LossSpec::scheduled(0.8, q, 0)), gradient(p, pos_only, LossSpec::cce_only()));
}

TEST(TrainLocal, EpochScheduleAdvancesPerEpoch) {
  const auto ds = generate_synthetic(30, 2, 3, 2.0, 2);
  std::vector<TrainSample> data = gold_samples(ds);
  for (std::size_t i = 0; i < data.size(); i += 3) data[i].kind = SampleKind::complementary;
  const auto p0 = init_params(2, 3, Architecture::linear(), InitSpec::gaussian(0.1), 4);
  auto spec = LossSpec::scheduled(0.8, TransitionMatrix::uniform_off_diagonal(3), 2);
  spec.t_per_epoch = true;
  const TrainOptions opt{3, 4, 0.1};

  Rng rng = make_rng(1, Stream::local_train);
  const auto got = train_local(p0, data, opt, spec, rng);

  // Reference loop: t = round * epochs + epoch, same shuffles.
  Rng ref_rng = make_rng(1, Stream::local_train);
  ModelParams ref = p0;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int e = 0; e < opt.epochs; ++e) {
    LossSpec s = spec;
    s.t = 2 * opt.epochs + e;
    s.t_per_epoch = false;
    shuffle(order, ref_rng);
    for (std::size_t start = 0; start < order.size(); start += 4) {
      std::vector<TrainSample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + 4); ++i) batch.push_back(data[order[i]]);
      const auto g = gradient(ref, batch, s);
      for (std::size_t k = 0; k < g.size(); ++k) ref.theta[k] -= opt.lr * g[k];
    }
  }
  EXPECT_EQ(got.params, ref);
}

TEST(Accuracy, CountsArgmaxHits) {
  Dataset ds{{}, 2, 1};
  ds.examples = {{0, {1.0}, 1}, {1, {-1.0}, 0}, {2, {2.0}, 0}, {3, {-3.0}, 0}};
  ModelParams p{Architecture::linear(), 1, 2, {-1.0, 1.0, 0.0, 0.0}};
  EXPECT_DOUBLE_EQ(accuracy(p, ds), 0.75);
}
