#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedfeed/dataset.hpp"
#include "fedfeed/model.hpp"
#include "fedfeed/training.hpp"
#include "oracles.hpp"

using namespace fedfeed;

namespace {

ModelParams linear_with_logits(std::vector<double> bias) {
  const int C = static_cast<int>(bias.size());
  ModelParams p = init_params(1, C, Architecture::linear(), InitSpec::zeros(), 0);
  for (int c = 0; c < C; ++c) p.theta[static_cast<std::size_t>(C + c)] = bias[static_cast<std::size_t>(c)];
  return p;
}

}  // namespace

TEST(InitParams, ZerosGiveUniformPosterior) {
  for (auto arch : {Architecture::linear(), Architecture::mlp(5)}) {
    const auto p = init_params(3, 4, arch, InitSpec::zeros(), 1);
    EXPECT_EQ(p.theta.size(), parameter_count(arch, 3, 4));
    for (double v : forward(p, std::vector<double>{0.3, -2.0, 7.0}).probs) EXPECT_DOUBLE_EQ(v, 0.25);
  }
}

TEST(InitParams, GaussianDeterministicPerSeed) {
  const auto a = init_params(4, 3, Architecture::mlp(6), InitSpec::gaussian(0.01), 5);
  EXPECT_EQ(a, init_params(4, 3, Architecture::mlp(6), InitSpec::gaussian(0.01), 5));
  EXPECT_NE(a.theta, init_params(4, 3, Architecture::mlp(6), InitSpec::gaussian(0.01), 6).theta);
  double ss = 0.0;
  for (double w : a.theta) ss += w * w;
  EXPECT_LT(std::sqrt(ss / a.theta.size()), 0.02);
}

TEST(Forward, ClosedFormSoftmax) {
  const auto p = forward(linear_with_logits({0.0, std::log(3.0)}), std::vector<double>{0.0}).probs;
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Forward, LargeLogitsDoNotOverflow) {
  const auto p = forward(linear_with_logits({1000.0, 0.0}), std::vector<double>{0.0}).probs;
  EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_LT(p[1], 1e-300);
}

TEST(Forward, MatchesDirectComputation) {
  std::mt19937_64 rng(3);
  const int d = 4, C = 3, H = 5;
  for (auto arch : {Architecture::linear(), Architecture::mlp(H)}) {
    ModelParams p{arch, d, C, oracle::random_vector(rng, parameter_count(arch, d, C), 0.7)};
    const auto x = oracle::random_vector(rng, d, 1.0);
    // Documented layout: linear W[C x d], b[C]; mlp W1[H x d], b1[H], W2[C x H], b2[C].
    std::vector<double> z(C);
    if (arch.kind == ArchKind::linear) {
      for (int c = 0; c < C; ++c) {
        z[c] = p.theta[C * d + c];
        for (int j = 0; j < d; ++j) z[c] += p.theta[c * d + j] * x[j];
      }
    } else {
      std::vector<double> h(H);
      for (int k = 0; k < H; ++k) {
        double a = p.theta[H * d + k];
        for (int j = 0; j < d; ++j) a += p.theta[k * d + j] * x[j];
        h[k] = std::tanh(a);
      }
      const int off = H * d + H;
      for (int c = 0; c < C; ++c) {
        z[c] = p.theta[off + C * H + c];
        for (int k = 0; k < H; ++k) z[c] += p.theta[off + c * H + k] * h[k];
      }
    }
    const auto expect = oracle::plain_softmax(z);
    const auto got = forward(p, x).probs;
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      EXPECT_NEAR(got[c], expect[c], 1e-14);
      sum += got[c];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Forward, DimensionMismatch) {
  const auto p = init_params(3, 2, Architecture::linear(), InitSpec::zeros(), 0);
  EXPECT_THROW(forward(p, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST(PseudoLabel, ArgmaxWithLowestIndexTieBreak) {
  EXPECT_EQ(argmax(std::vector<double>{0.1, 0.7, 0.2}), 1);
  EXPECT_EQ(argmax(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0);
  EXPECT_EQ(argmax(std::vector<double>{0.2, 0.4, 0.4}), 1);
  const auto zero = init_params(2, 2, Architecture::linear(), InitSpec::zeros(), 0);
  EXPECT_EQ(pseudo_label(zero, std::vector<double>{5.0, -1.0}), 0);
  EXPECT_EQ(pseudo_label(linear_with_logits({0.1, 2.0, 0.3}), std::vector<double>{0.0}), 1);
}

TEST(Gradient, ZeroAtConfidentCorrectPrediction) {
  const auto p = linear_with_logits({60.0, 0.0, 0.0});
  const std::vector<TrainSample> batch{{{1.0}, 0, SampleKind::positive}};
  for (double g : gradient(p, batch, LossSpec::cce_only())) EXPECT_NEAR(g, 0.0, 1e-20);
  EXPECT_NEAR(batch_loss(p, batch, LossSpec::cce_only()), 0.0, 1e-20);
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  for (int C : {2, 5}) {
    for (auto arch : {Architecture::linear(), Architecture::mlp(3)}) {
      for (const auto& spec : {LossSpec::cce_only(), LossSpec::robust(-4.0)}) {
        for (int point = 0; point < 10; ++point) {
          const int d = 4;
          ModelParams p{arch, d, C, oracle::random_vector(rng, parameter_count(arch, d, C), 0.5)};
          std::vector<TrainSample> batch;
          for (int i = 0; i < 5; ++i)
            batch.push_back({oracle::random_vector(rng, d, 1.0), i % C, SampleKind::positive});
          const auto numeric = oracle::numeric_gradient(
              [&](const std::vector<double>& th) {
                ModelParams q = p;
                q.theta = th;
                return batch_loss(q, batch, spec);
              },
              p.theta);
          EXPECT_LT(oracle::max_relative_error(gradient(p, batch, spec), numeric), 1e-4);
        }
      }
    }
  }
}

TEST(TrainLocal, EmptyDataAndZeroLrAreNoOps) {
  const auto p0 = init_params(2, 2, Architecture::linear(), InitSpec::gaussian(0.1), 3);
  Rng rng = make_rng(1, Stream::local_train);
  EXPECT_EQ(train_local(p0, {}, {5, 8, 0.1}, LossSpec::cce_only(), rng).params, p0);
  const auto data = gold_samples(generate_synthetic(40, 2, 2, 4.0, 1));
  EXPECT_EQ(train_local(p0, data, {5, 8, 0.0}, LossSpec::cce_only(), rng).params, p0);
}

TEST(TrainLocal, SeparableDataIsLearned) {
  const auto ds = generate_synthetic(400, 2, 2, 8.0, 21);
  const auto p0 = init_params(2, 2, Architecture::linear(), InitSpec::zeros(), 0);
  Rng rng = make_rng(2, Stream::local_train);
  const auto out = train_local(p0, gold_samples(ds), {50, 8, 0.1}, LossSpec::cce_only(), rng);
  EXPECT_GE(accuracy(out.params, ds), 0.99);
  EXPECT_EQ(out.steps, 50u * 50u);
}

TEST(TrainLocal, DeterministicForFixedRng) {
  const auto ds = generate_synthetic(100, 3, 3, 2.0, 4);
  const auto p0 = init_params(3, 3, Architecture::mlp(4), InitSpec::gaussian(0.1), 1);
  Rng a = make_rng(9, Stream::local_train), b = make_rng(9, Stream::local_train);
  EXPECT_EQ(train_local(p0, gold_samples(ds), {3, 8, 0.05}, LossSpec::cce_only(), a).params,
            train_local(p0, gold_samples(ds), {3, 8, 0.05}, LossSpec::cce_only(), b).params);
}

TEST(Serialization, JsonRoundTripIsExact) {
  std::mt19937_64 rng(8);
  for (auto arch : {Architecture::linear(), Architecture::mlp(7)}) {
    ModelParams p{arch, 5, 3, oracle::random_vector(rng, parameter_count(arch, 5, 3), 1.0)};
    p.theta[0] = 0.1;
    p.theta[1] = 1.0 / 3.0;
    const auto text = to_json(p).dump();
    EXPECT_EQ(params_from_json(nlohmann::json::parse(text)), p);
  }
}

TEST(Serialization, RejectsWrongLength) {
  auto j = to_json(init_params(2, 2, Architecture::linear(), InitSpec::zeros(), 0));
  j["theta"].push_back(1.0);
  EXPECT_THROW(params_from_json(j), ConfigError);
  j = to_json(init_params(2, 2, Architecture::linear(), InitSpec::zeros(), 0));
  j["architecture"] = "cnn";
  EXPECT_THROW(params_from_json(j), ConfigError);
}
