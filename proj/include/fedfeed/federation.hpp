#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "fedfeed/dataset.hpp"
#include "fedfeed/errors.hpp"
#include "fedfeed/feedback.hpp"
#include "fedfeed/losses.hpp"
#include "fedfeed/model.hpp"
#include "fedfeed/rng.hpp"
#include "fedfeed/training.hpp"
#include "json.hpp"

namespace fedfeed {

/// A client's local view: its partition, profile and the training samples
/// built from feedback (positives carry the pseudo label, negatives carry
/// it as a complementary label).
struct ClientState {
  int client_id = 0;
  Dataset partition;
  NoiseProfile profile;
  std::vector<TrainSample> samples;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

struct RoundMetrics {
  int round = 0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  double loss_pos = 0.0;
  double loss_neg = 0.0;
  double loss_total = 0.0;
  bool stopped_early = false;
  int clients_trained = 0;
  double wall_ms = 0.0;  // not serialised; varies run to run
};

inline nlohmann::json to_json(const RoundMetrics& m) {
  return {{"round", m.round},       {"val_acc", m.val_acc},     {"test_acc", m.test_acc},
          {"loss_pos", m.loss_pos}, {"loss_neg", m.loss_neg},   {"loss_total", m.loss_total},
          {"stopped_early", m.stopped_early}};
}

struct FederationConfig {
  TrainOptions local;
  LossSpec loss;
  int max_rounds = 50;
  int patience = 5;
  double min_delta = 0.001;
  bool weighted = false;
  double client_fraction = 1.0;
  int workers = 1;
  std::uint64_t seed = 0;
};

struct EvalSets {
  const Dataset* validation = nullptr;
  const Dataset* test = nullptr;
};

/// Coordinate-wise (weighted) mean of client parameters.
///
/// Each coordinate is accumulated as anchor + sum w_i (x_i - anchor) / sum w
/// with anchor = min_i x_i and the terms summed in sorted order, so the result
/// is exactly invariant to client order and exactly reproduces identical
/// inputs.
inline ModelParams fedavg(std::span<const ModelParams> params, std::span<const double> weights = {}) {
  if (params.empty()) throw AggregationError("fedavg: no client parameters");
  const auto& first = params.front();
  for (const auto& p : params)
    if (!(p.arch == first.arch) || p.dim != first.dim || p.classes != first.classes ||
        p.theta.size() != first.theta.size())
      throw AggregationError("fedavg: architecture mismatch");
  std::vector<double> w(params.size(), 1.0);
  if (!weights.empty()) {
    if (weights.size() != params.size()) throw AggregationError("fedavg: weight count mismatch");
    bool any = false;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!(weights[i] >= 0.0)) throw AggregationError("fedavg: weights must be nonnegative");
      w[i] = weights[i];
      any = any || w[i] > 0.0;
    }
    if (!any) throw AggregationError("fedavg: all weights are zero");
  }
  std::vector<double> sorted_w = w;
  std::sort(sorted_w.begin(), sorted_w.end());
  double w_total = 0.0;
  for (double x : sorted_w) w_total += x;

  ModelParams out = first;
  std::vector<std::pair<double, double>> terms(params.size());
  for (std::size_t k = 0; k < out.theta.size(); ++k) {
    double anchor = params[0].theta[k];
    for (const auto& p : params) anchor = std::min(anchor, p.theta[k]);
    for (std::size_t i = 0; i < params.size(); ++i) terms[i] = {params[i].theta[k] - anchor, w[i]};
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (const auto& [diff, wi] : terms) acc += wi * diff;
    out.theta[k] = anchor + acc / w_total;
  }
  return out;
}

/// Stop once validation accuracy has failed to improve on the best value by
/// at least min_delta for `patience` consecutive rounds.
class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  /// Returns true when training should stop after this observation.
  bool observe(double val_acc) {
    if (val_acc >= best_ + min_delta_) {
      best_ = val_acc;
      stale_ = 0;
      return false;
    }
    ++stale_;
    return patience_ > 0 && stale_ >= patience_;
  }

 private:
  int patience_;
  double min_delta_;
  double best_ = -std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

namespace detail {

/// Runs job(i) for i in [0, n) on up to `workers` threads.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& job) {
  const auto n_threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < n_threads; ++t)
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : threads) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

struct RoundOutcome {
  ModelParams global;
  RoundMetrics metrics;
};

/// One federated round: every selected client trains a copy of `global` on
/// its samples, and the results are averaged in client_id order.
inline RoundOutcome run_round(const ModelParams& global, std::span<const ClientState> clients,
                              const FederationConfig& config, int round, const EvalSets& eval = {}) {
  if (clients.empty()) throw RoundError("run_round: no clients");
  const auto started = std::chrono::steady_clock::now();

  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < clients.size(); ++i)
    if (!clients[i].samples.empty()) selected.push_back(i);
  if (selected.empty()) throw RoundError("run_round: every client lacks usable data");
  if (config.client_fraction < 1.0) {
    const auto m = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.client_fraction * static_cast<double>(selected.size()))));
    Rng rng = make_rng(config.seed, Stream::client_sample, static_cast<std::uint64_t>(round));
    shuffle(selected, rng);
    selected.resize(std::min(m, selected.size()));
  }
  std::sort(selected.begin(), selected.end(),
            [&](std::size_t a, std::size_t b) { return clients[a].client_id < clients[b].client_id; });

  LossSpec spec = config.loss;
  spec.t = round;
  std::vector<TrainResult> results(selected.size());
  detail::parallel_for(selected.size(), config.workers, [&](std::size_t i) {
    const auto& client = clients[selected[i]];
    Rng rng = make_rng(config.seed, Stream::local_train, static_cast<std::uint64_t>(client.client_id),
                       static_cast<std::uint64_t>(round));
    results[i] = train_local(global, client.samples, config.local, spec, rng);
  });

  std::vector<ModelParams> locals;
  std::vector<double> weights;
  RoundMetrics m;
  m.round = round;
  std::size_t with_pos = 0, with_neg = 0;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const auto& client = clients[selected[i]];
    locals.push_back(std::move(results[i].params));
    weights.push_back(static_cast<double>(client.samples.size()));
    m.loss_total += results[i].last_epoch.total;
    if (client.n_pos) m.loss_pos += results[i].last_epoch.pos, ++with_pos;
    if (client.n_neg) m.loss_neg += results[i].last_epoch.neg, ++with_neg;
  }
  m.clients_trained = static_cast<int>(selected.size());
  m.loss_total /= static_cast<double>(selected.size());
  if (with_pos) m.loss_pos /= static_cast<double>(with_pos);
  if (with_neg) m.loss_neg /= static_cast<double>(with_neg);

  RoundOutcome out{config.weighted ? fedavg(locals, weights) : fedavg(locals), m};
  if (eval.validation) out.metrics.val_acc = accuracy(out.global, *eval.validation);
  if (eval.test) out.metrics.test_acc = accuracy(out.global, *eval.test);
  out.metrics.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return out;
}

struct FederatedResult {
  ModelParams best;
  int best_round = 0;
  std::vector<RoundMetrics> rounds;
};

/// Called before each round; may rewrite client samples (pseudo-label refresh).
using RoundHook = std::function<void(int round, const ModelParams& global, std::vector<ClientState>& clients)>;

/// Iterates rounds with early stopping and returns the model with the best
/// validation accuracy (earliest on ties), not the last one.
inline FederatedResult train_federated(const ModelParams& initial, std::vector<ClientState> clients,
                                       const FederationConfig& config, const EvalSets& eval = {},
                                       const RoundHook& before_round = {}) {
  if (config.max_rounds < 1) throw ConfigError("train_federated: max_rounds must be >= 1");
  FederatedResult result{initial, 0, {}};
  EarlyStopper stopper(config.patience, config.min_delta);
  ModelParams global = initial;
  std::optional<double> best_val;
  for (int round = 0; round < config.max_rounds; ++round) {
    if (before_round) before_round(round, global, clients);
    auto outcome = run_round(global, clients, config, round, eval);
    global = std::move(outcome.global);
    if (!best_val || outcome.metrics.val_acc > *best_val) {
      best_val = outcome.metrics.val_acc;
      result.best = global;
      result.best_round = round;
    }
    const bool stop = stopper.observe(outcome.metrics.val_acc);
    outcome.metrics.stopped_early = stop;
    result.rounds.push_back(outcome.metrics);
    if (stop) break;
  }
  return result;
}

}  // namespace fedfeed
