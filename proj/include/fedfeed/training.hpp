#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedfeed/dataset.hpp"
#include "fedfeed/errors.hpp"
#include "fedfeed/losses.hpp"
#include "fedfeed/model.hpp"
#include "fedfeed/rng.hpp"

namespace fedfeed {

enum class SampleKind { positive, complementary };

/// One training target: an ordinary label, or a complementary label that
/// names a class the example does not belong to.
struct TrainSample {
  std::vector<double> features;
  int label = 0;
  SampleKind kind = SampleKind::positive;
};

struct BatchLoss {
  double total = 0.0;
  double pos = 0.0;  // mean positive-side loss (0 when no positives)
  double neg = 0.0;  // mean complementary-side loss (0 when no negatives)
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

struct LossAndGradient {
  BatchLoss loss;
  std::vector<double> grad;
};

namespace detail {

inline LossValueGrad example_loss(std::span<const double> probs, const TrainSample& s, const LossSpec& spec) {
  const bool comp = s.kind == SampleKind::complementary;
  switch (spec.kind) {
    case LossKind::cce:
      if (comp) throw ContractError("cce loss cannot take complementary samples");
      return cce_grad(probs, s.label);
    case LossKind::robust:
      if (comp) throw ContractError("robust loss cannot take complementary samples");
      return robust_grad(probs, s.label, spec.rce_a);
    case LossKind::complementary:
      if (!comp) throw ContractError("complementary loss cannot take positive samples");
      return complementary_grad(probs, s.label, spec.q);
    case LossKind::scheduled:
      return comp ? complementary_grad(probs, s.label, spec.q) : cce_grad(probs, s.label);
    case LossKind::robust_scheduled:
      return comp ? robust_complementary_grad(probs, s.label, spec.q, spec.rce_a)
                  : robust_grad(probs, s.label, spec.rce_a);
  }
  return {};
}

}  // namespace detail

/// Mean per-example loss over the batch and its analytic gradient w.r.t.
/// theta. Scheduled kinds weight the positive mean by (1 - alpha) and the
/// complementary mean by alpha, with alpha = 1 - p^t.
inline LossAndGradient loss_and_gradient(const ModelParams& params, std::span<const TrainSample* const> batch,
                                         const LossSpec& spec) {
  LossAndGradient out{{}, std::vector<double>(params.theta.size(), 0.0)};
  if (batch.empty()) return out;
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto* s : batch) (s->kind == SampleKind::positive ? n_pos : n_neg)++;

  double w_pos = 1.0, w_neg = 1.0;
  if (spec.is_scheduled()) {
    const double alpha = schedule_alpha(spec.p, spec.t);
    w_pos = n_pos ? (1.0 - alpha) / static_cast<double>(n_pos) : 0.0;
    w_neg = n_neg ? alpha / static_cast<double>(n_neg) : 0.0;
  } else {
    w_pos = w_neg = 1.0 / static_cast<double>(batch.size());
  }

  double sum_pos = 0.0, sum_neg = 0.0;
  for (const auto* sp : batch) {
    const auto& s = *sp;
    const auto act = compute_logits(params, s.features);
    const auto probs = softmax(act.logits);
    auto lg = detail::example_loss(probs, s, spec);
    const bool comp = s.kind == SampleKind::complementary;
    (comp ? sum_neg : sum_pos) += lg.value;
    const double w = comp ? w_neg : w_pos;
    if (w == 0.0) continue;
    for (auto& g : lg.d_probs) g *= w;
    backprop(params, s.features, act, probs_grad_to_logits(probs, lg.d_probs), out.grad);
  }
  out.loss.n_pos = n_pos;
  out.loss.n_neg = n_neg;
  out.loss.pos = n_pos ? sum_pos / static_cast<double>(n_pos) : 0.0;
  out.loss.neg = n_neg ? sum_neg / static_cast<double>(n_neg) : 0.0;
  if (spec.is_scheduled()) {
    const double alpha = schedule_alpha(spec.p, spec.t);
    out.loss.total = (1.0 - alpha) * out.loss.pos + alpha * out.loss.neg;
  } else {
    out.loss.total = (sum_pos + sum_neg) / static_cast<double>(batch.size());
  }
  return out;
}

inline LossAndGradient loss_and_gradient(const ModelParams& params, std::span<const TrainSample> batch,
                                         const LossSpec& spec) {
  std::vector<const TrainSample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& s : batch) ptrs.push_back(&s);
  return loss_and_gradient(params, std::span<const TrainSample* const>(ptrs), spec);
}

inline std::vector<double> gradient(const ModelParams& params, std::span<const TrainSample> batch,
                                    const LossSpec& spec) {
  return loss_and_gradient(params, batch, spec).grad;
}

inline double batch_loss(const ModelParams& params, std::span<const TrainSample> batch, const LossSpec& spec) {
  return loss_and_gradient(params, batch, spec).loss.total;
}

struct TrainOptions {
  int epochs = 5;
  int batch_size = 8;
  double lr = 0.1;
};

struct TrainResult {
  ModelParams params;
  BatchLoss last_epoch;  // batch means over the final epoch
  std::size_t steps = 0;
};

/// Plain mini-batch SGD over a reshuffled copy of the data each epoch.
/// With spec.t_per_epoch the schedule index advances as t * epochs + e.
inline TrainResult train_local(ModelParams params, std::span<const TrainSample> data, const TrainOptions& opt,
                               LossSpec spec, Rng& rng) {
  TrainResult result{std::move(params), {}, 0};
  if (data.empty() || opt.epochs <= 0) return result;
  if (opt.batch_size < 1) throw ConfigError("train_local: batch_size must be >= 1");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const int base_t = spec.t;
  std::vector<const TrainSample*> batch;
  for (int e = 0; e < opt.epochs; ++e) {
    if (spec.t_per_epoch) spec.t = base_t * opt.epochs + e;
    shuffle(order, rng);
    BatchLoss acc;
    std::size_t n_batches = 0, with_pos = 0, with_neg = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&data[order[i]]);
      auto lg = loss_and_gradient(result.params, std::span<const TrainSample* const>(batch), spec);
      if (opt.lr != 0.0)
        for (std::size_t k = 0; k < lg.grad.size(); ++k) result.params.theta[k] -= opt.lr * lg.grad[k];
      ++result.steps;
      ++n_batches;
      acc.total += lg.loss.total;
      if (lg.loss.n_pos) acc.pos += lg.loss.pos, ++with_pos;
      if (lg.loss.n_neg) acc.neg += lg.loss.neg, ++with_neg;
    }
    result.last_epoch.total = acc.total / static_cast<double>(n_batches);
    result.last_epoch.pos = with_pos ? acc.pos / static_cast<double>(with_pos) : 0.0;
    result.last_epoch.neg = with_neg ? acc.neg / static_cast<double>(with_neg) : 0.0;
  }
  return result;
}

inline double accuracy(const ModelParams& params, const Dataset& ds) {
  if (ds.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : ds.examples) hits += pseudo_label(params, ex.features) == ex.gold_label;
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

inline std::vector<TrainSample> gold_samples(const Dataset& ds) {
  std::vector<TrainSample> out;
  out.reserve(ds.size());
  for (const auto& ex : ds.examples) out.push_back({ex.features, ex.gold_label, SampleKind::positive});
  return out;
}

}  // namespace fedfeed
