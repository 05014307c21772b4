#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fedfeed/dataset.hpp"
#include "fedfeed/errors.hpp"
#include "fedfeed/model.hpp"
#include "json.hpp"

namespace fedfeed {

/// Floor applied to probabilities before any logarithm.
inline constexpr double kProbFloor = 1e-12;

/// Complementary-label transition matrix: q(c, d) = P(comp label d | true c).
/// Zero diagonal, row-stochastic.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;
  explicit TransitionMatrix(int classes) : classes_(classes), q_(static_cast<std::size_t>(classes * classes), 0.0) {}
  TransitionMatrix(int classes, std::vector<double> row_major) : classes_(classes), q_(std::move(row_major)) {
    if (q_.size() != static_cast<std::size_t>(classes * classes)) throw ShapeError("transition matrix size mismatch");
  }

  static TransitionMatrix uniform_off_diagonal(int classes) {
    TransitionMatrix m(classes);
    for (int c = 0; c < classes; ++c)
      for (int d = 0; d < classes; ++d) m.at(c, d) = c == d ? 0.0 : 1.0 / (classes - 1);
    return m;
  }

  int classes() const noexcept { return classes_; }
  double operator()(int c, int d) const { return q_[static_cast<std::size_t>(c * classes_ + d)]; }
  double& at(int c, int d) { return q_[static_cast<std::size_t>(c * classes_ + d)]; }
  std::span<const double> row(int c) const { return {q_.data() + c * classes_, static_cast<std::size_t>(classes_)}; }
  const std::vector<double>& data() const noexcept { return q_; }

  /// Zero diagonal, entries in [0,1], rows summing to 1 within tol.
  bool is_valid(double tol = 1e-9) const {
    if (classes_ < 2) return false;
    for (int c = 0; c < classes_; ++c) {
      if ((*this)(c, c) != 0.0) return false;
      double s = 0.0;
      for (int d = 0; d < classes_; ++d) {
        const double v = (*this)(c, d);
        if (!(v >= 0.0 && v <= 1.0)) return false;
        s += v;
      }
      if (std::abs(s - 1.0) > tol) return false;
    }
    return true;
  }

  bool operator==(const TransitionMatrix&) const = default;

 private:
  int classes_ = 0;
  std::vector<double> q_;
};

inline nlohmann::json to_json(const TransitionMatrix& q) {
  nlohmann::json rows = nlohmann::json::array();
  for (int c = 0; c < q.classes(); ++c) {
    auto r = q.row(c);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

inline TransitionMatrix transition_from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  const int C = static_cast<int>(rows.size());
  std::vector<double> flat;
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != C) throw ShapeError("transition matrix must be square");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return TransitionMatrix(C, std::move(flat));
}

enum class LossKind { cce, complementary, scheduled, robust, robust_scheduled };

struct LossSpec {
  LossKind kind = LossKind::cce;
  double p = 0.8;            // scheduler base, alpha = 1 - p^t
  double rce_a = -4.0;       // RCE's stand-in for log 0
  TransitionMatrix q;        // complementary / scheduled kinds
  int t = 0;                 // schedule index
  bool t_per_epoch = false;  // advance t per local epoch instead of per round

  static LossSpec cce_only() { return {}; }
  static LossSpec complementary_only(TransitionMatrix q) {
    LossSpec s;
    s.kind = LossKind::complementary;
    s.q = std::move(q);
    return s;
  }
  static LossSpec scheduled(double p, TransitionMatrix q, int t = 0) {
    LossSpec s;
    s.kind = LossKind::scheduled;
    s.p = p;
    s.q = std::move(q);
    s.t = t;
    return s;
  }
  static LossSpec robust(double a = -4.0) {
    LossSpec s;
    s.kind = LossKind::robust;
    s.rce_a = a;
    return s;
  }
  static LossSpec robust_scheduled(double p, TransitionMatrix q, double a = -4.0, int t = 0) {
    LossSpec s = scheduled(p, std::move(q), t);
    s.kind = LossKind::robust_scheduled;
    s.rce_a = a;
    return s;
  }

  bool uses_transition() const noexcept {
    return kind == LossKind::complementary || kind == LossKind::scheduled || kind == LossKind::robust_scheduled;
  }
  bool is_robust() const noexcept { return kind == LossKind::robust || kind == LossKind::robust_scheduled; }
  bool is_scheduled() const noexcept { return kind == LossKind::scheduled || kind == LossKind::robust_scheduled; }
};

inline void validate(const LossSpec& spec) {
  if (spec.is_scheduled() && !(spec.p > 0.0 && spec.p < 1.0)) throw ConfigError("loss: scheduler p must lie in (0,1)");
  if (spec.is_robust() && !(spec.rce_a < 0.0)) throw ConfigError("loss: RCE constant A must be negative");
  if (spec.uses_transition() && !spec.q.is_valid()) throw ConfigError("loss: transition matrix is not valid");
}

namespace detail {

inline void check_label(std::span<const double> p, int label) {
  if (label < 0 || label >= static_cast<int>(p.size()))
    throw std::out_of_range("label " + std::to_string(label) + " outside [0," + std::to_string(p.size()) + ")");
}

inline double clamped(double v) { return v > kProbFloor ? v : kProbFloor; }
inline double neg_log_grad(double v) { return v > kProbFloor ? -1.0 / v : 0.0; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Loss values on posteriors.

inline double cce(std::span<const double> posterior, int label) {
  detail::check_label(posterior, label);
  return -std::log(detail::clamped(posterior[label]));
}

/// out[d] = sum_c Q(c, d) * f[c]
inline std::vector<double> complementary_posterior(const TransitionMatrix& q, std::span<const double> f) {
  if (static_cast<int>(f.size()) != q.classes()) throw ShapeError("complementary_posterior: size mismatch");
  const int C = q.classes();
  std::vector<double> out(static_cast<std::size_t>(C), 0.0);
  for (int c = 0; c < C; ++c)
    for (int d = 0; d < C; ++d) out[d] += q(c, d) * f[c];
  return out;
}

inline double complementary_loss(std::span<const double> posterior, int comp_label, const TransitionMatrix& q) {
  detail::check_label(posterior, comp_label);
  return -std::log(detail::clamped(complementary_posterior(q, posterior)[comp_label]));
}

inline double schedule_alpha(double p, int t) { return 1.0 - std::pow(p, t); }

inline double nce(std::span<const double> posterior, int label) {
  detail::check_label(posterior, label);
  double denom = 0.0;
  for (double v : posterior) denom -= std::log(detail::clamped(v));
  return -std::log(detail::clamped(posterior[label])) / denom;
}

/// Closed form of -sum_k p_k log q_k with one-hot q and log 0 := A.
inline double rce(std::span<const double> posterior, int label, double a) {
  detail::check_label(posterior, label);
  return -a * (1.0 - posterior[label]);
}

inline double robust_loss(std::span<const double> posterior, int label, double a) {
  return nce(posterior, label) + 2.0 * rce(posterior, label, a);
}

struct LabeledPosterior {
  std::vector<double> probs;
  int label = 0;
};

/// (1 - alpha) mean CCE(pos) + alpha mean complementary(neg); an empty side
/// contributes zero.
inline double scheduled_loss(std::span<const LabeledPosterior> pos, std::span<const LabeledPosterior> neg,
                             const TransitionMatrix& q, double p, int t) {
  if (pos.empty() && neg.empty()) throw UndefinedLossError("scheduled_loss: both batches are empty");
  const double alpha = schedule_alpha(p, t);
  double lp = 0.0, ln = 0.0;
  for (const auto& s : pos) lp += cce(s.probs, s.label);
  for (const auto& s : neg) ln += complementary_loss(s.probs, s.label, q);
  if (!pos.empty()) lp /= static_cast<double>(pos.size());
  if (!neg.empty()) ln /= static_cast<double>(neg.size());
  return (1.0 - alpha) * lp + alpha * ln;
}

// ---------------------------------------------------------------------------
// Per-example value with gradient.

struct LossValueGrad {
  double value = 0.0;
  std::vector<double> d_probs;  // d(loss)/d(posterior)
};

inline LossValueGrad cce_grad(std::span<const double> p, int label) {
  LossValueGrad out{cce(p, label), std::vector<double>(p.size(), 0.0)};
  out.d_probs[label] = detail::neg_log_grad(p[label]);
  return out;
}

inline LossValueGrad robust_grad(std::span<const double> p, int label, double a) {
  detail::check_label(p, label);
  const std::size_t C = p.size();
  double num = -std::log(detail::clamped(p[label]));
  double denom = 0.0;
  for (double v : p) denom -= std::log(detail::clamped(v));
  LossValueGrad out{num / denom - 2.0 * a * (1.0 - p[label]), std::vector<double>(C, 0.0)};
  // NCE = num / denom; d num/dp_k = [k=label] * g_k, d denom/dp_k = g_k.
  for (std::size_t k = 0; k < C; ++k) {
    const double g = detail::neg_log_grad(p[k]);
    const double d_num = static_cast<int>(k) == label ? g : 0.0;
    out.d_probs[k] = (d_num * denom - num * g) / (denom * denom);
  }
  out.d_probs[label] += 2.0 * a;
  return out;
}

/// Pulls a gradient taken w.r.t. the complementary posterior back to f.
inline std::vector<double> pull_back_complementary(const TransitionMatrix& q, std::span<const double> d_comp) {
  const int C = q.classes();
  std::vector<double> d_f(static_cast<std::size_t>(C), 0.0);
  for (int c = 0; c < C; ++c)
    for (int d = 0; d < C; ++d) d_f[c] += q(c, d) * d_comp[d];
  return d_f;
}

inline LossValueGrad complementary_grad(std::span<const double> p, int comp_label, const TransitionMatrix& q) {
  const auto r = complementary_posterior(q, p);
  auto inner = cce_grad(r, comp_label);
  return {inner.value, pull_back_complementary(q, inner.d_probs)};
}

/// Robust loss with the complementary posterior standing in for p.
inline LossValueGrad robust_complementary_grad(std::span<const double> p, int comp_label, const TransitionMatrix& q,
                                               double a) {
  const auto r = complementary_posterior(q, p);
  auto inner = robust_grad(r, comp_label, a);
  return {inner.value, pull_back_complementary(q, inner.d_probs)};
}

/// Softmax Jacobian: dL/dz_j = p_j (g_j - sum_k g_k p_k).
inline std::vector<double> probs_grad_to_logits(std::span<const double> p, std::span<const double> g) {
  double dot = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) dot += g[k] * p[k];
  std::vector<double> out(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) out[j] = p[j] * (g[j] - dot);
  return out;
}

/// Transition matrix from (gold label, seed posterior) pairs of validation
/// examples: row c averages the posteriors of class-c examples the model got
/// wrong, each with entry c zeroed and renormalised. Rows without any such
/// example fall back to uniform off-diagonal.
inline TransitionMatrix estimate_transition_from_posteriors(int classes,
                                                            std::span<const std::pair<int, std::vector<double>>> scored) {
  TransitionMatrix q(classes);
  std::vector<std::size_t> count(static_cast<std::size_t>(classes), 0);
  for (const auto& [gold, f] : scored) {
    if (argmax(f) == gold) continue;
    const double rest = 1.0 - f[gold];
    if (!(rest > 0.0)) continue;
    for (int d = 0; d < classes; ++d)
      if (d != gold) q.at(gold, d) += f[d] / rest;
    ++count[gold];
  }
  for (int c = 0; c < classes; ++c) {
    if (count[c] == 0) {
      for (int d = 0; d < classes; ++d) q.at(c, d) = c == d ? 0.0 : 1.0 / (classes - 1);
      continue;
    }
    double s = 0.0;
    for (int d = 0; d < classes; ++d) s += (q.at(c, d) /= static_cast<double>(count[c]));
    // Renormalise away accumulated rounding.
    for (int d = 0; d < classes; ++d) q.at(c, d) /= s;
  }
  return q;
}

inline TransitionMatrix estimate_Q(const ModelParams& seed_model, const Dataset& validation) {
  std::vector<std::pair<int, std::vector<double>>> scored;
  scored.reserve(validation.size());
  for (const auto& ex : validation.examples) scored.emplace_back(ex.gold_label, forward(seed_model, ex.features).probs);
  return estimate_transition_from_posteriors(seed_model.classes, scored);
}

}  // namespace fedfeed
