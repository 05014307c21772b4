#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedfeed/errors.hpp"
#include "fedfeed/rng.hpp"
#include "json.hpp"

namespace fedfeed {

enum class ArchKind { linear, mlp };

struct Architecture {
  ArchKind kind = ArchKind::linear;
  int hidden = 0;  // mlp only; tanh activation

  static Architecture linear() { return {ArchKind::linear, 0}; }
  static Architecture mlp(int hidden_width) { return {ArchKind::mlp, hidden_width}; }

  bool operator==(const Architecture&) const = default;
};

/// Softmax classifier parameters as one flat vector.
///
/// Layout of theta (all matrices row-major, output index major):
///   linear: W[C x d], b[C]
///   mlp:    W1[H x d], b1[H], W2[C x H], b2[C]
struct ModelParams {
  Architecture arch;
  int dim = 1;
  int classes = 2;
  std::vector<double> theta;

  bool operator==(const ModelParams&) const = default;
};

struct Posterior {
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
};

struct InitSpec {
  enum class Kind { zeros, gaussian } kind = Kind::zeros;
  double sigma = 0.01;

  static InitSpec zeros() { return {Kind::zeros, 0.0}; }
  static InitSpec gaussian(double s) { return {Kind::gaussian, s}; }
};

inline std::size_t parameter_count(const Architecture& arch, int d, int C) {
  const auto ud = static_cast<std::size_t>(d), uc = static_cast<std::size_t>(C);
  if (arch.kind == ArchKind::linear) return uc * ud + uc;
  const auto h = static_cast<std::size_t>(arch.hidden);
  return h * ud + h + uc * h + uc;
}

inline ModelParams init_params(int d, int C, const Architecture& arch, const InitSpec& init, std::uint64_t seed) {
  if (d < 1 || C < 2) throw ConfigError("init_params: need d >= 1 and C >= 2");
  if (arch.kind == ArchKind::mlp && arch.hidden < 1) throw ConfigError("init_params: mlp needs hidden >= 1");
  ModelParams p{arch, d, C, std::vector<double>(parameter_count(arch, d, C), 0.0)};
  if (init.kind == InitSpec::Kind::gaussian) {
    Rng rng = make_rng(seed, Stream::init);
    for (auto& w : p.theta) w = init.sigma * standard_normal(rng);
  }
  return p;
}

/// Scratch values from a forward pass that backprop reuses.
struct Activations {
  std::vector<double> hidden;  // tanh outputs (mlp only)
  std::vector<double> logits;
};

inline void check_input(const ModelParams& params, std::span<const double> x) {
  if (static_cast<int>(x.size()) != params.dim)
    throw ShapeError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(params.dim));
}

inline Activations compute_logits(const ModelParams& params, std::span<const double> x) {
  check_input(params, x);
  const int d = params.dim, C = params.classes;
  const double* th = params.theta.data();
  Activations act;
  act.logits.assign(static_cast<std::size_t>(C), 0.0);
  std::span<const double> in = x;
  int in_dim = d;
  if (params.arch.kind == ArchKind::mlp) {
    const int H = params.arch.hidden;
    act.hidden.assign(static_cast<std::size_t>(H), 0.0);
    const double* b1 = th + H * d;
    for (int h = 0; h < H; ++h) {
      double s = b1[h];
      const double* row = th + h * d;
      for (int j = 0; j < d; ++j) s += row[j] * x[j];
      act.hidden[h] = std::tanh(s);
    }
    th = b1 + H;
    in = act.hidden;
    in_dim = H;
  }
  const double* b = th + C * in_dim;
  for (int c = 0; c < C; ++c) {
    double s = b[c];
    const double* row = th + c * in_dim;
    for (int j = 0; j < in_dim; ++j) s += row[j] * in[j];
    act.logits[c] = s;
  }
  return act;
}

/// Max-subtracted softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += (p[i] = std::exp(logits[i] - m));
  for (auto& v : p) v /= total;
  return p;
}

inline Posterior forward(const ModelParams& params, std::span<const double> x) {
  return Posterior{softmax(compute_logits(params, x).logits)};
}

/// argmax with ties going to the lowest index.
inline int argmax(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline int pseudo_label(const ModelParams& params, std::span<const double> x) {
  return argmax(forward(params, x).probs);
}

/// Accumulates d(loss)/d(theta) into grad given d(loss)/d(logits).
inline void backprop(const ModelParams& params, std::span<const double> x, const Activations& act,
                     std::span<const double> d_logits, std::span<double> grad) {
  const int d = params.dim, C = params.classes;
  if (params.arch.kind == ArchKind::linear) {
    double* gW = grad.data();
    double* gb = gW + C * d;
    for (int c = 0; c < C; ++c) {
      const double g = d_logits[c];
      if (g == 0.0) continue;
      double* row = gW + c * d;
      for (int j = 0; j < d; ++j) row[j] += g * x[j];
      gb[c] += g;
    }
    return;
  }
  const int H = params.arch.hidden;
  const double* W2 = params.theta.data() + H * d + H;
  double* gW1 = grad.data();
  double* gb1 = gW1 + H * d;
  double* gW2 = gb1 + H;
  double* gb2 = gW2 + C * H;
  std::vector<double> d_hidden(static_cast<std::size_t>(H), 0.0);
  for (int c = 0; c < C; ++c) {
    const double g = d_logits[c];
    if (g == 0.0) continue;
    for (int h = 0; h < H; ++h) {
      gW2[c * H + h] += g * act.hidden[h];
      d_hidden[h] += g * W2[c * H + h];
    }
    gb2[c] += g;
  }
  for (int h = 0; h < H; ++h) {
    const double da = d_hidden[h] * (1.0 - act.hidden[h] * act.hidden[h]);
    if (da == 0.0) continue;
    for (int j = 0; j < d; ++j) gW1[h * d + j] += da * x[j];
    gb1[h] += da;
  }
}

inline std::string to_string(ArchKind k) { return k == ArchKind::linear ? "linear" : "mlp"; }

inline nlohmann::json to_json(const ModelParams& p) {
  nlohmann::json j;
  j["architecture"] = to_string(p.arch.kind);
  j["hidden"] = p.arch.hidden;
  j["dim"] = p.dim;
  j["classes"] = p.classes;
  j["theta"] = p.theta;
  return j;
}

inline ModelParams params_from_json(const nlohmann::json& j) {
  try {
    ModelParams p;
    const auto arch = j.at("architecture").get<std::string>();
    if (arch == "linear")
      p.arch = Architecture::linear();
    else if (arch == "mlp")
      p.arch = Architecture::mlp(j.at("hidden").get<int>());
    else
      throw ConfigError("unknown architecture '" + arch + "'");
    p.dim = j.at("dim").get<int>();
    p.classes = j.at("classes").get<int>();
    p.theta = j.at("theta").get<std::vector<double>>();
    if (p.theta.size() != parameter_count(p.arch, p.dim, p.classes))
      throw ConfigError("theta length does not match architecture");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model json: ") + e.what());
  }
}

}  // namespace fedfeed
