#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedfeed/dataset.hpp"
#include "fedfeed/errors.hpp"
#include "fedfeed/rng.hpp"
#include "json.hpp"

namespace fedfeed {

/// gamma = P(pos | prediction correct), delta = P(neg | prediction incorrect).
struct NoiseProfile {
  double gamma = 1.0;
  double delta = 1.0;

  bool operator==(const NoiseProfile&) const = default;
};

enum class BehaviorKind { fixed, low_noise, adversarial, always_positive, always_negative, beta_sampled, empirical };

struct BehaviorSpec {
  BehaviorKind kind = BehaviorKind::fixed;
  NoiseProfile fixed{1.0, 1.0};
  // beta_sampled: gamma ~ Beta(a_gamma, b_gamma), delta ~ Beta(a_delta, b_delta)
  double a_gamma = 1.0, b_gamma = 1.0, a_delta = 1.0, b_delta = 1.0;
  // Shapes behind the named behaviors: "towards 1" is Beta(high, low),
  // "towards 0" is Beta(low, high).
  double beta_high = 10.0;
  double beta_low = 1.0;
  std::string profiles_path;  // empirical

  static BehaviorSpec fixed_profile(double gamma, double delta) {
    BehaviorSpec b;
    b.fixed = {gamma, delta};
    return b;
  }
  static BehaviorSpec named(BehaviorKind k) {
    BehaviorSpec b;
    b.kind = k;
    return b;
  }
};

inline const char* to_string(BehaviorKind k) {
  switch (k) {
    case BehaviorKind::fixed: return "fixed";
    case BehaviorKind::low_noise: return "low_noise";
    case BehaviorKind::adversarial: return "adversarial";
    case BehaviorKind::always_positive: return "always_positive";
    case BehaviorKind::always_negative: return "always_negative";
    case BehaviorKind::beta_sampled: return "beta_sampled";
    case BehaviorKind::empirical: return "empirical";
  }
  return "?";
}

inline std::optional<BehaviorKind> behavior_from_string(const std::string& s) {
  for (auto k : {BehaviorKind::fixed, BehaviorKind::low_noise, BehaviorKind::adversarial,
                 BehaviorKind::always_positive, BehaviorKind::always_negative, BehaviorKind::beta_sampled,
                 BehaviorKind::empirical})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

enum class Feedback { pos, neg, idk };

inline const char* to_string(Feedback f) {
  switch (f) {
    case Feedback::pos: return "pos";
    case Feedback::neg: return "neg";
    case Feedback::idk: return "idk";
  }
  return "?";
}

struct FeedbackRecord {
  std::int64_t example_id = 0;
  int pseudo_label = 0;
  Feedback feedback = Feedback::pos;
  int gold_label = 0;  // simulation and evaluation only
  int client_id = 0;

  bool operator==(const FeedbackRecord&) const = default;
};

/// n1..n6 over {pos, neg, idk} x {correct, incorrect}.
struct FeedbackCounts {
  std::size_t pos_correct = 0;    // n1
  std::size_t pos_incorrect = 0;  // n2
  std::size_t neg_correct = 0;    // n3
  std::size_t neg_incorrect = 0;  // n4
  std::size_t idk_correct = 0;    // n5
  std::size_t idk_incorrect = 0;  // n6

  std::size_t total() const noexcept {
    return pos_correct + pos_incorrect + neg_correct + neg_incorrect + idk_correct + idk_incorrect;
  }
  bool operator==(const FeedbackCounts&) const = default;
};

struct FeedbackOutcome {
  std::vector<std::size_t> positive;  // indices into the partition (D_pos)
  std::vector<std::size_t> negative;  // D_neg
  std::vector<FeedbackRecord> records;
};

inline void validate(const NoiseProfile& p) {
  if (!(p.gamma >= 0.0 && p.gamma <= 1.0) || !(p.delta >= 0.0 && p.delta <= 1.0))
    throw ConfigError("noise profile: gamma and delta must lie in [0,1]");
}

/// One Bernoulli draw per example: a correct pseudo label is confirmed with
/// probability gamma, an incorrect one rejected with probability delta.
inline FeedbackOutcome simulate_feedback(const Dataset& partition, std::span<const int> pseudo_labels,
                                         const NoiseProfile& profile, Rng& rng, int client_id = 0) {
  if (pseudo_labels.size() != partition.size())
    throw ContractError("simulate_feedback: need one pseudo label per example (" + std::to_string(partition.size()) +
                        " examples, " + std::to_string(pseudo_labels.size()) + " labels)");
  validate(profile);
  FeedbackOutcome out;
  out.records.reserve(partition.size());
  for (std::size_t i = 0; i < partition.size(); ++i) {
    const auto& ex = partition.examples[i];
    const int rho = pseudo_labels[i];
    const double u = uniform01(rng);
    bool positive;
    if (rho == ex.gold_label)
      positive = u < profile.gamma;
    else
      positive = !(u < profile.delta);
    (positive ? out.positive : out.negative).push_back(i);
    out.records.push_back({ex.id, rho, positive ? Feedback::pos : Feedback::neg, ex.gold_label, client_id});
  }
  return out;
}

inline std::vector<NoiseProfile> read_profiles_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open profiles file " + path);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "client_id,gamma,delta")
    throw ParseError("profiles header must be client_id,gamma,delta", 1);
  std::vector<std::pair<std::int64_t, NoiseProfile>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_fields(line);
    std::pair<std::int64_t, NoiseProfile> row;
    if (f.size() != 3 || !detail::parse_number(f[0], row.first) || !detail::parse_number(f[1], row.second.gamma) ||
        !detail::parse_number(f[2], row.second.delta))
      throw ParseError("expected client_id,gamma,delta", lineno);
    if (!(row.second.gamma >= 0 && row.second.gamma <= 1 && row.second.delta >= 0 && row.second.delta <= 1))
      throw ParseError("gamma/delta outside [0,1]", lineno);
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<NoiseProfile> out;
  for (const auto& r : rows) out.push_back(r.second);
  return out;
}

/// Per-client noise profiles. `fixed` and `empirical` never touch rng.
inline std::vector<NoiseProfile> sample_profiles(const BehaviorSpec& spec, int n_clients, Rng& rng) {
  if (n_clients < 1) throw ConfigError("sample_profiles: need N >= 1");
  const auto N = static_cast<std::size_t>(n_clients);
  const double hi = spec.beta_high, lo = spec.beta_low;
  auto draw = [&](double ag, double bg, double ad, double bd) {
    if (!(ag > 0 && bg > 0 && ad > 0 && bd > 0)) throw ConfigError("sample_profiles: Beta shapes must be > 0");
    std::vector<NoiseProfile> out(N);
    for (auto& p : out) {
      p.gamma = beta_sample(rng, ag, bg);
      p.delta = beta_sample(rng, ad, bd);
    }
    return out;
  };
  switch (spec.kind) {
    case BehaviorKind::fixed:
      validate(spec.fixed);
      return std::vector<NoiseProfile>(N, spec.fixed);
    case BehaviorKind::low_noise: return draw(hi, lo, hi, lo);
    case BehaviorKind::adversarial: return draw(lo, hi, lo, hi);
    case BehaviorKind::always_positive: return draw(hi, lo, lo, hi);
    case BehaviorKind::always_negative: return draw(lo, hi, hi, lo);
    case BehaviorKind::beta_sampled: return draw(spec.a_gamma, spec.b_gamma, spec.a_delta, spec.b_delta);
    case BehaviorKind::empirical: {
      auto all = read_profiles_csv(spec.profiles_path);
      if (all.size() < N)
        throw ConfigError("profiles file " + spec.profiles_path + " has " + std::to_string(all.size()) +
                          " rows, need " + std::to_string(N));
      all.resize(N);
      return all;
    }
  }
  return {};
}

inline FeedbackCounts count_feedback(std::span<const FeedbackRecord> records) {
  FeedbackCounts c;
  for (const auto& r : records) {
    const bool correct = r.pseudo_label == r.gold_label;
    switch (r.feedback) {
      case Feedback::pos: ++(correct ? c.pos_correct : c.pos_incorrect); break;
      case Feedback::neg: ++(correct ? c.neg_correct : c.neg_incorrect); break;
      case Feedback::idk: ++(correct ? c.idk_correct : c.idk_incorrect); break;
    }
  }
  return c;
}

struct NoiseEstimate {
  std::optional<double> gamma;  // P(pos | correct)
  std::optional<double> delta;  // P(neg | incorrect)
  std::optional<double> alpha;  // P(neg | correct)
  std::optional<double> beta;   // P(pos | incorrect)
  FeedbackCounts counts;
};

/// Closed-form maximum likelihood estimates. A component is empty when its
/// denominator (count of correct or of incorrect predictions) is zero.
inline NoiseEstimate estimate_noise(const FeedbackCounts& c) {
  NoiseEstimate e;
  e.counts = c;
  const auto n_correct = c.pos_correct + c.neg_correct + c.idk_correct;
  const auto n_incorrect = c.pos_incorrect + c.neg_incorrect + c.idk_incorrect;
  if (n_correct > 0) {
    e.gamma = static_cast<double>(c.pos_correct) / static_cast<double>(n_correct);
    e.alpha = static_cast<double>(c.neg_correct) / static_cast<double>(n_correct);
  }
  if (n_incorrect > 0) {
    e.delta = static_cast<double>(c.neg_incorrect) / static_cast<double>(n_incorrect);
    e.beta = static_cast<double>(c.pos_incorrect) / static_cast<double>(n_incorrect);
  }
  return e;
}

/// Simulates feedback on a synthetic binary partition with the requested
/// number of correct and incorrect pseudo labels, then estimates the profile.
inline NoiseEstimate estimate_from_simulation(const NoiseProfile& profile, std::size_t n_correct,
                                              std::size_t n_incorrect, Rng& rng) {
  if (n_correct == 0 || n_incorrect == 0) throw ConfigError("estimate_from_simulation: sample counts must be > 0");
  Dataset ds{{}, 2, 1};
  std::vector<int> pseudo;
  ds.examples.reserve(n_correct + n_incorrect);
  for (std::size_t i = 0; i < n_correct + n_incorrect; ++i) {
    ds.examples.push_back({static_cast<std::int64_t>(i), {0.0}, 0});
    pseudo.push_back(i < n_correct ? 0 : 1);
  }
  const auto outcome = simulate_feedback(ds, pseudo, profile, rng);
  return estimate_noise(count_feedback(outcome.records));
}

inline nlohmann::json to_json(const FeedbackCounts& c) {
  return {{"n1", c.pos_correct},   {"n2", c.pos_incorrect}, {"n3", c.neg_correct},
          {"n4", c.neg_incorrect}, {"n5", c.idk_correct},   {"n6", c.idk_incorrect}};
}

inline nlohmann::json to_json(const NoiseEstimate& e) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"gamma", opt(e.gamma)},
          {"delta", opt(e.delta)},
          {"alpha", opt(e.alpha)},
          {"beta", opt(e.beta)},
          {"counts", to_json(e.counts)}};
}

// Feedback log CSV: [client_id,]example_id,pseudo_label,gold_label,feedback

inline void write_feedback_log(std::span<const FeedbackRecord> records, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path);
  out << "client_id,example_id,pseudo_label,gold_label,feedback\n";
  for (const auto& r : records)
    out << r.client_id << ',' << r.example_id << ',' << r.pseudo_label << ',' << r.gold_label << ','
        << to_string(r.feedback) << '\n';
}

inline std::vector<FeedbackRecord> read_feedback_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open feedback log " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  const std::string header{detail::trim(line)};
  bool has_client;
  if (header == "example_id,pseudo_label,gold_label,feedback")
    has_client = false;
  else if (header == "client_id,example_id,pseudo_label,gold_label,feedback")
    has_client = true;
  else
    throw ParseError("header must be [client_id,]example_id,pseudo_label,gold_label,feedback", 1);
  std::vector<FeedbackRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_fields(line);
    const std::size_t off = has_client ? 1 : 0;
    if (f.size() != 4 + off) throw ParseError("wrong number of fields", lineno);
    FeedbackRecord r;
    if (has_client && !detail::parse_number(f[0], r.client_id)) throw ParseError("bad client_id", lineno);
    if (!detail::parse_number(f[off], r.example_id)) throw ParseError("bad example_id", lineno);
    if (!detail::parse_number(f[off + 1], r.pseudo_label) || r.pseudo_label < 0)
      throw ParseError("bad pseudo_label", lineno);
    if (!detail::parse_number(f[off + 2], r.gold_label) || r.gold_label < 0) throw ParseError("bad gold_label", lineno);
    const auto fb = detail::trim(f[off + 3]);
    if (fb == "pos")
      r.feedback = Feedback::pos;
    else if (fb == "neg")
      r.feedback = Feedback::neg;
    else if (fb == "idk")
      r.feedback = Feedback::idk;
    else
      throw ParseError("feedback must be pos, neg or idk", lineno);
    out.push_back(r);
  }
  return out;
}

/// Pooled and per-client estimates, clients in ascending id order.
inline nlohmann::json estimate_log(std::span<const FeedbackRecord> records) {
  std::map<int, std::vector<FeedbackRecord>> by_client;
  for (const auto& r : records) by_client[r.client_id].push_back(r);
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& [id, recs] : by_client) {
    auto j = to_json(estimate_noise(count_feedback(recs)));
    j["client_id"] = id;
    clients.push_back(std::move(j));
  }
  return {{"pooled", to_json(estimate_noise(count_feedback(records)))}, {"clients", clients}};
}

}  // namespace fedfeed
