#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fedfeed/config.hpp"
#include "fedfeed/dataset.hpp"
#include "fedfeed/errors.hpp"
#include "fedfeed/federation.hpp"
#include "fedfeed/feedback.hpp"
#include "fedfeed/losses.hpp"
#include "fedfeed/model.hpp"
#include "fedfeed/rng.hpp"
#include "fedfeed/training.hpp"
#include "json.hpp"

namespace fedfeed {

struct RepeatResult {
  std::uint64_t seed = 0;
  double seed_val_acc = 0.0;
  double seed_test_acc = 0.0;
  double val_acc = 0.0;   // final model on D_v
  double test_acc = 0.0;  // final model on the test split
  int rounds = 0;
  int best_round = -1;
  std::optional<double> scheduler_p;
  std::size_t feedback_records = 0;  // zero whenever feedback was not simulated
  std::optional<NoiseEstimate> noise_estimate;
  std::vector<RoundMetrics> round_log;
};

struct Report {
  nlohmann::json config;
  std::string mode;
  std::vector<RepeatResult> repeats;
  double mean_acc = 0.0;
  std::optional<double> std_acc;  // sample std, repeats >= 2 only
  double min_acc = 0.0;
  double max_acc = 0.0;
};

/// Data and models produced along the way, for callers that persist them.
struct RepeatArtifacts {
  ModelParams seed_model;
  std::vector<FeedbackRecord> feedback;
};

inline nlohmann::json to_json(const RepeatResult& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["seed_val_acc"] = r.seed_val_acc;
  j["seed_test_acc"] = r.seed_test_acc;
  j["val_acc"] = r.val_acc;
  j["test_acc"] = r.test_acc;
  j["rounds"] = r.rounds;
  j["best_round"] = r.best_round;
  j["scheduler_p"] = r.scheduler_p ? nlohmann::json(*r.scheduler_p) : nlohmann::json(nullptr);
  j["feedback_records"] = r.feedback_records;
  j["noise_estimate"] = r.noise_estimate ? to_json(*r.noise_estimate) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json j;
  j["config"] = r.config;
  j["mode"] = r.mode;
  nlohmann::json reps = nlohmann::json::array(), logs = nlohmann::json::array();
  for (const auto& rep : r.repeats) {
    reps.push_back(to_json(rep));
    nlohmann::json log = nlohmann::json::array();
    for (const auto& m : rep.round_log) log.push_back(to_json(m));
    logs.push_back(std::move(log));
  }
  j["repeats"] = reps;
  j["mean_acc"] = r.mean_acc;
  j["std_acc"] = r.std_acc ? nlohmann::json(*r.std_acc) : nlohmann::json(nullptr);
  j["min_acc"] = r.min_acc;
  j["max_acc"] = r.max_acc;
  j["round_logs"] = logs;
  return j;
}

struct SeedTrainOptions {
  Architecture arch;
  InitSpec init;
  int max_epochs = 100;
  int batch_size = 8;
  double lr = 0.1;
  double tol = 1e-6;  // stop when the epoch's training loss improves by less
};

/// CCE on D_s until the training loss stops improving by `tol` or the epoch
/// budget runs out.
inline ModelParams train_seed(const Dataset& seed_split, const SeedTrainOptions& opt, std::uint64_t seed) {
  if (seed_split.empty()) throw ConfigError("train_seed: D_s is empty");
  ModelParams params = init_params(seed_split.dim, seed_split.num_classes, opt.arch, opt.init, seed);
  const auto samples = gold_samples(seed_split);
  const auto spec = LossSpec::cce_only();
  Rng rng = make_rng(seed, Stream::seed_train);
  double prev = batch_loss(params, samples, spec);
  for (int e = 0; e < opt.max_epochs; ++e) {
    params = train_local(std::move(params), samples, {1, opt.batch_size, opt.lr}, spec, rng).params;
    const double cur = batch_loss(params, samples, spec);
    if (prev - cur < opt.tol) break;
    prev = cur;
  }
  return params;
}

inline SeedTrainOptions seed_options(const ExperimentConfig& c) {
  SeedTrainOptions o;
  o.arch = c.architecture == "mlp" ? Architecture::mlp(c.hidden) : Architecture::linear();
  o.init = c.init == "gaussian" ? InitSpec::gaussian(c.init_sigma) : InitSpec::zeros();
  o.max_epochs = c.seed_epochs;
  o.batch_size = c.batch_size;
  o.lr = c.resolved_seed_lr();
  o.tol = c.seed_tol;
  return o;
}

inline BehaviorSpec behavior_spec(const ExperimentConfig& c) {
  BehaviorSpec b;
  b.kind = *behavior_from_string(c.behavior);
  b.fixed = {c.gamma, c.delta};
  b.a_gamma = c.a_gamma;
  b.b_gamma = c.b_gamma;
  b.a_delta = c.a_delta;
  b.b_delta = c.b_delta;
  b.beta_high = c.beta_high;
  b.beta_low = c.beta_low;
  b.profiles_path = c.profiles_path;
  return b;
}

struct PreparedData {
  Dataset train;  // D_t
  Dataset test;
};

/// D_t and a test split. Synthetic data draws n + test_size rows and keeps
/// the tail as the test split; CSV data uses test_path or a stratified
/// holdout of test_fraction.
inline PreparedData prepare_data(const ExperimentConfig& c, std::uint64_t seed) {
  if (c.data_source == "synthetic") {
    auto all = generate_synthetic(static_cast<std::size_t>(c.n + c.test_size), c.dim, c.classes, c.class_sep, seed);
    PreparedData out{empty_like(all), empty_like(all)};
    const auto n = static_cast<std::size_t>(c.n);
    out.train.examples.assign(all.examples.begin(), all.examples.begin() + static_cast<std::ptrdiff_t>(n));
    out.test.examples.assign(all.examples.begin() + static_cast<std::ptrdiff_t>(n), all.examples.end());
    return out;
  }
  auto data = load_csv(c.data_path, c.classes);
  if (!c.test_path.empty()) return {std::move(data), load_csv(c.test_path, c.classes)};
  // Holdout reuses split(): the "seed" part becomes the test split.
  const double v = std::min(0.5, (1.0 - c.test_fraction) / 2.0);
  auto parts = split(data, {c.test_fraction, v, true}, derive_seed(seed, Stream::test_holdout));
  PreparedData out{empty_like(data), std::move(parts.seed)};
  for (auto* src : {&parts.validation, &parts.unlabeled})
    out.train.examples.insert(out.train.examples.end(), src->examples.begin(), src->examples.end());
  std::sort(out.train.examples.begin(), out.train.examples.end(),
            [](const Example& a, const Example& b) { return a.id < b.id; });
  return out;
}

namespace detail {

struct ClientInputs {
  ClientPartition partition;
  std::vector<int> pseudo;
};

inline ClientState build_client(const ClientInputs& in, Mode mode, const NoiseProfile& profile,
                                const FeedbackOutcome* fb) {
  ClientState s;
  s.client_id = in.partition.client_id;
  s.partition = in.partition.data;
  s.profile = profile;
  const auto& exs = in.partition.data.examples;
  auto add = [&](std::size_t i, int label, SampleKind kind) {
    s.samples.push_back({exs[i].features, label, kind});
    ++(kind == SampleKind::positive ? s.n_pos : s.n_neg);
  };
  switch (mode) {
    case Mode::initial_only: break;
    case Mode::self_training:
      for (std::size_t i = 0; i < exs.size(); ++i) add(i, in.pseudo[i], SampleKind::positive);
      break;
    case Mode::full_supervision:
      for (std::size_t i = 0; i < exs.size(); ++i) add(i, exs[i].gold_label, SampleKind::positive);
      break;
    case Mode::positive_only:
      for (std::size_t i : fb->positive) add(i, in.pseudo[i], SampleKind::positive);
      break;
    case Mode::all_feedback:
      for (std::size_t i : fb->positive) add(i, in.pseudo[i], SampleKind::positive);
      for (std::size_t i : fb->negative) add(i, in.pseudo[i], SampleKind::complementary);
      break;
  }
  return s;
}

inline LossSpec loss_for_mode(const ExperimentConfig& c, Mode mode, const TransitionMatrix& q, double p) {
  LossSpec spec;
  const bool robust = c.robust && mode != Mode::full_supervision;
  spec.rce_a = c.rce_a;
  spec.p = p;
  spec.t_per_epoch = c.schedule_unit == "epoch";
  if (mode == Mode::all_feedback) {
    spec.kind = robust ? LossKind::robust_scheduled : LossKind::scheduled;
    spec.q = q;
  } else {
    spec.kind = robust ? LossKind::robust : LossKind::cce;
  }
  return spec;
}

}  // namespace detail

/// Scheduler constants tried when scheduler_p is "auto".
inline const std::vector<double>& scheduler_grid() {
  static const std::vector<double> grid{0.5, 0.7, 0.8, 0.9};
  return grid;
}

/// One complete pass of the protocol for a single seed.
inline RepeatResult run_repeat(const ExperimentConfig& c, std::uint64_t seed, int workers = 1,
                               RepeatArtifacts* artifacts = nullptr) {
  const Mode mode = c.resolved_mode();
  RepeatResult r;
  r.seed = seed;

  auto data = prepare_data(c, seed);
  auto splits = split(data.train, {c.k, c.v, c.stratified}, seed);
  const auto seed_model = train_seed(splits.seed, seed_options(c), seed);
  r.seed_val_acc = accuracy(seed_model, splits.validation);
  r.seed_test_acc = accuracy(seed_model, data.test);
  if (artifacts) artifacts->seed_model = seed_model;
  if (mode == Mode::initial_only) {
    r.val_acc = r.seed_val_acc;
    r.test_acc = r.seed_test_acc;
    r.rounds = 0;
    return r;
  }

  PartitionSpec pspec{c.partition == "dirichlet" ? PartitionMode::dirichlet : PartitionMode::uniform_class,
                      c.dirichlet_beta};
  auto partitions = partition_clients(splits.unlabeled, c.clients, pspec, seed);
  std::vector<detail::ClientInputs> inputs;
  for (auto& part : partitions) {
    detail::ClientInputs in{std::move(part), {}};
    for (const auto& ex : in.partition.data.examples) in.pseudo.push_back(pseudo_label(seed_model, ex.features));
    inputs.push_back(std::move(in));
  }

  std::vector<NoiseProfile> profiles(inputs.size(), NoiseProfile{1.0, 1.0});
  std::vector<FeedbackOutcome> feedback(inputs.size());
  if (uses_feedback(mode)) {
    Rng prng = make_rng(seed, Stream::profiles);
    profiles = sample_profiles(behavior_spec(c), c.clients, prng);
    std::vector<FeedbackRecord> all_records;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const int id = inputs[i].partition.client_id;
      Rng frng = make_rng(seed, Stream::feedback, static_cast<std::uint64_t>(id), 0);
      feedback[i] = simulate_feedback(inputs[i].partition.data, inputs[i].pseudo, profiles[i], frng, id);
      all_records.insert(all_records.end(), feedback[i].records.begin(), feedback[i].records.end());
    }
    r.feedback_records = all_records.size();
    r.noise_estimate = estimate_noise(count_feedback(all_records));
    if (artifacts) artifacts->feedback = std::move(all_records);
  }

  std::vector<ClientState> clients;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    clients.push_back(detail::build_client(inputs[i], mode, profiles[i], uses_feedback(mode) ? &feedback[i] : nullptr));

  const TransitionMatrix q =
      mode == Mode::all_feedback ? estimate_Q(seed_model, splits.validation) : TransitionMatrix::uniform_off_diagonal(c.classes);

  FederationConfig fc;
  fc.local = {c.local_epochs, c.batch_size, c.resolved_lr()};
  fc.max_rounds = c.max_rounds;
  fc.patience = c.patience;
  fc.min_delta = c.min_delta;
  fc.weighted = c.weighted_fedavg;
  fc.client_fraction = c.client_fraction;
  fc.workers = workers;
  fc.seed = seed;
  const EvalSets eval{&splits.validation, &data.test};

  RoundHook hook;
  const bool refresh = c.refresh_pseudo_labels && mode != Mode::full_supervision;
  if (refresh) {
    hook = [&](int round, const ModelParams& global, std::vector<ClientState>& cs) {
      if (round == 0) return;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& in = inputs[i];
        for (std::size_t e = 0; e < in.pseudo.size(); ++e)
          in.pseudo[e] = pseudo_label(global, in.partition.data.examples[e].features);
        const FeedbackOutcome* fb = nullptr;
        FeedbackOutcome fresh;
        if (uses_feedback(mode)) {
          const int id = in.partition.client_id;
          Rng frng = make_rng(seed, Stream::feedback, static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(round));
          fresh = simulate_feedback(in.partition.data, in.pseudo, profiles[i], frng, id);
          r.feedback_records += fresh.records.size();
          fb = &fresh;
        }
        cs[i] = detail::build_client(in, mode, profiles[i], fb);
      }
    };
  }

  const bool auto_p = mode == Mode::all_feedback && !c.scheduler_p;
  const std::vector<double> candidates = auto_p ? scheduler_grid() : std::vector<double>{c.scheduler_p.value_or(0.8)};
  std::optional<FederatedResult> best;
  double best_p = candidates.front();
  double best_val = -1.0;
  for (double p : candidates) {
    fc.loss = detail::loss_for_mode(c, mode, q, p);
    validate(fc.loss);
    auto result = train_federated(seed_model, clients, fc, eval, hook);
    const double val = result.rounds[static_cast<std::size_t>(result.best_round)].val_acc;
    if (!best || val > best_val) {
      best_val = val;
      best_p = p;
      best = std::move(result);
    }
  }
  r.round_log = best->rounds;
  r.rounds = static_cast<int>(best->rounds.size());
  r.best_round = best->best_round;
  r.val_acc = accuracy(best->best, splits.validation);
  r.test_acc = accuracy(best->best, data.test);
  if (mode == Mode::all_feedback) r.scheduler_p = best_p;
  return r;
}

inline std::uint64_t repeat_seed(const ExperimentConfig& c, int repeat) {
  return c.vary_seed_per_repeat ? derive_seed(c.seed, Stream::repeat, static_cast<std::uint64_t>(repeat)) : c.seed;
}

inline Report summarize(const ExperimentConfig& c, std::vector<RepeatResult> repeats) {
  Report rep;
  rep.config = to_json(c);
  rep.mode = c.mode;
  rep.repeats = std::move(repeats);
  std::vector<double> accs;
  for (const auto& r : rep.repeats) accs.push_back(r.test_acc);
  rep.mean_acc = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
  rep.min_acc = *std::min_element(accs.begin(), accs.end());
  rep.max_acc = *std::max_element(accs.begin(), accs.end());
  // Mean can drift outside [min, max] by an ulp; clamp keeps the invariant.
  rep.mean_acc = std::clamp(rep.mean_acc, rep.min_acc, rep.max_acc);
  if (accs.size() >= 2) {
    double ss = 0.0;
    for (double a : accs) ss += (a - rep.mean_acc) * (a - rep.mean_acc);
    rep.std_acc = std::sqrt(ss / static_cast<double>(accs.size() - 1));
  }
  return rep;
}

inline Report run_experiment(const ExperimentConfig& c, int workers = 1,
                             std::vector<RepeatArtifacts>* artifacts = nullptr) {
  validate(c);
  std::vector<RepeatResult> results;
  for (int i = 0; i < c.repeats; ++i) {
    RepeatArtifacts art;
    results.push_back(run_repeat(c, repeat_seed(c, i), workers, artifacts ? &art : nullptr));
    if (artifacts) artifacts->push_back(std::move(art));
  }
  return summarize(c, std::move(results));
}

struct NoiseSweep {
  std::vector<double> gammas;
  std::vector<double> deltas;
  std::vector<std::vector<Report>> cells;  // cells[gamma index][delta index]
};

/// Runs the experiment once per (gamma, delta) with fixed profiles.
inline NoiseSweep sweep_noise(const ExperimentConfig& base, const std::vector<double>& gammas,
                              const std::vector<double>& deltas, int workers = 1) {
  if (gammas.empty() || deltas.empty()) throw ConfigError("sweep_noise: grids must be non-empty");
  NoiseSweep out{gammas, deltas, {}};
  for (double g : gammas) {
    std::vector<Report> row;
    for (double d : deltas) {
      ExperimentConfig c = base;
      c.behavior = "fixed";
      c.gamma = g;
      c.delta = d;
      row.push_back(run_experiment(c, workers));
    }
    out.cells.push_back(std::move(row));
  }
  return out;
}

inline const std::vector<BehaviorKind>& sweep_behavior_kinds() {
  static const std::vector<BehaviorKind> kinds{BehaviorKind::low_noise, BehaviorKind::adversarial,
                                               BehaviorKind::always_positive, BehaviorKind::always_negative,
                                               BehaviorKind::empirical};
  return kinds;
}

/// The five user behaviours; empirical needs profiles_path in the config.
inline std::vector<std::pair<BehaviorKind, Report>> sweep_behaviors(const ExperimentConfig& base, int workers = 1) {
  if (base.profiles_path.empty()) throw ConfigError("config key 'profiles_path': required for the behavior sweep");
  std::vector<std::pair<BehaviorKind, Report>> out;
  for (auto kind : sweep_behavior_kinds()) {
    ExperimentConfig c = base;
    c.behavior = to_string(kind);
    out.emplace_back(kind, run_experiment(c, workers));
  }
  return out;
}

inline const std::vector<Mode>& sweep_mode_list() {
  static const std::vector<Mode> modes{Mode::initial_only, Mode::self_training, Mode::positive_only,
                                       Mode::all_feedback, Mode::full_supervision};
  return modes;
}

inline std::vector<std::pair<Mode, Report>> sweep_modes(const ExperimentConfig& base, int workers = 1) {
  std::vector<std::pair<Mode, Report>> out;
  for (auto m : sweep_mode_list()) {
    ExperimentConfig c = base;
    c.mode = to_string(m);
    out.emplace_back(m, run_experiment(c, workers));
  }
  return out;
}

}  // namespace fedfeed
