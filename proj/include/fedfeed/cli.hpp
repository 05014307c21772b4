#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedfeed/config.hpp"
#include "fedfeed/dataset.hpp"
#include "fedfeed/errors.hpp"
#include "fedfeed/experiment.hpp"
#include "fedfeed/feedback.hpp"
#include "fedfeed/model.hpp"
#include "json.hpp"

namespace fedfeed {

enum ExitCode : int { exit_ok = 0, exit_runtime = 1, exit_usage = 2 };

namespace detail {

/// Reports a usage/config problem; carried to run_cli's exit-code mapping.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline std::string fixed4(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

inline std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("FEDFEED_SEED");
  if (!raw || !*raw) return std::nullopt;
  std::uint64_t v = 0;
  if (!parse_number(trim(raw), v)) throw UsageError(std::string("FEDFEED_SEED is not an unsigned integer: ") + raw);
  return v;
}

struct CommonRunFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  int workers = 1;
};

inline void add_common(CLI::App* cmd, CommonRunFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file (defaults apply when omitted)");
  cmd->add_option("--override", f.overrides, "key=value applied on top of the config (repeatable)");
  cmd->add_option("--seed", f.seed, "global seed; beats FEDFEED_SEED and the config");
  cmd->add_option("--out", f.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--workers", f.workers, "client training threads")->check(CLI::PositiveNumber)->capture_default_str();
}

/// Config file, then overrides, then FEDFEED_SEED, then --seed.
inline ExperimentConfig resolve_config(const CommonRunFlags& f) {
  ExperimentConfig c = f.config_path.empty() ? ExperimentConfig{} : load_config(f.config_path);
  c = apply_overrides(c, f.overrides);
  if (auto s = env_seed()) c.seed = *s;
  if (f.seed) c.seed = *f.seed;
  validate(c);
  return c;
}

inline std::filesystem::path prepare_out(const CommonRunFlags& f, const ExperimentConfig& c) {
  std::filesystem::path dir(f.out_dir);
  std::filesystem::create_directories(dir);
  write_text(dir / "resolved-config.json", dump(to_json(c)));
  return dir;
}

inline void append_round_log(const std::filesystem::path& dir, const Report& report, const std::string& tag = {}) {
  std::ofstream log(dir / "round-log.jsonl", std::ios::binary | std::ios::app);
  if (!log) throw std::runtime_error("cannot append to round-log.jsonl");
  for (std::size_t r = 0; r < report.repeats.size(); ++r)
    for (const auto& m : report.repeats[r].round_log) {
      nlohmann::json line = to_json(m);
      if (!tag.empty()) line["sweep_cell"] = tag;
      line["mode"] = report.mode;
      line["repeat"] = r;
      line["seed"] = report.repeats[r].seed;
      log << line.dump() << '\n';
    }
}

inline std::string summary_line(const Report& r) {
  return "mode=" + r.mode + " acc=" + fixed4(r.mean_acc) + " ± " + fixed4(r.std_acc.value_or(0.0));
}

inline std::string csv_std(const Report& r) { return r.std_acc ? format_double(*r.std_acc) : std::string(); }

inline int cmd_gen_data(std::size_t n, int dim, int classes, double sep, std::uint64_t seed, const std::string& out) {
  if (n == 0) throw UsageError("--n must be positive");
  if (dim < 1) throw UsageError("--dim must be positive");
  if (classes < 2) throw UsageError("--classes must be at least 2");
  if (!(sep > 0.0)) throw UsageError("--sep must be positive");
  write_csv(generate_synthetic(n, dim, classes, sep, seed), out);
  return exit_ok;
}

inline int cmd_run(const CommonRunFlags& f, std::ostream& out) {
  const ExperimentConfig c = resolve_config(f);
  const auto dir = prepare_out(f, c);
  std::vector<RepeatArtifacts> artifacts;
  const Report report = run_experiment(c, f.workers, &artifacts);

  nlohmann::json models = nlohmann::json::array();
  for (const auto& a : artifacts) models.push_back(to_json(a.seed_model));
  write_text(dir / "seed-model.json", dump(models));
  append_round_log(dir, report);
  if (uses_feedback(c.resolved_mode()))
    for (std::size_t r = 0; r < artifacts.size(); ++r)
      write_feedback_log(artifacts[r].feedback, (dir / ("feedback-log-" + std::to_string(r) + ".csv")).string());
  write_text(dir / "report.json", dump(to_json(report)));
  out << summary_line(report) << '\n';
  return exit_ok;
}

struct SweepFlags {
  std::vector<double> gammas;
  std::vector<double> deltas;
  bool behaviors = false;
  bool modes = false;
};

inline int cmd_sweep(const CommonRunFlags& f, const SweepFlags& s, std::ostream& out) {
  const bool grid = !s.gammas.empty() || !s.deltas.empty();
  if (int(grid) + int(s.behaviors) + int(s.modes) != 1)
    throw UsageError("sweep needs exactly one of --gammas/--deltas, --behaviors or --modes");
  if (grid && (s.gammas.empty() || s.deltas.empty())) throw UsageError("--gammas and --deltas must both be non-empty");
  for (double x : s.gammas)
    if (!(x >= 0.0 && x <= 1.0)) throw UsageError("--gammas values must lie in [0, 1]");
  for (double x : s.deltas)
    if (!(x >= 0.0 && x <= 1.0)) throw UsageError("--deltas values must lie in [0, 1]");

  const ExperimentConfig c = resolve_config(f);
  if (s.behaviors && c.profiles_path.empty())
    throw ConfigError("config key 'profiles_path': required for the behavior sweep");
  const auto dir = prepare_out(f, c);
  nlohmann::json reports = nlohmann::json::array();
  std::string csv;

  if (grid) {
    const auto sweep = sweep_noise(c, s.gammas, s.deltas, f.workers);
    csv = "gamma,delta,mean_acc,std_acc\n";
    for (std::size_t i = 0; i < sweep.gammas.size(); ++i)
      for (std::size_t j = 0; j < sweep.deltas.size(); ++j) {
        const auto& r = sweep.cells[i][j];
        const std::string tag = format_double(sweep.gammas[i]) + "," + format_double(sweep.deltas[j]);
        csv += tag + "," + format_double(r.mean_acc) + "," + csv_std(r) + "\n";
        append_round_log(dir, r, tag);
        auto j_r = to_json(r);
        j_r["gamma"] = sweep.gammas[i];
        j_r["delta"] = sweep.deltas[j];
        reports.push_back(std::move(j_r));
        out << "gamma=" << format_double(sweep.gammas[i]) << " delta=" << format_double(sweep.deltas[j]) << ' '
            << summary_line(r) << '\n';
      }
    write_text(dir / "noise-sweep.csv", csv);
  } else if (s.behaviors) {
    csv = "behavior,mean_acc,std_acc\n";
    for (const auto& [kind, r] : sweep_behaviors(c, f.workers)) {
      csv += std::string(to_string(kind)) + "," + format_double(r.mean_acc) + "," + csv_std(r) + "\n";
      append_round_log(dir, r, to_string(kind));
      auto j_r = to_json(r);
      j_r["behavior"] = to_string(kind);
      reports.push_back(std::move(j_r));
      out << "behavior=" << to_string(kind) << ' ' << summary_line(r) << '\n';
    }
    write_text(dir / "behavior-sweep.csv", csv);
  } else {
    csv = "mode,mean_acc,std_acc\n";
    for (const auto& [mode, r] : sweep_modes(c, f.workers)) {
      csv += std::string(to_string(mode)) + "," + format_double(r.mean_acc) + "," + csv_std(r) + "\n";
      append_round_log(dir, r, to_string(mode));
      reports.push_back(to_json(r));
      out << summary_line(r) << '\n';
    }
    write_text(dir / "mode-sweep.csv", csv);
  }
  write_text(dir / "report.json", dump(reports));
  return exit_ok;
}

inline int cmd_estimate_noise(const std::string& log_path, const std::string& out_path, std::ostream& out) {
  const auto records = read_feedback_log(log_path);
  const std::string text = dump(estimate_log(records));
  if (out_path.empty())
    out << text;
  else
    write_text(out_path, text);
  return exit_ok;
}

}  // namespace detail

/// Entry point shared by the fedfeed binary and the tests.
/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Federated learning from simulated user feedback", "fedfeed"};
  app.require_subcommand(1);

  std::size_t gen_n = 20000;
  int gen_dim = 16, gen_classes = 4;
  double gen_sep = 2.0;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic Gaussian-cluster dataset as CSV");
  gen->add_option("--n", gen_n, "rows")->capture_default_str();
  gen->add_option("--dim", gen_dim, "feature dimension")->capture_default_str();
  gen->add_option("--classes", gen_classes, "number of classes")->capture_default_str();
  gen->add_option("--sep", gen_sep, "minimum distance between class centroids")->capture_default_str();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "seed; beats FEDFEED_SEED");
  gen->add_option("--out", gen_out, "output CSV")->required();

  detail::CommonRunFlags run_flags;
  auto* run = app.add_subcommand("run", "run one experiment and write its artifacts");
  detail::add_common(run, run_flags);

  detail::CommonRunFlags sweep_flags;
  detail::SweepFlags sweep_spec;
  auto* sweep = app.add_subcommand("sweep", "noise grid, behavior or mode sweep");
  detail::add_common(sweep, sweep_flags);
  const CLI::Validator non_empty([](std::string& v) { return v.empty() ? std::string("empty grid value") : std::string(); },
                                 "", "NONEMPTY");
  sweep->add_option("--gammas", sweep_spec.gammas, "comma-separated gamma grid")->delimiter(',')->check(non_empty);
  sweep->add_option("--deltas", sweep_spec.deltas, "comma-separated delta grid")->delimiter(',')->check(non_empty);
  sweep->add_flag("--behaviors", sweep_spec.behaviors, "the five user behaviors");
  sweep->add_flag("--modes", sweep_spec.modes, "all five training modes");

  std::string est_log, est_out;
  auto* est = app.add_subcommand("estimate-noise", "closed-form noise estimates from a feedback log");
  est->add_option("log", est_log, "feedback log CSV")->required();
  est->add_option("--out", est_out, "write JSON here instead of standard output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return exit_usage;
  }

  try {
    if (*gen) {
      if (!*gen_seed_opt)
        if (auto s = detail::env_seed()) gen_seed = *s;
      return detail::cmd_gen_data(gen_n, gen_dim, gen_classes, gen_sep, gen_seed, gen_out);
    }
    if (*run) return detail::cmd_run(run_flags, out);
    if (*sweep) return detail::cmd_sweep(sweep_flags, sweep_spec, out);
    if (*est) return detail::cmd_estimate_noise(est_log, est_out, out);
  } catch (const detail::UsageError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return exit_usage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_usage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_runtime;
  }
  return exit_usage;
}

}  // namespace fedfeed
