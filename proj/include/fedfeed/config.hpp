#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedfeed/dataset.hpp"
#include "fedfeed/errors.hpp"
#include "fedfeed/feedback.hpp"
#include "fedfeed/model.hpp"
#include "json.hpp"

namespace fedfeed {

enum class Mode { initial_only, self_training, positive_only, all_feedback, full_supervision };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::initial_only: return "initial_only";
    case Mode::self_training: return "self_training";
    case Mode::positive_only: return "positive_only";
    case Mode::all_feedback: return "all_feedback";
    case Mode::full_supervision: return "full_supervision";
  }
  return "?";
}

inline std::optional<Mode> mode_from_string(const std::string& s) {
  for (auto m : {Mode::initial_only, Mode::self_training, Mode::positive_only, Mode::all_feedback,
                 Mode::full_supervision})
    if (s == to_string(m)) return m;
  return std::nullopt;
}

inline bool uses_feedback(Mode m) { return m == Mode::positive_only || m == Mode::all_feedback; }

/// Every knob of an experiment. The JSON form is flat; see config_schema()
/// for the key list. Execution settings that cannot change results (worker
/// count, output paths) are deliberately not part of it.
struct ExperimentConfig {
  // data
  std::string data_source = "synthetic";  // synthetic | csv
  std::string data_path;
  std::string test_path;
  std::int64_t n = 20000;
  int dim = 16;
  int classes = 4;
  double class_sep = 2.0;
  std::int64_t test_size = 5000;
  double test_fraction = 0.2;
  // splits and clients
  double k = 0.01;
  double v = 0.2;
  bool stratified = true;
  int clients = 15;
  std::string partition = "uniform_class";
  double dirichlet_beta = 100.0;
  // feedback behaviour
  std::string behavior = "fixed";
  double gamma = 1.0;
  double delta = 1.0;
  double beta_high = 10.0;
  double beta_low = 1.0;
  double a_gamma = 1.0, b_gamma = 1.0, a_delta = 1.0, b_delta = 1.0;
  std::string profiles_path;
  // training objective
  std::string mode = "all_feedback";
  bool robust = false;
  std::optional<double> scheduler_p = 0.8;  // nullopt = "auto"
  double rce_a = -4.0;
  std::string schedule_unit = "epoch";  // epoch or round
  // model and optimisation
  std::string architecture = "linear";
  int hidden = 32;
  std::string init = "zeros";
  double init_sigma = 0.01;
  std::optional<double> lr;  // default depends on architecture
  int batch_size = 8;
  int local_epochs = 5;
  int max_rounds = 50;
  int patience = 5;
  double min_delta = 0.001;
  bool weighted_fedavg = false;
  double client_fraction = 1.0;
  bool refresh_pseudo_labels = false;
  int seed_epochs = 100;
  std::optional<double> seed_lr;
  double seed_tol = 1e-6;
  // reproducibility
  std::uint64_t seed = 1;
  int repeats = 5;
  bool vary_seed_per_repeat = true;

  double resolved_lr() const { return lr.value_or(architecture == "mlp" ? 0.05 : 0.1); }
  double resolved_seed_lr() const { return seed_lr.value_or(resolved_lr()); }
  Mode resolved_mode() const { return *mode_from_string(mode); }
};

namespace detail {

enum class KeyType { string, number, integer, boolean, number_or_auto, optional_number };

struct KeySpec {
  const char* name;
  KeyType type;
};

inline const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = {
      {"data_source", KeyType::string},      {"data_path", KeyType::string},
      {"test_path", KeyType::string},        {"n", KeyType::integer},
      {"dim", KeyType::integer},             {"classes", KeyType::integer},
      {"class_sep", KeyType::number},        {"test_size", KeyType::integer},
      {"test_fraction", KeyType::number},    {"k", KeyType::number},
      {"v", KeyType::number},                {"stratified", KeyType::boolean},
      {"clients", KeyType::integer},         {"partition", KeyType::string},
      {"dirichlet_beta", KeyType::number},   {"behavior", KeyType::string},
      {"gamma", KeyType::number},            {"delta", KeyType::number},
      {"beta_high", KeyType::number},        {"beta_low", KeyType::number},
      {"a_gamma", KeyType::number},          {"b_gamma", KeyType::number},
      {"a_delta", KeyType::number},          {"b_delta", KeyType::number},
      {"profiles_path", KeyType::string},    {"mode", KeyType::string},
      {"robust", KeyType::boolean},          {"scheduler_p", KeyType::number_or_auto},
      {"rce_a", KeyType::number},            {"schedule_unit", KeyType::string},
      {"architecture", KeyType::string},     {"hidden", KeyType::integer},
      {"init", KeyType::string},             {"init_sigma", KeyType::number},
      {"lr", KeyType::optional_number},      {"batch_size", KeyType::integer},
      {"local_epochs", KeyType::integer},    {"max_rounds", KeyType::integer},
      {"patience", KeyType::integer},        {"min_delta", KeyType::number},
      {"weighted_fedavg", KeyType::boolean}, {"client_fraction", KeyType::number},
      {"refresh_pseudo_labels", KeyType::boolean}, {"seed_epochs", KeyType::integer},
      {"seed_lr", KeyType::optional_number}, {"seed_tol", KeyType::number},
      {"seed", KeyType::integer},            {"repeats", KeyType::integer},
      {"vary_seed_per_repeat", KeyType::boolean},
  };
  return keys;
}

inline void check_type(const std::string& key, const nlohmann::json& v, KeyType t) {
  bool ok = false;
  switch (t) {
    case KeyType::string: ok = v.is_string(); break;
    case KeyType::number: ok = v.is_number(); break;
    case KeyType::integer: ok = v.is_number_integer(); break;
    case KeyType::boolean: ok = v.is_boolean(); break;
    case KeyType::number_or_auto: ok = v.is_number() || (v.is_string() && v.get<std::string>() == "auto"); break;
    case KeyType::optional_number: ok = v.is_number() || v.is_null(); break;
  }
  if (!ok) throw ConfigError("config key '" + key + "' has the wrong type");
}

inline void require(bool cond, const std::string& key, const std::string& why) {
  if (!cond) throw ConfigError("config key '" + key + "': " + why);
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["data_source"] = c.data_source;
  j["data_path"] = c.data_path;
  j["test_path"] = c.test_path;
  j["n"] = c.n;
  j["dim"] = c.dim;
  j["classes"] = c.classes;
  j["class_sep"] = c.class_sep;
  j["test_size"] = c.test_size;
  j["test_fraction"] = c.test_fraction;
  j["k"] = c.k;
  j["v"] = c.v;
  j["stratified"] = c.stratified;
  j["clients"] = c.clients;
  j["partition"] = c.partition;
  j["dirichlet_beta"] = c.dirichlet_beta;
  j["behavior"] = c.behavior;
  j["gamma"] = c.gamma;
  j["delta"] = c.delta;
  j["beta_high"] = c.beta_high;
  j["beta_low"] = c.beta_low;
  j["a_gamma"] = c.a_gamma;
  j["b_gamma"] = c.b_gamma;
  j["a_delta"] = c.a_delta;
  j["b_delta"] = c.b_delta;
  j["profiles_path"] = c.profiles_path;
  j["mode"] = c.mode;
  j["robust"] = c.robust;
  j["scheduler_p"] = c.scheduler_p ? nlohmann::json(*c.scheduler_p) : nlohmann::json("auto");
  j["rce_a"] = c.rce_a;
  j["schedule_unit"] = c.schedule_unit;
  j["architecture"] = c.architecture;
  j["hidden"] = c.hidden;
  j["init"] = c.init;
  j["init_sigma"] = c.init_sigma;
  j["lr"] = c.resolved_lr();
  j["batch_size"] = c.batch_size;
  j["local_epochs"] = c.local_epochs;
  j["max_rounds"] = c.max_rounds;
  j["patience"] = c.patience;
  j["min_delta"] = c.min_delta;
  j["weighted_fedavg"] = c.weighted_fedavg;
  j["client_fraction"] = c.client_fraction;
  j["refresh_pseudo_labels"] = c.refresh_pseudo_labels;
  j["seed_epochs"] = c.seed_epochs;
  j["seed_lr"] = c.resolved_seed_lr();
  j["seed_tol"] = c.seed_tol;
  j["seed"] = c.seed;
  j["repeats"] = c.repeats;
  j["vary_seed_per_repeat"] = c.vary_seed_per_repeat;
  return j;
}

/// Semantic checks shared by file loading and programmatic construction.
inline void validate(const ExperimentConfig& c) {
  using detail::require;
  require(c.data_source == "synthetic" || c.data_source == "csv", "data_source", "must be synthetic or csv");
  require(c.data_source != "csv" || !c.data_path.empty(), "data_path", "required when data_source is csv");
  require(c.n >= 1, "n", "must be >= 1");
  require(c.dim >= 1, "dim", "must be >= 1");
  require(c.classes >= 2, "classes", "must be >= 2");
  require(c.class_sep >= 0, "class_sep", "must be >= 0");
  require(c.test_size >= 1, "test_size", "must be >= 1");
  require(c.test_fraction > 0 && c.test_fraction < 1, "test_fraction", "must lie in (0,1)");
  require(c.k > 0 && c.k < 1, "k", "must lie in (0,1)");
  require(c.v > 0 && c.v < 1, "v", "must lie in (0,1)");
  require(c.k + c.v < 1, "v", "k + v must be < 1");
  require(c.clients >= 1, "clients", "must be >= 1");
  require(c.partition == "uniform_class" || c.partition == "dirichlet", "partition",
          "must be uniform_class or dirichlet");
  require(c.dirichlet_beta > 0, "dirichlet_beta", "must be > 0");
  require(behavior_from_string(c.behavior).has_value(), "behavior", "unknown behavior '" + c.behavior + "'");
  require(c.gamma >= 0 && c.gamma <= 1, "gamma", "must lie in [0,1]");
  require(c.delta >= 0 && c.delta <= 1, "delta", "must lie in [0,1]");
  require(c.beta_high > 0 && c.beta_low > 0, "beta_high", "Beta shapes must be > 0");
  require(c.a_gamma > 0 && c.b_gamma > 0 && c.a_delta > 0 && c.b_delta > 0, "a_gamma", "Beta shapes must be > 0");
  require(c.behavior != "empirical" || !c.profiles_path.empty(), "profiles_path", "required for empirical behavior");
  require(mode_from_string(c.mode).has_value(), "mode", "unknown mode '" + c.mode + "'");
  require(!c.scheduler_p || (*c.scheduler_p > 0 && *c.scheduler_p < 1), "scheduler_p", "must lie in (0,1) or be auto");
  require(c.rce_a < 0, "rce_a", "must be negative");
  require(c.schedule_unit == "round" || c.schedule_unit == "epoch", "schedule_unit", "must be round or epoch");
  require(c.architecture == "linear" || c.architecture == "mlp", "architecture", "must be linear or mlp");
  require(c.hidden >= 1, "hidden", "must be >= 1");
  require(c.init == "zeros" || c.init == "gaussian", "init", "must be zeros or gaussian");
  require(c.init_sigma >= 0, "init_sigma", "must be >= 0");
  require(c.resolved_lr() >= 0, "lr", "must be >= 0");
  require(c.batch_size >= 1, "batch_size", "must be >= 1");
  require(c.local_epochs >= 0, "local_epochs", "must be >= 0");
  require(c.max_rounds >= 1, "max_rounds", "must be >= 1");
  require(c.patience >= 0, "patience", "must be >= 0");
  require(c.min_delta >= 0, "min_delta", "must be >= 0");
  require(c.client_fraction > 0 && c.client_fraction <= 1, "client_fraction", "must lie in (0,1]");
  require(c.seed_epochs >= 1, "seed_epochs", "must be >= 1");
  require(c.resolved_seed_lr() > 0, "seed_lr", "must be > 0");
  require(c.repeats >= 1, "repeats", "must be >= 1");
}

/// Strict parse: unknown keys and wrong types are rejected by name.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::set<std::string> known;
  for (const auto& k : detail::config_keys()) known.insert(k.name);
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
    for (const auto& spec : detail::config_keys())
      if (key == spec.name) detail::check_type(key, value, spec.type);
  }
  ExperimentConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("data_source", c.data_source);
  get("data_path", c.data_path);
  get("test_path", c.test_path);
  get("n", c.n);
  get("dim", c.dim);
  get("classes", c.classes);
  get("class_sep", c.class_sep);
  get("test_size", c.test_size);
  get("test_fraction", c.test_fraction);
  get("k", c.k);
  get("v", c.v);
  get("stratified", c.stratified);
  get("clients", c.clients);
  get("partition", c.partition);
  get("dirichlet_beta", c.dirichlet_beta);
  get("behavior", c.behavior);
  get("gamma", c.gamma);
  get("delta", c.delta);
  get("beta_high", c.beta_high);
  get("beta_low", c.beta_low);
  get("a_gamma", c.a_gamma);
  get("b_gamma", c.b_gamma);
  get("a_delta", c.a_delta);
  get("b_delta", c.b_delta);
  get("profiles_path", c.profiles_path);
  get("mode", c.mode);
  get("robust", c.robust);
  if (j.contains("scheduler_p")) {
    const auto& p = j.at("scheduler_p");
    c.scheduler_p = p.is_string() ? std::nullopt : std::optional<double>(p.get<double>());
  }
  get("rce_a", c.rce_a);
  get("schedule_unit", c.schedule_unit);
  get("architecture", c.architecture);
  get("hidden", c.hidden);
  get("init", c.init);
  get("init_sigma", c.init_sigma);
  if (j.contains("lr") && !j.at("lr").is_null()) c.lr = j.at("lr").get<double>();
  get("batch_size", c.batch_size);
  get("local_epochs", c.local_epochs);
  get("max_rounds", c.max_rounds);
  get("patience", c.patience);
  get("min_delta", c.min_delta);
  get("weighted_fedavg", c.weighted_fedavg);
  get("client_fraction", c.client_fraction);
  get("refresh_pseudo_labels", c.refresh_pseudo_labels);
  get("seed_epochs", c.seed_epochs);
  if (j.contains("seed_lr") && !j.at("seed_lr").is_null()) c.seed_lr = j.at("seed_lr").get<double>();
  get("seed_tol", c.seed_tol);
  if (j.contains("seed")) {
    if (j.at("seed").is_number_unsigned())
      c.seed = j.at("seed").get<std::uint64_t>();
    else {
      const auto s = j.at("seed").get<std::int64_t>();
      detail::require(s >= 0, "seed", "must be >= 0");
      c.seed = static_cast<std::uint64_t>(s);
    }
  }
  get("repeats", c.repeats);
  get("vary_seed_per_repeat", c.vary_seed_per_repeat);
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

/// Applies `key=value`; the value is read as JSON when it parses, otherwise
/// as a bare string (so mode=all_feedback works unquoted).
inline ExperimentConfig apply_overrides(const ExperimentConfig& base, const std::vector<std::string>& overrides) {
  nlohmann::json j = to_json(base);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' must look like key=value");
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    j[key] = value;
  }
  return config_from_json(j);
}

}  // namespace fedfeed
