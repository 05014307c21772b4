#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "fedfeed/config.hpp"

using namespace fedfeed;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, Defaults) {
  const ExperimentConfig c;
  EXPECT_EQ(c.n, 20000);
  EXPECT_EQ(c.clients, 15);
  EXPECT_DOUBLE_EQ(c.k, 0.01);
  EXPECT_DOUBLE_EQ(c.v, 0.2);
  EXPECT_EQ(c.local_epochs, 5);
  EXPECT_EQ(c.batch_size, 8);
  EXPECT_EQ(c.patience, 5);
  EXPECT_DOUBLE_EQ(c.min_delta, 0.001);
  EXPECT_DOUBLE_EQ(c.rce_a, -4.0);
  EXPECT_DOUBLE_EQ(*c.scheduler_p, 0.8);
  EXPECT_DOUBLE_EQ(c.resolved_lr(), 0.1);
  ExperimentConfig m;
  m.architecture = "mlp";
  EXPECT_DOUBLE_EQ(m.resolved_lr(), 0.05);
  EXPECT_NO_THROW(validate(c));
  EXPECT_EQ(config_from_json(json::object()).seed, 1u);
}

TEST(Config, UnknownKeyIsNamed) {
  const auto msg = error_of({{"clinets", 3}});
  EXPECT_NE(msg.find("clinets"), std::string::npos) << msg;
}

TEST(Config, WrongTypeIsNamed) {
  for (const json& bad : {json{{"clients", "three"}}, json{{"clients", 2.5}}, json{{"robust", 1}},
                          json{{"gamma", "high"}}, json{{"scheduler_p", "sometimes"}}}) {
    const auto msg = error_of(bad);
    EXPECT_NE(msg.find(bad.begin().key()), std::string::npos) << msg;
  }
  EXPECT_NE(error_of(json::array()), "");
}

TEST(Config, SemanticChecksNameTheKey) {
  const std::vector<std::pair<json, std::string>> cases{
      {{{"k", 0.0}}, "k"},
      {{{"k", 0.5}, {"v", 0.6}}, "v"},
      {{{"classes", 1}}, "classes"},
      {{{"gamma", 1.5}}, "gamma"},
      {{{"scheduler_p", 1.0}}, "scheduler_p"},
      {{{"mode", "supervised"}}, "mode"},
      {{{"behavior", "random"}}, "behavior"},
      {{{"behavior", "empirical"}}, "profiles_path"},
      {{{"max_rounds", 0}}, "max_rounds"},
      {{{"rce_a", 1.0}}, "rce_a"},
      {{{"client_fraction", 0.0}}, "client_fraction"},
      {{{"schedule_unit", "step"}}, "schedule_unit"},
      {{{"seed", -1}}, "seed"},
      {{{"data_source", "csv"}}, "data_path"},
  };
  for (const auto& [j, key] : cases) {
    const auto msg = error_of(j);
    EXPECT_NE(msg.find("'" + key + "'"), std::string::npos) << j.dump() << " -> " << msg;
  }
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c;
  c.mode = "positive_only";
  c.robust = true;
  c.scheduler_p.reset();
  c.gamma = 0.3;
  c.architecture = "mlp";
  c.hidden = 12;
  c.seed = 18446744073709551615ull;
  const auto j = to_json(c);
  EXPECT_EQ(j.at("scheduler_p"), "auto");
  const auto back = config_from_json(json::parse(j.dump()));
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_FALSE(back.scheduler_p.has_value());
}

TEST(Config, Overrides) {
  const auto c = apply_overrides(ExperimentConfig{}, {"mode=initial_only", "clients=4", "scheduler_p=\"auto\"",
                                                      "robust=true", "gamma=0.25"});
  EXPECT_EQ(c.mode, "initial_only");
  EXPECT_EQ(c.clients, 4);
  EXPECT_FALSE(c.scheduler_p.has_value());
  EXPECT_TRUE(c.robust);
  EXPECT_DOUBLE_EQ(c.gamma, 0.25);
  EXPECT_FALSE(apply_overrides(ExperimentConfig{}, {"scheduler_p=auto"}).scheduler_p.has_value());
  EXPECT_THROW(apply_overrides(ExperimentConfig{}, {"clients"}), ConfigError);
  EXPECT_THROW(apply_overrides(ExperimentConfig{}, {"=3"}), ConfigError);
  EXPECT_THROW(apply_overrides(ExperimentConfig{}, {"nope=3"}), ConfigError);
  EXPECT_THROW(apply_overrides(ExperimentConfig{}, {"clients=many"}), ConfigError);
}

TEST(Config, LoadFromFile) {
  const std::string path = testing::TempDir() + "fedfeed_config_test.json";
  {
    std::ofstream(path) << R"({"mode": "self_training", "repeats": 2})";
  }
  const auto c = load_config(path);
  EXPECT_EQ(c.mode, "self_training");
  EXPECT_EQ(c.repeats, 2);
  {
    std::ofstream(path) << "{ not json";
  }
  EXPECT_THROW(load_config(path), ConfigError);
  std::remove(path.c_str());
  EXPECT_THROW(load_config(path), ConfigError);
}

TEST(Mode, NamesRoundTrip) {
  for (const char* name : {"initial_only", "self_training", "positive_only", "all_feedback", "full_supervision"})
    EXPECT_STREQ(to_string(*mode_from_string(name)), name);
  EXPECT_FALSE(mode_from_string("everything").has_value());
  EXPECT_TRUE(uses_feedback(Mode::positive_only));
  EXPECT_FALSE(uses_feedback(Mode::self_training));
}
