#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "tensegrity/scenario_config.hpp"

using namespace tensegrity;
using namespace tensegrity::harness;

namespace {

std::string temp_file(const std::string& name, const std::string& content) {
  const auto path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream(path) << content;
  return path;
}

}  // namespace

TEST(Config, UnknownKeysAreErrors) {
  const auto base = default_config(ScenarioKind::Local);
  EXPECT_THROW(from_json(nlohmann::json::parse(R"({"durration": 5})"), base), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json::parse(R"({"filter": {"state_nois": 0.1}})"), base), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json::parse(R"({"global": {"rolls": [{"time": 3, "cabels": [0]}]}})"), base),
               ConfigError);
  try {
    from_json(nlohmann::json::parse(R"({"ranging": {"skew": 3}})"), base);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("ranging.skew"), std::string::npos);
  }
}

TEST(Config, RoundTripIsExact) {
  for (auto kind : {ScenarioKind::Local, ScenarioKind::Global}) {
    auto c = default_config(kind);
    c.seed = 1234567890123ULL;
    c.filter.state_noise = 0.1 + 1e-17;
    c.ranging.skew_ppm = 1.0 / 3.0;
    const auto j = to_json(c);
    const auto back = from_json(j, ScenarioConfig{});
    EXPECT_EQ(to_json(back).dump(), j.dump());
  }
}

TEST(Config, PartialOverrideKeepsDefaults) {
  const auto base = default_config(ScenarioKind::Global);
  const auto c = from_json(nlohmann::json::parse(R"({"seed": 9, "filter": {"rate": 20}})"), base);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.filter.rate, 20.0);
  EXPECT_EQ(c.filter.state_noise, base.filter.state_noise);
  EXPECT_EQ(c.duration, 70.0);
  EXPECT_EQ(c.imu.spurious.size(), 1u);
}

TEST(Config, ValidationErrors) {
  const auto base = default_config(ScenarioKind::Local);
  EXPECT_THROW(from_json(nlohmann::json::parse(R"({"duration": -1})"), base), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json::parse(R"({"setting": "half"})"), base), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json::parse(R"({"filter": {"angle_mode": "roll"}})"), base), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json::parse(R"({"anchors": {"priors": [0, 1]}})"), base), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json::parse(R"({"seed": "one"})"), base), ConfigError);
}

TEST(Config, SettingNames) {
  for (const char* name : {"full", "no_imu", "full_const_offset", "anchors_4"}) {
    EXPECT_EQ(to_string(parse_setting(name)), name);
  }
  EXPECT_THROW(parse_setting("anchors4"), ConfigError);
  EXPECT_EQ(parse_scenario("global"), ScenarioKind::Global);
  EXPECT_THROW(parse_scenario("roll"), ConfigError);
}

TEST(Config, LoadFromFile) {
  const auto path = temp_file("config_test.json", R"({"scenario": "global", "seed": 4})");
  const auto c = load_config(path, default_config(ScenarioKind::Local));
  EXPECT_EQ(c.scenario, ScenarioKind::Global);
  EXPECT_EQ(c.seed, 4u);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config("/nonexistent/config.json", c), ConfigError);
  const auto bad = temp_file("config_bad.json", "{\"seed\": ");
  EXPECT_THROW(load_config(bad, c), ConfigError);
  std::filesystem::remove(bad);
}

TEST(Config, ShippedFilesMatchDefaults) {
  for (auto kind : {ScenarioKind::Local, ScenarioKind::Global}) {
    const auto path = std::string(TENSEGRITY_CONFIG_DIR) + "/" + to_string(kind) + ".json";
    const auto other = kind == ScenarioKind::Local ? ScenarioKind::Global : ScenarioKind::Local;
    const auto loaded = load_config(path, default_config(other));
    EXPECT_EQ(to_json(loaded), to_json(default_config(kind))) << path;
  }
}

TEST(AnchorLayout, CoversNinetyOneSquareMetres) {
  const AnchorConfig a;
  const auto p = anchor_positions(a);
  ASSERT_EQ(p.size(), 8u);
  double xmin = 1e9, xmax = -1e9, ymin = 1e9, ymax = -1e9;
  for (const auto& q : p) {
    xmin = std::min(xmin, q.x());
    xmax = std::max(xmax, q.x());
    ymin = std::min(ymin, q.y());
    ymax = std::max(ymax, q.y());
  }
  EXPECT_NEAR((xmax - xmin) * (ymax - ymin), 91.0, 0.5);
  const auto c = default_config(ScenarioKind::Local);
  EXPECT_GT(c.robot_start[0], xmin);
  EXPECT_LT(c.robot_start[0], xmax);
  EXPECT_GT(c.robot_start[1], ymin);
  EXPECT_LT(c.robot_start[1], ymax);
}

TEST(AnchorLayout, ExplicitPositionsOverride) {
  AnchorConfig a;
  a.positions = {{{1, 2, 3}}, {{4, 5, 6}}};
  const auto p = anchor_positions(a);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[1], Eigen::Vector3d(4, 5, 6));
}

TEST(ModelFile, Load) {
  const auto path = temp_file("model_test.json", R"({
    "nodes": [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
    "masses": [1, 1, 2],
    "members": [
      {"kind": "bar", "nodes": [0, 1], "stiffness": 1000, "rest_length": 1},
      {"kind": "cable", "nodes": [1, 2], "stiffness": 50, "damping": 2, "rest_length": 1.2, "actuated": true},
      {"kind": "cable", "nodes": [0, 2], "stiffness": 50, "rest_length": 0.9}
    ],
    "base_face": [0, 1, 2]})");
  const auto m = read_model_file(path);
  std::filesystem::remove(path);
  EXPECT_EQ(m.model.node_count(), 3);
  EXPECT_EQ(m.model.member_count(), 3);
  EXPECT_EQ(m.model.actuated_indices(), std::vector<int>{1});
  EXPECT_EQ(m.model.member(1).damping, 2.0);
  EXPECT_EQ(m.nominal(2, 1), 1.0);
}

TEST(ModelFile, BadKind) {
  const auto path = temp_file("model_bad.json", R"({"nodes": [[0,0,0],[1,0,0]], "masses": [1, 1],
    "members": [{"kind": "strut", "nodes": [0, 1], "stiffness": 1, "rest_length": 1}]})");
  EXPECT_THROW(read_model_file(path), ConfigError);
  std::filesystem::remove(path);
}
