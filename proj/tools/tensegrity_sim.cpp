// Command-line front end: scenario simulation, calibration from a ranging log,
// and synthetic calibration logs.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "tensegrity/calibration.hpp"
#include "tensegrity/export.hpp"
#include "tensegrity/harness.hpp"

using namespace tensegrity;

namespace {

harness::ScenarioConfig build_config(const std::string& scenario, const std::string& config_path,
                                     const std::string& model_path, std::int64_t seed) {
  harness::ScenarioConfig c = harness::default_config(harness::parse_scenario(scenario));
  if (!config_path.empty()) c = harness::load_config(config_path, c);
  if (!model_path.empty()) c.model.path = model_path;
  if (seed >= 0) c.seed = static_cast<std::uint64_t>(seed);
  harness::validate(c);
  return c;
}

void print_summary(const harness::ScenarioResult& r) {
  const auto& m = r.metrics;
  std::printf("%s/%s: rms %.4f m (actuated %.4f, unactuated %.4f), settle %.1f s, lag %.3f s, filter %.1f s\n",
              harness::to_string(r.config.scenario).c_str(), harness::to_string(r.setting).c_str(), m.rms_all,
              m.actuated_rms, m.unactuated_rms, m.settle_time, m.lag, r.filter_seconds);
  if (!m.true_transitions.empty()) {
    int matched = 0;
    for (bool b : m.transition_matched) matched += b ? 1 : 0;
    std::printf("  face transitions matched %d/%zu, post-roll centroid error max %.3f m\n", matched,
                m.true_transitions.size(), m.max_post_roll_centroid_error);
  }
  for (std::size_t k = 0; k < m.recovery_time.size(); ++k) {
    std::printf("  spurious IMU sample %zu: recovery %.1f s (peak error %.3f m)\n", k, m.recovery_time[k],
                m.spurious_peak_error[k]);
  }
}

int cmd_simulate(const std::string& scenario, const std::string& setting, const std::string& config_path,
                 const std::string& model_path, std::int64_t seed, const std::string& out, bool all) {
  harness::ScenarioConfig c = build_config(scenario, config_path, model_path, seed);
  if (!setting.empty()) c.setting = harness::parse_setting(setting);
  const harness::ScenarioData data = harness::prepare_scenario(c);
  std::vector<harness::Setting> settings{c.setting};
  if (all) {
    settings = {harness::Setting::Full, harness::Setting::NoImu, harness::Setting::FullConstOffset,
                harness::Setting::Anchors4};
  }
  for (auto s : settings) {
    const auto result = harness::run_setting(data, s);
    const std::string dir = all ? (std::filesystem::path(out) / harness::to_string(s)).string() : out;
    harness::write_run(dir, data, result);
    print_summary(result);
  }
  return 0;
}

int cmd_calibrate(const std::string& log_path, const std::string& priors_path, const std::string& out,
                  const std::string& model_path, int nodes, double mount, int min_internal, std::int64_t seed) {
  std::ifstream in(log_path);
  if (!in) throw std::runtime_error("cannot open " + log_path);
  const auto log = ranging::read_measurement_log(in);

  harness::ModelConfig mc;
  mc.path = model_path;
  const auto loaded = harness::load_model(mc);
  if (nodes < 0) nodes = loaded.model.node_count();

  std::set<int> anchors;
  for (const auto& m : log) {
    if (m.i >= nodes) anchors.insert(m.i);
    if (m.j >= nodes) anchors.insert(m.j);
  }
  std::vector<int> module_ids(nodes);
  for (int i = 0; i < nodes; ++i) module_ids[i] = i;

  calibration::DatasetOptions opts;
  opts.sample_period = 1.0;
  opts.max_samples = 0;
  opts.seed = static_cast<std::uint64_t>(std::max<std::int64_t>(seed, 1));
  double length = 0.0;
  for (int b : loaded.model.bar_indices()) {
    opts.bars.emplace_back(loaded.model.plus_node(b), loaded.model.minus_node(b));
    length += loaded.model.member(b).rest_length;
  }
  opts.bar_length = length / static_cast<double>(opts.bars.size()) - 2.0 * mount;
  const auto data = calibration::dataset_from_log(log, {anchors.begin(), anchors.end()}, module_ids, opts);
  const auto priors = calibration::read_priors_file(priors_path, data);

  calibration::CalibrationOptions copts;
  copts.seed = opts.seed;
  const auto result = calibration::calibrate(data, priors, copts);
  const auto internal = calibration::internal_offsets(result, data, min_internal);
  calibration::write_calibration_file(out, calibration::to_file(result, data, internal));
  std::printf("calibration: %zu samples, loss %.6g, %d iterations, %s\n", data.samples.size(), result.loss,
              result.iterations, result.status.c_str());
  for (const auto& w : result.warnings) std::printf("  warning: %s\n", w.c_str());
  return result.converged ? 0 : 2;
}

int cmd_rangelog(const std::string& config_path, const std::string& model_path, std::int64_t seed,
                 const std::string& out, const std::string& priors_out) {
  const harness::ScenarioConfig c = build_config("local", config_path, model_path, seed);
  const auto loaded = harness::load_model(c.model);
  Environment env;
  env.ground = c.ground;
  const Dynamics dynamics(loaded.model, env);
  const NodeMatrix shape = harness::settled_shape(dynamics, loaded.nominal, loaded.base_face, c.presettle, c.sim_dt);
  auto net_rng = harness::make_rng(c.seed, 1);
  const auto net = harness::make_network(c, loaded.model.node_count(), net_rng);
  auto rng = harness::make_rng(c.seed, 4);
  const auto log = harness::calibration_log(c, net, loaded.model, shape, rng);
  std::ofstream file(out);
  if (!file) throw std::runtime_error("cannot write " + out);
  ranging::write_measurement_log(file, log);

  if (!priors_out.empty()) {
    nlohmann::json j;
    j["anchors"] = nlohmann::json::array();
    for (int k : c.anchors.priors) {
      const int id = net.anchor_ids.at(k);
      const auto& p = net.anchors.at(id);
      j["anchors"].push_back({{"id", id}, {"position", {p.x(), p.y(), p.z()}}});
    }
    j["reference_anchor"] = net.anchor_ids.at(c.anchors.reference_anchor);
    j["reference_side"] = c.anchors.reference_side;
    std::ofstream pf(priors_out);
    if (!pf) throw std::runtime_error("cannot write " + priors_out);
    pf << j.dump(2) << '\n';
  }
  std::printf("wrote %zu measurements to %s\n", log.size(), out.c_str());
  return 0;
}

int cmd_defaults(const std::string& scenario, const std::string& out) {
  const auto c = harness::default_config(harness::parse_scenario(scenario));
  const std::string text = harness::to_json(c).dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::fputs(text.c_str(), stdout);
    return 0;
  }
  std::ofstream file(out);
  if (!file) throw std::runtime_error("cannot write " + out);
  file << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensegrity state estimation: simulation, calibration and filtering"};
  app.require_subcommand(1);

  std::string scenario = "local";
  std::string setting;
  std::string config_path;
  std::string model_path;
  std::int64_t seed = -1;
  std::string out = "out";
  bool all = false;
  auto* sim = app.add_subcommand("simulate", "Run a scenario and write trajectories and metrics");
  sim->add_option("--scenario", scenario, "local or global")->check(CLI::IsMember({"local", "global"}));
  sim->add_option("--setting", setting, "full, no_imu, full_const_offset or anchors_4");
  sim->add_flag("--all-settings", all, "Run every setting on the same realization");
  sim->add_option("--config", config_path, "JSON config merged over the scenario defaults");
  sim->add_option("--model", model_path, "Model JSON file (default: built-in six-strut model)");
  sim->add_option("--seed", seed, "Random seed");
  sim->add_option("--out", out, "Output directory");

  std::string log_path;
  std::string priors_path;
  std::string cal_out = "calibration.json";
  int nodes = -1;
  double mount = 0.1;
  int min_internal = 20;
  auto* cal = app.add_subcommand("calibrate", "Estimate anchor positions and pair offsets from a ranging log");
  cal->add_option("--log", log_path, "Measurement log (JSON lines)")->required();
  cal->add_option("--priors", priors_path, "Known anchor positions (JSON)")->required();
  cal->add_option("--out", cal_out, "Calibration output file");
  cal->add_option("--model", model_path, "Model JSON file");
  cal->add_option("--nodes", nodes, "Number of end caps; larger ids are anchors");
  cal->add_option("--mount", mount, "Sensor mount offset along the bar, m");
  cal->add_option("--min-internal", min_internal, "Samples required per internal pair");
  cal->add_option("--seed", seed, "Random seed");

  std::string log_out = "ranging_log.jsonl";
  std::string priors_out;
  auto* rl = app.add_subcommand("rangelog", "Write a synthetic calibration-session ranging log");
  rl->add_option("--config", config_path, "JSON config");
  rl->add_option("--model", model_path, "Model JSON file");
  rl->add_option("--seed", seed, "Random seed");
  rl->add_option("--out", log_out, "Log output file");
  rl->add_option("--priors-out", priors_out, "Also write the prior anchors file");

  std::string defaults_out;
  auto* def = app.add_subcommand("defaults", "Print the default config of a scenario");
  def->add_option("--scenario", scenario, "local or global")->check(CLI::IsMember({"local", "global"}));
  def->add_option("--out", defaults_out, "Output file (default: stdout)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) return cmd_simulate(scenario, setting, config_path, model_path, seed, out, all);
    if (*cal) return cmd_calibrate(log_path, priors_path, cal_out, model_path, nodes, mount, min_internal, seed);
    if (*rl) return cmd_rangelog(config_path, model_path, seed, log_out, priors_out);
    if (*def) return cmd_defaults(scenario, defaults_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
