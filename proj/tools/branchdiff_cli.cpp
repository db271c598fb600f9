// Command-line driver: estimate, study, check, tree, presets.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "branchdiff/analysis.hpp"
#include "branchdiff/harness.hpp"
#include "branchdiff/skeleton.hpp"

using namespace branchdiff;

namespace {

struct ConfigOptions {
  std::string config_path;
  std::string preset;
  std::string model_path;
  std::string scheme;
  long n = 0;
  int runs = 0;
  std::size_t ensemble = 0;
  int shards = 0;
  std::uint64_t seed = 0;
  double kappa = 0.0;
  double theta = 0.0;
  std::vector<double> probabilities;
  double derivative_probability = 0.0;
  double euler_step = 0.0;
  std::string mode;
  std::string selection;
  std::string out;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void add_config_options(CLI::App* app, ConfigOptions& o, bool with_run_options) {
  app->add_option("--config", o.config_path, "JSON run configuration");
  app->add_option("--preset", o.preset, "Preset name (see `presets`)");
  app->add_option("--model", o.model_path, "JSON model file");
  app->add_option("--scheme", o.scheme, "Estimator scheme")->check(CLI::IsMember({"a", "b", "c", "d"}));
  app->add_option("--kappa", o.kappa, "Gamma shape");
  app->add_option("--theta", o.theta, "Gamma scale");
  app->add_option("--probabilities", o.probabilities, "Offspring probabilities, one per generator term");
  app->add_option("--derivative-probability", o.derivative_probability, "Probability of the derivative branch");
  app->add_option("--mode", o.mode, "Simulation mode override")
      ->check(CLI::IsMember({"euler", "exact_constant", "exact_ou"}));
  if (!with_run_options) return;
  app->add_option("-n", o.n, "Samples per run");
  app->add_option("-R,--runs", o.runs, "Independent runs");
  app->add_option("--ensemble", o.ensemble, "Ensemble size for schemes c and d");
  app->add_option("--shards", o.shards, "Worker threads per run");
  app->add_option("--seed", o.seed, "Master seed");
  app->add_option("--euler-step", o.euler_step, "Euler step (0: model default)");
  app->add_option("--selection", o.selection, "Selection method")
      ->check(CLI::IsMember({"multinomial", "systematic", "identity"}));
  app->add_option("--out", o.out, "Per-run CSV path; summary JSON is written next to it");
}

RunConfig resolve(const CLI::App* app, const ConfigOptions& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : config_from_json(read_file(o.config_path));
  auto given = [&](const char* name) {
    const CLI::Option* opt = app->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  if (given("--preset")) {
    c.preset = o.preset;
    c.model_json.clear();
  }
  if (given("--model")) c.model_json = read_file(o.model_path);
  if (given("--scheme")) c.scheme = o.scheme[0];
  if (given("-n")) c.n = o.n;
  if (given("--runs")) c.runs = o.runs;
  if (given("--ensemble")) c.ensemble = o.ensemble;
  if (given("--shards")) c.shards = o.shards;
  if (given("--seed")) c.seed = o.seed;
  if (given("--kappa")) c.kappa = o.kappa;
  if (given("--theta")) c.theta = o.theta;
  if (given("--probabilities")) c.probabilities = o.probabilities;
  if (given("--derivative-probability")) c.derivative_probability = o.derivative_probability;
  if (given("--euler-step")) c.euler_step = o.euler_step;
  if (given("--mode")) c.mode = simulation_mode_from_string(o.mode);
  if (given("--selection")) {
    c.selection = o.selection == "systematic" ? SelectionMethod::systematic
                  : o.selection == "identity" ? SelectionMethod::identity
                                              : SelectionMethod::multinomial;
  }
  if (given("--out")) c.output = o.out;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Branching-diffusion Monte Carlo for semilinear parabolic PDEs"};
  app.require_subcommand(1);

  ConfigOptions est;
  auto* estimate = app.add_subcommand("estimate", "Run R independent estimates");
  add_config_options(estimate, est, true);

  ConfigOptions stu;
  std::vector<long> ladder{1 << 10, 1 << 11, 1 << 12, 1 << 13, 1 << 14, 1 << 15, 1 << 16};
  auto* study = app.add_subcommand("study", "Standard error against n");
  add_config_options(study, stu, true);
  study->add_option("--ladder", ladder, "Sample sizes")->delimiter(',');

  ConfigOptions chk;
  double q = 2.0;
  int grid = 2000;
  auto* check = app.add_subcommand("check", "Moment-condition report as JSON");
  add_config_options(check, chk, false);
  check->add_option("-q", q, "Moment order");
  check->add_option("--grid", grid, "ODE grid size");

  ConfigOptions tre;
  std::uint64_t sample = 0;
  auto* tree = app.add_subcommand("tree", "Dump one skeleton as JSON");
  add_config_options(tree, tre, false);
  tree->add_option("--seed", tre.seed, "Master seed");
  tree->add_option("--sample", sample, "Sample index within run 0");

  auto* presets = app.add_subcommand("presets", "List preset names");

  CLI11_PARSE(app, argc, argv);

  try {
    if (estimate->parsed()) {
      const RunConfig config = resolve(estimate, est);
      const EstimateReport report = run_estimation(config);
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
      std::cout << summary_json(report) << '\n';
    } else if (study->parsed()) {
      const RunConfig config = resolve(study, stu);
      const StudyResult result = convergence_study(config, ladder);
      if (!config.output.empty()) write_study_csv(result, config.output);
      nlohmann::ordered_json j;
      j["rows"] = nlohmann::json::array();
      for (const auto& r : result.rows) {
        j["rows"].push_back({{"n", r.n}, {"mean", r.mean}, {"stderr", r.standard_error}, {"seconds", r.seconds}});
      }
      j["slope"] = result.slope ? nlohmann::json(*result.slope) : nlohmann::json(nullptr);
      std::cout << j.dump(2) << '\n';
    } else if (check->parsed()) {
      const Problem problem = build_problem(resolve(check, chk));
      std::cout << to_json(analyze(*problem.law, *problem.test.model, q, std::nullopt, grid)) << '\n';
    } else if (tree->parsed()) {
      RunConfig config = resolve(tree, tre);
      if (tree->count("--seed")) config.seed = tre.seed;
      const Problem problem = build_problem(config);
      const std::uint64_t run_key = combine_keys(config.seed, 0);
      const ParticleTree t = grow_skeleton(*problem.law, problem.query.t, problem.test.model->horizon(),
                                           SampleKey{combine_keys(run_key, sample)});
      std::cout << tree_to_json(t, *problem.law) << '\n';
    } else if (presets->parsed()) {
      for (const auto& name : preset_names()) std::cout << name << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
