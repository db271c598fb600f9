#pragma once

// Monte Carlo driver: presets, run configuration, batched estimation,
// convergence studies, output files and a 1-d finite-difference reference.
//
// Seed derivation: run r uses key combine_keys(seed, r); sample i of that run
// (or ensemble i for the resampled schemes) uses combine_keys(run_key, i).
// Keys never depend on the shard layout, so shards only change the order in
// which the per-run mean is summed.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "branchdiff/estimator.hpp"
#include "branchdiff/generator.hpp"
#include "branchdiff/resampling.hpp"
#include "branchdiff/skeleton.hpp"

namespace branchdiff {

struct RunConfig {
  std::string preset;
  std::string model_json;  // user model as JSON text; overrides `preset` when set
  char scheme = 'a';       // a, b, c, d
  long n = 1000;           // samples per run
  int runs = 10;
  std::size_t ensemble = 0;  // 0 selects min(n, 1000)
  int shards = 1;
  std::uint64_t seed = 1;
  double kappa = 0.5;
  double theta = 2.5;
  std::vector<double> probabilities;           // empty: equal
  std::optional<double> derivative_probability;  // scheme b/c; default equal share
  double euler_step = 0.0;
  std::optional<SimulationMode> mode;  // overrides the model's simulation mode
  SelectionMethod selection = SelectionMethod::multinomial;
  std::string output;  // CSV path; the summary goes next to it as <stem>.json

  void validate() const;
  std::size_t ensemble_size() const;
};

/// Known preset names.
std::vector<std::string> preset_names();
/// Configuration for a named experiment. Throws std::invalid_argument for unknown names.
RunConfig preset(const std::string& name);

/// Test model of a preset (cosine solution attached where known).
TestModel preset_model(const std::string& name);

/// Model described by JSON (constant/affine coefficients and polynomial terms).
TestModel model_from_json(const std::string& text);

/// Reads a RunConfig from JSON; the "model" object, if present, is kept as a user model.
RunConfig config_from_json(const std::string& text);

struct Problem {
  TestModel test;
  std::shared_ptr<const BranchingLaw> law;
  EstimatorQuery query;
};

Problem build_problem(const RunConfig& config);

struct RunRecord {
  int run = 0;
  double estimate = 0.0;
  double particles = 0.0;  // mean particles per tree
  double seconds = 0.0;
};

struct EstimateReport {
  RunConfig config;
  std::vector<RunRecord> runs;
  double mean = 0.0;
  double stddev = 0.0;
  double standard_error = 0.0;
  double se_of_se = 0.0;
  double mean_particles = 0.0;
  double seconds = 0.0;
  std::vector<std::string> warnings;
};

/// Mean, standard deviation, standard error and its standard error of a set of run values.
void summarize(EstimateReport& report);

/// One run's estimate for `config` (run index r), split over the configured shards.
RunRecord run_once(const Problem& problem, const RunConfig& config, int run);

EstimateReport run_estimation(const RunConfig& config);

struct StudyRow {
  long n = 0;
  double mean = 0.0;
  double standard_error = 0.0;
  double se_of_se = 0.0;
  double seconds = 0.0;
};

struct StudyResult {
  std::vector<StudyRow> rows;
  std::optional<double> slope;  // least-squares slope of log SE against log n
};

StudyResult convergence_study(const RunConfig& config, const std::vector<long>& ladder);

/// Least-squares slope of y against x; nullopt with fewer than two points.
std::optional<double> fit_slope(const std::vector<double>& x, const std::vector<double>& y);

void write_runs_csv(const EstimateReport& report, const std::string& path);
std::string summary_json(const EstimateReport& report, int indent = 2);
void write_study_csv(const StudyResult& study, const std::string& path);

struct FdGrid {
  int points = 801;
  int steps = 400;
  double half_width = 0.0;  // 0: six standard deviations (stationary law for OU drifts)
  std::optional<double> center;
  int smoothing_steps = 4;  // implicit half steps before Crank-Nicolson
  int max_picard = 50;
  double picard_tolerance = 1e-12;
};

class FdError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Solution of a 1-d model on a grid, linearly interpolated in t and x.
class FdSolution {
 public:
  FdSolution(double horizon, std::vector<double> nodes, std::vector<std::vector<double>> layers);
  double operator()(double t, double x) const;
  const std::vector<double>& nodes() const noexcept { return nodes_; }

 private:
  double horizon_;
  std::vector<double> nodes_;
  std::vector<std::vector<double>> layers_;  // layers_[j] at t = j * T / steps
};

/// Theta-scheme reference solver for d = 1.
FdSolution fd_oracle_1d(const PdeModel& model, const FdGrid& grid = {}, double x0 = 0.0);

}  // namespace branchdiff
