#include "branchdiff/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <thread>

#include <Eigen/SparseLU>
#include <json.hpp>

namespace branchdiff {

namespace {

using json = nlohmann::json;

std::shared_ptr<const PolynomialGenerator> polynomial_in_y(const std::vector<std::pair<int, double>>& powers) {
  std::vector<GeneratorTerm> terms;
  for (const auto& [power, c] : powers) terms.push_back(constant_term(MultiIndex({power}), c));
  return std::make_shared<const PolynomialGenerator>(0, std::move(terms));
}

// K y^a (1 . z)^b with the all-ones direction.
std::shared_ptr<const PolynomialGenerator> monomial_in_y_and_sum_z(int d, int a, int b, double k) {
  std::vector<GeneratorTerm> terms{constant_term(MultiIndex({a, b}), k)};
  return std::make_shared<const PolynomialGenerator>(1, std::move(terms),
                                                     std::vector<Direction>{constant_direction(Vector::Ones(d))});
}

TestModel named(TestModel model, const std::string& name) {
  model.name = name;
  return model;
}

const std::map<std::string, std::function<TestModel()>>& preset_table() {
  static const std::map<std::string, std::function<TestModel()>> table = {
      {"cosine-d5", [] { return named(make_cosine_test_model(5, 0.2, 0.15), "cosine-d5"); }},
      {"cosine-d10", [] { return named(make_cosine_test_model(10, 0.2, 0.15), "cosine-d10"); }},
      {"cosine-d20", [] { return named(make_cosine_test_model(20, 0.2, 0.15), "cosine-d20"); }},
      {"ou1d-poly", [] { return named(make_ou_test_model(1, polynomial_in_y({{2, 0.2}, {3, 0.3}})), "ou1d-poly"); }},
      {"ou1d-burgers015",
       [] { return named(make_ou_test_model(1, monomial_in_y_and_sum_z(1, 1, 1, 0.15)), "ou1d-burgers015"); }},
      {"ou1d-burgers03",
       [] { return named(make_ou_test_model(1, monomial_in_y_and_sum_z(1, 1, 1, 0.3)), "ou1d-burgers03"); }},
      {"ou1d-zsq008", [] { return named(make_ou_test_model(1, monomial_in_y_and_sum_z(1, 0, 2, 0.08)), "ou1d-zsq008"); }},
      {"ou1d-zsq02", [] { return named(make_ou_test_model(1, monomial_in_y_and_sum_z(1, 0, 2, 0.2)), "ou1d-zsq02"); }},
      {"ou2d-ybz015",
       [] { return named(make_ou_test_model(2, monomial_in_y_and_sum_z(2, 1, 1, 0.15)), "ou2d-ybz015"); }},
      {"ou2d-zsq004", [] { return named(make_ou_test_model(2, monomial_in_y_and_sum_z(2, 0, 2, 0.04)), "ou2d-zsq004"); }},
      {"ou2d-zsq005", [] { return named(make_ou_test_model(2, monomial_in_y_and_sum_z(2, 0, 2, 0.05)), "ou2d-zsq005"); }},
      {"ou2d-zsq01", [] { return named(make_ou_test_model(2, monomial_in_y_and_sum_z(2, 0, 2, 0.1)), "ou2d-zsq01"); }},
      {"ou2d-zsq02", [] { return named(make_ou_test_model(2, monomial_in_y_and_sum_z(2, 0, 2, 0.2)), "ou2d-zsq02"); }},
      {"ou2d-gscale2",
       [] { return named(make_ou_test_model(2, monomial_in_y_and_sum_z(2, 0, 2, 0.05), 2.0), "ou2d-gscale2"); }},
      {"ou2d-gscale3",
       [] { return named(make_ou_test_model(2, monomial_in_y_and_sum_z(2, 0, 2, 0.05), 3.0), "ou2d-gscale3"); }},
      {"ou3d-zsq015", [] { return named(make_ou_test_model(3, monomial_in_y_and_sum_z(3, 0, 2, 0.15)), "ou3d-zsq015"); }},
  };
  return table;
}

Vector vector_from_json(const json& j, int d, const char* what) {
  if (j.is_number()) return Vector::Constant(d, j.get<double>());
  if (!j.is_array() || static_cast<int>(j.size()) != d) {
    throw std::invalid_argument(std::string("model config: '") + what + "' must be a number or an array of length " +
                                std::to_string(d));
  }
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

Matrix matrix_from_json(const json& j, int d, const char* what) {
  if (j.is_number()) return Matrix::Identity(d, d) * j.get<double>();
  if (!j.is_array() || static_cast<int>(j.size()) != d) {
    throw std::invalid_argument(std::string("model config: '") + what + "' must be a number or a " + std::to_string(d) +
                                "x" + std::to_string(d) + " array");
  }
  Matrix m(d, d);
  for (int i = 0; i < d; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<int>(row.size()) != d) {
      throw std::invalid_argument(std::string("model config: row ") + std::to_string(i) + " of '" + what +
                                  "' has wrong length");
    }
    for (int k = 0; k < d; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

TerminalCondition terminal_from_json(const json& j, int d) {
  const std::string type = j.value("type", "mean_call");
  if (type == "mean_call") {
    const double scale = j.value("scale", 1.0);
    const double strike = j.value("strike", 1.0);
    return {[=](const Vector& x) { return scale * std::max(x.mean() - strike, 0.0); },
            std::numeric_limits<double>::infinity(), std::abs(scale) / std::sqrt(static_cast<double>(d))};
  }
  if (type == "cos_sum") {
    return {[](const Vector& x) { return std::cos(x.sum()); }, 1.0, std::sqrt(static_cast<double>(d))};
  }
  if (type == "affine") {
    const Vector w = j.contains("weights") ? vector_from_json(j["weights"], d, "weights") : Vector::Zero(d);
    const double offset = j.value("offset", 0.0);
    const double sup = w.isZero() ? std::abs(offset) : std::numeric_limits<double>::infinity();
    return {[=](const Vector& x) { return w.dot(x) + offset; }, sup, w.norm()};
  }
  throw std::invalid_argument("model config: unknown terminal type '" + type + "'");
}

SelectionMethod selection_from_string(const std::string& s) {
  if (s == "multinomial") return SelectionMethod::multinomial;
  if (s == "systematic") return SelectionMethod::systematic;
  if (s == "identity") return SelectionMethod::identity;
  throw std::invalid_argument("unknown selection method '" + s + "'");
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct ShardTotals {
  double sum = 0.0;
  double particles = 0.0;
  std::size_t trees = 0;
  std::size_t units = 0;
};

ShardTotals run_shard(const Problem& problem, const RunConfig& config, std::uint64_t run_key, std::size_t begin,
                      std::size_t end) {
  ShardTotals totals;
  const bool interacting = config.scheme == 'c' || config.scheme == 'd';
  const std::size_t size = config.ensemble_size();
  InteractingOptions options;
  options.selection = config.selection;
  for (std::size_t i = begin; i < end; ++i) {
    const std::uint64_t key = combine_keys(run_key, i);
    EstimatorSample s = interacting ? run_interacting(problem.query, size, key, options)
                                    : evaluate_psi(problem.query, SampleKey{key});
    totals.sum += s.value;
    totals.particles += static_cast<double>(s.particles);
    totals.trees += interacting ? size : 1;
    ++totals.units;
  }
  return totals;
}

}  // namespace

void RunConfig::validate() const {
  if (n < 1) throw std::invalid_argument("RunConfig: n must be >= 1");
  if (runs < 1) throw std::invalid_argument("RunConfig: R must be >= 1");
  if (shards < 1) throw std::invalid_argument("RunConfig: shards must be >= 1");
  if (scheme != 'a' && scheme != 'b' && scheme != 'c' && scheme != 'd') {
    throw std::invalid_argument(std::string("RunConfig: unknown scheme '") + scheme + "'");
  }
  if ((scheme == 'c' || scheme == 'd') && ensemble_size() < 2) {
    throw std::invalid_argument("RunConfig: resampled schemes need an ensemble of at least 2");
  }
  if (ensemble_size() > static_cast<std::size_t>(n) && (scheme == 'c' || scheme == 'd')) {
    throw std::invalid_argument("RunConfig: ensemble larger than n");
  }
  if (preset.empty() && model_json.empty()) throw std::invalid_argument("RunConfig: no preset or model given");
}

std::size_t RunConfig::ensemble_size() const {
  return ensemble ? ensemble : static_cast<std::size_t>(std::min<long>(n, 1000));
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [name, _] : preset_table()) out.push_back(name);
  return out;
}

TestModel preset_model(const std::string& name) {
  const auto& table = preset_table();
  const auto it = table.find(name);
  if (it == table.end()) throw std::invalid_argument("unknown preset '" + name + "'");
  return it->second();
}

RunConfig preset(const std::string& name) {
  if (!preset_table().count(name)) throw std::invalid_argument("unknown preset '" + name + "'");
  RunConfig config;
  config.preset = name;
  return config;
}

TestModel model_from_json(const std::string& text) {
  const json j = json::parse(text);
  const int d = j.at("dimension").get<int>();
  if (d < 1) throw std::invalid_argument("model config: dimension must be >= 1");

  ModelSpec spec;
  spec.dimension = d;
  spec.horizon = j.value("horizon", 1.0);
  AffineDrift drift{Vector::Zero(d), Matrix::Zero(d, d)};
  if (j.contains("drift")) {
    const json& dj = j["drift"];
    if (dj.contains("offset")) drift.offset = vector_from_json(dj["offset"], d, "drift.offset");
    if (dj.contains("slope")) drift.slope = matrix_from_json(dj["slope"], d, "drift.slope");
  }
  spec.affine_drift = drift;
  spec.constant_sigma = matrix_from_json(j.value("sigma", json(1.0)), d, "sigma");
  spec.terminal = terminal_from_json(j.value("terminal", json::object()), d);
  if (j.contains("mode")) {
    spec.mode = simulation_mode_from_string(j["mode"].get<std::string>());
  } else {
    spec.mode = drift.slope.isZero() ? SimulationMode::exact_constant : SimulationMode::exact_ou;
  }

  std::vector<Direction> directions;
  for (const auto& dir : j.value("directions", json::array())) {
    directions.push_back(constant_direction(vector_from_json(dir, d, "directions")));
  }
  std::vector<GeneratorTerm> terms;
  for (const auto& t : j.at("terms")) {
    terms.push_back(constant_term(MultiIndex(t.at("index").get<std::vector<int>>()), t.at("coefficient").get<double>()));
  }
  spec.generator = std::make_shared<const PolynomialGenerator>(static_cast<int>(directions.size()), std::move(terms),
                                                               std::move(directions));

  TestModel out;
  out.name = j.value("name", "user");
  out.x0 = j.contains("x0") ? vector_from_json(j["x0"], d, "x0") : Vector::Zero(d);
  out.model = std::make_shared<const PdeModel>(std::move(spec));
  return out;
}

RunConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  RunConfig c;
  c.preset = j.value("preset", "");
  if (j.contains("model")) c.model_json = j["model"].dump();
  if (j.contains("scheme")) {
    const std::string s = j["scheme"].get<std::string>();
    if (s.size() != 1) throw std::invalid_argument("config: scheme must be one of a, b, c, d");
    c.scheme = s[0];
  }
  c.n = j.value("n", c.n);
  c.runs = j.value("runs", c.runs);
  c.ensemble = j.value("ensemble", c.ensemble);
  c.shards = j.value("shards", c.shards);
  c.seed = j.value("seed", c.seed);
  c.kappa = j.value("kappa", c.kappa);
  c.theta = j.value("theta", c.theta);
  c.probabilities = j.value("probabilities", c.probabilities);
  if (j.contains("derivative_probability")) c.derivative_probability = j["derivative_probability"].get<double>();
  c.euler_step = j.value("euler_step", c.euler_step);
  if (j.contains("mode")) c.mode = simulation_mode_from_string(j["mode"].get<std::string>());
  if (j.contains("selection")) c.selection = selection_from_string(j["selection"].get<std::string>());
  c.output = j.value("output", c.output);
  return c;
}

Problem build_problem(const RunConfig& config) {
  config.validate();
  Problem p;
  p.test = config.model_json.empty() ? preset_model(config.preset) : model_from_json(config.model_json);
  if (config.mode && *config.mode != p.test.model->mode()) {
    p.test.model = std::make_shared<const PdeModel>(p.test.model->with_mode(*config.mode));
  }
  const bool frozen = config.scheme == 'b' || config.scheme == 'c';
  p.law = std::make_shared<const BranchingLaw>(BranchingLaw::gamma(p.test.model->generator(), config.kappa,
                                                                   config.theta, config.probabilities, frozen,
                                                                   config.derivative_probability));
  p.query.model = p.test.model;
  p.query.law = p.law;
  p.query.t = 0.0;
  p.query.x = p.test.x0;
  p.query.scheme = frozen ? Scheme::b : Scheme::a;
  p.query.euler_step = config.euler_step;
  p.query.validate();
  return p;
}

RunRecord run_once(const Problem& problem, const RunConfig& config, int run) {
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t run_key = combine_keys(config.seed, static_cast<std::uint64_t>(run));
  const bool interacting = config.scheme == 'c' || config.scheme == 'd';
  const std::size_t units =
      interacting ? std::max<std::size_t>(1, static_cast<std::size_t>(config.n) / config.ensemble_size())
                  : static_cast<std::size_t>(config.n);
  const std::size_t shards = std::min<std::size_t>(static_cast<std::size_t>(config.shards), units);

  std::vector<ShardTotals> totals(shards);
  if (shards == 1) {
    totals[0] = run_shard(problem, config, run_key, 0, units);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(shards);
    for (std::size_t s = 0; s < shards; ++s) {
      const std::size_t begin = units * s / shards;
      const std::size_t end = units * (s + 1) / shards;
      workers.emplace_back([&, s, begin, end] {
        try {
          totals[s] = run_shard(problem, config, run_key, begin, end);
        } catch (...) {
          errors[s] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  // Size-weighted mean of shard means.
  double estimate = 0.0;
  double particles = 0.0;
  std::size_t trees = 0;
  for (const auto& t : totals) {
    estimate += static_cast<double>(t.units) * (t.sum / static_cast<double>(t.units));
    particles += t.particles;
    trees += t.trees;
  }
  RunRecord record;
  record.run = run;
  record.estimate = estimate / static_cast<double>(units);
  record.particles = particles / static_cast<double>(trees);
  record.seconds = elapsed_seconds(start);
  return record;
}

void summarize(EstimateReport& report) {
  const double r = static_cast<double>(report.runs.size());
  if (report.runs.empty()) throw std::invalid_argument("summarize: no runs");
  double sum = 0.0;
  double particles = 0.0;
  double seconds = 0.0;
  for (const auto& run : report.runs) {
    sum += run.estimate;
    particles += run.particles;
    seconds += run.seconds;
  }
  report.mean = sum / r;
  double squares = 0.0;
  for (const auto& run : report.runs) squares += (run.estimate - report.mean) * (run.estimate - report.mean);
  report.stddev = report.runs.size() > 1 ? std::sqrt(squares / (r - 1.0)) : 0.0;
  report.standard_error = report.stddev / std::sqrt(r);
  report.se_of_se = report.runs.size() > 1 ? report.standard_error / std::sqrt(2.0 * (r - 1.0)) : 0.0;
  report.mean_particles = particles / r;
  report.seconds = seconds;
}

EstimateReport run_estimation(const RunConfig& config) {
  const Problem problem = build_problem(config);
  EstimateReport report;
  report.config = config;
  if (const GammaArrival* g = problem.law->gamma_arrival()) report.warnings = g->warnings();
  for (int r = 0; r < config.runs; ++r) report.runs.push_back(run_once(problem, config, r));
  summarize(report);
  if (!config.output.empty()) {
    write_runs_csv(report, config.output);
    std::filesystem::path summary(config.output);
    summary.replace_extension(".json");
    std::ofstream out(summary);
    if (!out) throw std::runtime_error("cannot write " + summary.string());
    out << summary_json(report) << '\n';
  }
  return report;
}

std::optional<double> fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_slope: size mismatch");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) return std::nullopt;
  return sxy / sxx;
}

StudyResult convergence_study(const RunConfig& config, const std::vector<long>& ladder) {
  for (std::size_t i = 1; i < ladder.size(); ++i) {
    if (ladder[i] <= ladder[i - 1]) throw std::invalid_argument("convergence_study: ladder must be increasing");
  }
  StudyResult study;
  std::vector<double> log_n, log_se;
  for (long n : ladder) {
    RunConfig c = config;
    c.n = n;
    c.output.clear();
    const EstimateReport report = run_estimation(c);
    study.rows.push_back({n, report.mean, report.standard_error, report.se_of_se, report.seconds});
    if (report.standard_error > 0.0) {
      log_n.push_back(std::log(static_cast<double>(n)));
      log_se.push_back(std::log(report.standard_error));
    }
  }
  if (log_n.size() == ladder.size()) study.slope = fit_slope(log_n, log_se);
  return study;
}

void write_runs_csv(const EstimateReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "run,estimate,particles,seconds\n";
  for (const auto& r : report.runs) out << r.run << ',' << r.estimate << ',' << r.particles << ',' << r.seconds << '\n';
}

std::string summary_json(const EstimateReport& report, int indent) {
  nlohmann::ordered_json j;
  j["mean"] = report.mean;
  j["stderr"] = report.standard_error;
  j["runs"] = report.runs.size();
  j["n"] = report.config.n;
  j["scheme"] = std::string(1, report.config.scheme);
  j["preset"] = report.config.model_json.empty() ? report.config.preset : std::string("user");
  j["seed"] = report.config.seed;
  return j.dump(indent);
}

void write_study_csv(const StudyResult& study, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "n,mean,stderr,se_of_se,seconds\n";
  for (const auto& r : study.rows) {
    out << r.n << ',' << r.mean << ',' << r.standard_error << ',' << r.se_of_se << ',' << r.seconds << '\n';
  }
}

FdSolution::FdSolution(double horizon, std::vector<double> nodes, std::vector<std::vector<double>> layers)
    : horizon_(horizon), nodes_(std::move(nodes)), layers_(std::move(layers)) {}

double FdSolution::operator()(double t, double x) const {
  if (x < nodes_.front() || x > nodes_.back()) throw std::out_of_range("FdSolution: x outside the grid");
  if (t < 0.0 || t > horizon_) throw std::out_of_range("FdSolution: t outside [0, T]");
  const auto space = [&](const std::vector<double>& layer) {
    const auto it = std::upper_bound(nodes_.begin(), nodes_.end(), x);
    const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - nodes_.begin()), nodes_.size() - 1);
    const std::size_t lo = i - 1;
    const double w = (x - nodes_[lo]) / (nodes_[i] - nodes_[lo]);
    return (1.0 - w) * layer[lo] + w * layer[i];
  };
  const double steps = static_cast<double>(layers_.size() - 1);
  const double pos = t / horizon_ * steps;
  const std::size_t j = std::min<std::size_t>(static_cast<std::size_t>(pos), layers_.size() - 2);
  const double w = pos - static_cast<double>(j);
  return (1.0 - w) * space(layers_[j]) + w * space(layers_[j + 1]);
}

FdSolution fd_oracle_1d(const PdeModel& model, const FdGrid& grid, double x0) {
  if (model.dimension() != 1) throw std::invalid_argument("fd_oracle_1d: model must be one-dimensional");
  if (grid.points < 5 || grid.steps < 1) throw std::invalid_argument("fd_oracle_1d: grid too small");
  const double horizon = model.horizon();
  const Vector probe = Vector::Constant(1, x0);
  const double sigma0 = std::abs(model.sigma(0.0, probe)(0, 0));

  double center = grid.center.value_or(x0);
  double half_width = grid.half_width;
  if (half_width <= 0.0) {
    const auto& affine = model.affine_drift();
    if (affine && affine->slope(0, 0) < 0.0) {
      const double beta = affine->slope(0, 0);
      if (!grid.center) center = -affine->offset[0] / beta;
      half_width = 6.0 * sigma0 / std::sqrt(2.0 * std::abs(beta)) + std::abs(x0 - center);
    } else {
      half_width = 6.0 * sigma0 * std::sqrt(horizon);
    }
  }
  const int n = grid.points;
  const double h = 2.0 * half_width / (n - 1);
  std::vector<double> nodes(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) nodes[static_cast<std::size_t>(i)] = center - half_width + i * h;

  const PolynomialGenerator& gen = model.generator();
  const double dt = horizon / grid.steps;

  // Terminal layer.
  Eigen::VectorXd u(n);
  for (int i = 0; i < n; ++i) u[i] = model.terminal_value(Vector::Constant(1, nodes[static_cast<std::size_t>(i)]));

  std::vector<std::vector<double>> layers(static_cast<std::size_t>(grid.steps + 1));
  layers.back().assign(u.data(), u.data() + n);

  auto nonlinearity = [&](double t, const Eigen::VectorXd& v) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (int i = 1; i < n - 1; ++i) {
      const Vector x = Vector::Constant(1, nodes[static_cast<std::size_t>(i)]);
      const Vector z = Vector::Constant(1, (v[i + 1] - v[i - 1]) / (2.0 * h));
      out[i] = gen.evaluate(t, x, v[i], z);
    }
    return out;
  };

  // Operator L u = mu u_x + 1/2 sigma^2 u_xx with extrapolation rows u_0 - 2u_1 + u_2 = 0.
  auto assemble = [&](double t, double scale) {
    std::vector<Eigen::Triplet<double>> triplets;
    for (int i = 1; i < n - 1; ++i) {
      const Vector x = Vector::Constant(1, nodes[static_cast<std::size_t>(i)]);
      const double mu = model.drift(t, x)[0];
      const double s = model.sigma(t, x)(0, 0);
      const double diff = 0.5 * s * s / (h * h);
      if (diff > 0.0 && std::abs(mu) * h / (0.5 * s * s) > 2.0) {
        throw FdError("fd_oracle_1d: cell Peclet number exceeds 2 at x=" + std::to_string(x[0]) + "; refine the grid");
      }
      const double adv = mu / (2.0 * h);
      triplets.emplace_back(i, i - 1, scale * (diff - adv));
      triplets.emplace_back(i, i, scale * (-2.0 * diff));
      triplets.emplace_back(i, i + 1, scale * (diff + adv));
    }
    Eigen::SparseMatrix<double> m(n, n);
    m.setFromTriplets(triplets.begin(), triplets.end());
    return m;
  };

  Eigen::SparseMatrix<double> identity(n, n);
  identity.setIdentity();
  Eigen::SparseMatrix<double> boundary(n, n);
  {
    std::vector<Eigen::Triplet<double>> b{{0, 0, 1.0},         {0, 1, -2.0},        {0, 2, 1.0},
                                          {n - 1, n - 1, 1.0}, {n - 1, n - 2, -2.0}, {n - 1, n - 3, 1.0}};
    boundary.setFromTriplets(b.begin(), b.end());
  }
  Eigen::SparseMatrix<double> interior_identity = identity;
  interior_identity.coeffRef(0, 0) = 0.0;
  interior_identity.coeffRef(n - 1, n - 1) = 0.0;
  interior_identity.prune(0.0);

  // One theta step of size tau from time t_new + tau back to t_new.
  auto theta_step = [&](const Eigen::VectorXd& current, double t_old, double tau, double theta) {
    const double t_new = t_old - tau;
    const Eigen::SparseMatrix<double> lhs_op = assemble(t_new, theta * tau);
    const Eigen::SparseMatrix<double> rhs_op = assemble(t_old, (1.0 - theta) * tau);
    Eigen::SparseMatrix<double> lhs = interior_identity - lhs_op + boundary;
    lhs.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> solver;
    solver.compute(lhs);
    if (solver.info() != Eigen::Success) throw FdError("fd_oracle_1d: factorization failed");

    Eigen::VectorXd base = interior_identity * current + rhs_op * current;
    const Eigen::VectorXd f_old = nonlinearity(t_old, current);
    Eigen::VectorXd next = current;
    for (int k = 0; k < grid.max_picard; ++k) {
      Eigen::VectorXd rhs = base + tau * ((1.0 - theta) * f_old + theta * nonlinearity(t_new, next));
      rhs[0] = 0.0;
      rhs[n - 1] = 0.0;
      Eigen::VectorXd candidate = solver.solve(rhs);
      const double change = (candidate - next).lpNorm<Eigen::Infinity>();
      next = std::move(candidate);
      if (!next.allFinite()) throw FdError("fd_oracle_1d: solution became non-finite at t=" + std::to_string(t_new));
      if (change <= grid.picard_tolerance * std::max(1.0, next.lpNorm<Eigen::Infinity>())) return next;
    }
    throw FdError("fd_oracle_1d: Picard iteration did not converge at t=" + std::to_string(t_new));
  };

  const int smoothing_full_steps = std::min(grid.smoothing_steps / 2, grid.steps);
  for (int j = grid.steps; j > 0; --j) {
    const double t_old = j * dt;
    if (grid.steps - j < smoothing_full_steps) {
      u = theta_step(u, t_old, 0.5 * dt, 1.0);
      u = theta_step(u, t_old - 0.5 * dt, 0.5 * dt, 1.0);
    } else {
      u = theta_step(u, t_old, dt, 0.5);
    }
    layers[static_cast<std::size_t>(j - 1)].assign(u.data(), u.data() + n);
  }
  return FdSolution(horizon, std::move(nodes), std::move(layers));
}

}  // namespace branchdiff
