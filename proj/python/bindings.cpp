#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "branchdiff/analysis.hpp"
#include "branchdiff/harness.hpp"
#include "branchdiff/skeleton.hpp"

namespace py = pybind11;
using namespace branchdiff;

namespace {

py::dict report_to_dict(const EstimateReport& r) {
  py::dict out;
  out["mean"] = r.mean;
  out["stderr"] = r.standard_error;
  out["stddev"] = r.stddev;
  out["se_of_se"] = r.se_of_se;
  out["mean_particles"] = r.mean_particles;
  out["seconds"] = r.seconds;
  std::vector<double> estimates, particles;
  for (const auto& run : r.runs) {
    estimates.push_back(run.estimate);
    particles.push_back(run.particles);
  }
  out["estimates"] = estimates;
  out["particles"] = particles;
  out["warnings"] = r.warnings;
  return out;
}

RunConfig make_config(const std::string& preset_name, const std::string& scheme, long n, int runs,
                      std::uint64_t seed, std::size_t ensemble, int shards, double kappa, double theta) {
  if (scheme.size() != 1) throw std::invalid_argument("scheme must be one of 'a', 'b', 'c', 'd'");
  RunConfig c = preset(preset_name);
  c.scheme = scheme[0];
  c.n = n;
  c.runs = runs;
  c.seed = seed;
  c.ensemble = ensemble;
  c.shards = shards;
  c.kappa = kappa;
  c.theta = theta;
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Branching-diffusion Monte Carlo engine";

  m.def("presets", &preset_names);

  m.def(
      "estimate",
      [](const std::string& preset_name, const std::string& scheme, long n, int runs, std::uint64_t seed,
         std::size_t ensemble, int shards, double kappa, double theta) {
        const RunConfig c = make_config(preset_name, scheme, n, runs, seed, ensemble, shards, kappa, theta);
        EstimateReport r;
        {
          py::gil_scoped_release release;
          r = run_estimation(c);
        }
        return report_to_dict(r);
      },
      py::arg("preset"), py::arg("scheme") = "a", py::arg("n") = 1000, py::arg("runs") = 10, py::arg("seed") = 1,
      py::arg("ensemble") = 0, py::arg("shards") = 1, py::arg("kappa") = 0.5, py::arg("theta") = 2.5);

  m.def(
      "estimate_config",
      [](const std::string& config_json) {
        const RunConfig c = config_from_json(config_json);
        EstimateReport r;
        {
          py::gil_scoped_release release;
          r = run_estimation(c);
        }
        return report_to_dict(r);
      },
      py::arg("config_json"), "Runs a configuration given as JSON text (same schema as the CLI --config file).");

  m.def(
      "check",
      [](const std::string& preset_name, double q, const std::string& scheme, double kappa, double theta, int grid) {
        const Problem p = build_problem(make_config(preset_name, scheme, 1000, 1, 1, 0, 1, kappa, theta));
        return to_json(analyze(*p.law, *p.test.model, q, std::nullopt, grid));
      },
      py::arg("preset"), py::arg("q") = 2.0, py::arg("scheme") = "a", py::arg("kappa") = 0.5,
      py::arg("theta") = 2.5, py::arg("grid") = 2000);

  m.def(
      "tree_json",
      [](const std::string& preset_name, std::uint64_t seed, std::uint64_t sample, const std::string& scheme) {
        const Problem p = build_problem(make_config(preset_name, scheme, 1000, 1, seed, 0, 1, 0.5, 2.5));
        const ParticleTree t = grow_skeleton(*p.law, p.query.t, p.test.model->horizon(),
                                             SampleKey{combine_keys(combine_keys(seed, 0), sample)});
        return tree_to_json(t, *p.law);
      },
      py::arg("preset"), py::arg("seed") = 1, py::arg("sample") = 0, py::arg("scheme") = "a");

  m.def(
      "psi",
      [](const std::string& preset_name, std::uint64_t key, const std::string& scheme) {
        const Problem p = build_problem(make_config(preset_name, scheme, 1000, 1, 1, 0, 1, 0.5, 2.5));
        return evaluate_psi(p.query, SampleKey{key}).value;
      },
      py::arg("preset"), py::arg("key"), py::arg("scheme") = "a");

  m.def(
      "gamma_survival", [](double kappa, double theta, double t) { return GammaArrival(kappa, theta).survival(t); },
      py::arg("kappa"), py::arg("theta"), py::arg("t"));

  m.def(
      "expected_population",
      [](double kappa, double theta, double n0, double t) {
        return expected_population(GammaArrival(kappa, theta), n0, t);
      },
      py::arg("kappa"), py::arg("theta"), py::arg("n0"), py::arg("t"));

  m.def(
      "fd_reference",
      [](const std::string& preset_name, int points, int steps) {
        const TestModel tm = preset_model(preset_name);
        FdGrid g;
        g.points = points;
        g.steps = steps;
        return fd_oracle_1d(*tm.model, g, tm.x0[0])(0.0, tm.x0[0]);
      },
      py::arg("preset"), py::arg("points") = 801, py::arg("steps") = 400);

  m.def("exact_solution", [](const std::string& preset_name) -> py::object {
    const TestModel tm = preset_model(preset_name);
    if (!tm.solution) return py::none();
    return py::float_(tm.solution(0.0, tm.x0));
  });

  py::register_exception<PopulationExplosion>(m, "PopulationExplosion", PyExc_RuntimeError);
  py::register_exception<FdError>(m, "FdError", PyExc_RuntimeError);
}
