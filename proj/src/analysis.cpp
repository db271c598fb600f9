#include "branchdiff/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <json.hpp>

#include "branchdiff/diffusion.hpp"

namespace branchdiff {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kBlowupLevel = 1e12;
constexpr double kRefinementTolerance = 1e-6;

// sup of v^T A v over the box |v_i| <= radius: a convex quadratic peaks at a vertex.
double box_quadratic_sup(const Matrix& a, double radius) {
  const int d = static_cast<int>(a.rows());
  if (radius == 0.0) return 0.0;
  if (d <= 16) {
    double best = 0.0;
    Vector v(d);
    for (std::uint32_t bits = 0; bits < (1U << d); ++bits) {
      for (int i = 0; i < d; ++i) v[i] = (bits >> i) & 1U ? radius : -radius;
      best = std::max(best, v.dot(a * v));
    }
    return best;
  }
  return radius * radius * a.cwiseAbs().sum();
}

double direction_quadratic_sup(const Direction& dir, const Matrix& a) {
  if (dir.constant) return dir.constant->dot(a * *dir.constant);
  return box_quadratic_sup(a, dir.bound);
}

// sup over t in (0, T] of exp(-a log t - log rho(t)); a gamma law gives a closed form.
double sup_inverse_density(const BranchingLaw& law, double exponent, double horizon) {
  if (const GammaArrival* g = law.gamma_arrival()) {
    // t^{-a} / rho(t) = Gamma(kappa) theta^kappa t^{1 - kappa - a} e^{t / theta}
    if (1.0 - g->kappa() - exponent < 0.0) return kInf;
    return std::exp(-exponent * std::log(horizon) - g->log_density(horizon));
  }
  double best = 0.0;
  for (int k = 0; k <= 4000; ++k) {
    const double t = horizon * std::pow(10.0, -12.0 * (1.0 - k / 4000.0));
    best = std::max(best, std::exp(-exponent * std::log(t) - law.log_density(t)));
  }
  return best;
}

double max_coefficient_ratio(const BranchingLaw& law, const PdeModel& model, std::string* worst = nullptr) {
  double best = 0.0;
  const auto& terms = model.generator().terms();
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double ratio = terms[i].bound / law.probability(i);
    if (i == 0 || ratio > best) {
      best = ratio;
      if (worst) *worst = terms[i].index.to_string();
    }
  }
  return best;
}

std::vector<ComparisonTerm> comparison_terms(const PdeModel& model) {
  std::vector<ComparisonTerm> out;
  for (const auto& term : model.generator().terms()) out.emplace_back(term.bound, term.index.order());
  return out;
}

nlohmann::ordered_json number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

struct OdeRun {
  bool blew_up = false;
  double value = 0.0;       // eta at s = horizon
  double blowup_s = 0.0;    // backward time of detection
};

// Backward time s = T - t; dy/ds = rhs(y). `blown` decides when y has left the admissible region.
template <class Rhs, class Blown>
OdeRun rk4(double y0, double horizon, int steps, Rhs rhs, Blown blown) {
  OdeRun run;
  const double h = horizon / steps;
  double y = y0;
  for (int j = 0; j < steps; ++j) {
    const double k1 = rhs(y);
    const double y2 = y + 0.5 * h * k1;
    if (blown(y2)) return {true, y, (j + 0.5) * h};
    const double k2 = rhs(y2);
    const double y3 = y + 0.5 * h * k2;
    if (blown(y3)) return {true, y, (j + 0.5) * h};
    const double k3 = rhs(y3);
    const double y4 = y + h * k3;
    if (blown(y4)) return {true, y, (j + 1) * h};
    const double k4 = rhs(y4);
    y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (blown(y)) return {true, y, (j + 1) * h};
  }
  run.value = y;
  return run;
}

EtaSolution solve_eta_once(double c1hat, double c2hat, const std::vector<ComparisonTerm>& terms, double horizon,
                           int grid) {
  EtaSolution out;
  out.grid = grid;
  int order = 0;
  for (const auto& [c, l] : terms) order = std::max(order, l);

  if (order <= 1 || c1hat == 0.0) {
    // Integrate eta itself.
    auto rhs = [&](double eta) {
      double s = 0.0;
      for (const auto& [c, l] : terms) s += c * std::pow(eta, l);
      return c2hat * s;
    };
    auto blown = [](double eta) { return !(eta <= kBlowupLevel); };
    const OdeRun run = rk4(c1hat, horizon, grid, rhs, blown);
    out.blew_up = run.blew_up;
    out.eta0 = run.blew_up ? kInf : run.value;
    out.blowup_time = horizon - run.blowup_s;
    out.blowup_bracket = horizon / grid;
    return out;
  }

  // w = eta^{-(p-1)} turns polynomial growth into a well-behaved decay to 0.
  const double p1 = order - 1.0;
  const double w_floor = std::pow(kBlowupLevel, -p1);
  auto rhs = [&](double w) {
    double s = 0.0;
    for (const auto& [c, l] : terms) s += c * std::pow(w, (order - l) / p1);
    return -p1 * c2hat * s;
  };
  auto blown = [&](double w) { return !(w > w_floor); };
  const OdeRun run = rk4(std::pow(c1hat, -p1), horizon, grid, rhs, blown);
  out.blew_up = run.blew_up;
  out.eta0 = run.blew_up ? kInf : std::pow(run.value, -1.0 / p1);
  out.blowup_time = horizon - run.blowup_s;
  out.blowup_bracket = horizon / grid;
  return out;
}

}  // namespace

double gaussian_abs_moment(double q) { return std::pow(2.0, q / 2.0) * std::tgamma((q + 1.0) / 2.0) / std::sqrt(M_PI); }

MomentConstants constants_constant_coeff(const PdeModel& model, double q) {
  if (!(q > 1.0)) throw std::invalid_argument("constants_constant_coeff: q must exceed 1");
  if (!model.constant_sigma()) {
    throw std::invalid_argument("constants_constant_coeff: sigma is not constant; supply or estimate the constants");
  }
  const Matrix& sigma = *model.constant_sigma();
  const Matrix a = sigma * sigma.transpose();
  const Matrix a_inv = invert_sigma(a);
  const PolynomialGenerator& gen = model.generator();

  MomentConstants out;
  out.source = "closed_form";
  const double g_sup = model.terminal().sup_norm;
  if (gen.gradient_directions() == 0) {
    out.c1 = std::pow(g_sup, q);
    out.c2 = 0.0;
    return out;
  }
  double direction_sup = 0.0;
  for (const auto& dir : gen.directions()) direction_sup = std::max(direction_sup, direction_quadratic_sup(dir, a_inv));
  const double terminal_sup = box_quadratic_sup(a, model.terminal().lipschitz);
  const double mixed = std::pow(terminal_sup + direction_sup, q) * std::pow(2.0, q - 1.0) *
                       std::tgamma((2.0 * q + 1.0) / 2.0) / std::sqrt(M_PI);
  out.c1 = std::max(std::pow(g_sup, q), mixed);
  out.c2 = std::pow(direction_sup, q / 2.0) * gaussian_abs_moment(q);
  return out;
}

MomentConstants estimate_constants(const PdeModel& model, double q, const Vector& box_low, const Vector& box_high,
                                   int points, int samples_per_point, std::uint64_t seed) {
  const int d = model.dimension();
  if (box_low.size() != d || box_high.size() != d) throw std::invalid_argument("estimate_constants: box has wrong dimension");
  if (points < 1 || samples_per_point < 1) throw std::invalid_argument("estimate_constants: need positive sample counts");
  const PolynomialGenerator& gen = model.generator();
  const double horizon = model.horizon();
  const double lg = model.terminal().lipschitz;
  RandomStream rng(seed, StreamPurpose::auxiliary);

  MomentConstants out;
  out.source = "monte_carlo_estimate";
  out.c1 = std::pow(model.terminal().sup_norm, q);
  for (int k = 0; k < points; ++k) {
    Vector x(d);
    for (int i = 0; i < d; ++i) x[i] = box_low[i] + (box_high[i] - box_low[i]) * rng.uniform();
    const double t = horizon * rng.uniform();
    const double dt = (horizon - t) * rng.uniform();
    if (!(dt > 1e-9)) continue;
    Vector b0(d);
    for (int i = 0; i < d; ++i) b0[i] = rng.uniform() < 0.5 ? -lg : lg;
    std::vector<double> m1(static_cast<std::size_t>(gen.gradient_directions()), 0.0);
    std::vector<double> m2(m1.size(), 0.0);
    for (int s = 0; s < samples_per_point; ++s) {
      RandomStream segment_rng(combine_keys(seed, static_cast<std::uint64_t>(k) * 1000003ULL + s),
                               StreamPurpose::diffusion);
      const SegmentResult seg = simulate_segment(model, t, x, dt, segment_rng);
      const double move = b0.dot(seg.end - x);
      for (int i = 1; i <= gen.gradient_directions(); ++i) {
        const double proj = gen.direction_at(i, t, x).dot(seg.weight);
        m1[static_cast<std::size_t>(i - 1)] += std::pow(std::abs(move * proj), q);
        m2[static_cast<std::size_t>(i - 1)] += std::pow(std::sqrt(dt) * std::abs(proj), q);
      }
    }
    for (std::size_t i = 0; i < m1.size(); ++i) {
      out.c1 = std::max(out.c1, m1[i] / samples_per_point);
      out.c2 = std::max(out.c2, m2[i] / samples_per_point);
    }
  }
  return out;
}

ConditionIResult check_condition_i(const BranchingLaw& law, const PdeModel& model, double q,
                                   const MomentConstants& constants) {
  const double horizon = model.horizon();
  ConditionIResult out;
  out.terminal_bound = constants.c1 * std::pow(1.0 / law.survival(horizon), q);
  out.effective_c2 = std::max(constants.c2, std::pow(horizon, q / 2.0));
  const double ratio = max_coefficient_ratio(law, model, &out.worst_term);
  const double inverse_density = sup_inverse_density(law, 0.5, horizon);
  out.branching_bound = ratio == 0.0 ? 0.0 : out.effective_c2 * std::pow(ratio * inverse_density, q);
  out.holds = out.terminal_bound <= 1.0 && out.branching_bound <= 1.0;
  out.borderline = std::abs(out.terminal_bound - 1.0) < 1e-12 || std::abs(out.branching_bound - 1.0) < 1e-12;
  return out;
}

EtaSolution solve_eta(double c1hat, double c2hat, const std::vector<ComparisonTerm>& terms, double horizon, int grid) {
  if (grid < 1) throw std::invalid_argument("solve_eta: grid must be positive");
  if (!(horizon > 0.0)) throw std::invalid_argument("solve_eta: horizon must be positive");
  if (!(c1hat >= 0.0) || !(c2hat >= 0.0)) throw std::invalid_argument("solve_eta: constants must be non-negative");
  std::vector<ComparisonTerm> active;
  for (const auto& [c, l] : terms) {
    if (std::abs(c) > 0.0) active.emplace_back(std::abs(c), l);
  }
  if (active.empty() || c2hat == 0.0) {
    EtaSolution out;
    out.eta0 = c1hat;
    out.grid = grid;
    return out;
  }
  if (!std::isfinite(c1hat) || !std::isfinite(c2hat)) {
    EtaSolution out;
    out.blew_up = true;
    out.eta0 = kInf;
    out.blowup_time = horizon;
    out.grid = grid;
    return out;
  }
  const EtaSolution coarse = solve_eta_once(c1hat, c2hat, active, horizon, grid);
  const EtaSolution fine = solve_eta_once(c1hat, c2hat, active, horizon, 2 * grid);
  if (coarse.blew_up != fine.blew_up) return fine;  // within one coarse step of the threshold
  if (!fine.blew_up) {
    const double diff = std::abs(coarse.eta0 - fine.eta0);
    if (diff > kRefinementTolerance * std::max(1.0, std::abs(fine.eta0))) {
      throw GridRefinementError("solve_eta: step halving changed eta(0) by " + std::to_string(diff) +
                                " on a grid of " + std::to_string(grid));
    }
  } else if (std::abs(coarse.blowup_time - fine.blowup_time) > coarse.blowup_bracket) {
    throw GridRefinementError("solve_eta: blow-up time not resolved on a grid of " + std::to_string(grid));
  }
  return fine;
}

double blowup_integral(double c1hat, double c2hat, const std::vector<ComparisonTerm>& terms) {
  std::vector<ComparisonTerm> active;
  int order = 0;
  int lowest = std::numeric_limits<int>::max();
  for (const auto& [c, l] : terms) {
    if (std::abs(c) > 0.0) {
      active.emplace_back(std::abs(c), l);
      order = std::max(order, l);
      lowest = std::min(lowest, l);
    }
  }
  if (active.empty() || c2hat == 0.0) return kInf;
  if (!std::isfinite(c2hat)) return 0.0;
  if (order <= 1) return kInf;
  if (c1hat == 0.0 && lowest >= 1) return kInf;
  if (!std::isfinite(c1hat)) return 0.0;
  auto integrand = [&](double x) {
    double s = 0.0;
    for (const auto& [c, l] : active) s += c * std::pow(x, l);
    return 1.0 / (c2hat * s);
  };
  boost::math::quadrature::exp_sinh<double> integrator;
  return integrator.integrate(integrand, c1hat, kInf);
}

double c1_hat(double c1, const BranchingLaw& law, double horizon, double q) {
  return c1 / std::pow(law.survival(horizon), q - 1.0);
}

double c2_hat(double c2, const BranchingLaw& law, const PdeModel& model, double horizon, double q) {
  const double exponent = q / (2.0 * (q - 1.0));
  const double ratio = max_coefficient_ratio(law, model);
  if (ratio == 0.0) return 0.0;
  const double inverse_density = sup_inverse_density(law, exponent, horizon);
  return c2 * std::pow(ratio * inverse_density, q - 1.0);
}

ConditionIIResult check_condition_ii(const BranchingLaw& law, const PdeModel& model, double q,
                                     const MomentConstants& constants, int grid) {
  ConditionIIResult out;
  const double horizon = model.horizon();
  if (!(q > 2.0)) {
    out.reason = "requires q > 2 so that the density exponent q/(2(q-1)) lies in (1/2, 1)";
    return out;
  }
  out.applicable = true;
  const double effective_c2 = std::max(constants.c2, std::pow(horizon, q / 2.0));
  out.c1_hat = c1_hat(constants.c1, law, horizon, q);
  out.c2_hat = c2_hat(effective_c2, law, model, horizon, q);
  const auto terms = comparison_terms(model);
  out.integral = blowup_integral(out.c1_hat, out.c2_hat, terms);
  if (!std::isfinite(out.c1_hat) || !std::isfinite(out.c2_hat)) {
    out.reason = "infinite constant";
    out.ode = solve_eta(out.c1_hat, out.c2_hat, terms, horizon, grid);
    out.holds = false;
    return out;
  }
  out.ode = solve_eta(out.c1_hat, out.c2_hat, terms, horizon, grid);
  out.holds = !out.ode.blew_up;
  const bool integral_holds = horizon < out.integral;
  out.verdicts_agree = integral_holds == out.holds;
  out.reason = out.holds ? "eta finite on [0, T]" : "eta blows up before t = 0";
  return out;
}

DensityShapeResult check_density_shape(const BranchingLaw& law, double q) {
  DensityShapeResult out;
  out.required_kappa_ii = q > 1.0 ? 1.0 - q / (2.0 * (q - 1.0)) : -kInf;
  const GammaArrival* g = law.gamma_arrival();
  if (!g) return out;
  out.known = true;
  out.kappa = g->kappa();
  out.mode_i_ok = g->kappa() <= out.required_kappa_i;
  out.mode_ii_ok = q > 2.0 && g->kappa() <= out.required_kappa_ii;
  return out;
}

ConditionReport analyze(const BranchingLaw& law, const PdeModel& model, double q,
                        const std::optional<MomentConstants>& constants, int grid) {
  if (!(q > 1.0)) throw std::invalid_argument("analyze: q must exceed 1");
  ConditionReport report;
  report.q = q;
  report.constants = constants ? *constants : constants_constant_coeff(model, q);
  report.condition_i = check_condition_i(law, model, q, report.constants);
  report.condition_ii = check_condition_ii(law, model, q, report.constants, grid);
  report.density_shape = check_density_shape(law, q);
  if (const GammaArrival* g = law.gamma_arrival()) report.warnings = g->warnings();
  if (report.constants.source == "monte_carlo_estimate") {
    report.warnings.push_back("moment constants are Monte Carlo estimates, not bounds");
  }
  if (report.condition_i.borderline) report.warnings.push_back("condition (i) holds with equality");
  if (!report.condition_ii.verdicts_agree) {
    report.warnings.push_back("ODE and integral criteria disagree (horizon within one grid step of the threshold)");
  }
  return report;
}

std::string to_json(const ConditionReport& r, int indent) {
  nlohmann::ordered_json j;
  j["q"] = r.q;
  j["constants"] = {{"C1q", number(r.constants.c1)},
                    {"C2q", number(r.constants.c2)},
                    {"C1q_hat", number(r.condition_ii.c1_hat)},
                    {"C2q_hat", number(r.condition_ii.c2_hat)},
                    {"source", r.constants.source}};
  j["condition_i"] = {{"holds", r.condition_i.holds},
                      {"borderline", r.condition_i.borderline},
                      {"terminal_bound", number(r.condition_i.terminal_bound)},
                      {"branching_bound", number(r.condition_i.branching_bound)},
                      {"effective_C2q", number(r.condition_i.effective_c2)},
                      {"worst_term", r.condition_i.worst_term}};
  nlohmann::ordered_json ii = {{"applicable", r.condition_ii.applicable},
                               {"holds", r.condition_ii.holds},
                               {"reason", r.condition_ii.reason}};
  if (r.condition_ii.applicable) {
    ii["integral"] = number(r.condition_ii.integral);
    ii["eta0"] = number(r.condition_ii.ode.eta0);
    ii["blew_up"] = r.condition_ii.ode.blew_up;
    if (r.condition_ii.ode.blew_up) ii["blowup_time"] = number(r.condition_ii.ode.blowup_time);
    ii["grid"] = r.condition_ii.ode.grid;
    ii["verdicts_agree"] = r.condition_ii.verdicts_agree;
  }
  j["condition_ii"] = std::move(ii);
  j["density_shape"] = {{"known", r.density_shape.known},
                        {"kappa", r.density_shape.kappa},
                        {"mode_i_ok", r.density_shape.mode_i_ok},
                        {"mode_ii_ok", r.density_shape.mode_ii_ok},
                        {"required_kappa_i", r.density_shape.required_kappa_i},
                        {"required_kappa_ii", number(r.density_shape.required_kappa_ii)}};
  j["warnings"] = r.warnings;
  return j.dump(indent);
}

}  // namespace branchdiff
