#pragma once

// Sufficient conditions for finite q-th moments of the estimator.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "branchdiff/generator.hpp"
#include "branchdiff/skeleton.hpp"

namespace branchdiff {

/// Moment constants of the terminal and branching factors.
struct MomentConstants {
  double c1 = 0.0;
  double c2 = 0.0;
  /// "closed_form", "user" or "monte_carlo_estimate".
  std::string source = "closed_form";
};

/// E|N|^q for a standard normal N.
double gaussian_abs_moment(double q);

/// Closed-form bounds for constant sigma. Throws std::invalid_argument otherwise.
MomentConstants constants_constant_coeff(const PdeModel& model, double q);

/// Monte Carlo estimates of the sup-expectations over a box of starting
/// points, for models without closed forms. Never a certificate.
MomentConstants estimate_constants(const PdeModel& model, double q, const Vector& box_low, const Vector& box_high,
                                   int points, int samples_per_point, std::uint64_t seed);

struct ConditionIResult {
  bool holds = false;
  bool borderline = false;
  double terminal_bound = 0.0;   // C1 / Fbar(T)^q
  double branching_bound = 0.0;  // sup_{l,t} C2 (|c_l| / (p_l sqrt(t) rho(t)))^q
  double effective_c2 = 0.0;     // max(C2, T^{q/2}); mark-0 branchers have weight 1
  std::string worst_term;
};

ConditionIResult check_condition_i(const BranchingLaw& law, const PdeModel& model, double q,
                                   const MomentConstants& constants);

class GridRefinementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Coefficient magnitude and order |l| of one generator term.
using ComparisonTerm = std::pair<double, int>;

struct EtaSolution {
  bool blew_up = false;
  double eta0 = 0.0;          // eta(0) when finite
  double blowup_time = 0.0;   // time t at which eta exceeded the bound, when blown up
  double blowup_bracket = 0.0;  // width of the bracket around blowup_time
  int grid = 0;
};

/// Solves eta' = -c2hat sum |c_l| eta^{|l|} backward from eta(T) = c1hat with RK4
/// on `grid` and 2 * `grid` steps; throws GridRefinementError when they disagree.
EtaSolution solve_eta(double c1hat, double c2hat, const std::vector<ComparisonTerm>& terms, double horizon,
                      int grid);

/// int_{c1hat}^infty dx / (c2hat sum |c_l| x^{|l|}); +infinity when divergent.
double blowup_integral(double c1hat, double c2hat, const std::vector<ComparisonTerm>& terms);

struct ConditionIIResult {
  bool applicable = false;
  bool holds = false;
  std::string reason;
  double c1_hat = 0.0;
  double c2_hat = 0.0;
  double integral = 0.0;
  EtaSolution ode;
  bool verdicts_agree = true;
};

double c1_hat(double c1, const BranchingLaw& law, double horizon, double q);
/// +infinity when the arrival density is too thin near 0.
double c2_hat(double c2, const BranchingLaw& law, const PdeModel& model, double horizon, double q);

ConditionIIResult check_condition_ii(const BranchingLaw& law, const PdeModel& model, double q,
                                     const MomentConstants& constants, int grid = 2000);

struct DensityShapeResult {
  bool known = false;  // false for non-gamma laws
  bool mode_i_ok = false;
  bool mode_ii_ok = false;
  double required_kappa_i = 0.5;
  double required_kappa_ii = 0.0;
  double kappa = 0.0;
};

DensityShapeResult check_density_shape(const BranchingLaw& law, double q);

struct ConditionReport {
  double q = 2.0;
  MomentConstants constants;
  ConditionIResult condition_i;
  ConditionIIResult condition_ii;
  DensityShapeResult density_shape;
  std::vector<std::string> warnings;
};

/// Full report. Without `constants`, closed forms are used (constant sigma only).
ConditionReport analyze(const BranchingLaw& law, const PdeModel& model, double q,
                        const std::optional<MomentConstants>& constants = std::nullopt, int grid = 2000);

std::string to_json(const ConditionReport& report, int indent = 2);

}  // namespace branchdiff
