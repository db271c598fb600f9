#include <gtest/gtest.h>

#include <cmath>

#include "branchdiff/analysis.hpp"

using namespace branchdiff;

namespace {

std::shared_ptr<const PdeModel> synthetic(double sigma, double b, double c, double T, std::vector<int> index = {0, 2}) {
  ModelSpec s;
  s.dimension = 1;
  s.horizon = T;
  s.affine_drift = AffineDrift{Vector::Zero(1), Matrix::Zero(1, 1)};
  s.constant_sigma = sigma * Matrix::Identity(1, 1);
  s.terminal = {[](const Vector& x) { return 0.5 * std::cos(x[0]); }, 0.5, 0.5};
  if (index.size() == 1) {
    s.generator = std::make_shared<const PolynomialGenerator>(
        0, std::vector<GeneratorTerm>{constant_term(MultiIndex(index), c)});
  } else {
    s.generator = std::make_shared<const PolynomialGenerator>(
        1, std::vector<GeneratorTerm>{constant_term(MultiIndex(index), c)},
        std::vector<Direction>{constant_direction(Vector::Constant(1, b))});
  }
  s.mode = SimulationMode::exact_constant;
  return std::make_shared<const PdeModel>(s);
}

}  // namespace

TEST(GaussianMoment, KnownValues) {
  EXPECT_NEAR(gaussian_abs_moment(1.0), std::sqrt(2.0 / M_PI), 1e-14);
  EXPECT_NEAR(gaussian_abs_moment(2.0), 1.0, 1e-14);
  EXPECT_NEAR(gaussian_abs_moment(3.0), 2.0 * std::sqrt(2.0 / M_PI), 1e-14);
  EXPECT_NEAR(gaussian_abs_moment(4.0), 3.0, 1e-13);
}

TEST(Constants, OneDimensionalClosedForm) {
  const double sigma = 0.8, b = 0.3, lg = 0.5;
  const auto model = synthetic(sigma, b, 0.1, 1.0);
  for (double q : {2.0, 3.0}) {
    const MomentConstants k = constants_constant_coeff(*model, q);
    const double s0 = lg * lg * sigma * sigma;
    const double s1 = b * b / (sigma * sigma);
    const double mixed = std::pow(s0 + s1, q) * std::pow(2.0, q - 1.0) * std::tgamma(q + 0.5) / std::sqrt(M_PI);
    EXPECT_NEAR(k.c1, std::max(std::pow(0.5, q), mixed), 1e-14);
    EXPECT_NEAR(k.c2, std::pow(s1, q / 2.0) * gaussian_abs_moment(q), 1e-14);
  }
  const auto no_gradient = synthetic(sigma, b, 0.1, 1.0, {2});
  const MomentConstants k = constants_constant_coeff(*no_gradient, 2.0);
  EXPECT_DOUBLE_EQ(k.c1, 0.25);
  EXPECT_EQ(k.c2, 0.0);
  EXPECT_THROW(constants_constant_coeff(*model, 1.0), std::invalid_argument);
}

TEST(ConditionI, BoundsByHand) {
  const auto model = synthetic(1.0, 0.1, 0.1, 0.1);
  const BranchingLaw law = BranchingLaw::gamma(model->generator(), 0.5, 2.5);
  const MomentConstants k = constants_constant_coeff(*model, 2.0);
  const ConditionIResult r = check_condition_i(law, *model, 2.0, k);
  EXPECT_NEAR(r.terminal_bound, k.c1 / std::pow(law.survival(0.1), 2.0), 1e-14);
  EXPECT_NEAR(r.effective_c2, 0.1, 1e-15);
  // sup_t 1 / (sqrt(t) rho(t)) at t = T for kappa = 1/2.
  const double inv = 1.0 / (std::sqrt(0.1) * law.density(0.1));
  EXPECT_NEAR(r.branching_bound, 0.1 * std::pow(0.1 * inv, 2.0), 1e-12);
  EXPECT_TRUE(r.holds);
  EXPECT_EQ(r.worst_term, "(0,2)");

  const BranchingLaw heavy = BranchingLaw::gamma(model->generator(), 0.7, 2.5);
  EXPECT_FALSE(check_condition_i(heavy, *model, 2.0, k).holds);
}

TEST(SolveEta, RiccatiClosedForm) {
  const double c1 = 0.8, c2 = 1.3, c = 0.7;
  for (double T : {0.3, 0.9}) {
    const EtaSolution s = solve_eta(c1, c2, {{c, 2}}, T, 2000);
    ASSERT_FALSE(s.blew_up);
    EXPECT_NEAR(s.eta0, c1 / (1.0 - c1 * c2 * c * T), 1e-8);
  }
  const double threshold = 1.0 / (c1 * c2 * c);
  EXPECT_TRUE(solve_eta(c1, c2, {{c, 2}}, threshold * 1.01, 2000).blew_up);
}

TEST(SolveEta, VerdictFlipsWithinOneGridStep) {
  const int grid = 500;
  bool last = false;
  double flip = -1.0;
  for (int k = 0; k <= 400; ++k) {
    const double T = 0.8 + 0.4 * k / 400.0;
    const bool blew = solve_eta(1.0, 1.0, {{1.0, 2}}, T, grid).blew_up;
    if (blew && !last) flip = T;
    last = blew;
  }
  ASSERT_GT(flip, 0.0);
  EXPECT_LE(std::abs(flip - 1.0), 1.2 / grid + 0.001);
}

TEST(SolveEta, LinearGrowth) {
  const EtaSolution s = solve_eta(0.5, 2.0, {{0.3, 1}, {0.1, 0}}, 1.0, 1000);
  // eta' = -2 (0.3 eta + 0.1) backward: eta(0) = (0.5 + 1/3) e^{0.6} - 1/3.
  EXPECT_NEAR(s.eta0, (0.5 + 1.0 / 3.0) * std::exp(0.6) - 1.0 / 3.0, 1e-9);
}

TEST(SolveEta, CoarseGridIsRejected) {
  EXPECT_THROW(solve_eta(1.0, 1.0, {{3.0, 1}, {1.0, 3}}, 0.1, 2), GridRefinementError);
  EXPECT_THROW(solve_eta(1.0, 1.0, {{1.0, 2}}, 1.0, 0), std::invalid_argument);
}

TEST(BlowupIntegral, ClosedForms) {
  EXPECT_NEAR(blowup_integral(0.8, 1.3, {{0.7, 2}}), 1.0 / (0.8 * 1.3 * 0.7), 1e-10);
  // int dx / (a x + b x^2) from x0 = ln(1 + a / (b x0)) / a
  const double a = 1.3 * 0.4, b = 1.3 * 0.6;
  EXPECT_NEAR(blowup_integral(0.8, 1.3, {{0.4, 1}, {0.6, 2}}), std::log(1.0 + a / (b * 0.8)) / a, 1e-9);
  EXPECT_TRUE(std::isinf(blowup_integral(0.8, 1.3, {{0.4, 1}})));
}

TEST(ConditionII, NeedsQAboveTwoAndThinDensity) {
  const auto model = synthetic(1.0, 0.1, 0.1, 0.1, {2});
  const BranchingLaw law = BranchingLaw::gamma(model->generator(), 0.5, 2.5);
  const MomentConstants k = constants_constant_coeff(*model, 3.0);
  EXPECT_FALSE(check_condition_ii(law, *model, 2.0, k).applicable);
  const ConditionIIResult thick = check_condition_ii(law, *model, 3.0, k);
  EXPECT_TRUE(thick.applicable);
  EXPECT_FALSE(thick.holds);
  EXPECT_TRUE(std::isinf(thick.c2_hat));
  const BranchingLaw thin = BranchingLaw::gamma(model->generator(), 0.2, 2.5);
  const ConditionIIResult r = check_condition_ii(thin, *model, 3.0, k);
  EXPECT_TRUE(r.holds);
  EXPECT_TRUE(r.verdicts_agree);
  EXPECT_NEAR(r.c1_hat, k.c1 / std::pow(thin.survival(0.1), 2.0), 1e-14);
}

TEST(DensityShape, Thresholds) {
  const auto model = synthetic(1.0, 0.1, 0.1, 1.0);
  const BranchingLaw law = BranchingLaw::gamma(model->generator(), 0.2, 2.5);
  const DensityShapeResult r = check_density_shape(law, 3.0);
  EXPECT_TRUE(r.known);
  EXPECT_TRUE(r.mode_i_ok);
  EXPECT_TRUE(r.mode_ii_ok);
  EXPECT_NEAR(r.required_kappa_ii, 0.25, 1e-15);
  EXPECT_FALSE(check_density_shape(BranchingLaw::gamma(model->generator(), 0.3, 2.5), 3.0).mode_ii_ok);
}

TEST(Report, JsonWritesInfinity) {
  const auto model = synthetic(1.0, 0.1, 0.1, 0.1);
  const BranchingLaw law = BranchingLaw::gamma(model->generator(), 0.5, 2.5);
  const ConditionReport report = analyze(law, *model, 3.0);
  const std::string json = to_json(report);
  EXPECT_NE(json.find("\"inf\""), std::string::npos);
  EXPECT_NE(json.find("condition_ii"), std::string::npos);
  EXPECT_THROW(analyze(law, *model, 1.0), std::invalid_argument);
}

TEST(EstimateConstants, ApproachesClosedForm) {
  const auto model = synthetic(1.0, 0.5, 0.1, 1.0);
  const MomentConstants mc =
      estimate_constants(*model, 2.0, Vector::Constant(1, -1.0), Vector::Constant(1, 1.0), 20, 4000, 3);
  const MomentConstants exact = constants_constant_coeff(*model, 2.0);
  EXPECT_EQ(mc.source, "monte_carlo_estimate");
  EXPECT_LE(mc.c2, exact.c2 * 1.2);
  EXPECT_GT(mc.c2, 0.0);
}
