#include <gtest/gtest.h>

#include <cmath>

#include "branchdiff/diffusion.hpp"

#include <unsupported/Eigen/MatrixFunctions>

using namespace branchdiff;

namespace {

std::shared_ptr<const PolynomialGenerator> linear_gradient(int d) {
  return std::make_shared<const PolynomialGenerator>(
      1, std::vector<GeneratorTerm>{constant_term(MultiIndex({0, 1}), 0.1)},
      std::vector<Direction>{constant_direction(Vector::Ones(d))});
}

ModelSpec base_spec(int d) {
  ModelSpec spec;
  spec.dimension = d;
  spec.horizon = 1.0;
  spec.terminal = {[](const Vector& x) { return std::cos(x.sum()); }, 1.0, std::sqrt(double(d))};
  spec.generator = linear_gradient(d);
  return spec;
}

Matrix correlated_sigma(int d) {
  Matrix s = 0.6 * Matrix::Identity(d, d);
  if (d > 1) s(1, 0) = 0.25;
  return s;
}

struct Mean {
  Vector sum;
  Vector sq;
  int n = 0;
  explicit Mean(int d) : sum(Vector::Zero(d)), sq(Vector::Zero(d)) {}
  void add(const Vector& v) {
    sum += v;
    sq += v.cwiseProduct(v);
    ++n;
  }
  Vector mean() const { return sum / n; }
  Vector se() const { return ((sq / n - mean().cwiseProduct(mean())) / n).cwiseSqrt(); }
};

}  // namespace

TEST(WeightConst, Formula) {
  Matrix s(2, 2);
  s << 2.0, 0.0, 1.0, 1.0;
  Vector dw(2);
  dw << 0.3, -0.1;
  const Vector w = weight_const(s, dw, 0.5);
  EXPECT_TRUE(w.isApprox(s.inverse().transpose() * dw / 0.5, 1e-14));
  EXPECT_THROW(weight_const(Matrix::Zero(2, 2), dw, 0.5), DiffusionDegeneracy);
}

TEST(Segment, ExactConstantEndpoint) {
  ModelSpec spec = base_spec(2);
  Vector a(2);
  a << 0.2, -0.4;
  spec.affine_drift = AffineDrift{a, Matrix::Zero(2, 2)};
  spec.constant_sigma = correlated_sigma(2);
  spec.mode = SimulationMode::exact_constant;
  const PdeModel model(spec);
  RandomStream rng(3, StreamPurpose::diffusion);
  const Vector x = Vector::Constant(2, 0.1);
  const SegmentResult seg = simulate_segment(model, 0.0, x, 0.7, rng);
  EXPECT_TRUE(seg.end.isApprox(x + a * 0.7 + *spec.constant_sigma * seg.increment, 1e-14));
  EXPECT_TRUE(seg.weight.isApprox(weight_const(*spec.constant_sigma, seg.increment, 0.7), 1e-14));
}

// E[cos(1.X) W] = D_x E[cos(1.X)] with the closed form of the Gaussian transition.
TEST(Segment, ExactModesDerivativeIdentity) {
  for (auto mode : {SimulationMode::exact_constant, SimulationMode::exact_ou}) {
    for (int d : {1, 2}) {
      ModelSpec spec = base_spec(d);
      Matrix slope = Matrix::Zero(d, d);
      if (mode == SimulationMode::exact_ou) {
        slope = -0.8 * Matrix::Identity(d, d);
        if (d == 2) slope(0, 1) = 0.3;  // non-scalar slope exercises the general transition
      }
      spec.affine_drift = AffineDrift{Vector::Constant(d, 0.3), slope};
      spec.constant_sigma = correlated_sigma(d);
      spec.mode = mode;
      const PdeModel model(spec);
      const Vector x = Vector::LinSpaced(d, 0.2, 0.5);
      const double dt = 0.6;

      // Mean and covariance of the transition by an independent route (matrix exponential via series).
      const Vector ones = Vector::Ones(d);
      Matrix propagator = (slope * dt).exp();
      Vector mean = propagator * x;
      Matrix cov = Matrix::Zero(d, d);
      const int quad = 4000;
      for (int k = 0; k < quad; ++k) {
        const double s = (k + 0.5) * dt / quad;
        const Matrix e = (slope * s).exp();
        mean += e * spec.affine_drift->offset * (dt / quad);
        cov += e * spec.constant_sigma->operator*(spec.constant_sigma->transpose()) * e.transpose() * (dt / quad);
      }
      const double var = ones.dot(cov * ones);
      const Vector expected = -std::sin(ones.dot(mean)) * std::exp(-0.5 * var) * (propagator.transpose() * ones);

      Mean acc(d);
      for (int i = 0; i < 400000; ++i) {
        RandomStream rng(combine_keys(91, i), StreamPurpose::diffusion);
        const SegmentResult seg = simulate_segment(model, 0.0, x, dt, rng);
        acc.add(std::cos(seg.end.sum()) * seg.weight);
      }
      for (int i = 0; i < d; ++i) {
        EXPECT_NEAR(acc.mean()[i], expected[i], 4.0 * acc.se()[i]) << to_string(mode) << " d=" << d << " i=" << i;
      }
    }
  }
}

TEST(Segment, EulerWithConstantCoefficientsMatchesOneShotWeight) {
  ModelSpec spec = base_spec(2);
  spec.affine_drift = AffineDrift{Vector::Constant(2, 0.3), Matrix::Zero(2, 2)};
  spec.constant_sigma = correlated_sigma(2);
  spec.mode = SimulationMode::euler;
  const PdeModel model(spec);
  for (int i = 0; i < 20; ++i) {
    RandomStream rng(combine_keys(5, i), StreamPurpose::diffusion);
    SegmentOptions options;
    options.step = 0.05;
    const SegmentResult seg = simulate_segment(model, 0.0, Vector::Zero(2), 0.33, rng, options);
    const Vector w = weight_const(*spec.constant_sigma, seg.increment, 0.33);
    EXPECT_EQ(seg.weight, w);
  }
}

TEST(Segment, WeightGeneralReproducesOnlineWeight) {
  ModelSpec spec = base_spec(1);
  spec.drift = [](double, const Vector& x) { return Vector(0.5 * x.array().sin()); };
  spec.sigma = [](double, const Vector& x) { return Matrix::Constant(1, 1, 0.5 + 0.1 * std::cos(x[0])); };
  spec.mode = SimulationMode::euler;
  const PdeModel model(spec);
  RandomStream rng(8, StreamPurpose::diffusion);
  SegmentOptions options;
  options.step = 0.1;
  options.record_grid = true;
  const SegmentResult seg = simulate_segment(model, 0.2, Vector::Constant(1, 0.4), 0.55, rng, options);
  EXPECT_EQ(seg.grid_increments.size(), 6u);
  EXPECT_TRUE(weight_general(model, 0.2, seg).isApprox(seg.weight, 1e-12));
  EXPECT_THROW(weight_general(model, 0.2, SegmentResult{}), std::invalid_argument);
}

// Nonlinear drift: the Euler weight against common-random-number finite differences.
TEST(Segment, EulerDerivativeIdentity) {
  ModelSpec spec = base_spec(1);
  spec.drift = [](double, const Vector& x) { return Vector(-x.array() + 0.5 * x.array().sin()); };
  spec.constant_sigma = Matrix::Constant(1, 1, 0.7);
  spec.mode = SimulationMode::euler;
  const PdeModel model(spec);
  SegmentOptions options;
  options.step = 0.1;
  const double x0 = 0.3, h = 1e-3, dt = 0.5;
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t key = combine_keys(21, i);
    RandomStream r0(key, StreamPurpose::diffusion), rp(key, StreamPurpose::diffusion), rm(key, StreamPurpose::diffusion);
    const SegmentResult seg = simulate_segment(model, 0.0, Vector::Constant(1, x0), dt, r0, options);
    const double up = std::cos(simulate_segment(model, 0.0, Vector::Constant(1, x0 + h), dt, rp, options).end[0]);
    const double dn = std::cos(simulate_segment(model, 0.0, Vector::Constant(1, x0 - h), dt, rm, options).end[0]);
    const double diff = std::cos(seg.end[0]) * seg.weight[0] - (up - dn) / (2 * h);
    s += diff;
    s2 += diff * diff;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  EXPECT_LE(std::abs(mean), 4.0 * se + 2e-6);
}

TEST(Segment, SingularSigmaInEulerThrows) {
  ModelSpec spec = base_spec(1);
  spec.drift = [](double, const Vector& x) { return Vector(-x); };
  spec.sigma = [](double, const Vector& x) { return Matrix::Constant(1, 1, x[0]); };
  spec.mode = SimulationMode::euler;
  const PdeModel model(spec);
  RandomStream rng(1, StreamPurpose::diffusion);
  EXPECT_THROW(simulate_segment(model, 0.0, Vector::Zero(1), 0.1, rng), DiffusionDegeneracy);
}

TEST(Segment, EulerStepCount) {
  ModelSpec spec = base_spec(1);
  spec.affine_drift = AffineDrift{Vector::Zero(1), Matrix::Zero(1, 1)};
  spec.constant_sigma = Matrix::Identity(1, 1);
  const PdeModel model(spec);
  EXPECT_EQ(euler_steps(model, 0.5, 0.1), 5);
  EXPECT_EQ(euler_steps(model, 0.51, 0.1), 6);
  EXPECT_EQ(euler_steps(model, 1e-9, 0.1), 1);
  EXPECT_EQ(euler_steps(model, 0.5, 0.0), 50);
}

TEST(WeightFactor, ByMark) {
  ModelSpec spec = base_spec(2);
  spec.affine_drift = AffineDrift{Vector::Constant(2, 1.0), -Matrix::Identity(2, 2)};
  spec.constant_sigma = Matrix::Identity(2, 2);
  spec.mode = SimulationMode::exact_constant;
  const PdeModel model(spec);
  SegmentResult seg;
  seg.weight = Vector::Constant(2, 2.0);
  const Vector x = Vector::Constant(2, 0.5);
  EXPECT_EQ(weight_factor(model, 0, 0.0, x, seg), 1.0);
  EXPECT_DOUBLE_EQ(weight_factor(model, 1, 0.0, x, seg), 4.0);
  const Vector parent = Vector::Zero(2);
  EXPECT_DOUBLE_EQ(weight_factor(model, 2, 0.0, x, seg, &parent), 2.0);  // (0.5, 0.5) . (2, 2)
  EXPECT_THROW(weight_factor(model, 2, 0.0, x, seg), std::logic_error);
  EXPECT_THROW(weight_factor(model, 3, 0.0, x, seg, &parent), std::invalid_argument);
}
