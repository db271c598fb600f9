#pragma once

// PDE model description.
//
//   d_t u + mu . Du + 1/2 sigma sigma^T : D^2 u + f(t, x, u, Du) = 0,   u(T, .) = g,
//
// with the polynomial nonlinearity
//
//   f(t, x, y, z) = sum_{l in L} c_l(t, x) y^{l_0} prod_{i=1..m} (b_i(t, x) . z)^{l_i}.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace branchdiff {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using ScalarField = std::function<double(double, const Vector&)>;
using VectorField = std::function<Vector(double, const Vector&)>;
using MatrixField = std::function<Matrix(double, const Vector&)>;
/// Jacobians of the columns of sigma: entry i is d sigma_{., i} / dx.
using MatrixListField = std::function<std::vector<Matrix>(double, const Vector&)>;

/// Exponent vector l = (l_0, ..., l_m) of one monomial of the generator.
class MultiIndex {
 public:
  MultiIndex() = default;
  explicit MultiIndex(std::vector<int> entries);

  /// |l| = sum of entries, the number of offspring of a branching of this type.
  int order() const noexcept { return order_; }
  std::size_t size() const noexcept { return entries_.size(); }
  int operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<int>& entries() const noexcept { return entries_; }

  std::string to_string() const;

  friend bool operator==(const MultiIndex& a, const MultiIndex& b) { return a.entries_ == b.entries_; }
  friend auto operator<=>(const MultiIndex& a, const MultiIndex& b) { return a.entries_ <=> b.entries_; }

 private:
  std::vector<int> entries_;
  int order_ = 0;
};

/// One monomial c_l(t,x) y^{l_0} prod (b_i . z)^{l_i}. `bound` is the declared |c_l|_inf.
struct GeneratorTerm {
  MultiIndex index;
  ScalarField coefficient;
  double bound = 0.0;
  std::optional<double> constant;  // set when c_l is constant
};

/// Gradient direction b_i. `bound` is the declared sup over components |b_i|_inf.
struct Direction {
  VectorField field;
  double bound = 0.0;
  std::optional<Vector> constant;
};

GeneratorTerm constant_term(MultiIndex index, double value);
Direction constant_direction(Vector b);

class PolynomialGenerator {
 public:
  /// `gradient_directions` is m; every index must have length m + 1 and
  /// `directions` must hold exactly m entries. Terms are stored sorted by index.
  PolynomialGenerator(int gradient_directions, std::vector<GeneratorTerm> terms,
                      std::vector<Direction> directions = {});

  int gradient_directions() const noexcept { return m_; }
  const std::vector<GeneratorTerm>& terms() const noexcept { return terms_; }
  const std::vector<Direction>& directions() const noexcept { return directions_; }
  /// Direction b_i for i in 1..m.
  const Direction& direction(int i) const;
  int max_order() const noexcept;

  double coefficient(std::size_t term, double t, const Vector& x) const {
    return terms_[term].coefficient(t, x);
  }
  Vector direction_at(int i, double t, const Vector& x) const { return direction(i).field(t, x); }

  /// f(t, x, y, z). Throws std::invalid_argument when z does not match the directions.
  double evaluate(double t, const Vector& x, double y, const Vector& z) const;

 private:
  int m_;
  std::vector<GeneratorTerm> terms_;
  std::vector<Direction> directions_;
};

struct TerminalCondition {
  std::function<double(const Vector&)> value;
  double sup_norm = 0.0;   // |g|_inf, may be +inf
  double lipschitz = 0.0;  // Euclidean Lipschitz constant L_g
};

/// mu(t, x) = offset + slope x.
struct AffineDrift {
  Vector offset;
  Matrix slope;
};

enum class SimulationMode { euler, exact_constant, exact_ou };

std::string to_string(SimulationMode mode);
SimulationMode simulation_mode_from_string(const std::string& name);

struct ModelSpec {
  int dimension = 1;
  double horizon = 1.0;
  VectorField drift;              // may be left empty when `affine_drift` is set
  MatrixField drift_jacobian;     // optional; finite differences otherwise
  MatrixField sigma;              // may be left empty when `constant_sigma` is set
  MatrixListField sigma_jacobians;  // optional; finite differences otherwise
  std::optional<Matrix> constant_sigma;
  std::optional<AffineDrift> affine_drift;
  TerminalCondition terminal;
  std::shared_ptr<const PolynomialGenerator> generator;
  SimulationMode mode = SimulationMode::euler;
};

/// Immutable after construction; all callables must be pure.
class PdeModel {
 public:
  explicit PdeModel(ModelSpec spec);

  int dimension() const noexcept { return spec_.dimension; }
  double horizon() const noexcept { return spec_.horizon; }
  SimulationMode mode() const noexcept { return spec_.mode; }
  const PolynomialGenerator& generator() const noexcept { return *spec_.generator; }
  const TerminalCondition& terminal() const noexcept { return spec_.terminal; }
  const std::optional<Matrix>& constant_sigma() const noexcept { return spec_.constant_sigma; }
  /// Inverse of the constant sigma; throws when sigma is not constant.
  const Matrix& constant_sigma_inverse() const;
  const std::optional<AffineDrift>& affine_drift() const noexcept { return spec_.affine_drift; }

  Vector drift(double t, const Vector& x) const { return spec_.drift(t, x); }
  Matrix drift_jacobian(double t, const Vector& x) const;
  Matrix sigma(double t, const Vector& x) const;
  /// d sigma_{., i} / dx for each column i. Empty when sigma is constant.
  std::vector<Matrix> sigma_jacobians(double t, const Vector& x) const;

  double terminal_value(const Vector& x) const { return spec_.terminal.value(x); }

  /// A copy with another simulation mode (validated again).
  PdeModel with_mode(SimulationMode mode) const;
  const ModelSpec& spec() const noexcept { return spec_; }

 private:
  ModelSpec spec_;
  std::optional<Matrix> sigma_inverse_;
};

/// A model together with its evaluation point and, when known, closed-form solution.
struct TestModel {
  std::string name;
  std::shared_ptr<const PdeModel> model;
  Vector x0;
  std::function<double(double, const Vector&)> solution;  // empty if unknown
  VectorField gradient;                                     // empty if unknown
};

/// Cosine model with explicit solution u(t, x) = cos(sum x) e^{alpha (T - t)}, T = 1,
/// sigma_0 = (sigma_scalar / sqrt(d)) I, x0 = 0.5 * ones.
TestModel make_cosine_test_model(int d, double alpha, double c, double sigma_scalar = 1.0);

/// Ornstein-Uhlenbeck model mu = 1 - x, sigma = 0.5 I, g(x) = scale * (mean(x) - 1)^+,
/// T = 1, x0 = ones, exact simulation.
TestModel make_ou_test_model(int d, std::shared_ptr<const PolynomialGenerator> nonlinearity,
                             double g_scale = 1.0);

}  // namespace branchdiff
