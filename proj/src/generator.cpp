#include "branchdiff/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace branchdiff {

MultiIndex::MultiIndex(std::vector<int> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw std::invalid_argument("MultiIndex: needs at least one entry");
  for (int e : entries_) {
    if (e < 0) throw std::invalid_argument("MultiIndex: entries must be non-negative");
    order_ += e;
  }
}

std::string MultiIndex::to_string() const {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < entries_.size(); ++i) out << (i ? "," : "") << entries_[i];
  out << ')';
  return out.str();
}

GeneratorTerm constant_term(MultiIndex index, double value) {
  return GeneratorTerm{std::move(index), [value](double, const Vector&) { return value; },
                       std::abs(value), value};
}

Direction constant_direction(Vector b) {
  const double bound = b.size() ? b.cwiseAbs().maxCoeff() : 0.0;
  return Direction{[b](double, const Vector&) { return b; }, bound, b};
}

PolynomialGenerator::PolynomialGenerator(int gradient_directions, std::vector<GeneratorTerm> terms,
                                         std::vector<Direction> directions)
    : m_(gradient_directions), terms_(std::move(terms)), directions_(std::move(directions)) {
  if (m_ < 0) throw std::invalid_argument("PolynomialGenerator: m must be non-negative");
  if (terms_.empty()) throw std::invalid_argument("PolynomialGenerator: index set L is empty");
  if (static_cast<int>(directions_.size()) != m_) {
    throw std::invalid_argument("PolynomialGenerator: expected " + std::to_string(m_) +
                                " directions, got " + std::to_string(directions_.size()));
  }
  for (const auto& term : terms_) {
    if (static_cast<int>(term.index.size()) != m_ + 1) {
      throw std::invalid_argument("PolynomialGenerator: multi-index " + term.index.to_string() +
                                  " must have length m+1 = " + std::to_string(m_ + 1));
    }
    if (!term.coefficient) throw std::invalid_argument("PolynomialGenerator: missing coefficient");
    if (!(term.bound >= 0.0)) throw std::invalid_argument("PolynomialGenerator: bad coefficient bound");
  }
  for (const auto& dir : directions_) {
    if (!dir.field) throw std::invalid_argument("PolynomialGenerator: missing direction field");
  }
  std::sort(terms_.begin(), terms_.end(),
            [](const GeneratorTerm& a, const GeneratorTerm& b) { return a.index < b.index; });
  for (std::size_t i = 1; i < terms_.size(); ++i) {
    if (terms_[i].index == terms_[i - 1].index) {
      throw std::invalid_argument("PolynomialGenerator: duplicate multi-index " +
                                  terms_[i].index.to_string());
    }
  }
}

const Direction& PolynomialGenerator::direction(int i) const {
  if (i < 1 || i > m_) throw std::out_of_range("PolynomialGenerator: direction index out of range");
  return directions_[static_cast<std::size_t>(i - 1)];
}

int PolynomialGenerator::max_order() const noexcept {
  int best = 0;
  for (const auto& term : terms_) best = std::max(best, term.index.order());
  return best;
}

namespace {

double integer_power(double base, int exponent) {
  double result = 1.0;
  for (int k = 0; k < exponent; ++k) result *= base;
  return result;
}

}  // namespace

double PolynomialGenerator::evaluate(double t, const Vector& x, double y, const Vector& z) const {
  std::vector<double> projections(static_cast<std::size_t>(m_));
  for (int i = 1; i <= m_; ++i) {
    const Vector b = direction_at(i, t, x);
    if (b.size() != z.size()) {
      throw std::invalid_argument("PolynomialGenerator::evaluate: z has length " +
                                  std::to_string(z.size()) + " but directions have length " +
                                  std::to_string(b.size()));
    }
    projections[static_cast<std::size_t>(i - 1)] = b.dot(z);
  }
  double total = 0.0;
  for (const auto& term : terms_) {
    double monomial = term.coefficient(t, x) * integer_power(y, term.index[0]);
    for (int i = 1; i <= m_; ++i) {
      monomial *= integer_power(projections[static_cast<std::size_t>(i - 1)], term.index[static_cast<std::size_t>(i)]);
    }
    total += monomial;
  }
  return total;
}

std::string to_string(SimulationMode mode) {
  switch (mode) {
    case SimulationMode::euler: return "euler";
    case SimulationMode::exact_constant: return "exact_constant";
    case SimulationMode::exact_ou: return "exact_ou";
  }
  return "unknown";
}

SimulationMode simulation_mode_from_string(const std::string& name) {
  if (name == "euler") return SimulationMode::euler;
  if (name == "exact_constant") return SimulationMode::exact_constant;
  if (name == "exact_ou") return SimulationMode::exact_ou;
  throw std::invalid_argument("unknown simulation mode '" + name + "'");
}

PdeModel::PdeModel(ModelSpec spec) : spec_(std::move(spec)) {
  const int d = spec_.dimension;
  if (d < 1) throw std::invalid_argument("PdeModel: dimension must be >= 1");
  if (!(spec_.horizon > 0.0)) throw std::invalid_argument("PdeModel: horizon T must be > 0");
  if (!spec_.generator) throw std::invalid_argument("PdeModel: missing generator");
  if (!spec_.terminal.value) throw std::invalid_argument("PdeModel: missing terminal condition");

  if (spec_.affine_drift) {
    const auto& a = *spec_.affine_drift;
    if (a.offset.size() != d || a.slope.rows() != d || a.slope.cols() != d) {
      throw std::invalid_argument("PdeModel: affine drift has wrong shape");
    }
    if (!spec_.drift) {
      spec_.drift = [a](double, const Vector& x) -> Vector { return a.offset + a.slope * x; };
    }
    if (!spec_.drift_jacobian) {
      spec_.drift_jacobian = [slope = a.slope](double, const Vector&) -> Matrix { return slope; };
    }
  }
  if (!spec_.drift) throw std::invalid_argument("PdeModel: missing drift");

  if (spec_.constant_sigma) {
    const Matrix& s = *spec_.constant_sigma;
    if (s.rows() != d || s.cols() != d) throw std::invalid_argument("PdeModel: sigma has wrong shape");
    Eigen::FullPivLU<Matrix> lu(s);
    if (lu.isInvertible()) sigma_inverse_ = lu.inverse();
    if (!spec_.sigma) spec_.sigma = [s](double, const Vector&) -> Matrix { return s; };
  }
  if (!spec_.sigma) throw std::invalid_argument("PdeModel: missing sigma");

  for (const auto& dir : spec_.generator->directions()) {
    if (dir.constant && dir.constant->size() != d) {
      throw std::invalid_argument("PdeModel: direction length differs from dimension");
    }
  }

  switch (spec_.mode) {
    case SimulationMode::euler:
      break;
    case SimulationMode::exact_constant:
      if (!spec_.constant_sigma || !sigma_inverse_) {
        throw std::invalid_argument("PdeModel: exact_constant mode requires constant invertible sigma");
      }
      break;
    case SimulationMode::exact_ou:
      if (!spec_.affine_drift || !spec_.constant_sigma || !sigma_inverse_) {
        throw std::invalid_argument(
            "PdeModel: exact_ou mode requires affine drift and constant invertible sigma");
      }
      break;
  }
}

const Matrix& PdeModel::constant_sigma_inverse() const {
  if (!sigma_inverse_) throw std::logic_error("PdeModel: sigma is not constant and invertible");
  return *sigma_inverse_;
}

namespace {

double fd_step(double v) { return 1e-6 * std::max(1.0, std::abs(v)); }

}  // namespace

Matrix PdeModel::drift_jacobian(double t, const Vector& x) const {
  if (spec_.drift_jacobian) return spec_.drift_jacobian(t, x);
  const int d = dimension();
  Matrix jac(d, d);
  Vector xp = x;
  Vector xm = x;
  for (int j = 0; j < d; ++j) {
    const double h = fd_step(x[j]);
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    jac.col(j) = (spec_.drift(t, xp) - spec_.drift(t, xm)) / (2.0 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return jac;
}

Matrix PdeModel::sigma(double t, const Vector& x) const {
  if (spec_.constant_sigma) return *spec_.constant_sigma;
  return spec_.sigma(t, x);
}

std::vector<Matrix> PdeModel::sigma_jacobians(double t, const Vector& x) const {
  if (spec_.constant_sigma) return {};
  if (spec_.sigma_jacobians) return spec_.sigma_jacobians(t, x);
  const int d = dimension();
  std::vector<Matrix> out(static_cast<std::size_t>(d), Matrix::Zero(d, d));
  Vector xp = x;
  Vector xm = x;
  for (int j = 0; j < d; ++j) {
    const double h = fd_step(x[j]);
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    const Matrix diff = (spec_.sigma(t, xp) - spec_.sigma(t, xm)) / (2.0 * h);
    for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(i)].col(j) = diff.col(i);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return out;
}

PdeModel PdeModel::with_mode(SimulationMode mode) const {
  ModelSpec copy = spec_;
  copy.mode = mode;
  return PdeModel(std::move(copy));
}

TestModel make_cosine_test_model(int d, double alpha, double c, double sigma_scalar) {
  if (d < 1) throw std::invalid_argument("make_cosine_test_model: d must be >= 1");
  constexpr double horizon = 1.0;
  const double dd = static_cast<double>(d);
  const double variance = sigma_scalar * sigma_scalar;
  // sum of b's components
  const double b_sum = (3.0 * dd + 1.0) / (2.0 * dd);

  Vector b(d);
  for (int i = 0; i < d; ++i) b[i] = (1.0 + (i + 1) / dd) / dd;

  auto source = [=](double t, const Vector& x) {
    const double s = x.sum();
    const double growth = std::exp(alpha * (horizon - t));
    return std::cos(s) * (alpha + 0.5 * variance + c * std::sin(s) * b_sum * growth) * growth;
  };
  const double growth_max = std::exp(std::abs(alpha) * horizon);
  const double source_bound = (std::abs(alpha) + 0.5 * variance + std::abs(c) * b_sum * growth_max) * growth_max;

  std::vector<GeneratorTerm> terms;
  terms.push_back(GeneratorTerm{MultiIndex({0, 0}), source, source_bound, std::nullopt});
  terms.push_back(constant_term(MultiIndex({1, 1}), c));
  auto generator = std::make_shared<const PolynomialGenerator>(
      1, std::move(terms), std::vector<Direction>{constant_direction(b)});

  ModelSpec spec;
  spec.dimension = d;
  spec.horizon = horizon;
  spec.affine_drift = AffineDrift{Vector::Zero(d), Matrix::Zero(d, d)};
  spec.constant_sigma = Matrix::Identity(d, d) * (sigma_scalar / std::sqrt(dd));
  spec.terminal = TerminalCondition{[](const Vector& x) { return std::cos(x.sum()); }, 1.0, std::sqrt(dd)};
  spec.generator = std::move(generator);
  spec.mode = SimulationMode::exact_constant;

  TestModel out;
  out.name = "cosine-d" + std::to_string(d);
  out.model = std::make_shared<const PdeModel>(std::move(spec));
  out.x0 = Vector::Constant(d, 0.5);
  out.solution = [=](double t, const Vector& x) { return std::cos(x.sum()) * std::exp(alpha * (horizon - t)); };
  out.gradient = [=](double t, const Vector& x) -> Vector {
    return Vector::Constant(x.size(), -std::sin(x.sum()) * std::exp(alpha * (horizon - t)));
  };
  return out;
}

TestModel make_ou_test_model(int d, std::shared_ptr<const PolynomialGenerator> nonlinearity,
                             double g_scale) {
  if (d < 1) throw std::invalid_argument("make_ou_test_model: d must be >= 1");
  const double dd = static_cast<double>(d);
  ModelSpec spec;
  spec.dimension = d;
  spec.horizon = 1.0;
  spec.affine_drift = AffineDrift{Vector::Ones(d), -Matrix::Identity(d, d)};
  spec.constant_sigma = 0.5 * Matrix::Identity(d, d);
  spec.terminal = TerminalCondition{
      [=](const Vector& x) { return g_scale * std::max(x.mean() - 1.0, 0.0); },
      std::numeric_limits<double>::infinity(), std::abs(g_scale) / std::sqrt(dd)};
  spec.generator = std::move(nonlinearity);
  spec.mode = SimulationMode::exact_ou;

  TestModel out;
  out.name = "ou-" + std::to_string(d) + "d";
  out.model = std::make_shared<const PdeModel>(std::move(spec));
  out.x0 = Vector::Ones(d);
  return out;
}

}  // namespace branchdiff
