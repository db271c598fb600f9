#include "branchdiff/diffusion.hpp"

#include <cmath>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

namespace branchdiff {

namespace {

// Accumulates (1/dt) sum_j M_j^T dW_j as sum_j (M_j - M_0)^T dW_j + M_0^T sum_j dW_j,
// so that a constant integrand reproduces the one-shot weight exactly.
class WeightAccumulator {
 public:
  explicit WeightAccumulator(int d) : correction_(Vector::Zero(d)), total_(Vector::Zero(d)) {}

  void add(const Matrix& integrand, const Vector& dW) {
    if (!first_) {
      first_ = integrand;
    } else {
      correction_.noalias() += (integrand - *first_).transpose() * dW;
    }
    total_ += dW;
  }

  const Vector& total_increment() const noexcept { return total_; }

  Vector finish(double dt) const {
    if (!first_) return Vector::Zero(total_.size());
    return (correction_ + first_->transpose() * total_) / dt;
  }

 private:
  std::optional<Matrix> first_;
  Vector correction_;
  Vector total_;
};

bool is_scalar_identity(const Matrix& m, double& scale) {
  scale = m(0, 0);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (m(i, j) != (i == j ? scale : 0.0)) return false;
    }
  }
  return true;
}

// (e^{x} - 1) / x with the removable singularity at 0.
double expm1_ratio(double x) { return x == 0.0 ? 1.0 : std::expm1(x) / x; }

SegmentResult segment_exact_ou(const PdeModel& model, const Vector& x, double dt, RandomStream& rng) {
  const int d = model.dimension();
  const AffineDrift& drift = *model.affine_drift();
  const Matrix& sigma = *model.constant_sigma();

  SegmentResult out;
  out.duration = dt;
  out.increment.resize(d);
  rng.fill_normal(out.increment);
  const Vector& z = out.increment;

  double beta = 0.0;
  if (is_scalar_identity(drift.slope, beta)) {
    // mean = e^{beta dt} x + a (e^{beta dt} - 1) / beta, cov = sigma sigma^T (e^{2 beta dt} - 1) / (2 beta)
    const double growth = std::exp(beta * dt);
    const double spread = std::sqrt(dt * expm1_ratio(2.0 * beta * dt));
    out.end = growth * x + (dt * expm1_ratio(beta * dt)) * drift.offset + spread * (sigma * z);
    const Matrix& sigma_inv = model.constant_sigma_inverse();
    out.weight = (growth / spread) * (sigma_inv.transpose() * z);
    return out;
  }

  // Van Loan: exp([[-B, S],[0, B^T]] dt) gives the covariance, exp([[B, I],[0, 0]] dt) the mean integral.
  const Matrix& b = drift.slope;
  Matrix block = Matrix::Zero(2 * d, 2 * d);
  block.topLeftCorner(d, d) = -b * dt;
  block.topRightCorner(d, d) = sigma * sigma.transpose() * dt;
  block.bottomRightCorner(d, d) = b.transpose() * dt;
  const Matrix f = block.exp();
  const Matrix propagator = f.bottomRightCorner(d, d).transpose();
  Matrix covariance = propagator * f.topRightCorner(d, d);
  covariance = 0.5 * (covariance + covariance.transpose()).eval();

  Matrix mean_block = Matrix::Zero(2 * d, 2 * d);
  mean_block.topLeftCorner(d, d) = b * dt;
  mean_block.topRightCorner(d, d) = Matrix::Identity(d, d) * dt;
  const Matrix integral = mean_block.exp().topRightCorner(d, d);

  Eigen::LLT<Matrix> chol(covariance);
  if (chol.info() != Eigen::Success) throw DiffusionDegeneracy("exact_ou: transition covariance not positive definite");
  const Matrix lower = chol.matrixL();
  out.end = propagator * x + integral * drift.offset + lower * z;
  // D_x E[phi(X)] = E[phi(X) e^{B^T dt} L^{-T} z]
  const Vector solved = lower.transpose().triangularView<Eigen::Upper>().solve(z);
  out.weight = propagator.transpose() * solved;
  return out;
}

SegmentResult segment_one_shot(const PdeModel& model, const Vector& x, const Vector& drift, double dt,
                               RandomStream& rng) {
  const Matrix& sigma = *model.constant_sigma();
  SegmentResult out;
  out.duration = dt;
  out.increment.resize(model.dimension());
  rng.fill_normal(out.increment);
  out.increment *= std::sqrt(dt);
  out.end = x + drift * dt + sigma * out.increment;
  out.weight = weight_const(sigma, out.increment, dt);
  return out;
}

Matrix sigma_inverse_at(const PdeModel& model, double t, const Vector& x) {
  if (model.constant_sigma()) return model.constant_sigma_inverse();
  const Matrix s = model.sigma(t, x);
  Eigen::FullPivLU<Matrix> lu(s);
  if (!lu.isInvertible()) {
    throw DiffusionDegeneracy("euler: sigma singular at t=" + std::to_string(t));
  }
  return lu.inverse();
}

SegmentResult segment_euler(const PdeModel& model, double t0, const Vector& x, double dt,
                            RandomStream& rng, double step, bool record) {
  const int d = model.dimension();
  const int steps = euler_steps(model, dt, step);
  const double h = dt / steps;
  const double root_h = std::sqrt(h);
  const bool constant_sigma = model.constant_sigma().has_value();

  SegmentResult out;
  out.duration = dt;
  if (record) {
    out.grid_increments.reserve(static_cast<std::size_t>(steps));
    out.grid_states.reserve(static_cast<std::size_t>(steps));
  }

  FirstVariationState tangent(d);
  WeightAccumulator weight(d);
  Vector state = x;
  Vector dW(d);
  const Matrix identity = Matrix::Identity(d, d);
  for (int j = 0; j < steps; ++j) {
    const double t = t0 + j * h;
    rng.fill_normal(dW);
    dW *= root_h;

    const Matrix jac = model.drift_jacobian(t, state);
    const std::vector<Matrix> sigma_jac = model.sigma_jacobians(t, state);
    // Drift-advanced tangent: adapted, and exact for the Euler chain under additive noise.
    const Matrix advanced = (identity + jac * h) * tangent.Y;
    weight.add(sigma_inverse_at(model, t, state) * advanced, dW);

    if (record) {
      out.grid_states.push_back(state);
      out.grid_increments.push_back(dW);
    }
    const Matrix sigma = constant_sigma ? *model.constant_sigma() : model.sigma(t, state);
    state = state + model.drift(t, state) * h + sigma * dW;
    tangent.advance(jac, sigma_jac, dW, h);
  }
  out.end = std::move(state);
  out.increment = weight.total_increment();
  out.weight = weight.finish(dt);
  return out;
}

}  // namespace

void FirstVariationState::advance(const Matrix& drift_jacobian, const std::vector<Matrix>& sigma_jacobians,
                                  const Vector& dW, double h) {
  Matrix next = Y + drift_jacobian * Y * h;
  for (std::size_t i = 0; i < sigma_jacobians.size(); ++i) {
    next.noalias() += sigma_jacobians[i] * Y * dW[static_cast<Eigen::Index>(i)];
  }
  Y = std::move(next);
}

Matrix invert_sigma(const Matrix& sigma) {
  Eigen::FullPivLU<Matrix> lu(sigma);
  if (!lu.isInvertible()) throw DiffusionDegeneracy("sigma is singular");
  return lu.inverse();
}

Vector weight_const(const Matrix& sigma0, const Vector& dW, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("weight_const: dt must be positive");
  const Matrix sigma_inv = invert_sigma(sigma0);
  return (sigma_inv.transpose() * dW) / dt;
}

int euler_steps(const PdeModel& model, double dt, double step) {
  const double width = step > 0.0 ? step : 0.01 * model.horizon();
  return std::max(1, static_cast<int>(std::ceil(dt / width * (1.0 - 1e-12))));
}

SegmentResult simulate_segment(const PdeModel& model, double t, const Vector& x, double dt,
                               RandomStream& rng, const SegmentOptions& options) {
  if (!(dt > 0.0)) throw std::invalid_argument("simulate_segment: dt must be positive");
  if (x.size() != model.dimension()) throw std::invalid_argument("simulate_segment: state has wrong dimension");
  if (options.frozen_drift) {
    if (!model.constant_sigma()) {
      throw std::invalid_argument("frozen-coefficient step requires constant sigma");
    }
    return segment_one_shot(model, x, *options.frozen_drift, dt, rng);
  }
  switch (model.mode()) {
    case SimulationMode::exact_constant:
      return segment_one_shot(model, x, model.drift(t, x), dt, rng);
    case SimulationMode::exact_ou:
      return segment_exact_ou(model, x, dt, rng);
    case SimulationMode::euler:
      break;
  }
  return segment_euler(model, t, x, dt, rng, options.step, options.record_grid);
}

Vector weight_general(const PdeModel& model, double t0, const SegmentResult& segment) {
  if (segment.grid_increments.empty() || segment.grid_states.size() != segment.grid_increments.size()) {
    throw std::invalid_argument("weight_general: segment has no recorded Euler grid");
  }
  const int d = model.dimension();
  const double h = segment.duration / static_cast<double>(segment.grid_increments.size());
  FirstVariationState tangent(d);
  WeightAccumulator weight(d);
  const Matrix identity = Matrix::Identity(d, d);
  for (std::size_t j = 0; j < segment.grid_increments.size(); ++j) {
    const double t = t0 + static_cast<double>(j) * h;
    const Vector& state = segment.grid_states[j];
    const Vector& dW = segment.grid_increments[j];
    const Matrix jac = model.drift_jacobian(t, state);
    const Matrix advanced = (identity + jac * h) * tangent.Y;
    weight.add(sigma_inverse_at(model, t, state) * advanced, dW);
    tangent.advance(jac, model.sigma_jacobians(t, state), dW, h);
  }
  return weight.finish(segment.duration);
}

double weight_factor(const PdeModel& model, int mark, double birth_time, const Vector& birth_state,
                     const SegmentResult& segment, const Vector* parent_drift) {
  if (mark == 0) return 1.0;
  const int m = model.generator().gradient_directions();
  if (mark >= 1 && mark <= m) {
    return model.generator().direction_at(mark, birth_time, birth_state).dot(segment.weight);
  }
  if (mark == m + 1) {
    if (!parent_drift) throw std::logic_error("derivative mark encountered outside the frozen-coefficient scheme");
    return (model.drift(birth_time, birth_state) - *parent_drift).dot(segment.weight);
  }
  throw std::invalid_argument("weight_factor: invalid mark " + std::to_string(mark));
}

}  // namespace branchdiff
