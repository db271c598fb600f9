#pragma once

// Diffusion segments and automatic-differentiation weights.
//
// A segment moves a particle from (t, x) over a duration dt and returns a
// weight vector W with E[phi(X_end) W] = D_x E[phi(X_end)].

#include <optional>
#include <stdexcept>
#include <vector>

#include "branchdiff/generator.hpp"
#include "branchdiff/random.hpp"

namespace branchdiff {

class DiffusionDegeneracy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SegmentResult {
  Vector end;
  /// Total Brownian increment over the segment; in exact_ou mode the standard
  /// normal vector Z driving the transition.
  Vector increment;
  /// Euler grid increments (empty in the exact modes).
  std::vector<Vector> grid_increments;
  std::vector<Vector> grid_states;  // X at the left point of each grid step
  Vector weight;
  double duration = 0.0;
};

/// Tangent process Y = dX/dx, equal to the identity at the segment start.
struct FirstVariationState {
  Matrix Y;
  explicit FirstVariationState(int d) : Y(Matrix::Identity(d, d)) {}
  /// One Euler step: Y += Dmu Y h + sum_i (D sigma_i Y) dW_i.
  void advance(const Matrix& drift_jacobian, const std::vector<Matrix>& sigma_jacobians,
               const Vector& dW, double h);
};

struct SegmentOptions {
  /// Euler grid width; 0 selects 0.01 T.
  double step = 0.0;
  /// Freeze the drift at this value (frozen-coefficient step) instead of the model drift.
  const Vector* frozen_drift = nullptr;
  /// Keep the Euler grid for weight_general.
  bool record_grid = false;
};

/// Inverse of a diffusion matrix; throws DiffusionDegeneracy if singular.
Matrix invert_sigma(const Matrix& sigma);

/// (sigma0^T)^{-1} dW / dt.
Vector weight_const(const Matrix& sigma0, const Vector& dW, double dt);

/// Advances the model over [t, t + dt] in the model's simulation mode. With
/// `frozen_drift` set the one-shot update x + mu_0 dt + sigma_0 dW is used
/// whatever the mode.
SegmentResult simulate_segment(const PdeModel& model, double t, const Vector& x, double dt,
                               RandomStream& rng, const SegmentOptions& options = {});

/// Recomputes the weight of a recorded Euler segment from its grid, with the
/// tangent re-simulated along the stored states.
Vector weight_general(const PdeModel& model, double t, const SegmentResult& segment);

/// Number of Euler steps used for a segment of length dt.
int euler_steps(const PdeModel& model, double dt, double step);

/// Multiplicative weight of a particle with the given mark:
///   mark 0         -> 1
///   mark i in 1..m -> b_i(birth) . W
///   mark m + 1     -> (mu(birth) - parent_drift) . W, derivative branches only.
double weight_factor(const PdeModel& model, int mark, double birth_time, const Vector& birth_state,
                     const SegmentResult& segment, const Vector* parent_drift = nullptr);

}  // namespace branchdiff
