#pragma once

// Representation estimators built on marked branching diffusions.
//
// A sample is the product of one factor per particle. Particles reaching the
// horizon contribute (g(X_T) - g(X_birth) 1{mark != 0}) / Fbar(dT) * W, and
// branching particles contribute c_I(T_k, X_{T_k}) / p_I * W / rho(dT).
// Everything is evaluated generation by generation so that the resampled
// estimators can reuse exactly the same per-generation products.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "branchdiff/diffusion.hpp"
#include "branchdiff/generator.hpp"
#include "branchdiff/random.hpp"
#include "branchdiff/skeleton.hpp"

namespace branchdiff {

/// a: exact/Euler segments; b: frozen-coefficient segments with derivative branches.
enum class Scheme { a, b };
enum class Target { value, gradient };

std::string to_string(Scheme scheme);

struct EstimatorQuery {
  std::shared_ptr<const PdeModel> model;
  std::shared_ptr<const BranchingLaw> law;
  double t = 0.0;
  Vector x;
  Target target = Target::value;
  Scheme scheme = Scheme::a;
  Vector direction;                 // gradient target only
  std::optional<Vector> root_drift;  // frozen drift of the root in scheme b; defaults to mu(t, x)
  double euler_step = 0.0;           // 0 selects the model default

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

struct EstimatorSample {
  double value = 0.0;
  std::size_t particles = 0;
  int generations = 0;
  Scheme scheme = Scheme::a;
};

class NonFiniteSample : public std::runtime_error {
 public:
  NonFiniteSample(std::uint64_t sample_key, std::uint64_t particle_key, const std::string& what);
  std::uint64_t sample_key() const noexcept { return sample_key_; }
  std::uint64_t particle_key() const noexcept { return particle_key_; }

 private:
  std::uint64_t sample_key_;
  std::uint64_t particle_key_;
};

/// A real number kept as sign and log-magnitude.
struct SignedLog {
  int sign = 1;
  double log_magnitude = 0.0;

  void multiply(double factor);
  void multiply(const SignedLog& other);
  /// Divides by a positive quantity given by its logarithm.
  void divide_log(double log_positive) { log_magnitude -= log_positive; }
  double value() const;
};

/// A particle born but not yet simulated.
struct PendingParticle {
  std::uint64_t key = 0;
  std::vector<int> label;
  int mark = 0;
  int generation = 1;
  double birth = 0.0;
  Vector position;
  Vector parent_drift;  // frozen drift of the parent (scheme b)
};

/// Contribution of one particle, for diagnostics.
struct ParticleFactor {
  std::vector<int> label;
  int generation = 1;
  int mark = 0;
  bool reached_horizon = false;
  SignedLog factor;
};

struct GenerationOutcome {
  SignedLog weight;  // product of the generation's factors
  std::vector<PendingParticle> next;
  std::size_t particles = 0;
};

std::vector<PendingParticle> initial_frontier(const EstimatorQuery& query, SampleKey sample);

/// Simulates every particle of `frontier` (one generation) and returns the
/// product of their factors together with their offspring.
GenerationOutcome advance_generation(const EstimatorQuery& query, const std::vector<PendingParticle>& frontier,
                                     SampleKey sample, std::vector<ParticleFactor>* detail = nullptr);

/// One realization of the scheme-a estimator (value target) or of the
/// recentered estimator times direction . W_root (gradient target).
EstimatorSample evaluate_psi(const EstimatorQuery& query, SampleKey sample);

struct DetailedSample {
  EstimatorSample sample;
  SignedLog product;
  std::vector<ParticleFactor> factors;
};

DetailedSample evaluate_psi_detailed(const EstimatorQuery& query, SampleKey sample);

/// Gradient realization along `direction` (overrides the query's target).
EstimatorSample evaluate_gradient(const EstimatorQuery& query, const Vector& direction, SampleKey sample);

/// Frozen-coefficient estimator; the law must carry the derivative branch.
EstimatorSample evaluate_psi_hat(const EstimatorQuery& query, SampleKey sample);

using ReferenceValue = std::function<double(double, const Vector&)>;
using ReferenceGradient = std::function<Vector(double, const Vector&)>;

/// Truncation after `generations` generations: particles of the next
/// generation are closed by u_ref (mark 0) or b_i . Du_ref (mark i) at their birth.
EstimatorSample evaluate_psi_truncated(const EstimatorQuery& query, int generations, const ReferenceValue& u_ref,
                                       const ReferenceGradient& du_ref, SampleKey sample);

}  // namespace branchdiff
