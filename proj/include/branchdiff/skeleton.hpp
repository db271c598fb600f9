#pragma once

// Age-dependent marked branching process.
//
// Each particle lives for a duration drawn from an arrival law, then either
// reaches the horizon or branches into offspring whose marks are determined
// by the drawn multi-index: the first l_0 children carry mark 0, the next l_1
// carry mark 1, and so on. With the derivative extension enabled a branching
// may instead produce a single child with mark m + 1.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "branchdiff/generator.hpp"
#include "branchdiff/random.hpp"

namespace branchdiff {

class ArrivalDistribution {
 public:
  virtual ~ArrivalDistribution() = default;

  virtual double sample(RandomStream& rng) const = 0;
  /// P(tau > t).
  virtual double survival(double t) const = 0;
  virtual double log_density(double t) const = 0;
  double density(double t) const;
  virtual std::string describe() const = 0;
};

/// Gamma(kappa, theta) arrival times.
class GammaArrival final : public ArrivalDistribution {
 public:
  GammaArrival(double kappa, double theta);

  double kappa() const noexcept { return kappa_; }
  double theta() const noexcept { return theta_; }

  /// For kappa < 1 draws Gamma(kappa + 1) * U^{1/kappa}.
  double sample(RandomStream& rng) const override;
  double survival(double t) const override;
  double log_density(double t) const override;
  std::string describe() const override;

  /// Non-fatal remarks about the shape parameter (empty when kappa <= 1/2).
  std::vector<std::string> warnings() const;

 private:
  double kappa_;
  double theta_;
  double log_normalizer_;
};

class PopulationExplosion : public std::runtime_error {
 public:
  explicit PopulationExplosion(std::size_t cap);
  std::size_t cap() const noexcept { return cap_; }

 private:
  std::size_t cap_;
};

/// Arrival law plus offspring mass function over the generator's index set,
/// optionally extended by the derivative branch type.
class BranchingLaw {
 public:
  static constexpr std::size_t kDefaultParticleCap = 1'000'000;

  BranchingLaw(std::shared_ptr<const ArrivalDistribution> arrival, std::vector<MultiIndex> types,
               std::vector<double> probabilities, double derivative_probability = 0.0);

  /// Gamma law over the generator's terms. Empty `probabilities` means equal
  /// weights. With `derivative_extension` and no explicit probability, all
  /// |L| + 1 types get the same weight.
  static BranchingLaw gamma(const PolynomialGenerator& generator, double kappa = 0.5,
                            double theta = 2.5, std::vector<double> probabilities = {},
                            bool derivative_extension = false,
                            std::optional<double> derivative_probability = std::nullopt);

  const ArrivalDistribution& arrival() const noexcept { return *arrival_; }
  /// The gamma arrival law, or nullptr for other families.
  const GammaArrival* gamma_arrival() const noexcept;

  /// Arrival duration; draws below 1e-12 are redrawn.
  double sample_arrival(RandomStream& rng) const;
  double survival(double t) const { return arrival_->survival(t); }
  double density(double t) const { return arrival_->density(t); }
  double log_density(double t) const { return arrival_->log_density(t); }

  /// Index into types(), or derivative_index() for the derivative branch.
  std::size_t sample_branch_type(RandomStream& rng) const;

  std::size_t type_count() const noexcept { return types_.size(); }
  const std::vector<MultiIndex>& types() const noexcept { return types_; }
  const MultiIndex& type(std::size_t i) const { return types_.at(i); }
  bool has_derivative_branch() const noexcept { return derivative_probability_ > 0.0; }
  std::size_t derivative_index() const noexcept { return types_.size(); }
  bool is_derivative(std::size_t type) const noexcept { return type == types_.size(); }
  /// p_l for a type, or p_d for the derivative branch.
  double probability(std::size_t type) const;
  double derivative_probability() const noexcept { return derivative_probability_; }
  /// Number of gradient directions m.
  int gradient_directions() const noexcept { return static_cast<int>(types_.front().size()) - 1; }
  /// Mark carried by the child of a derivative branch.
  int derivative_mark() const noexcept { return gradient_directions() + 1; }
  std::size_t offspring_count(std::size_t type) const;
  /// n0 = sum_l |l| p_l (+ p_d with the derivative extension).
  double mean_offspring() const;
  int max_offspring() const;

  std::size_t particle_cap() const noexcept { return particle_cap_; }
  void set_particle_cap(std::size_t cap);

 private:
  std::shared_ptr<const ArrivalDistribution> arrival_;
  std::vector<MultiIndex> types_;
  std::vector<double> probabilities_;
  std::vector<double> cumulative_;
  double derivative_probability_ = 0.0;
  std::size_t particle_cap_ = kDefaultParticleCap;
};

/// Outcome of one particle's life: when it dies and how it branches.
struct LifeEvent {
  double death = 0.0;
  bool reached_horizon = false;
  std::size_t type = 0;  // meaningful only when !reached_horizon
};

/// Draws a particle's lifetime and branch type from the particle's skeleton stream.
LifeEvent draw_life(const BranchingLaw& law, std::uint64_t particle_key, double birth, double horizon);

/// Marks of the children produced by a branching of the given type, in birth order.
std::vector<int> child_marks(const BranchingLaw& law, std::size_t type);

/// Stream keys of the tree's particles.
inline std::uint64_t root_key(SampleKey sample) noexcept { return combine_keys(sample.value, 1); }
inline std::uint64_t child_key(std::uint64_t parent, std::size_t child_index) noexcept {
  return combine_keys(parent, static_cast<std::uint64_t>(child_index));
}

struct ParticleRecord {
  static constexpr std::size_t kNoParent = static_cast<std::size_t>(-1);

  std::vector<int> label;  // (1, k_2, ..., k_n), children numbered from 1
  std::uint64_t key = 0;
  int mark = 0;
  int generation = 1;
  double birth = 0.0;
  double death = 0.0;
  bool reached_horizon = false;
  std::size_t type = 0;
  std::size_t parent = kNoParent;
  std::vector<std::size_t> children;
};

/// Particles stored in generation order; index 0 is the root.
struct ParticleTree {
  std::vector<ParticleRecord> particles;
  double horizon = 0.0;

  std::size_t size() const noexcept { return particles.size(); }
  std::size_t horizon_count() const;
  int generations() const;
  std::size_t generation_size(int n) const;
};

ParticleTree grow_skeleton(const BranchingLaw& law, double t0, double horizon, SampleKey sample);

/// Debug dump of label, times, marks and branch types.
std::string tree_to_json(const ParticleTree& tree, const BranchingLaw& law, int indent = 2);

/// m(t) = sum_k n0^k P(k kappa, t / theta), the expected number of particles
/// born before t, for a gamma law. Stops once terms fall below `tol`.
double expected_population(const GammaArrival& arrival, double n0, double t, double tol = 1e-12,
                           int max_terms = 100000);

}  // namespace branchdiff
