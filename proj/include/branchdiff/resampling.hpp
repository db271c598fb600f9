#pragma once

// Interacting-particle version of the estimator.
//
// The tree is viewed as a Markov chain over generations whose n-th
// transition contributes the product G_n of its generation's factors, so that
// psi = prod_n G_n. An ensemble of N chains is reweighted by |G_n| and
// resampled after every generation; the estimate is
//   prod_n M_n * (sign average),  M_n = (1/N) sum_i |G_n(xi_i)|.

#include <cstdint>
#include <vector>

#include "branchdiff/estimator.hpp"

namespace branchdiff {

struct GenerationState {
  SampleKey sample;                       // key of the tree this chain started as
  std::vector<PendingParticle> frontier;  // unsimulated births of the next generation
  int generation = 0;                     // generations completed
  SignedLog last_weight;                  // G_n of the last completed generation
  int sign = 1;                           // product of sgn(G_p) so far
  std::size_t particles = 0;

  bool absorbed() const noexcept { return frontier.empty(); }
};

enum class SelectionMethod { multinomial, systematic, identity };

class DegenerateEnsemble : public std::runtime_error {
 public:
  explicit DegenerateEnsemble(int generation);
  int generation() const noexcept { return generation_; }

 private:
  int generation_;
};

struct ParticleEnsemble {
  std::vector<GenerationState> states;
  std::vector<double> log_mean_weights;  // log M_n per generation
  std::uint64_t key = 0;

  bool absorbed() const;
};

/// N fresh chains; state i is rooted like the scheme-a sample with key combine_keys(key, i).
ParticleEnsemble make_ensemble(const EstimatorQuery& query, std::size_t size, std::uint64_t key);

/// G_n of the state's last completed generation, or 1 when the state was already absorbed.
double generation_weight(const GenerationState& state);

/// Simulates the next generation of every non-absorbed state.
void evolve(ParticleEnsemble& ensemble, const EstimatorQuery& query);

/// Draws N states with probabilities proportional to |G_n|. The first copy of
/// a state keeps its stream keys; further copies get fresh keys.
void select(ParticleEnsemble& ensemble, SelectionMethod method = SelectionMethod::multinomial);

struct InteractingOptions {
  SelectionMethod selection = SelectionMethod::multinomial;
};

/// Runs an ensemble to absorption and returns prod M_n times the
/// |G|-weighted sign average of the final generation.
EstimatorSample run_interacting(const EstimatorQuery& query, std::size_t size, std::uint64_t key,
                                const InteractingOptions& options = {});

}  // namespace branchdiff
