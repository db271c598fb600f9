#include "branchdiff/resampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace branchdiff {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Relative weights exp(l_i - max l) of the last generation; zero for zero-weight states.
std::vector<double> relative_weights(const ParticleEnsemble& ensemble, double& max_log) {
  max_log = kNegInf;
  for (const auto& s : ensemble.states) {
    if (s.last_weight.sign != 0) max_log = std::max(max_log, s.last_weight.log_magnitude);
  }
  std::vector<double> w(ensemble.states.size(), 0.0);
  if (max_log == kNegInf) return w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& g = ensemble.states[i].last_weight;
    if (g.sign != 0) w[i] = std::exp(g.log_magnitude - max_log);
  }
  return w;
}

std::vector<std::size_t> draw_counts(const std::vector<double>& weights, SelectionMethod method,
                                     RandomStream& rng) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> counts(n, 0);
  if (method == SelectionMethod::identity) {
    std::fill(counts.begin(), counts.end(), 1);
    return counts;
  }
  if (method == SelectionMethod::multinomial) {
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    for (std::size_t k = 0; k < n; ++k) ++counts[pick(rng.engine())];
    return counts;
  }
  double total = 0.0;
  for (double w : weights) total += w;
  const double spacing = total / static_cast<double>(n);
  double pointer = rng.uniform() * spacing;
  double cumulative = 0.0;
  std::size_t drawn = 0;
  for (std::size_t i = 0; i < n && drawn < n; ++i) {
    cumulative += weights[i];
    while (drawn < n && pointer < cumulative) {
      ++counts[i];
      ++drawn;
      pointer += spacing;
    }
  }
  // Floating-point shortfall goes to the last positive weight.
  for (std::size_t i = n; drawn < n && i-- > 0;) {
    if (weights[i] > 0.0) {
      counts[i] += n - drawn;
      drawn = n;
    }
  }
  return counts;
}

}  // namespace

DegenerateEnsemble::DegenerateEnsemble(int generation)
    : std::runtime_error("degenerate ensemble: all weights are zero at generation " + std::to_string(generation)),
      generation_(generation) {}

bool ParticleEnsemble::absorbed() const {
  return std::all_of(states.begin(), states.end(), [](const GenerationState& s) { return s.absorbed(); });
}

ParticleEnsemble make_ensemble(const EstimatorQuery& query, std::size_t size, std::uint64_t key) {
  query.validate();
  if (size == 0) throw std::invalid_argument("make_ensemble: ensemble size must be positive");
  ParticleEnsemble ensemble;
  ensemble.key = key;
  ensemble.states.resize(size);
  for (std::size_t i = 0; i < size; ++i) {
    auto& s = ensemble.states[i];
    s.sample = SampleKey{combine_keys(key, i)};
    s.frontier = initial_frontier(query, s.sample);
  }
  return ensemble;
}

double generation_weight(const GenerationState& state) { return state.last_weight.value(); }

void evolve(ParticleEnsemble& ensemble, const EstimatorQuery& query) {
  const std::size_t cap = query.law->particle_cap();
  for (auto& s : ensemble.states) {
    if (s.absorbed()) {
      s.last_weight = SignedLog{};
      continue;
    }
    GenerationOutcome outcome = advance_generation(query, s.frontier, s.sample);
    s.last_weight = outcome.weight;
    s.sign *= outcome.weight.sign;
    s.particles += outcome.particles;
    ++s.generation;
    if (s.particles + outcome.next.size() > cap) throw PopulationExplosion(cap);
    s.frontier = std::move(outcome.next);
  }
  double max_log = 0.0;
  const std::vector<double> w = relative_weights(ensemble, max_log);
  double total = 0.0;
  for (double v : w) total += v;
  const double log_mean = total > 0.0 ? max_log + std::log(total) - std::log(static_cast<double>(w.size())) : kNegInf;
  ensemble.log_mean_weights.push_back(log_mean);
}

void select(ParticleEnsemble& ensemble, SelectionMethod method) {
  const int n = static_cast<int>(ensemble.log_mean_weights.size());
  double max_log = 0.0;
  const std::vector<double> weights = relative_weights(ensemble, max_log);
  if (method != SelectionMethod::identity && max_log == kNegInf) throw DegenerateEnsemble(n);

  RandomStream rng(combine_keys(ensemble.key, static_cast<std::uint64_t>(n)), StreamPurpose::selection);
  const std::vector<std::size_t> counts = draw_counts(weights, method, rng);

  std::vector<GenerationState> next;
  next.reserve(ensemble.states.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    for (std::size_t c = 0; c < counts[i]; ++c) {
      GenerationState copy = ensemble.states[i];
      if (c > 0) {
        const std::uint64_t salt = combine_keys(static_cast<std::uint64_t>(n), next.size());
        for (auto& p : copy.frontier) p.key = combine_keys(p.key, salt);
      }
      next.push_back(std::move(copy));
    }
  }
  ensemble.states = std::move(next);
}

EstimatorSample run_interacting(const EstimatorQuery& query, std::size_t size, std::uint64_t key,
                                const InteractingOptions& options) {
  ParticleEnsemble ensemble = make_ensemble(query, size, key);
  double total_log = 0.0;
  EstimatorSample out;
  out.scheme = query.scheme;
  while (true) {
    evolve(ensemble, query);
    ++out.generations;
    const double log_mean = ensemble.log_mean_weights.back();
    if (log_mean == kNegInf) {
      out.value = 0.0;
      break;
    }
    total_log += log_mean;
    if (ensemble.absorbed()) {
      double max_log = 0.0;
      const std::vector<double> w = relative_weights(ensemble, max_log);
      double weighted = 0.0;
      double total = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        weighted += w[i] * ensemble.states[i].sign;
        total += w[i];
      }
      out.value = std::exp(total_log) * (weighted / total);
      break;
    }
    select(ensemble, options.selection);
  }
  for (const auto& s : ensemble.states) out.particles += s.particles;
  if (!std::isfinite(out.value)) throw NonFiniteSample(key, 0, "interacting estimate overflowed");
  return out;
}

}  // namespace branchdiff
