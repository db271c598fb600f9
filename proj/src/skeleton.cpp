#include "branchdiff/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "branchdiff/special.hpp"

namespace branchdiff {

namespace {

constexpr double kMinimumArrival = 1e-12;
constexpr int kMaxArrivalRedraws = 1000;

}  // namespace

double ArrivalDistribution::density(double t) const { return std::exp(log_density(t)); }

GammaArrival::GammaArrival(double kappa, double theta) : kappa_(kappa), theta_(theta) {
  if (!(kappa > 0.0) || !std::isfinite(kappa)) {
    throw std::invalid_argument("GammaArrival: kappa must be positive, got " + std::to_string(kappa));
  }
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    throw std::invalid_argument("GammaArrival: theta must be positive, got " + std::to_string(theta));
  }
  log_normalizer_ = std::lgamma(kappa_) + kappa_ * std::log(theta_);
}

double GammaArrival::sample(RandomStream& rng) const {
  if (kappa_ < 1.0) {
    const double boosted = rng.gamma(kappa_ + 1.0);
    return theta_ * boosted * std::pow(rng.uniform(), 1.0 / kappa_);
  }
  return theta_ * rng.gamma(kappa_);
}

double GammaArrival::survival(double t) const {
  if (t <= 0.0) return 1.0;
  return special::gamma_q(kappa_, t / theta_);
}

double GammaArrival::log_density(double t) const {
  if (t <= 0.0) return -std::numeric_limits<double>::infinity();
  return (kappa_ - 1.0) * std::log(t) - t / theta_ - log_normalizer_;
}

std::string GammaArrival::describe() const {
  std::ostringstream out;
  out << "gamma(kappa=" << kappa_ << ", theta=" << theta_ << ")";
  return out.str();
}

std::vector<std::string> GammaArrival::warnings() const {
  std::vector<std::string> out;
  if (kappa_ > 0.5) {
    out.push_back("kappa=" + std::to_string(kappa_) +
                  " > 1/2: density does not dominate t^{-1/2} near 0, moment bounds may fail");
  }
  return out;
}

PopulationExplosion::PopulationExplosion(std::size_t cap)
    : std::runtime_error("population explosion: tree exceeded " + std::to_string(cap) + " particles"),
      cap_(cap) {}

BranchingLaw::BranchingLaw(std::shared_ptr<const ArrivalDistribution> arrival,
                           std::vector<MultiIndex> types, std::vector<double> probabilities,
                           double derivative_probability)
    : arrival_(std::move(arrival)),
      types_(std::move(types)),
      probabilities_(std::move(probabilities)),
      derivative_probability_(derivative_probability) {
  if (!arrival_) throw std::invalid_argument("BranchingLaw: missing arrival law");
  if (types_.empty()) throw std::invalid_argument("BranchingLaw: no branch types");
  if (types_.size() != probabilities_.size()) {
    throw std::invalid_argument("BranchingLaw: " + std::to_string(types_.size()) + " types but " +
                                std::to_string(probabilities_.size()) + " probabilities");
  }
  for (const auto& t : types_) {
    if (t.size() != types_.front().size()) {
      throw std::invalid_argument("BranchingLaw: multi-indices of different lengths");
    }
  }
  if (!(derivative_probability_ >= 0.0 && derivative_probability_ < 1.0)) {
    throw std::invalid_argument("BranchingLaw: derivative probability must lie in [0, 1)");
  }
  double total = derivative_probability_;
  for (double p : probabilities_) {
    if (!(p > 0.0)) throw std::invalid_argument("BranchingLaw: every p_l must be > 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("BranchingLaw: probabilities sum to " + std::to_string(total));
  }
  cumulative_.resize(probabilities_.size());
  std::partial_sum(probabilities_.begin(), probabilities_.end(), cumulative_.begin());
}

BranchingLaw BranchingLaw::gamma(const PolynomialGenerator& generator, double kappa, double theta,
                                 std::vector<double> probabilities, bool derivative_extension,
                                 std::optional<double> derivative_probability) {
  std::vector<MultiIndex> types;
  for (const auto& term : generator.terms()) types.push_back(term.index);
  const std::size_t count = types.size();

  double p_derivative = 0.0;
  if (derivative_extension) {
    p_derivative = derivative_probability.value_or(1.0 / static_cast<double>(count + 1));
    if (!(p_derivative > 0.0 && p_derivative < 1.0)) {
      throw std::invalid_argument("BranchingLaw: derivative probability must lie in (0, 1)");
    }
  } else if (derivative_probability) {
    throw std::invalid_argument("BranchingLaw: derivative probability given without the extension");
  }

  if (probabilities.empty()) {
    probabilities.assign(count, 1.0 / static_cast<double>(count));
  } else if (probabilities.size() != count) {
    throw std::invalid_argument("BranchingLaw: expected " + std::to_string(count) + " probabilities");
  }
  double total = 0.0;
  for (double p : probabilities) total += p;
  for (double& p : probabilities) p = p / total * (1.0 - p_derivative);

  return BranchingLaw(std::make_shared<GammaArrival>(kappa, theta), std::move(types),
                      std::move(probabilities), p_derivative);
}

const GammaArrival* BranchingLaw::gamma_arrival() const noexcept {
  return dynamic_cast<const GammaArrival*>(arrival_.get());
}

double BranchingLaw::sample_arrival(RandomStream& rng) const {
  for (int attempt = 0; attempt < kMaxArrivalRedraws; ++attempt) {
    const double tau = arrival_->sample(rng);
    if (tau >= kMinimumArrival) return tau;
  }
  throw std::runtime_error("BranchingLaw: arrival draws keep falling below 1e-12");
}

std::size_t BranchingLaw::sample_branch_type(RandomStream& rng) const {
  const double u = rng.uniform();
  const double scaled = has_derivative_branch() ? u : u * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), scaled);
  if (it == cumulative_.end()) {
    return has_derivative_branch() ? derivative_index() : types_.size() - 1;
  }
  return static_cast<std::size_t>(it - cumulative_.begin());
}

double BranchingLaw::probability(std::size_t type) const {
  if (is_derivative(type)) {
    if (!has_derivative_branch()) throw std::logic_error("BranchingLaw: no derivative branch");
    return derivative_probability_;
  }
  return probabilities_.at(type);
}

std::size_t BranchingLaw::offspring_count(std::size_t type) const {
  if (is_derivative(type)) return 1;
  return static_cast<std::size_t>(types_.at(type).order());
}

double BranchingLaw::mean_offspring() const {
  double n0 = derivative_probability_;
  for (std::size_t i = 0; i < types_.size(); ++i) n0 += types_[i].order() * probabilities_[i];
  return n0;
}

int BranchingLaw::max_offspring() const {
  int best = has_derivative_branch() ? 1 : 0;
  for (const auto& t : types_) best = std::max(best, t.order());
  return best;
}

void BranchingLaw::set_particle_cap(std::size_t cap) {
  if (cap == 0) throw std::invalid_argument("BranchingLaw: particle cap must be positive");
  particle_cap_ = cap;
}

LifeEvent draw_life(const BranchingLaw& law, std::uint64_t particle_key, double birth, double horizon) {
  RandomStream rng(particle_key, StreamPurpose::skeleton);
  const double tau = law.sample_arrival(rng);
  LifeEvent event;
  if (birth + tau >= horizon) {
    event.death = horizon;
    event.reached_horizon = true;
    return event;
  }
  event.death = birth + tau;
  event.type = law.sample_branch_type(rng);
  return event;
}

std::vector<int> child_marks(const BranchingLaw& law, std::size_t type) {
  if (law.is_derivative(type)) return {law.derivative_mark()};
  const MultiIndex& index = law.type(type);
  std::vector<int> marks;
  marks.reserve(static_cast<std::size_t>(index.order()));
  for (std::size_t i = 0; i < index.size(); ++i) {
    for (int c = 0; c < index[i]; ++c) marks.push_back(static_cast<int>(i));
  }
  return marks;
}

std::size_t ParticleTree::horizon_count() const {
  return static_cast<std::size_t>(std::count_if(particles.begin(), particles.end(),
                                                [](const ParticleRecord& p) { return p.reached_horizon; }));
}

int ParticleTree::generations() const { return particles.empty() ? 0 : particles.back().generation; }

std::size_t ParticleTree::generation_size(int n) const {
  return static_cast<std::size_t>(std::count_if(particles.begin(), particles.end(),
                                                [n](const ParticleRecord& p) { return p.generation == n; }));
}

ParticleTree grow_skeleton(const BranchingLaw& law, double t0, double horizon, SampleKey sample) {
  if (!(t0 < horizon)) throw std::invalid_argument("grow_skeleton: requires t0 < T");
  ParticleTree tree;
  tree.horizon = horizon;

  ParticleRecord root;
  root.label = {1};
  root.key = root_key(sample);
  root.birth = t0;
  tree.particles.push_back(std::move(root));

  // Breadth-first: particles are appended generation by generation.
  for (std::size_t i = 0; i < tree.particles.size(); ++i) {
    const LifeEvent life = draw_life(law, tree.particles[i].key, tree.particles[i].birth, horizon);
    ParticleRecord& p = tree.particles[i];
    p.death = life.death;
    p.reached_horizon = life.reached_horizon;
    if (life.reached_horizon) continue;
    p.type = life.type;

    const std::vector<int> marks = child_marks(law, life.type);
    if (tree.particles.size() + marks.size() > law.particle_cap()) {
      throw PopulationExplosion(law.particle_cap());
    }
    const ParticleRecord parent = p;
    for (std::size_t j = 0; j < marks.size(); ++j) {
      ParticleRecord child;
      child.label = parent.label;
      child.label.push_back(static_cast<int>(j + 1));
      child.key = child_key(parent.key, j + 1);
      child.mark = marks[j];
      child.generation = parent.generation + 1;
      child.birth = parent.death;
      child.parent = i;
      tree.particles[i].children.push_back(tree.particles.size());
      tree.particles.push_back(std::move(child));
    }
  }
  return tree;
}

std::string tree_to_json(const ParticleTree& tree, const BranchingLaw& law, int indent) {
  nlohmann::ordered_json particles = nlohmann::ordered_json::array();
  for (const auto& p : tree.particles) {
    nlohmann::ordered_json entry;
    entry["label"] = p.label;
    entry["mark"] = p.mark;
    entry["generation"] = p.generation;
    entry["birth"] = p.birth;
    entry["death"] = p.death;
    if (p.reached_horizon) {
      entry["branch"] = "horizon";
    } else if (law.is_derivative(p.type)) {
      entry["branch"] = "derivative";
    } else {
      entry["branch"] = law.type(p.type).to_string();
    }
    particles.push_back(std::move(entry));
  }
  nlohmann::ordered_json out;
  out["horizon"] = tree.horizon;
  out["particles"] = std::move(particles);
  return out.dump(indent);
}

double expected_population(const GammaArrival& arrival, double n0, double t, double tol, int max_terms) {
  if (!(n0 >= 0.0)) throw std::invalid_argument("expected_population: n0 must be >= 0");
  if (!(t >= 0.0)) throw std::invalid_argument("expected_population: t must be >= 0");
  if (n0 == 0.0 || t == 0.0) return 1.0;
  const double x = t / arrival.theta();
  double sum = 1.0;
  double power = 1.0;
  for (int k = 1; k <= max_terms; ++k) {
    power *= n0;
    const double shape = k * arrival.kappa();
    const double term = power * special::gamma_p(shape, x);
    sum += term;
    // Past the mode of the Poisson-like tail the terms decay super-geometrically.
    if (shape > x && term < tol * std::max(1.0, sum)) return sum;
    if (!std::isfinite(sum)) break;
  }
  throw std::runtime_error("expected_population: series did not settle within " +
                           std::to_string(max_terms) + " terms");
}

}  // namespace branchdiff
