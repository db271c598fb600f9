#include "branchdiff/estimator.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace branchdiff {

std::string to_string(Scheme scheme) { return scheme == Scheme::a ? "a" : "b"; }

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream out;
  out << "0x" << std::hex << v;
  return out.str();
}

void require_finite(double v, const char* what, SampleKey sample, const PendingParticle& p) {
  if (!std::isfinite(v)) {
    throw NonFiniteSample(sample.value, p.key, std::string("non-finite ") + what);
  }
}

}  // namespace

NonFiniteSample::NonFiniteSample(std::uint64_t sample_key, std::uint64_t particle_key, const std::string& what)
    : std::runtime_error(what + " (sample key " + hex(sample_key) + ", particle key " + hex(particle_key) + ")"),
      sample_key_(sample_key),
      particle_key_(particle_key) {}

void SignedLog::multiply(double factor) {
  if (factor == 0.0) {
    sign = 0;
    return;
  }
  if (factor < 0.0) sign = -sign;
  log_magnitude += std::log(std::abs(factor));
}

void SignedLog::multiply(const SignedLog& other) {
  sign *= other.sign;
  log_magnitude += other.log_magnitude;
}

double SignedLog::value() const {
  if (sign == 0) return 0.0;
  return sign * std::exp(log_magnitude);
}

void EstimatorQuery::validate() const {
  if (!model) throw std::invalid_argument("EstimatorQuery: missing model");
  if (!law) throw std::invalid_argument("EstimatorQuery: missing branching law");
  if (!(t < model->horizon())) throw std::invalid_argument("EstimatorQuery: requires t < T");
  if (x.size() != model->dimension()) {
    throw std::invalid_argument("EstimatorQuery: x has length " + std::to_string(x.size()) + ", expected " +
                                std::to_string(model->dimension()));
  }
  const auto& terms = model->generator().terms();
  if (terms.size() != law->type_count()) {
    throw std::invalid_argument("EstimatorQuery: law and generator have different index sets");
  }
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (!(terms[i].index == law->type(i))) {
      throw std::invalid_argument("EstimatorQuery: law type " + law->type(i).to_string() +
                                  " does not match generator term " + terms[i].index.to_string());
    }
  }
  if (!(law->survival(model->horizon() - t) > 0.0)) {
    throw std::invalid_argument("EstimatorQuery: survival at the horizon is zero");
  }
  if (target == Target::gradient && direction.size() != model->dimension()) {
    throw std::invalid_argument("EstimatorQuery: gradient direction has wrong length");
  }
  if (scheme == Scheme::b) {
    if (!model->constant_sigma()) throw std::invalid_argument("scheme b requires constant sigma");
    if (!law->has_derivative_branch()) {
      throw std::invalid_argument("scheme b requires a law with the derivative branch");
    }
    if (root_drift && root_drift->size() != model->dimension()) {
      throw std::invalid_argument("EstimatorQuery: root drift has wrong length");
    }
  } else if (law->has_derivative_branch()) {
    throw std::invalid_argument("derivative branches are only valid in scheme b");
  }
}

std::vector<PendingParticle> initial_frontier(const EstimatorQuery& query, SampleKey sample) {
  PendingParticle root;
  root.key = root_key(sample);
  root.label = {1};
  root.birth = query.t;
  root.position = query.x;
  return {std::move(root)};
}

GenerationOutcome advance_generation(const EstimatorQuery& query, const std::vector<PendingParticle>& frontier,
                                     SampleKey sample, std::vector<ParticleFactor>* detail) {
  const PdeModel& model = *query.model;
  const BranchingLaw& law = *query.law;
  const double horizon = model.horizon();
  const bool frozen = query.scheme == Scheme::b;

  GenerationOutcome out;
  out.particles = frontier.size();
  for (const PendingParticle& p : frontier) {
    const LifeEvent life = draw_life(law, p.key, p.birth, horizon);
    const double lifetime = life.death - p.birth;

    Vector frozen_drift;
    SegmentOptions options;
    options.step = query.euler_step;
    if (frozen) {
      frozen_drift = (p.generation == 1 && query.root_drift) ? *query.root_drift : model.drift(p.birth, p.position);
      options.frozen_drift = &frozen_drift;
    }
    RandomStream rng(p.key, StreamPurpose::diffusion);
    const SegmentResult segment = simulate_segment(model, p.birth, p.position, lifetime, rng, options);

    const double w = weight_factor(model, p.mark, p.birth, p.position, segment, frozen ? &p.parent_drift : nullptr);
    require_finite(w, "weight", sample, p);

    SignedLog factor;
    if (life.reached_horizon) {
      const bool recenter = p.mark != 0 || (query.target == Target::gradient && p.generation == 1);
      double numerator = model.terminal_value(segment.end);
      if (recenter) numerator -= model.terminal_value(p.position);
      require_finite(numerator, "terminal value", sample, p);
      factor.multiply(numerator);
      factor.multiply(w);
      factor.divide_log(std::log(law.survival(lifetime)));
    } else {
      const double c = law.is_derivative(life.type)
                           ? 1.0
                           : model.generator().coefficient(life.type, life.death, segment.end);
      require_finite(c, "coefficient", sample, p);
      factor.multiply(c);
      factor.divide_log(std::log(law.probability(life.type)));
      factor.multiply(w);
      factor.divide_log(law.log_density(lifetime));
    }
    if (query.target == Target::gradient && p.generation == 1) {
      const double projection = query.direction.dot(segment.weight);
      require_finite(projection, "root weight", sample, p);
      factor.multiply(projection);
    }
    require_finite(factor.log_magnitude, "factor", sample, p);
    out.weight.multiply(factor);

    if (detail) {
      detail->push_back(ParticleFactor{p.label, p.generation, p.mark, life.reached_horizon, factor});
    }

    if (!life.reached_horizon) {
      const std::vector<int> marks = child_marks(law, life.type);
      for (std::size_t j = 0; j < marks.size(); ++j) {
        PendingParticle child;
        child.key = child_key(p.key, j + 1);
        child.label = p.label;
        child.label.push_back(static_cast<int>(j + 1));
        child.mark = marks[j];
        child.generation = p.generation + 1;
        child.birth = life.death;
        child.position = segment.end;
        if (frozen) child.parent_drift = frozen_drift;
        out.next.push_back(std::move(child));
      }
    }
  }
  return out;
}

namespace {

struct TreeRun {
  SignedLog product;
  std::vector<PendingParticle> frontier;
  std::size_t particles = 0;
  int generations = 0;
};

// Runs generations until the frontier is empty or `max_generations` have been simulated.
TreeRun run_generations(const EstimatorQuery& query, SampleKey sample, int max_generations,
                        std::vector<ParticleFactor>* detail) {
  TreeRun run;
  run.frontier = initial_frontier(query, sample);
  const std::size_t cap = query.law->particle_cap();
  while (!run.frontier.empty() && run.generations < max_generations) {
    GenerationOutcome outcome = advance_generation(query, run.frontier, sample, detail);
    run.product.multiply(outcome.weight);
    run.particles += outcome.particles;
    ++run.generations;
    if (run.particles + outcome.next.size() > cap) throw PopulationExplosion(cap);
    run.frontier = std::move(outcome.next);
  }
  return run;
}

EstimatorSample finish(const TreeRun& run, Scheme scheme, SampleKey sample) {
  EstimatorSample out;
  out.value = run.product.value();
  if (!std::isfinite(out.value)) {
    throw NonFiniteSample(sample.value, root_key(sample), "sample overflowed");
  }
  out.particles = run.particles;
  out.generations = run.generations;
  out.scheme = scheme;
  return out;
}

}  // namespace

EstimatorSample evaluate_psi(const EstimatorQuery& query, SampleKey sample) {
  query.validate();
  const TreeRun run = run_generations(query, sample, std::numeric_limits<int>::max(), nullptr);
  return finish(run, query.scheme, sample);
}

DetailedSample evaluate_psi_detailed(const EstimatorQuery& query, SampleKey sample) {
  query.validate();
  DetailedSample out;
  const TreeRun run = run_generations(query, sample, std::numeric_limits<int>::max(), &out.factors);
  out.sample = finish(run, query.scheme, sample);
  out.product = run.product;
  return out;
}

EstimatorSample evaluate_gradient(const EstimatorQuery& query, const Vector& direction, SampleKey sample) {
  EstimatorQuery q = query;
  q.target = Target::gradient;
  q.direction = direction;
  return evaluate_psi(q, sample);
}

EstimatorSample evaluate_psi_hat(const EstimatorQuery& query, SampleKey sample) {
  if (query.scheme != Scheme::b) throw std::invalid_argument("evaluate_psi_hat: query must use scheme b");
  return evaluate_psi(query, sample);
}

EstimatorSample evaluate_psi_truncated(const EstimatorQuery& query, int generations, const ReferenceValue& u_ref,
                                       const ReferenceGradient& du_ref, SampleKey sample) {
  query.validate();
  if (generations < 0) throw std::invalid_argument("evaluate_psi_truncated: generation cap must be >= 0");
  if (query.scheme != Scheme::a || query.target != Target::value) {
    throw std::invalid_argument("evaluate_psi_truncated: value target in scheme a only");
  }
  if (!u_ref || !du_ref) throw std::invalid_argument("evaluate_psi_truncated: missing reference solution");
  TreeRun run = run_generations(query, sample, generations, nullptr);
  const PolynomialGenerator& gen = query.model->generator();
  for (const PendingParticle& p : run.frontier) {
    const double closing = p.mark == 0 ? u_ref(p.birth, p.position)
                                       : gen.direction_at(p.mark, p.birth, p.position).dot(du_ref(p.birth, p.position));
    require_finite(closing, "reference value", sample, p);
    run.product.multiply(closing);
  }
  run.particles += run.frontier.size();
  return finish(run, query.scheme, sample);
}

}  // namespace branchdiff
