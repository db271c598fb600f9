#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "branchdiff/harness.hpp"
#include "branchdiff/resampling.hpp"

using namespace branchdiff;

namespace {

EstimatorQuery cosine_query() {
  const TestModel cosine = make_cosine_test_model(5, 0.2, 0.15);
  EstimatorQuery q;
  q.model = cosine.model;
  q.law = std::make_shared<const BranchingLaw>(BranchingLaw::gamma(cosine.model->generator()));
  q.x = cosine.x0;
  return q;
}

ParticleEnsemble ensemble_with_weights(const std::vector<double>& weights) {
  ParticleEnsemble e;
  e.key = 1234;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    GenerationState s;
    s.sample = SampleKey{i};
    PendingParticle p;
    p.key = 1000 + i;
    s.frontier.push_back(p);
    s.last_weight.multiply(weights[i]);
    e.states.push_back(s);
  }
  e.log_mean_weights.push_back(0.0);
  return e;
}

}  // namespace

TEST(Interacting, SingleStateEqualsPlainEstimator) {
  const EstimatorQuery q = cosine_query();
  for (std::uint64_t k = 0; k < 200; ++k) {
    const EstimatorSample plain = evaluate_psi(q, SampleKey{combine_keys(k, 0)});
    const EstimatorSample inter = run_interacting(q, 1, k);
    EXPECT_EQ(plain.value, inter.value) << k;
    EXPECT_EQ(plain.particles, inter.particles);
  }
}

TEST(Select, CountsAndRekeying) {
  for (auto method : {SelectionMethod::multinomial, SelectionMethod::systematic}) {
    ParticleEnsemble e = ensemble_with_weights({0.0, 1.0, 3.0, 0.0, 4.0, 2.0});
    select(e, method);
    ASSERT_EQ(e.states.size(), 6u);
    std::map<std::uint64_t, int> copies;
    std::map<std::uint64_t, int> keys;
    for (const auto& s : e.states) {
      EXPECT_NE(s.sample.value, 0u);
      EXPECT_NE(s.sample.value, 3u);
      ++copies[s.sample.value];
      ++keys[s.frontier[0].key];
    }
    for (const auto& [k, n] : keys) EXPECT_EQ(n, 1) << "duplicate stream key";
    for (const auto& [sample, n] : copies) {
      bool original_kept = false;
      for (const auto& s : e.states) original_kept |= s.sample.value == sample && s.frontier[0].key == 1000 + sample;
      EXPECT_TRUE(original_kept);
    }
  }
}

TEST(Select, SystematicIsLowVariance) {
  ParticleEnsemble e = ensemble_with_weights({1.0, 2.0, 3.0, 4.0, 5.0, 5.0});
  select(e, SelectionMethod::systematic);
  std::map<std::uint64_t, int> copies;
  for (const auto& s : e.states) ++copies[s.sample.value];
  const double total = 20.0;
  const std::vector<double> w{1, 2, 3, 4, 5, 5};
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double expected = 6.0 * w[i] / total;
    EXPECT_GE(copies[i], std::floor(expected));
    EXPECT_LE(copies[i], std::ceil(expected));
  }
}

TEST(Select, MultinomialFrequencies) {
  std::vector<int> counts(3, 0);
  for (int r = 0; r < 2000; ++r) {
    ParticleEnsemble e = ensemble_with_weights({1.0, 2.0, -5.0});
    e.key = combine_keys(55, r);
    select(e, SelectionMethod::multinomial);
    for (const auto& s : e.states) ++counts[s.sample.value];
  }
  const double n = 6000.0;
  const std::vector<double> p{0.125, 0.25, 0.625};
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(counts[i] / n, p[i], 4.0 * std::sqrt(p[i] * (1 - p[i]) / n));
}

TEST(Select, IdentityKeepsEverything) {
  ParticleEnsemble e = ensemble_with_weights({0.0, 1.0, 2.0});
  select(e, SelectionMethod::identity);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(e.states[i].sample.value, i);
    EXPECT_EQ(e.states[i].frontier[0].key, 1000 + i);
  }
}

TEST(Select, DegenerateEnsembleThrows) {
  ParticleEnsemble e = ensemble_with_weights({0.0, 0.0});
  EXPECT_THROW(select(e), DegenerateEnsemble);
}

TEST(Evolve, RecordsLogMeanWeight) {
  const EstimatorQuery q = cosine_query();
  ParticleEnsemble e = make_ensemble(q, 8, 77);
  evolve(e, q);
  ASSERT_EQ(e.log_mean_weights.size(), 1u);
  double mean = 0.0;
  for (const auto& s : e.states) mean += std::abs(generation_weight(s)) / 8.0;
  EXPECT_NEAR(std::exp(e.log_mean_weights[0]), mean, 1e-12 * mean);
  for (const auto& s : e.states) EXPECT_EQ(s.generation, 1);
}

TEST(Interacting, UnbiasedOnCosine) {
  const EstimatorQuery q = cosine_query();
  double s = 0.0, s2 = 0.0;
  const int n = 400;
  for (int i = 0; i < n; ++i) {
    const double v = run_interacting(q, 50, combine_keys(31, i)).value;
    s += v;
    s2 += v * v;
  }
  const double mean = s / n, se = std::sqrt((s2 / n - mean * mean) / n);
  EXPECT_NEAR(mean, -0.97851, 4.0 * se + 1e-5);
}

TEST(Interacting, Deterministic) {
  const EstimatorQuery q = cosine_query();
  for (auto method : {SelectionMethod::multinomial, SelectionMethod::systematic}) {
    InteractingOptions o;
    o.selection = method;
    EXPECT_EQ(run_interacting(q, 32, 9, o).value, run_interacting(q, 32, 9, o).value);
  }
}

TEST(Interacting, FrozenSchemeRuns) {
  RunConfig c = preset("ou1d-burgers015");
  c.scheme = 'c';
  const Problem p = build_problem(c);
  const EstimatorSample s = run_interacting(p.query, 16, 4);
  EXPECT_TRUE(std::isfinite(s.value));
  EXPECT_GE(s.particles, 16u);
}
