#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "eli/partial.hpp"

using namespace eli;

namespace {

VarianceModel vm(double mu, double beta1, double beta2, double alpha) {
  VarianceModel m;
  m.mu = mu;
  m.beta1 = beta1;
  m.beta2 = beta2;
  m.alpha = alpha;
  return m;
}

DesignProblem problem_for(std::vector<WeightScheme> schemes, const VarianceModel& m, long lo, long hi) {
  DesignProblem p;
  p.schemes = std::move(schemes);
  p.model = m;
  p.n_min = lo;
  p.n_max = hi;
  return p;
}

// Observed edges 0-1 and 2-3 on five nodes, pair 1-2 unobserved.
PartialAdjacency five_node_one_missing() { return PartialAdjacency(5, {{0, 1}, {2, 3}}, {{1, 2}}); }

// An assignment (all participants) feasible on both completions of `p`, which has one missing pair.
Assignment feasible_on_both(const PartialAdjacency& p, const DesignProblem& prob) {
  const auto g0 = p.observed_network();
  const auto g1 = p.union_network();
  const auto plan = empty_pilot_plan(g0);
  for (std::uint32_t mask = 0; mask < (1u << p.size()); ++mask) {
    Assignment a(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) a.R[i] = 1, a.D[i] = mask >> i & 1u;
    if (std::isfinite(evaluate_objective(g0, plan, prob, a)) && std::isfinite(evaluate_objective(g1, plan, prob, a)))
      return a;
  }
  throw std::runtime_error("no assignment feasible on both completions");
}

}  // namespace

TEST(Posterior, SixObservedPairsTwoEdges) {
  PartialAdjacency p(5, {{0, 1}, {2, 3}}, {{0, 4}, {1, 4}, {2, 4}, {3, 4}});
  ASSERT_EQ(p.observed_pairs(), 6u);
  auto post = fit_edge_posterior(p);
  EXPECT_EQ(post.alpha, 3.0);
  EXPECT_EQ(post.beta, 5.0);
  EXPECT_DOUBLE_EQ(post.mean(), 3.0 / 8.0);
}

TEST(Posterior, NoEdgesAmongTenPairs) {
  auto post = fit_edge_posterior(PartialAdjacency(5, {}, {}));
  EXPECT_EQ(post.alpha, 1.0);
  EXPECT_EQ(post.beta, 11.0);
}

TEST(Posterior, CountingIdentity) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto g = generate_er(15, 0.2, s);
    std::vector<Edge> present, missing;
    Rng rng = make_rng(s);
    for (NodeId i = 0; i < 15; ++i)
      for (NodeId j = i + 1; j < 15; ++j) {
        if (bernoulli(rng, 0.2)) missing.push_back({i, j});
        else if (g.has_edge(i, j)) present.push_back({i, j});
      }
    PartialAdjacency p(15, present, missing);
    auto post = fit_edge_posterior(p);
    EXPECT_EQ(post.alpha + post.beta, static_cast<double>(p.observed_pairs()) + 2.0);
  }
}

TEST(Completion, FullyObservedIsIdentity) {
  auto g = generate_er(20, 0.2, 1);
  auto p = PartialAdjacency::fully_observed(g);
  EXPECT_EQ(sample_completion(p, fit_edge_posterior(p), 3), g);
}

TEST(Completion, DeterministicPerSeed) {
  PartialAdjacency p(8, {{0, 1}}, {{2, 3}, {4, 5}, {6, 7}, {1, 7}});
  auto post = fit_edge_posterior(p);
  EXPECT_EQ(sample_completion(p, post, 11), sample_completion(p, post, 11));
}

TEST(Completion, UniformPriorEdgeFrequency) {
  std::vector<Edge> all;
  for (NodeId i = 0; i < 4; ++i)
    for (NodeId j = i + 1; j < 4; ++j) all.push_back({i, j});
  PartialAdjacency p(4, {}, all);
  EdgePosterior post;  // Beta(1, 1)
  double hits = 0;
  const int draws = 10000;
  for (int k = 0; k < draws; ++k) hits += sample_completion(p, post, static_cast<std::uint64_t>(k)).has_edge(0, 1);
  EXPECT_NEAR(hits / draws, 0.5, 0.02);
}

TEST(Completion, MarginalMatchesPosteriorMean) {
  PartialAdjacency p(6, {{0, 1}, {1, 2}, {3, 4}}, {{0, 5}, {2, 5}});
  auto post = fit_edge_posterior(p);
  const int draws = 20000;
  for (auto [a, b] : p.missing()) {
    double hits = 0;
    for (int k = 0; k < draws; ++k) hits += sample_completion(p, post, derive_seed(7, 0, k)).has_edge(a, b);
    const double m = post.mean();
    EXPECT_NEAR(hits / draws, m, 3.0 * std::sqrt(m * (1 - m) / draws));
  }
}

TEST(ExpectedVariance, NoMissingCollapsesToObjective) {
  std::vector<Edge> e{{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
  auto g = Network::from_edges(10, e);
  auto p = PartialAdjacency::fully_observed(g);
  auto prob = problem_for({direct_effect({1})}, vm(1, 0, 0, 0.1), 1, 10);
  auto plan = empty_pilot_plan(g);
  Assignment a(10);
  for (std::uint32_t mask = 0;; ++mask) {
    ASSERT_LT(mask, 1024u);
    for (std::size_t i = 0; i < 10; ++i) a.R[i] = 1, a.D[i] = mask >> i & 1u;
    if (std::isfinite(evaluate_objective(g, plan, prob, a))) break;
  }
  for (std::size_t K : {1u, 7u, 50u}) {
    auto mc = mc_expected_variance(p, fit_edge_posterior(p), plan, prob, a, K, 3);
    EXPECT_DOUBLE_EQ(mc.mean, evaluate_objective(g, plan, prob, a));
    EXPECT_EQ(mc.std_error, 0.0);
  }
}

TEST(ExpectedVariance, MatchesTwoStateEnumeration) {
  auto p = five_node_one_missing();
  auto prob = problem_for({direct_effect({1})}, vm(1, 0, 0, 0.1), 1, 5);
  auto a = feasible_on_both(p, prob);
  auto post = fit_edge_posterior(p);
  auto plan = empty_pilot_plan(p.observed_network());
  const double q = post.mean();
  const double exact = (1 - q) * evaluate_objective(p.observed_network(), plan, prob, a) +
                       q * evaluate_objective(p.union_network(), plan, prob, a);
  auto mc = mc_expected_variance(p, post, plan, prob, a, 20000, 5);
  EXPECT_GT(mc.std_error, 0.0);
  EXPECT_NEAR(mc.mean, exact, 3.0 * mc.std_error);
}

TEST(ExpectedVariance, StandardErrorScalesAsRootK) {
  auto p = five_node_one_missing();
  auto prob = problem_for({direct_effect({1})}, vm(1, 0, 0, 0.1), 1, 5);
  auto a = feasible_on_both(p, prob);
  auto post = fit_edge_posterior(p);
  auto plan = empty_pilot_plan(p.observed_network());
  double small = 0, large = 0;
  for (std::uint64_t r = 0; r < 20; ++r) {
    small += mc_expected_variance(p, post, plan, prob, a, 500, derive_seed(r, 1)).std_error;
    large += mc_expected_variance(p, post, plan, prob, a, 1000, derive_seed(r, 2)).std_error;
  }
  EXPECT_NEAR(small / large, std::sqrt(2.0), 0.2 * std::sqrt(2.0));
}

TEST(ExpectedVariance, MostlyInfeasibleIsAnError) {
  // With the missing pair present nodes 1 and 2 leave level 1; make that the likely state.
  PartialAdjacency p(4, {{0, 1}, {2, 3}, {0, 2}, {1, 3}, {0, 3}}, {{1, 2}});
  auto prob = problem_for({direct_effect({2})}, vm(1, 0, 0, 0), 1, 4);
  auto post = fit_edge_posterior(p);  // Beta(6, 1)
  auto plan = empty_pilot_plan(p.observed_network());
  Assignment a(4);
  a.R = {1, 1, 1, 1};
  a.D = {0, 1, 0, 0};
  EXPECT_THROW(mc_expected_variance(p, post, plan, prob, a, 400, 1), DegenerateAssignmentError);
}

TEST(PartialDesign, FullyObservedReducesToSecondWave) {
  std::vector<Edge> e{{0, 1}, {1, 2}, {2, 3}, {4, 5}, {5, 6}, {6, 7}};
  auto g = Network::from_edges(8, e);
  auto prob = problem_for({direct_effect({1, 2}, 0)}, vm(0.5, 0.5, 1.0, 0.1), 2, 6);
  auto plan = empty_pilot_plan(g);
  SolverConfig c;
  c.backend = SolverConfig::Backend::Exhaustive;
  auto direct = design_second_wave(g, plan, prob, c);
  auto partial = design_partial(PartialAdjacency::fully_observed(g), plan, prob, c, 50);
  EXPECT_EQ(partial.solution.objective, direct.objective);
  EXPECT_EQ(partial.solution.assignment, direct.assignment);
}

TEST(PartialDesign, BeatsRandomAssignmentsAndRespectsPilot) {
  // Two 6-paths with three unobserved pairs between them; the pilot is node 0.
  std::vector<Edge> e{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {6, 7}, {7, 8}, {8, 9}, {9, 10}, {10, 11}};
  std::vector<Edge> missing{{2, 8}, {3, 9}, {5, 11}};
  PartialAdjacency p(12, e, missing);
  auto plan = make_pilot_plan(p.observed_network(), {0}, 1);
  auto prob = problem_for({direct_effect({2}, 0)}, vm(0.5, 0.5, 1.0, 0.1), 6, 8);
  SolverConfig c;
  c.seed = 3;
  c.restarts = 2;
  const std::size_t K = 50;
  auto sol = design_partial(p, plan, prob, c, K);
  for (std::size_t i = 0; i < 12; ++i) {
    if (plan.in_exclusion[i]) {
      EXPECT_EQ(sol.solution.assignment.R[i], 0) << i;
    }
  }

  const auto post = fit_edge_posterior(p);
  const std::uint64_t final_seed = derive_seed(c.seed, stream::kCompletion, 0xF1A1);
  const auto union_net = p.union_network();
  DesignEvaluator base(union_net, plan, prob);
  int compared = 0;
  for (std::uint64_t k = 0; compared < 100 && k < 20000; ++k) {
    Rng rng = make_rng(derive_seed(77, 0, k));
    Assignment a(12);
    std::size_t n = 0;
    for (NodeId i : base.free_r()) {
      a.R[static_cast<std::size_t>(i)] = bernoulli(rng, 0.6);
      n += a.R[static_cast<std::size_t>(i)];
    }
    if (n < 6 || n > 8) continue;
    for (std::size_t i = 0; i < 12; ++i) a.D[i] = bernoulli(rng, 0.5);
    base.canonicalize(a);
    MonteCarloVariance mc;
    try {
      mc = mc_expected_variance(p, post, plan, prob, a, 4 * K, final_seed);
    } catch (const DegenerateAssignmentError&) {
      continue;
    }
    if (mc.infeasible_fraction > 0.0) continue;
    ++compared;
    EXPECT_LE(sol.solution.objective, mc.mean + 1e-12);
  }
  EXPECT_EQ(compared, 100);
}

TEST(PartialFile, ParsesBlocksAndMissingSection) {
  std::istringstream in(
      "# nodes=5\n"
      "0 1\n"
      "# observed_block=0..2\n"
      "# observed_rows=4..4\n"
      "[missing]\n");
  auto p = parse_partial_adjacency(in);
  EXPECT_EQ(p.size(), 5u);
  // Only pairs among {0,1,2,3} that touch 3 are uncovered: 0-3, 1-3, 2-3.
  EXPECT_EQ(p.missing(), (std::vector<Edge>{{0, 3}, {1, 3}, {2, 3}}));
  EXPECT_EQ(p.state(0, 1), PairState::Present);
  EXPECT_EQ(p.state(0, 4), PairState::Absent);
  EXPECT_EQ(p.state(1, 3), PairState::Missing);
}

TEST(PartialFile, RoundTripAndRejections) {
  PartialAdjacency p(6, {{0, 1}, {2, 3}}, {{1, 4}, {3, 5}});
  std::stringstream ss;
  write_partial_adjacency(p, ss);
  auto q = parse_partial_adjacency(ss);
  EXPECT_EQ(q.present(), p.present());
  EXPECT_EQ(q.missing(), p.missing());
  std::istringstream loop("0 0\n");
  EXPECT_THROW(parse_partial_adjacency(loop), ParseError);
  EXPECT_THROW(PartialAdjacency(3, {{0, 1}}, {{1, 0}}), ParameterError);
}
