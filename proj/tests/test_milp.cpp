#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "eli/milp.hpp"

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

Network path(int n) {
  std::vector<Edge> e;
  for (int i = 0; i + 1 < n; ++i) e.push_back({i, i + 1});
  return Network::from_edges(static_cast<std::size_t>(n), e);
}

DesignProblem problem_for(std::vector<WeightScheme> schemes, const VarianceModel& m, long lo, long hi) {
  DesignProblem p;
  p.schemes = std::move(schemes);
  p.model = m;
  p.n_min = lo;
  p.n_max = hi;
  return p;
}

// Every (R, D) with D restricted to participants and their neighbors.
template <class F>
void for_each_assignment(const Network& g, F&& f) {
  const auto n = static_cast<int>(g.size());
  for (std::uint32_t rm = 0; rm < (1u << n); ++rm) {
    std::uint32_t active = rm;
    for (int i = 0; i < n; ++i)
      if (rm >> i & 1u)
        for (NodeId k : g.neighbors(i)) active |= 1u << k;
    for (std::uint32_t dm = active;; dm = (dm - 1) & active) {
      Assignment a(g.size());
      for (int i = 0; i < n; ++i) {
        a.R[static_cast<std::size_t>(i)] = rm >> i & 1u;
        a.D[static_cast<std::size_t>(i)] = dm >> i & 1u;
      }
      f(a);
      if (dm == 0) break;
    }
  }
}

}  // namespace

TEST(Milp, PathTCount) {
  auto g = path(3);
  auto m = export_milp(g, empty_pilot_plan(g), problem_for({direct_effect({1, 2})}, vm(1, 0, 0, 0), 1, 3));
  EXPECT_EQ(m.t_count(), 14u);
  EXPECT_EQ(m.decision_binaries(), 6u);
}

TEST(Milp, TCountMatchesDegreeSum) {
  auto g = generate_er(9, 0.3, 3);
  auto m = export_milp(g, empty_pilot_plan(g), problem_for({overall_effect({1, 2})}, vm(1, 0, 0, 0.1), 1, 9));
  std::size_t want = 0;
  for (NodeId i = 0; i < 9; ++i) want += 2 * static_cast<std::size_t>(g.degree(i)) + 2;
  EXPECT_EQ(m.t_count(), want);
}

TEST(Milp, ModelBasedSchemeRejected) {
  auto g = path(4);
  WeightScheme s{"ols", LinearModel{{Feature::One, Feature::D}, 1}};
  EXPECT_THROW(export_milp(g, empty_pilot_plan(g), problem_for({s}, vm(1, 0, 0, 0), 1, 4)), UnsupportedSchemeError);
}

TEST(Milp, EpigraphMatchesEvaluatorAtEveryPoint) {
  // Two disjoint 3-paths: four endpoints can fill the three level-1 cells.
  std::vector<Edge> e{{0, 1}, {1, 2}, {3, 4}, {4, 5}};
  auto g = Network::from_edges(6, e);
  auto p = problem_for({overall_effect({1}), direct_effect({1}, 0)}, vm(0.5, 0.5, 1.0, 0.1), 1, 6);
  auto plan = empty_pilot_plan(g);
  auto m = export_milp(g, plan, p);
  DesignEvaluator ev(g, plan, p);
  int feasible = 0;
  for_each_assignment(g, [&](const Assignment& a) {
    const double want = ev.objective(a);
    const auto got = milp_evaluate(m, a);
    EXPECT_EQ(got.feasible, std::isfinite(want)) << got.violated;
    if (got.feasible && std::isfinite(want)) {
      ++feasible;
      EXPECT_NEAR(got.objective, want, 1e-9 * std::max(1.0, want));
    }
  });
  EXPECT_GT(feasible, 0);
}

TEST(Milp, IndicatorsAreForcedByRows) {
  // Degrees up to 3: every feasible exposure pattern maps to exactly one auxiliary pattern.
  std::vector<Edge> e{{0, 1}, {0, 2}, {0, 3}, {3, 4}};
  auto g = Network::from_edges(5, e);
  auto p = problem_for({direct_effect({1}, 0)}, vm(1, 0, 0, 0.1), 1, 5);
  auto m = export_milp(g, empty_pilot_plan(g), p);
  int checked = 0;
  for_each_assignment(g, [&](const Assignment& a) {
    const auto got = milp_evaluate(m, a, true);
    if (!got.feasible) return;
    ++checked;
    EXPECT_TRUE(got.auxiliaries_forced);
  });
  EXPECT_GT(checked, 0);
}

TEST(Milp, BruteForceMatchesExhaustiveDesign) {
  int compared = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto g = generate_er(6, 0.4, derive_seed(seed, 41));
    // Most common positive degree as the estimand level.
    std::vector<int> count(7, 0);
    for (NodeId i = 0; i < 6; ++i) ++count[static_cast<std::size_t>(g.degree(i))];
    count[0] = 0;
    const int level = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
    auto p = problem_for({direct_effect({level}, 0)}, vm(0.5, 0.5, 1.0, 0.1), 2, 4);
    auto plan = empty_pilot_plan(g);
    auto m = export_milp(g, plan, p);
    ASSERT_LE(m.decision_binaries(), 18u);
    const auto bf = milp_brute_force(m);
    SolverConfig c;
    c.backend = SolverConfig::Backend::Exhaustive;
    double want = std::numeric_limits<double>::infinity();
    try {
      want = design_second_wave(g, plan, p, c).objective;
    } catch (const InfeasibleError&) {
    }
    EXPECT_EQ(bf.feasible, std::isfinite(want)) << "seed " << seed;
    if (bf.feasible && std::isfinite(want)) {
      ++compared;
      EXPECT_NEAR(bf.objective, want, 1e-9) << "seed " << seed;
    }
  }
  EXPECT_GE(compared, 5);
}

TEST(Milp, PilotFixesTreatmentsAndExcludesParticipants) {
  auto g = path(6);
  auto plan = make_pilot_plan(g, {0}, 1);
  plan.pilot_treatments[1] = 1;
  auto p = problem_for({direct_effect({1, 2})}, vm(1, 0, 0, 0), 1, 4);
  auto m = export_milp(g, plan, p);
  EXPECT_EQ(m.r_var[0], -1);
  EXPECT_EQ(m.r_var[1], -1);
  EXPECT_EQ(m.d_var[1], -1);
  EXPECT_EQ(m.d_const[1], 1);
}

TEST(Milp, LpTextHasAllSections) {
  auto g = path(4);
  auto m = export_milp(g, empty_pilot_plan(g), problem_for({direct_effect({1, 2})}, vm(1, 0, 0, 0.1), 1, 4));
  std::ostringstream out;
  write_lp(m, out);
  const auto s = out.str();
  for (const char* key : {"Minimize", "Subject To", "Bounds", "Binaries", "End"})
    EXPECT_NE(s.find(key), std::string::npos) << key;
  EXPECT_NE(s.find("R_0"), std::string::npos);
  std::size_t binaries = 0;
  std::istringstream in(s.substr(s.find("Binaries")));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line) && line != "End") ++binaries;
  EXPECT_EQ(binaries, m.num_binaries());
}
