#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eli/estimators.hpp"
#include "eli/outcome.hpp"

using namespace eli;

namespace {

Network star(int leaves) {
  std::vector<Edge> e;
  for (int k = 1; k <= leaves; ++k) e.push_back({0, k});
  return Network::from_edges(static_cast<std::size_t>(leaves + 1), e);
}

Network edge_pair() {
  std::vector<Edge> e{{0, 1}};
  return Network::from_edges(2, e);
}

VarianceModel vm(double mu, double beta1, double beta2, double alpha) {
  VarianceModel m;
  m.mu = mu;
  m.beta1 = beta1;
  m.beta2 = beta2;
  m.alpha = alpha;
  return m;
}

struct Moments {
  double mean_a = 0, mean_b = 0, var_a = 0, var_b = 0, cov = 0;
  double corr() const { return cov / std::sqrt(var_a * var_b); }
};

Moments moments(const std::vector<double>& a, const std::vector<double>& b) {
  Moments m;
  const double n = static_cast<double>(a.size());
  m.mean_a = std::accumulate(a.begin(), a.end(), 0.0) / n;
  m.mean_b = std::accumulate(b.begin(), b.end(), 0.0) / n;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m.var_a += (a[i] - m.mean_a) * (a[i] - m.mean_a);
    m.var_b += (b[i] - m.mean_b) * (b[i] - m.mean_b);
    m.cov += (a[i] - m.mean_a) * (b[i] - m.mean_b);
  }
  m.var_a /= n - 1;
  m.var_b /= n - 1;
  m.cov /= n - 1;
  return m;
}

// BFS hop distance, -1 when unreachable.
std::vector<int> bfs(const Network& g, NodeId s) {
  std::vector<int> d(g.size(), -1);
  std::vector<NodeId> q{s};
  d[static_cast<std::size_t>(s)] = 0;
  for (std::size_t h = 0; h < q.size(); ++h)
    for (NodeId j : g.neighbors(q[h]))
      if (d[static_cast<std::size_t>(j)] < 0) {
        d[static_cast<std::size_t>(j)] = d[static_cast<std::size_t>(q[h])] + 1;
        q.push_back(j);
      }
  return d;
}

}  // namespace

TEST(Exposure, StarCenterAndIsolatedNode) {
  auto g = star(3);
  std::vector<std::uint8_t> D{0, 1, 1, 1};
  EXPECT_EQ(exposure(g, D, 0), (Exposure{0, 3, 3}));
  EXPECT_EQ(exposure(g, D, 1), (Exposure{1, 0, 1}));

  auto iso = Network::from_edges(1, {});
  std::vector<std::uint8_t> D1{1};
  auto e = exposure(iso, D1, 0);
  EXPECT_EQ(e, (Exposure{1, 0, 0}));
  EXPECT_EQ(e.share(), 0.0);
}

TEST(Covariance, NonAdjacentPairIsDiagonal) {
  auto g = Network::from_edges(2, {});
  VarianceModel m = vm(1.0, 0.0, 0.0, 0.1);
  std::vector<std::uint8_t> D{0, 0};
  std::vector<NodeId> u{0, 1};
  auto c = build_covariance(g, D, m, u);
  EXPECT_DOUBLE_EQ(c(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(c(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(c(0, 1), 0.0);
}

TEST(Covariance, EdgePairHomoskedastic) {
  auto g = edge_pair();
  VarianceModel m = vm(0.5, 0.0, 0.0, 0.1);
  std::vector<std::uint8_t> D{0, 0};
  std::vector<NodeId> u{0, 1};
  auto c = build_covariance(g, D, m, u);
  EXPECT_NEAR(c(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(c(0, 1), 0.05, 1e-15);
  EXPECT_NEAR(c(1, 0), 0.05, 1e-15);
}

TEST(Covariance, MatchesBruteForceFormula) {
  auto g = generate_er(14, 0.25, 3);
  VarianceModel m = vm(0.4, 0.3, 0.8, 0.1);
  m.M = 2;
  m.alpha_by_distance = {0.12, 0.04};
  std::vector<std::uint8_t> D(14);
  for (std::size_t i = 0; i < 14; ++i) D[i] = (i * 7 + 3) % 3 == 0;
  auto units = all_nodes(g);
  auto c = build_covariance(g, D, m, units);
  for (NodeId i = 0; i < 14; ++i) {
    const auto d = bfs(g, i);
    const auto ei = exposure(g, D, i);
    const double si = m.mu + m.beta1 * ei.d + m.beta2 * ei.share();
    for (NodeId j = 0; j < 14; ++j) {
      const auto ej = exposure(g, D, j);
      const double sj = m.mu + m.beta1 * ej.d + m.beta2 * ej.share();
      double expect = 0.0;
      if (i == j) expect = si;
      else if (d[static_cast<std::size_t>(j)] == 1) expect = 0.12 * std::sqrt(si * sj);
      else if (d[static_cast<std::size_t>(j)] == 2) expect = 0.04 * std::sqrt(si * sj);
      EXPECT_NEAR(c(i, j), expect, 1e-12) << i << "," << j;
    }
  }
}

TEST(Covariance, PermutationEquivariant) {
  auto g = generate_er(10, 0.3, 9);
  std::vector<NodeId> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), make_rng(4));
  std::vector<Edge> pe;
  for (auto [a, b] : g.edges()) pe.push_back({perm[static_cast<std::size_t>(a)], perm[static_cast<std::size_t>(b)]});
  auto h = Network::from_edges(10, pe);
  std::vector<std::uint8_t> D(10), Dp(10);
  for (std::size_t i = 0; i < 10; ++i) D[i] = i % 2;
  for (std::size_t i = 0; i < 10; ++i) Dp[static_cast<std::size_t>(perm[i])] = D[i];
  VarianceModel m = vm(0.5, 0.5, 1.0, 0.2);
  auto u = all_nodes(g);
  auto c = build_covariance(g, D, m, u);
  auto cp = build_covariance(h, Dp, m, u);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j)
      EXPECT_NEAR(c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)),
                  cp(perm[i], perm[j]), 1e-14);
}

TEST(Covariance, NegativeVarianceRejected) {
  auto g = edge_pair();
  VarianceModel m = vm(0.5, -1.0, 0.0, 0.0);
  std::vector<std::uint8_t> D{1, 0};
  std::vector<NodeId> u{0, 1};
  EXPECT_THROW(build_covariance(g, D, m, u), ModelDomainError);
}

TEST(Covariance, AlphaOutOfRangeRejected) {
  VarianceModel m = vm(0.5, 0.0, 0.0, 1.5);
  EXPECT_THROW(m.validate(), ParameterError);
}

TEST(Sampler, SmallNegativeEigenvalueRepaired) {
  // Star with 3 leaves: eigenvalues 1 +/- alpha*sqrt(3); alpha 0.6 gives -0.039.
  auto g = star(3);
  std::vector<std::uint8_t> D(4, 0);
  VarianceModel m = vm(1.0, 0.0, 0.0, 0.6);
  OutcomeSimulator sim(g, D, MeanSpec{}, m, all_nodes(g));
  EXPECT_TRUE(sim.psd_repaired());
  EXPECT_TRUE(sim.draw(1).psd_repair_flag);
}

TEST(Sampler, LargeNegativeEigenvalueRejected) {
  auto g = star(3);
  std::vector<std::uint8_t> D(4, 0);
  VarianceModel m = vm(1.0, 0.0, 0.0, 0.9);
  EXPECT_THROW(OutcomeSimulator(g, D, MeanSpec{}, m, all_nodes(g)), ModelDomainError);
}

TEST(Simulation, DeterministicPerSeedAndSubsetOnly) {
  auto g = generate_er(30, 0.1, 2);
  std::vector<std::uint8_t> D(30, 0);
  D[3] = 1;
  VarianceModel m;
  std::vector<NodeId> units{1, 3, 5};
  auto a = simulate_outcomes(g, D, MeanSpec{}, m, 77, units);
  auto b = simulate_outcomes(g, D, MeanSpec{}, m, 77, units);
  for (NodeId i : units) EXPECT_EQ(a.y[static_cast<std::size_t>(i)], b.y[static_cast<std::size_t>(i)]);
  EXPECT_TRUE(std::isnan(a.y[0]));
  EXPECT_FALSE(std::isnan(a.y[3]));
  auto c = simulate_outcomes(g, D, MeanSpec{}, m, 78, units);
  EXPECT_NE(a.y[3], c.y[3]);
}

TEST(Simulation, IidVarianceAndMean) {
  // 20 isolated treated nodes, sigma^2 = mu + beta1 = 2, mean gamma1 = 0.5.
  auto g = Network::from_edges(20, {});
  std::vector<std::uint8_t> D(20, 1);
  VarianceModel m = vm(1.5, 0.5, 0.0, 0.1);
  OutcomeSimulator sim(g, D, MeanSpec{}, m, all_nodes(g));
  Rng rng = make_rng(5);
  std::vector<double> y;
  for (int r = 0; r < 1000; ++r) {
    auto d = sim.draw(rng);
    y.insert(y.end(), d.y.begin(), d.y.end());
  }
  const double n = static_cast<double>(y.size());
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= n - 1;
  EXPECT_NEAR(var, 2.0, 0.05 * 2.0);
  EXPECT_NEAR(mean, 0.5, 3.0 * std::sqrt(2.0 / n));
}

TEST(Simulation, EdgePairCorrelation) {
  auto g = edge_pair();
  std::vector<std::uint8_t> D{0, 0};
  VarianceModel m = vm(0.5, 0.0, 0.0, 0.1);
  OutcomeSimulator sim(g, D, MeanSpec{}, m, all_nodes(g));
  Rng rng = make_rng(11);
  std::vector<double> a, b;
  for (int r = 0; r < 20000; ++r) {
    auto d = sim.draw(rng);
    a.push_back(d.y[0]);
    b.push_back(d.y[1]);
  }
  EXPECT_NEAR(moments(a, b).corr(), 0.1, 0.02);
}

TEST(Simulation, IndependentBeyondOrderM) {
  // Path 0-1-2 with M = 1: ends are at distance 2 and must be uncorrelated.
  std::vector<Edge> e{{0, 1}, {1, 2}};
  auto g = Network::from_edges(3, e);
  std::vector<std::uint8_t> D{0, 1, 0};
  VarianceModel m = vm(0.5, 0.5, 1.0, 0.3);
  auto c = build_covariance(g, D, m, all_nodes(g));
  EXPECT_EQ(c(0, 2), 0.0);
  OutcomeSimulator sim(g, D, MeanSpec{}, m, all_nodes(g));
  Rng rng = make_rng(12);
  std::vector<double> a, b;
  for (int r = 0; r < 20000; ++r) {
    auto d = sim.draw(rng);
    a.push_back(d.y[0]);
    b.push_back(d.y[2]);
  }
  EXPECT_LT(std::abs(moments(a, b).corr()), 4.0 / std::sqrt(20000.0));
}

TEST(Simulation, SymmetricUnitsExchangeable) {
  // Both ends of a path share exposure, so their marginal moments agree.
  std::vector<Edge> e{{0, 1}, {1, 2}};
  auto g = Network::from_edges(3, e);
  std::vector<std::uint8_t> D{0, 1, 0};
  VarianceModel m = vm(0.5, 0.0, 1.0, 0.2);
  OutcomeSimulator sim(g, D, MeanSpec{}, m, all_nodes(g));
  Rng rng = make_rng(13);
  std::vector<double> a, b;
  for (int r = 0; r < 20000; ++r) {
    auto d = sim.draw(rng);
    a.push_back(d.y[0]);
    b.push_back(d.y[2]);
  }
  auto mm = moments(a, b);
  EXPECT_NEAR(mm.mean_a, mm.mean_b, 4.0 * std::sqrt(2 * 1.5 / 20000.0));
  EXPECT_NEAR(mm.var_a / mm.var_b, 1.0, 0.05);
}

TEST(Simulation, ErrorsAreGaussian) {
  auto g = Network::from_edges(10, {});
  std::vector<std::uint8_t> D(10, 0);
  VarianceModel m = vm(0.7, 0.0, 0.0, 0.0);
  OutcomeSimulator sim(g, D, MeanSpec{}, m, all_nodes(g));
  Rng rng = make_rng(21);
  std::vector<double> z;
  for (int r = 0; r < 1000; ++r)
    for (double e : sim.draw(rng).epsilon) z.push_back(e / std::sqrt(0.7));
  std::sort(z.begin(), z.end());
  const double n = static_cast<double>(z.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double f = normal_cdf(z[i]);
    ks = std::max({ks, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
  }
  // 1% critical value of the one-sample KS statistic.
  EXPECT_LT(ks, 1.628 / std::sqrt(n));
}
