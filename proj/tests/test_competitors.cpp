#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "eli/competitors.hpp"

using namespace eli;

namespace {

Network path(int n) {
  std::vector<Edge> e;
  for (int i = 0; i + 1 < n; ++i) e.push_back({i, i + 1});
  return Network::from_edges(static_cast<std::size_t>(n), e);
}

std::vector<int> bfs_dist(const Network& g, NodeId s) {
  std::vector<int> d(g.size(), -1);
  std::vector<NodeId> q{s};
  d[static_cast<std::size_t>(s)] = 0;
  for (std::size_t h = 0; h < q.size(); ++h)
    for (NodeId k : g.neighbors(q[h]))
      if (d[static_cast<std::size_t>(k)] < 0) {
        d[static_cast<std::size_t>(k)] = d[static_cast<std::size_t>(q[h])] + 1;
        q.push_back(k);
      }
  return d;
}

std::size_t count(const std::vector<std::uint8_t>& v) { return static_cast<std::size_t>(std::accumulate(v.begin(), v.end(), 0)); }

}  // namespace

TEST(Clustering, EdgelessGraphGivesSingletons) {
  auto g = Network::from_edges(6, {});
  auto c = cluster_3net(g, 4);
  EXPECT_EQ(c.num_clusters(), 6u);
  std::set<int> ids(c.cluster_id.begin(), c.cluster_id.end());
  EXPECT_EQ(ids.size(), 6u);
}

TEST(Clustering, CenterOfSevenPathClaimsEverything) {
  auto g = path(7);
  auto c = cluster_ball_growing(g, {3, 0, 1, 2, 4, 5, 6});
  EXPECT_EQ(c.num_clusters(), 1u);
  EXPECT_EQ(c.seeds, std::vector<NodeId>{3});
}

TEST(Clustering, EndOfSevenPathLeavesTail) {
  auto g = path(7);
  auto c = cluster_ball_growing(g, {0, 1, 2, 3, 4, 5, 6});
  ASSERT_EQ(c.num_clusters(), 2u);
  EXPECT_EQ(c.seeds, (std::vector<NodeId>{0, 4}));
  EXPECT_EQ(c.cluster_id, (std::vector<int>{0, 0, 0, 0, 1, 1, 1}));
}

TEST(Clustering, PartitionWithinRadiusOfSeed) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto g = generate_er(80, 0.04, s);
    auto c = cluster_3net(g, s);
    ASSERT_EQ(c.cluster_id.size(), 80u);
    for (std::size_t id = 0; id < c.num_clusters(); ++id) {
      EXPECT_EQ(c.cluster_id[static_cast<std::size_t>(c.seeds[id])], static_cast<int>(id));
      const auto d = bfs_dist(g, c.seeds[id]);
      for (std::size_t i = 0; i < 80; ++i) {
        if (c.cluster_id[i] == static_cast<int>(id)) {
          EXPECT_GE(d[i], 0);
          EXPECT_LE(d[i], 3);
        }
      }
    }
    // Seeds are more than 3 hops apart.
    for (std::size_t a = 0; a < c.num_clusters(); ++a) {
      const auto d = bfs_dist(g, c.seeds[a]);
      for (std::size_t b = a + 1; b < c.num_clusters(); ++b) {
        const int x = d[static_cast<std::size_t>(c.seeds[b])];
        EXPECT_TRUE(x < 0 || x > 3);
      }
    }
  }
}

TEST(Clustering, DeterministicPerSeed) {
  auto g = generate_er(60, 0.05, 2);
  EXPECT_EQ(cluster_3net(g, 9).cluster_id, cluster_3net(g, 9).cluster_id);
}

TEST(RandomDesign, ExactParticipantCountAndActiveSupport) {
  auto g = generate_er(50, 0.06, 3);
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto a = design_random(g, 20, 0.5, s);
    EXPECT_EQ(count(a.R), 20u);
    for (std::size_t i = 0; i < 50; ++i) {
      bool active = a.R[i];
      for (NodeId k : g.neighbors(static_cast<NodeId>(i))) active = active || a.R[static_cast<std::size_t>(k)];
      if (!active) {
        EXPECT_EQ(a.D[i], 0) << i;
      }
    }
  }
}

TEST(RandomDesign, InclusionFrequencyIsUniform) {
  auto g = generate_er(10, 0.2, 1);
  std::vector<double> hits(10, 0.0);
  const int reps = 4000;
  for (int s = 0; s < reps; ++s) {
    auto a = design_random(g, 3, 0.5, static_cast<std::uint64_t>(s));
    for (std::size_t i = 0; i < 10; ++i) hits[i] += a.R[i];
  }
  const double p = 0.3, se = std::sqrt(p * (1 - p) / reps);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(hits[i] / reps, p, 4 * se) << i;
}

TEST(RandomDesign, TreatedShareNearHalf) {
  auto g = generate_er(100, 0.03, 5);
  double sum = 0, sq = 0;
  const int reps = 400;
  for (int s = 0; s < reps; ++s) {
    auto a = design_random(g, 40, 0.5, static_cast<std::uint64_t>(s));
    double t = 0;
    for (std::size_t i = 0; i < 100; ++i) t += a.R[i] && a.D[i];
    sum += t / 40, sq += t * t / 1600;
  }
  const double m = sum / reps, sd = std::sqrt(sq / reps - m * m);
  EXPECT_NEAR(m, 0.5, 3 * sd / std::sqrt(reps));
}

TEST(RandomDesign, RejectsBadArguments) {
  auto g = path(5);
  EXPECT_THROW(design_random(g, 6, 0.5, 1), ParameterError);
  EXPECT_THROW(design_random(g, 2, 1.5, 1), ParameterError);
}

TEST(ClusterDesign, TreatmentConstantWithinCluster) {
  auto g = generate_er(120, 0.03, 7);
  auto c = cluster_3net(g, 7);
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto a = design_cluster(g, c, 50, s);
    EXPECT_EQ(count(a.R), 50u);
    // Every active node of a cluster carries the same D.
    const auto active = detail::closed_neighborhood_mask(g, a.R);
    std::vector<int> arm(c.num_clusters(), -1);
    for (std::size_t i = 0; i < 120; ++i) {
      if (!active[i]) continue;
      int& x = arm[static_cast<std::size_t>(c.cluster_id[i])];
      if (x < 0) x = a.D[i];
      EXPECT_EQ(a.D[i], x) << i;
    }
  }
}

TEST(ClusterDesign, ParticipantsFillWholeClustersFirst) {
  // Three disjoint triangles are three clusters; 7 participants take two whole clusters.
  std::vector<Edge> e{{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}, {6, 7}, {7, 8}, {6, 8}};
  auto g = Network::from_edges(9, e);
  auto c = cluster_ball_growing(g, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  ASSERT_EQ(c.num_clusters(), 3u);
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto a = design_cluster(g, c, 7, s);
    std::vector<int> per(3, 0);
    for (std::size_t i = 0; i < 9; ++i) per[static_cast<std::size_t>(c.cluster_id[i])] += a.R[i];
    std::sort(per.begin(), per.end());
    EXPECT_EQ(per, (std::vector<int>{1, 3, 3}));
  }
}

TEST(Saturation, VariantTwoMatchesClosedForm) {
  // Variant 2 reduces to A / q_half + B / q0 with q1 = 0.
  SaturationModel m{1.0, 0.1};
  for (double k : {4.0, 10.0, 25.0}) {
    const double r = m.rho;
    const double A = 4 * (1 - r) / k + r + (1 - r) / (k / 2);
    const double B = r + (1 - r) / k;
    const double qh = std::sqrt(A) / (std::sqrt(A) + std::sqrt(B));
    auto got = optimize_saturation_shares(2, 20, k, m);
    EXPECT_NEAR(got.q_half, qh, 0.05 + 1e-9) << k;
    EXPECT_NEAR(got.q1, 0.0, 1e-12);
    EXPECT_LE(got.criterion, saturation_criterion(2, 1 - qh, qh, 0, 20, k, m) * 1.02);
  }
}

TEST(Saturation, GridMinimumIsGlobalOnGrid) {
  SaturationModel m{2.0, 0.3};
  auto best = optimize_saturation_shares(3, 30, 8, m);
  for (int a = 0; a <= 20; ++a)
    for (int b = 0; a + b <= 20; ++b) EXPECT_LE(best.criterion, saturation_criterion(3, a * 0.05, b * 0.05, (20 - a - b) * 0.05, 30, 8, m));
  EXPECT_GT(best.q1, 0.0);
}

TEST(Saturation, ZeroSaturationClustersHaveNoTreated) {
  auto g = generate_er(150, 0.03, 11);
  auto c = cluster_3net(g, 11);
  for (int variant : {1, 2, 3}) {
    SaturationPlan plan;
    auto a = design_saturation(g, c, variant, 60, {}, 5, &plan);
    ASSERT_EQ(plan.pi.size(), c.num_clusters());
    for (double p : plan.pi) EXPECT_TRUE(p == 0.0 || p == 0.5 || p == 1.0);
    for (std::size_t i = 0; i < 150; ++i) {
      const double p = plan.pi[static_cast<std::size_t>(c.cluster_id[i])];
      if (p == 0.0) {
        EXPECT_EQ(a.D[i], 0) << i;
      }
      if (p == 1.0) {
        bool active = a.R[i];
        for (NodeId k : g.neighbors(static_cast<NodeId>(i))) active = active || a.R[static_cast<std::size_t>(k)];
        if (active) {
          EXPECT_EQ(a.D[i], 1) << i;
        }
      }
    }
  }
}

TEST(Saturation, HalfSaturationShareWithinCluster) {
  // One big cluster at saturation 1/2: the treated share concentrates near 1/2.
  auto g = Network::from_edges(200, {});
  Clustering c;
  c.cluster_id.assign(200, 0);
  c.seeds = {0};
  double sum = 0;
  int hits = 0;
  const int reps = 300;
  for (int s = 0; s < reps; ++s) {
    SaturationPlan plan;
    auto a = design_saturation(g, c, 1, 200, {}, static_cast<std::uint64_t>(s), &plan);
    if (plan.pi[0] != 0.5) continue;
    ++hits;
    sum += static_cast<double>(count(a.D)) / 200.0;
  }
  ASSERT_GT(hits, 50);
  EXPECT_NEAR(sum / hits, 0.5, 3 * 0.5 / std::sqrt(200.0 * hits));
}

TEST(Saturation, TooFewClustersFallsBackToVariantOne) {
  auto g = path(5);
  auto c = cluster_ball_growing(g, {2, 0, 1, 3, 4});
  ASSERT_EQ(c.num_clusters(), 1u);
  SaturationPlan plan;
  design_saturation(g, c, 2, 5, {}, 1, &plan);
  EXPECT_EQ(plan.variant_used, 1);
  EXPECT_FALSE(plan.warning.empty());
}
