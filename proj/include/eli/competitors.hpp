#pragma once

// Baseline designs: random participants, graph-cluster randomization and
// saturation designs on 3-net clusters. None of them reads pilot outcomes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

#include "eli/assignment.hpp"
#include "eli/errors.hpp"
#include "eli/graph.hpp"
#include "eli/rng.hpp"

namespace eli {

struct Clustering {
  std::vector<int> cluster_id;  // per node
  std::vector<NodeId> seeds;    // seed of each cluster
  int radius = 3;
  std::string method = "3-net";

  std::size_t num_clusters() const { return seeds.size(); }
  std::vector<std::vector<NodeId>> members() const {
    std::vector<std::vector<NodeId>> out(seeds.size());
    for (std::size_t i = 0; i < cluster_id.size(); ++i)
      out[static_cast<std::size_t>(cluster_id[i])].push_back(static_cast<NodeId>(i));
    return out;
  }
};

/// Greedy ball growing in the given node order: each still-uncovered node
/// becomes a seed and claims every uncovered node within `radius` hops.
inline Clustering cluster_ball_growing(const Network& net, const std::vector<NodeId>& order, int radius = 3) {
  const std::size_t N = net.size();
  Clustering c;
  c.radius = radius;
  c.cluster_id.assign(N, -1);
  std::vector<int> dist(N, -1);
  std::vector<NodeId> touched;
  for (NodeId s : order) {
    if (c.cluster_id[static_cast<std::size_t>(s)] >= 0) continue;
    const int id = static_cast<int>(c.seeds.size());
    c.seeds.push_back(s);
    std::queue<NodeId> q;
    q.push(s);
    dist[static_cast<std::size_t>(s)] = 0;
    touched.push_back(s);
    while (!q.empty()) {
      const NodeId v = q.front();
      q.pop();
      if (c.cluster_id[static_cast<std::size_t>(v)] < 0) c.cluster_id[static_cast<std::size_t>(v)] = id;
      if (dist[static_cast<std::size_t>(v)] == radius) continue;
      for (NodeId w : net.neighbors(v)) {
        if (dist[static_cast<std::size_t>(w)] >= 0) continue;
        dist[static_cast<std::size_t>(w)] = dist[static_cast<std::size_t>(v)] + 1;
        touched.push_back(w);
        q.push(w);
      }
    }
    for (NodeId t : touched) dist[static_cast<std::size_t>(t)] = -1;
    touched.clear();
  }
  return c;
}

/// 3-net clustering with a seed-determined random node order.
inline Clustering cluster_3net(const Network& net, std::uint64_t seed) {
  std::vector<NodeId> order(net.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(derive_seed(seed, stream::kCompetitor, 1));
  std::shuffle(order.begin(), order.end(), rng);
  return cluster_ball_growing(net, order, 3);
}

inline void save_clustering(const Clustering& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write clustering " + path.string());
  out << "node_id,cluster_id\n";
  for (std::size_t i = 0; i < c.cluster_id.size(); ++i) out << i << ',' << c.cluster_id[i] << '\n';
}

namespace detail {

inline std::vector<std::uint8_t> closed_neighborhood_mask(const Network& net, const std::vector<std::uint8_t>& R) {
  std::vector<std::uint8_t> m(net.size(), 0);
  for (std::size_t i = 0; i < R.size(); ++i) {
    if (!R[i]) continue;
    m[i] = 1;
    for (NodeId k : net.neighbors(static_cast<NodeId>(i))) m[static_cast<std::size_t>(k)] = 1;
  }
  return m;
}

/// Clusters in random order, whole clusters first; the cluster that would
/// overflow the cap contributes a random subset.
inline std::vector<std::uint8_t> sample_by_cluster(const Clustering& c, std::size_t n, Rng& rng) {
  auto groups = c.members();
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::uint8_t> R(c.cluster_id.size(), 0);
  std::size_t taken = 0;
  for (std::size_t g : order) {
    if (taken == n) break;
    auto& mem = groups[g];
    if (taken + mem.size() > n) {
      std::shuffle(mem.begin(), mem.end(), rng);
      mem.resize(n - taken);
    }
    for (NodeId v : mem) R[static_cast<std::size_t>(v)] = 1;
    taken += mem.size();
  }
  return R;
}

}  // namespace detail

/// Uniform participant sample without replacement; Bernoulli(p) treatments on
/// participants and their neighbors.
inline Assignment design_random(const Network& net, std::size_t n_participants, double p_treat, std::uint64_t seed) {
  if (n_participants > net.size()) throw ParameterError("design_random: more participants than nodes");
  if (!(p_treat >= 0.0 && p_treat <= 1.0)) throw ParameterError("design_random: p_treat must lie in [0,1]");
  Rng rng = make_rng(derive_seed(seed, stream::kCompetitor, 2));
  std::vector<NodeId> order(net.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Assignment a(net.size());
  for (std::size_t k = 0; k < n_participants; ++k) a.R[static_cast<std::size_t>(order[k])] = 1;
  const auto active = detail::closed_neighborhood_mask(net, a.R);
  for (std::size_t i = 0; i < net.size(); ++i)
    if (active[i]) a.D[i] = bernoulli(rng, p_treat);
  return a;
}

/// Cluster-level coin flips; all members of a cluster share D.
inline Assignment design_cluster(const Network& net, const Clustering& c, std::size_t n_participants,
                                 std::uint64_t seed) {
  if (n_participants > net.size()) throw ParameterError("design_cluster: more participants than nodes");
  Rng rng = make_rng(derive_seed(seed, stream::kCompetitor, 3));
  std::vector<std::uint8_t> arm(c.num_clusters());
  for (auto& x : arm) x = bernoulli(rng, 0.5);
  Assignment a(net.size());
  a.R = detail::sample_by_cluster(c, n_participants, rng);
  const auto active = detail::closed_neighborhood_mask(net, a.R);
  for (std::size_t i = 0; i < net.size(); ++i)
    if (active[i]) a.D[i] = arm[static_cast<std::size_t>(c.cluster_id[i])];
  return a;
}

// ---------------------------------------------------------------------------
// Saturation designs

inline constexpr double kSaturationMenu[3] = {0.0, 0.5, 1.0};

/// Homoskedastic working model with intracluster correlation rho.
struct SaturationModel {
  double sigma2 = 1.0;
  double rho = 0.1;
};

/// Sum of squared standard errors of the targeted contrasts for menu shares
/// (q0, q_half, q1) over C clusters of k participants each. Variant 2 targets
/// the within-cluster treatment effect and the spillover on the untreated;
/// variant 3 adds the slope between the 1/2 and full saturations.
inline double saturation_criterion(int variant, double q0, double qh, double q1, double C, double k,
                                   const SaturationModel& m) {
  const double inf = std::numeric_limits<double>::infinity();
  const double g0 = q0 * C, gh = qh * C, g1 = q1 * C;
  const double s = m.sigma2, r = m.rho;
  if (gh <= 0.0 || g0 <= 0.0 || k <= 0.0) return inf;
  const double te = s * (1.0 - r) * 4.0 / (k * gh);
  const double sp = s * (r + (1.0 - r) / (k / 2.0)) / gh + s * (r + (1.0 - r) / k) / g0;
  double total = te + sp;
  if (variant == 3) {
    if (g1 <= 0.0) return inf;
    total += s * (r + (1.0 - r) / k) / g1 + s * (r + (1.0 - r) / (k / 2.0)) / gh;
  }
  return total;
}

struct SaturationShares {
  double q0 = 1.0 / 3.0, q_half = 1.0 / 3.0, q1 = 1.0 / 3.0;
  double criterion = std::numeric_limits<double>::infinity();
};

/// Grid search over the share simplex with the given step; first minimum in
/// (q0, q_half) ascending order wins.
inline SaturationShares optimize_saturation_shares(int variant, double C, double k, const SaturationModel& m,
                                                   double step = 0.05) {
  if (variant != 2 && variant != 3) throw ParameterError("saturation share search applies to variants 2 and 3");
  SaturationShares best;
  const int steps = static_cast<int>(std::lround(1.0 / step));
  for (int a = 0; a <= steps; ++a)
    for (int b = 0; a + b <= steps; ++b) {
      const double q0 = a * step, qh = b * step, q1 = (steps - a - b) * step;
      const double v = saturation_criterion(variant, q0, qh, q1, C, k, m);
      if (v < best.criterion) best = {q0, qh, q1, v};
    }
  return best;
}

struct SaturationPlan {
  std::vector<double> pi;  // per cluster
  SaturationShares shares;
  int variant_used = 1;
  std::string warning;
};

inline SaturationPlan plan_saturation(const Clustering& c, int variant, std::size_t n_participants,
                                      const SaturationModel& model, Rng& rng) {
  if (variant < 1 || variant > 3) throw ParameterError("saturation variant must be 1, 2 or 3");
  const std::size_t C = c.num_clusters();
  SaturationPlan plan;
  plan.pi.assign(C, 0.0);
  plan.variant_used = variant;
  if (variant != 1) {
    const double k = C ? static_cast<double>(n_participants) / static_cast<double>(C) : 0.0;
    plan.shares = optimize_saturation_shares(variant, static_cast<double>(C), k, model);
    // Largest-remainder allocation of clusters to menu entries.
    const double q[3] = {plan.shares.q0, plan.shares.q_half, plan.shares.q1};
    std::size_t cnt[3];
    double rem[3];
    std::size_t used = 0;
    for (int t = 0; t < 3; ++t) {
      const double x = q[t] * static_cast<double>(C);
      cnt[t] = static_cast<std::size_t>(std::floor(x + 1e-9));
      rem[t] = x - static_cast<double>(cnt[t]);
      used += cnt[t];
    }
    while (used < C) {
      int t = static_cast<int>(std::max_element(rem, rem + 3) - rem);
      ++cnt[t], rem[t] = -1.0, ++used;
    }
    const bool need_one = plan.shares.q1 > 0.0;
    if (!std::isfinite(plan.shares.criterion) || cnt[0] == 0 || cnt[1] == 0 || (need_one && cnt[2] == 0)) {
      plan.warning = "too few clusters for the optimized saturation menu; using variant 1";
      plan.variant_used = 1;
    } else {
      std::vector<std::size_t> order(C);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      std::size_t pos = 0;
      for (int t = 0; t < 3; ++t)
        for (std::size_t j = 0; j < cnt[t]; ++j) plan.pi[order[pos++]] = kSaturationMenu[t];
      return plan;
    }
  }
  plan.shares = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, std::numeric_limits<double>::infinity()};
  std::uniform_int_distribution<int> pick(0, 2);
  for (auto& p : plan.pi) p = kSaturationMenu[pick(rng)];
  return plan;
}

/// Saturation design: cluster saturations from the menu {0, 1/2, 1}, then
/// members treated i.i.d. Bernoulli(pi_c).
inline Assignment design_saturation(const Network& net, const Clustering& c, int variant, std::size_t n_participants,
                                    const SaturationModel& model, std::uint64_t seed,
                                    SaturationPlan* plan_out = nullptr) {
  if (n_participants > net.size()) throw ParameterError("design_saturation: more participants than nodes");
  Rng rng = make_rng(derive_seed(seed, stream::kCompetitor, 10 + static_cast<std::uint64_t>(variant)));
  SaturationPlan plan = plan_saturation(c, variant, n_participants, model, rng);
  Assignment a(net.size());
  a.R = detail::sample_by_cluster(c, n_participants, rng);
  const auto active = detail::closed_neighborhood_mask(net, a.R);
  for (std::size_t i = 0; i < net.size(); ++i)
    if (active[i]) a.D[i] = bernoulli(rng, plan.pi[static_cast<std::size_t>(c.cluster_id[i])]);
  if (plan_out) *plan_out = std::move(plan);
  return a;
}

}  // namespace eli
