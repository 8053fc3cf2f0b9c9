#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "eli/estimators.hpp"

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

// Four isolated participants: two treated, two control, all at level 0.
Assignment four_isolated() {
  Assignment a(4);
  a.R = {1, 1, 1, 1};
  a.D = {1, 1, 0, 0};
  return a;
}

// A random assignment on which `scheme` has non-empty cells.
Assignment feasible_assignment(const Network& g, const WeightScheme& scheme, std::uint64_t seed, double pr = 0.6) {
  for (std::uint64_t k = 0; k < 100000; ++k) {
    Rng rng = make_rng(derive_seed(seed, 0, k));
    Assignment a(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      a.R[i] = bernoulli(rng, pr);
      a.D[i] = bernoulli(rng, 0.5);
    }
    if (weights_from_exposures(scheme, exposures(g, a.D), a.R).ok()) return a;
  }
  throw std::runtime_error("no feasible assignment found");
}

// The two most common degrees of g, as estimand levels.
std::vector<int> common_levels(const Network& g) {
  std::vector<int> count(static_cast<std::size_t>(g.max_degree()) + 1, 0);
  for (std::size_t i = 0; i < g.size(); ++i) ++count[static_cast<std::size_t>(g.degree(static_cast<NodeId>(i)))];
  count[0] = 0;
  std::vector<int> order(count.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return count[x] > count[y]; });
  std::vector<int> out{order[0], order[1]};
  std::sort(out.begin(), out.end());
  return out;
}

double sample_variance(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST(Weights, DiffMeansHandFormula) {
  auto g = Network::from_edges(4, {});
  auto w = compute_weights(direct_effect({0}), g, four_isolated());
  EXPECT_DOUBLE_EQ(w[0], 2.0);
  EXPECT_DOUBLE_EQ(w[1], 2.0);
  EXPECT_DOUBLE_EQ(w[2], -2.0);
  EXPECT_DOUBLE_EQ(w[3], -2.0);
}

TEST(Weights, EmptyCellRejected) {
  auto g = Network::from_edges(4, {});
  auto a = four_isolated();
  a.D = {1, 1, 1, 1};
  EXPECT_THROW(compute_weights(direct_effect({0}), g, a), InfeasibleWeightsError);
  EXPECT_FALSE(weights_from_exposures(direct_effect({0}), exposures(g, a.D), a.R).ok());
}

TEST(Weights, NonParticipantsGetZero) {
  auto g = generate_er(40, 0.08, 1);
  auto s = overall_effect({1, 2});
  auto a = feasible_assignment(g, s, 3);
  auto w = compute_weights(s, g, a);
  for (std::size_t i = 0; i < 40; ++i) {
    if (!a.R[i]) {
      EXPECT_EQ(w[i], 0.0);
    }
  }
}

TEST(Weights, CellNormalization) {
  auto g = generate_er(60, 0.05, 4);
  auto s = direct_effect({1, 2}, 0);
  auto a = feasible_assignment(g, s, 5, 0.8);
  auto w = compute_weights(s, g, a);
  const auto ex = exposures(g, a.D);
  const double n = static_cast<double>(a.participants());
  for (int l : {1, 2})
    for (int d : {0, 1}) {
      double acc = 0.0;
      for (std::size_t i = 0; i < 60; ++i) {
        if (a.R[i] && ex[i].l == l && ex[i].d == d && ex[i].s == 0) acc += w[i];
      }
      // Each level carries v(l) = 1/2.
      EXPECT_NEAR(acc / n, d == 1 ? 0.5 : -0.5, 1e-12);
    }
}

TEST(Weights, LinearModelMatchesLeastSquaresSlope) {
  auto g = generate_er(30, 0.1, 6);
  WeightScheme s{"ols", LinearModel{{Feature::One, Feature::D}, 1}};
  auto a = feasible_assignment(g, s, 7);
  auto w = compute_weights(s, g, a);
  auto ids = a.participant_ids();
  const auto n = static_cast<Eigen::Index>(ids.size());
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  Rng rng = make_rng(8);
  std::vector<double> yy(30, 0.0);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto i = static_cast<std::size_t>(ids[static_cast<std::size_t>(r)]);
    X(r, 0) = 1.0;
    X(r, 1) = a.D[i];
    yy[i] = y(r) = uniform01(rng);
  }
  // Normal-equations identity: (1/n) sum w_i X_i = e_1.
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  for (Eigen::Index r = 0; r < n; ++r) acc += w[static_cast<std::size_t>(ids[static_cast<std::size_t>(r)])] * X.row(r).transpose();
  acc /= static_cast<double>(n);
  EXPECT_NEAR(acc(0), 0.0, 1e-12);
  EXPECT_NEAR(acc(1), 1.0, 1e-12);
  const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
  EXPECT_NEAR(estimate_effect(s, g, a, yy).tau_hat, beta(1), 1e-10);
}

TEST(Weights, SingularGramIsIllPosed) {
  auto g = Network::from_edges(4, {});
  auto a = four_isolated();
  a.D = {1, 1, 1, 1};
  WeightScheme s{"ols", LinearModel{{Feature::One, Feature::D}, 1}};
  EXPECT_THROW(compute_weights(s, g, a), IllPosedError);
}

TEST(Estimate, DiffMeansHandArithmetic) {
  auto g = Network::from_edges(4, {});
  std::vector<double> y{3, 3, 1, 1};
  EXPECT_DOUBLE_EQ(estimate_effect(direct_effect({0}), g, four_isolated(), y).tau_hat, 2.0);
}

TEST(Estimate, NoiselessLinearModelRecoversCoefficients) {
  auto g = generate_er(50, 0.08, 9);
  const std::vector<Feature> f{Feature::One, Feature::D, Feature::S, Feature::DS, Feature::DT};
  auto a = feasible_assignment(g, WeightScheme{"x", LinearModel{f, 0}}, 10, 0.9);
  const double coef[] = {0.3, 1.2, -0.4, 0.25, 0.7};
  std::vector<double> y(50, 0.0);
  for (std::size_t i = 0; i < 50; ++i) {
    auto e = exposure(g, a.D, static_cast<NodeId>(i));
    y[i] = coef[0] + coef[1] * e.d + coef[2] * e.s + coef[3] * e.d * e.s + coef[4] * e.l * e.d;
  }
  for (std::size_t k = 0; k < f.size(); ++k)
    EXPECT_NEAR(estimate_effect(WeightScheme{"x", LinearModel{f, k}}, g, a, y).tau_hat, coef[k], 1e-9);
}

TEST(Estimate, Linearity) {
  auto g = generate_er(40, 0.08, 11);
  auto s = overall_effect({1, 2});
  auto a = feasible_assignment(g, s, 12, 0.9);
  Rng rng = make_rng(13);
  std::vector<double> y1(40), y2(40), mix(40);
  for (std::size_t i = 0; i < 40; ++i) {
    y1[i] = uniform01(rng);
    y2[i] = uniform01(rng);
    mix[i] = 2.5 * y1[i] - 0.75 * y2[i];
  }
  const double t1 = estimate_effect(s, g, a, y1).tau_hat;
  const double t2 = estimate_effect(s, g, a, y2).tau_hat;
  EXPECT_NEAR(estimate_effect(s, g, a, mix).tau_hat, 2.5 * t1 - 0.75 * t2, 1e-12);
}

TEST(Estimate, ConditionallyUnbiased) {
  auto g = generate_er(60, 0.05, 14);
  auto s = overall_effect({1, 2});
  auto a = feasible_assignment(g, s, 15, 0.9);
  const MeanSpec mean;
  const VarianceModel model = vm(0.5, 0.5, 1.0, 0.1);
  OutcomeSimulator sim(g, a.D, mean, model, a.participant_ids());
  Rng rng = make_rng(16);
  std::vector<double> t;
  for (int r = 0; r < 2000; ++r) t.push_back(estimate_effect(s, g, a, sim.draw(rng).y).tau_hat);
  const double m = std::accumulate(t.begin(), t.end(), 0.0) / 2000.0;
  const double se = std::sqrt(sample_variance(t) / 2000.0);
  EXPECT_NEAR(m, conditional_estimand(s, g, a, mean), 3.0 * se);
}

TEST(PluginVariance, IndependentPair) {
  auto g = Network::from_edges(2, {});
  Assignment a(2);
  a.R = {1, 1};
  a.D = {1, 0};
  EXPECT_NEAR(plugin_variance(direct_effect({0}), g, a, vm(1.0, 0.0, 0.0, 0.0)), 2.0, 1e-14);
}

TEST(PluginVariance, ConnectedPairTwoTerms) {
  std::vector<Edge> e{{0, 1}};
  auto g = Network::from_edges(2, e);
  std::vector<double> w{1.0, 1.0};
  std::vector<std::uint8_t> R{1, 1}, D{0, 0};
  // alpha 0.05 with sigma^2 = 1 gives eta = 0.05; n V = (1/n)(2 sigma^2 + 2 eta).
  const auto ex = exposures(g, D);
  const double v = plugin_variance(w, R, ex, vm(1.0, 0.0, 0.0, 0.05), build_rings(g, 1));
  EXPECT_NEAR(2.0 * v, 1.0 + 0.05, 1e-14);
}

TEST(PluginVariance, ZeroCorrelationIsIndependentFormula) {
  auto g = generate_er(40, 0.08, 17);
  auto s = overall_effect({1, 2});
  auto a = feasible_assignment(g, s, 18, 0.9);
  const auto model = vm(0.5, 0.5, 1.0, 0.0);
  auto w = compute_weights(s, g, a);
  double acc = 0.0;
  for (std::size_t i = 0; i < 40; ++i) acc += w[i] * w[i] * model.sigma2(exposure(g, a.D, static_cast<NodeId>(i)));
  const double n = static_cast<double>(a.participants());
  EXPECT_NEAR(plugin_variance(s, g, a, model), acc / (n * n), 1e-14);
}

TEST(PluginVariance, MatchesCovarianceQuadraticForm) {
  auto g = generate_er(30, 0.12, 19);
  auto s = overall_effect({1, 2});
  auto a = feasible_assignment(g, s, 20, 0.9);
  VarianceModel model = vm(0.5, 0.5, 1.0, 0.1);
  model.M = 2;
  model.alpha_by_distance = {0.1, 0.05};
  auto w = compute_weights(s, g, a);
  auto ids = a.participant_ids();
  auto cov = build_covariance(g, a.D, model, ids);
  Eigen::VectorXd wv(static_cast<Eigen::Index>(ids.size()));
  for (std::size_t k = 0; k < ids.size(); ++k) wv(static_cast<Eigen::Index>(k)) = w[static_cast<std::size_t>(ids[k])];
  const double n = static_cast<double>(ids.size());
  EXPECT_NEAR(plugin_variance(s, g, a, model), wv.dot(cov * wv) / (n * n), 1e-12);
}

TEST(PluginVariance, PermutationInvariant) {
  auto g = generate_er(30, 0.1, 21);
  auto s = overall_effect({1, 2});
  auto a = feasible_assignment(g, s, 22, 0.9);
  std::vector<NodeId> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), make_rng(23));
  std::vector<Edge> pe;
  for (auto [u, v] : g.edges()) pe.push_back({perm[static_cast<std::size_t>(u)], perm[static_cast<std::size_t>(v)]});
  auto h = Network::from_edges(30, pe);
  Assignment b(30);
  for (std::size_t i = 0; i < 30; ++i) {
    b.R[static_cast<std::size_t>(perm[i])] = a.R[i];
    b.D[static_cast<std::size_t>(perm[i])] = a.D[i];
  }
  const auto model = vm(0.5, 0.5, 1.0, 0.1);
  EXPECT_NEAR(plugin_variance(s, g, a, model), plugin_variance(s, h, b, model), 1e-13);
}

TEST(PluginVariance, MatchesMonteCarlo) {
  auto g = generate_er(30, 0.15, 24);
  auto s = direct_effect(common_levels(g), 1);
  auto a = feasible_assignment(g, s, 25, 0.9);
  const auto model = vm(0.5, 0.5, 1.0, 0.1);
  OutcomeSimulator sim(g, a.D, MeanSpec{}, model, a.participant_ids());
  const auto w = compute_weights(s, g, a);
  const double n = static_cast<double>(a.participants());
  Rng rng = make_rng(26);
  std::vector<double> t;
  for (int r = 0; r < 20000; ++r) {
    const auto y = sim.draw(rng).y;
    double acc = 0.0;
    for (std::size_t i = 0; i < 30; ++i)
      if (a.R[i]) acc += w[i] * y[i];
    t.push_back(acc / n);
  }
  const double v = plugin_variance(s, g, a, model);
  EXPECT_NEAR(sample_variance(t) / v, 1.0, 0.05);
}

TEST(Interval, NormalQuantileAndBounds) {
  EffectEstimate e;
  e.v_hat = 1.0;
  auto [lo, hi] = confidence_interval(e, 0.95);
  EXPECT_NEAR(lo, -1.959963984540054, 1e-12);
  EXPECT_NEAR(hi, 1.959963984540054, 1e-12);
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-13);
  EXPECT_NEAR(normal_quantile(0.001), -3.090232306167814, 1e-12);
  for (double p : {1e-8, 0.01, 0.3, 0.5, 0.77, 0.999}) EXPECT_NEAR(normal_cdf(normal_quantile(p)), p, 1e-13 + 1e-12 * p);
}

TEST(Interval, ZeroVarianceRejected) {
  EffectEstimate e;
  EXPECT_THROW(confidence_interval(e, 0.95), DegenerateVarianceError);
  e.v_hat = 1.0;
  EXPECT_THROW(confidence_interval(e, 1.0), ParameterError);
}
