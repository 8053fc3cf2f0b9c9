#pragma once

// Weight schemes, point estimators tau_hat = (1/n) sum w_i Y_i, the
// conditional estimand tau_n(w), the plug-in variance and normal intervals.

#include <Eigen/Dense>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "eli/assignment.hpp"
#include "eli/errors.hpp"
#include "eli/graph.hpp"
#include "eli/outcome.hpp"

namespace eli {

/// Exposure cell (D_i = d, sum_k D_k = s) at a level theta_i = l.
/// With `all_neighbors` the treated-neighbor count is l itself.
struct CellSpec {
  int d = 1;
  int s = 0;
  bool all_neighbors = false;

  int target_s(int level) const { return all_neighbors ? level : s; }
  friend bool operator==(const CellSpec&, const CellSpec&) = default;
};

struct LevelWeight {
  int level = 0;
  double v = 1.0;
  friend bool operator==(const LevelWeight&, const LevelWeight&) = default;
};

/// sum_l v(l) [gamma_i(treated, l) - gamma_i(control, l)].
struct DiffMeans {
  CellSpec treated;
  CellSpec control;
  std::vector<LevelWeight> levels;
};

enum class Feature { One, D, S, DS, DT, Share, DShare, T };

/// OLS weights (1/n sum X X')^{-1} X_i, reporting coefficient `coefficient`.
struct LinearModel {
  std::vector<Feature> features;
  std::size_t coefficient = 1;
};

struct WeightScheme {
  std::string id;
  std::variant<DiffMeans, LinearModel> kind;

  bool is_diff_means() const { return std::holds_alternative<DiffMeans>(kind); }
};

// Named estimands with theta_i = |N_i|.

inline std::vector<LevelWeight> equal_levels(const std::vector<int>& levels) {
  std::vector<LevelWeight> out;
  for (int l : levels) out.push_back({l, 1.0 / static_cast<double>(levels.size())});
  return out;
}

/// tau(1, l, 0, 0, l): everybody treated versus nobody treated.
inline WeightScheme overall_effect(const std::vector<int>& levels, std::string id = "overall") {
  return {std::move(id), DiffMeans{{1, 0, true}, {0, 0, false}, equal_levels(levels)}};
}

/// tau(1, s, 0, s, l).
inline WeightScheme direct_effect(const std::vector<int>& levels, int s = 0, std::string id = "direct") {
  return {std::move(id), DiffMeans{{1, s, false}, {0, s, false}, equal_levels(levels)}};
}

/// tau(0, s, 0, s - 1, l).
inline WeightScheme spillover_effect(const std::vector<int>& levels, int s = 1, std::string id = "spillover") {
  return {std::move(id), DiffMeans{{0, s, false}, {0, s - 1, false}, equal_levels(levels)}};
}

// ---------------------------------------------------------------------------

enum class WeightStatus { Ok, EmptyCell, IllPosed, NoParticipants };

struct WeightResult {
  WeightStatus status = WeightStatus::Ok;
  std::vector<double> w;  // length N, zero for non-participants
  std::size_t n = 0;      // participants
  std::string message;

  bool ok() const { return status == WeightStatus::Ok; }
};

inline double feature_value(Feature f, const Exposure& e, int extra) {
  switch (f) {
    case Feature::One: return 1.0;
    case Feature::D: return e.d;
    case Feature::S: return e.s;
    case Feature::DS: return static_cast<double>(e.d) * e.s;
    case Feature::DT: return static_cast<double>(e.d) * extra;
    case Feature::Share: return e.share();
    case Feature::DShare: return e.d * e.share();
    case Feature::T: return extra;
  }
  return 0.0;
}

inline constexpr double kMaxGramCondition = 1e8;

/// Weights from precomputed exposures; never throws on data problems, so the
/// design search can score infeasible assignments.
inline WeightResult weights_from_exposures(const WeightScheme& scheme, std::span<const Exposure> ex,
                                           std::span<const std::uint8_t> R, const UnitStats* stats = nullptr) {
  WeightResult out;
  const std::size_t N = ex.size();
  out.w.assign(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) out.n += R[i];
  if (out.n == 0) {
    out.status = WeightStatus::NoParticipants;
    out.message = "no participants";
    return out;
  }
  const double n = static_cast<double>(out.n);

  if (const auto* dm = std::get_if<DiffMeans>(&scheme.kind)) {
    for (const auto& lw : dm->levels) {
      const int s1 = dm->treated.target_s(lw.level);
      const int s0 = dm->control.target_s(lw.level);
      std::size_t n1 = 0, n0 = 0;
      for (std::size_t i = 0; i < N; ++i) {
        if (!R[i] || ex[i].l != lw.level) continue;
        if (ex[i].d == dm->treated.d && ex[i].s == s1) ++n1;
        else if (ex[i].d == dm->control.d && ex[i].s == s0) ++n0;
      }
      if (n1 == 0 || n0 == 0) {
        out.status = WeightStatus::EmptyCell;
        out.message = "empty exposure cell at level " + std::to_string(lw.level) + " (" +
                      (n1 == 0 ? "treated" : "control") + " cell)";
        return out;
      }
      const double g1 = lw.v * n / static_cast<double>(n1);
      const double g0 = lw.v * n / static_cast<double>(n0);
      for (std::size_t i = 0; i < N; ++i) {
        if (!R[i] || ex[i].l != lw.level) continue;
        if (ex[i].d == dm->treated.d && ex[i].s == s1) out.w[i] += g1;
        else if (ex[i].d == dm->control.d && ex[i].s == s0) out.w[i] -= g0;
      }
    }
    return out;
  }

  const auto& lm = std::get<LinearModel>(scheme.kind);
  const auto k = static_cast<Eigen::Index>(lm.features.size());
  if (lm.coefficient >= lm.features.size()) {
    out.status = WeightStatus::IllPosed;
    out.message = "coefficient index outside the feature map";
    return out;
  }
  auto extra = [&](std::size_t i) { return stats ? stats->extra(static_cast<NodeId>(i)) : ex[i].l; };
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd x(k);
  for (std::size_t i = 0; i < N; ++i) {
    if (!R[i]) continue;
    for (Eigen::Index c = 0; c < k; ++c) x(c) = feature_value(lm.features[static_cast<std::size_t>(c)], ex[i], extra(i));
    gram.noalias() += x * x.transpose();
  }
  gram /= n;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram);
  const auto& sv = svd.singularValues();
  if (sv(k - 1) <= 0.0 || sv(0) / sv(k - 1) > kMaxGramCondition) {
    out.status = WeightStatus::IllPosed;
    out.message = "Gram matrix is singular or badly conditioned";
    return out;
  }
  Eigen::VectorXd row = gram.ldlt().solve(Eigen::VectorXd::Unit(k, static_cast<Eigen::Index>(lm.coefficient)));
  for (std::size_t i = 0; i < N; ++i) {
    if (!R[i]) continue;
    for (Eigen::Index c = 0; c < k; ++c) x(c) = feature_value(lm.features[static_cast<std::size_t>(c)], ex[i], extra(i));
    out.w[i] = row.dot(x);
  }
  return out;
}

inline void throw_if_failed(const WeightResult& r, const WeightScheme& scheme) {
  switch (r.status) {
    case WeightStatus::Ok: return;
    case WeightStatus::EmptyCell:
    case WeightStatus::NoParticipants:
      throw InfeasibleWeightsError("scheme '" + scheme.id + "': " + r.message);
    case WeightStatus::IllPosed: throw IllPosedError("scheme '" + scheme.id + "': " + r.message);
  }
}

/// Per-node weights (zero for non-participants). Throws InfeasibleWeightsError
/// when a required exposure cell is empty and IllPosedError for a singular Gram.
inline std::vector<double> compute_weights(const WeightScheme& scheme, const Network& net, const Assignment& a,
                                           const UnitStats* stats = nullptr) {
  const auto ex = exposures(net, a.D);
  auto r = weights_from_exposures(scheme, ex, a.R, stats);
  throw_if_failed(r, scheme);
  return std::move(r.w);
}

// ---------------------------------------------------------------------------
// Variance

/// V_hat from n V_hat = (1/n) sum_i w_i^2 sigma^2_i
///                    + (1/n) sum_i sum_{u<=M} sum_{j in N_i^u} R_j w_i w_j eta_u(i, j).
inline double plugin_variance(std::span<const double> w, std::span<const std::uint8_t> R, std::span<const Exposure> ex,
                              const VarianceModel& model, const NeighborhoodIndex& rings) {
  std::size_t n = 0;
  for (auto r : R) n += r;
  if (n == 0) return 0.0;
  const int M = std::min(model.M, rings.order());
  double diag = 0.0;
  double cross = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!R[i] || w[i] == 0.0) continue;
    const double si = checked_sigma2(model, ex[i]);
    diag += w[i] * w[i] * si;
    for (int u = 1; u <= M; ++u) {
      const double al = model.alpha_at(u);
      if (al == 0.0) continue;
      for (NodeId j : rings.ring(static_cast<NodeId>(i), u)) {
        const auto ju = static_cast<std::size_t>(j);
        if (!R[ju] || w[ju] == 0.0) continue;
        cross += w[i] * w[ju] * al * std::sqrt(si * checked_sigma2(model, ex[ju]));
      }
    }
  }
  const double nd = static_cast<double>(n);
  return (diag + cross) / (nd * nd);
}

inline double plugin_variance(const WeightScheme& scheme, const Network& net, const Assignment& a,
                              const VarianceModel& model, const NeighborhoodIndex& rings,
                              const UnitStats* stats = nullptr) {
  const auto ex = exposures(net, a.D);
  auto r = weights_from_exposures(scheme, ex, a.R, stats);
  throw_if_failed(r, scheme);
  return plugin_variance(r.w, a.R, ex, model, rings);
}

inline double plugin_variance(const WeightScheme& scheme, const Network& net, const Assignment& a,
                              const VarianceModel& model) {
  return plugin_variance(scheme, net, a, model, build_rings(net, model.M));
}

// ---------------------------------------------------------------------------
// Point estimates and intervals

/// Standard normal quantile: Acklam's rational approximation refined by one
/// Halley step on erfc, good to about 1e-15 in double precision.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("normal_quantile: p must lie in (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2 * std::numbers::pi) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

struct EffectEstimate {
  std::string scheme_id;
  double tau_hat = 0.0;
  double v_hat = 0.0;  // variance of tau_hat
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_used = 0;
};

/// tau_hat = (1/n) sum_{R_i = 1} w_i Y_i. The variance fields are left at zero.
inline EffectEstimate estimate_effect(const WeightScheme& scheme, const Network& net, const Assignment& a,
                                      std::span<const double> y, const UnitStats* stats = nullptr) {
  const auto w = compute_weights(scheme, net, a, stats);
  EffectEstimate est;
  est.scheme_id = scheme.id;
  est.n_used = a.participants();
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (a.R[i] && w[i] != 0.0) {
      if (std::isnan(y[i])) throw ParameterError("missing outcome for participant " + std::to_string(i));
      acc += w[i] * y[i];
    }
  est.tau_hat = acc / static_cast<double>(est.n_used);
  est.ci_low = est.ci_high = est.tau_hat;
  return est;
}

/// tau_n(w) = (1/n) sum_{R_i = 1} w_i m(exposure_i).
inline double conditional_estimand(const WeightScheme& scheme, const Network& net, const Assignment& a,
                                   const MeanSpec& mean, const UnitStats* stats = nullptr) {
  const auto w = compute_weights(scheme, net, a, stats);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (a.R[i]) acc += w[i] * mean(exposure(net, a.D, static_cast<NodeId>(i)));
  return acc / static_cast<double>(a.participants());
}

/// tau_hat -/+ z_{1-a/2} sqrt(v_hat).
inline std::pair<double, double> confidence_interval(const EffectEstimate& est, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ParameterError("confidence level must lie in (0,1)");
  if (!(est.v_hat > 0.0)) throw DegenerateVarianceError("confidence interval needs a positive variance");
  const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  const double half = z * std::sqrt(est.v_hat);
  return {est.tau_hat - half, est.tau_hat + half};
}

inline EffectEstimate with_variance(EffectEstimate est, double v_hat, double level) {
  est.v_hat = v_hat;
  std::tie(est.ci_low, est.ci_high) = confidence_interval(est, level);
  return est;
}

inline void write_estimates_csv(std::ostream& out, std::span<const EffectEstimate> rows) {
  out << "scheme_id,tau_hat,v_hat,ci_low,ci_high,n_used\n";
  out << std::setprecision(10);
  for (const auto& r : rows)
    out << r.scheme_id << ',' << r.tau_hat << ',' << r.v_hat << ',' << r.ci_low << ',' << r.ci_high << ','
        << r.n_used << '\n';
}

}  // namespace eli
