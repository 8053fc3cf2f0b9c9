#pragma once

// Ground-truth outcome model under local, anonymous interference:
// mean m(d, s, l), variance sigma^2(l, d, s) and neighbor covariance eta,
// plus sampling of locally dependent Gaussian errors.

#include <Eigen/Dense>
#include <cmath>
#include <compare>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "eli/assignment.hpp"
#include "eli/errors.hpp"
#include "eli/graph.hpp"
#include "eli/rng.hpp"

namespace eli {

/// (own treatment d, treated-neighbor count s, unit statistic l).
struct Exposure {
  int d = 0;
  int s = 0;
  int l = 0;

  /// Share of treated neighbors, 0 for isolated nodes.
  double share() const { return l > 0 ? static_cast<double>(s) / l : 0.0; }
  auto operator<=>(const Exposure&) const = default;
};

inline Exposure exposure(const Network& net, std::span<const std::uint8_t> D, NodeId i) {
  Exposure e;
  e.d = D[static_cast<std::size_t>(i)];
  for (NodeId k : net.neighbors(i)) e.s += D[static_cast<std::size_t>(k)];
  e.l = net.degree(i);
  return e;
}

inline std::vector<Exposure> exposures(const Network& net, std::span<const std::uint8_t> D) {
  std::vector<Exposure> out(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) out[i] = exposure(net, D, static_cast<NodeId>(i));
  return out;
}

/// Y mean = gamma1 * D_i + gamma2 * (treated share of neighbors).
struct MeanSpec {
  double gamma1 = 0.5;
  double gamma2 = 1.0;
  double operator()(const Exposure& e) const { return gamma1 * e.d + gamma2 * e.share(); }
};

/// sigma^2(l,d,s) = mu + beta1 d + beta2 s / max(l,1);
/// eta_u(e, e') = alpha_u * sqrt(sigma^2(e) sigma^2(e')) for ring distance u <= M.
struct VarianceModel {
  double mu = 0.5;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double alpha = 0.1;
  int M = 1;
  std::vector<double> alpha_by_distance;  // alpha_u for u = 1..M; empty means alpha for every u
  // Nonparametric cell table; when non-empty it overrides the parametric form
  // for listed exposures (unlisted exposures fall back to the parametric form).
  std::map<Exposure, double> cell_variance;

  double sigma2(const Exposure& e) const {
    if (!cell_variance.empty()) {
      if (auto it = cell_variance.find(e); it != cell_variance.end()) return it->second;
    }
    return mu + beta1 * e.d + beta2 * e.share();
  }

  double alpha_at(int u) const {
    if (u < 1 || u > M) return 0.0;
    if (alpha_by_distance.empty()) return alpha;
    return alpha_by_distance[static_cast<std::size_t>(u - 1)];
  }

  /// Covariance between units with exposures a and b at ring distance u.
  double eta(const Exposure& a, const Exposure& b, int u = 1) const {
    const double al = alpha_at(u);
    if (al == 0.0) return 0.0;
    return al * std::sqrt(std::max(0.0, sigma2(a)) * std::max(0.0, sigma2(b)));
  }

  void validate() const {
    if (M < 1) throw ParameterError("variance model: M must be >= 1");
    if (!alpha_by_distance.empty() && alpha_by_distance.size() != static_cast<std::size_t>(M))
      throw ParameterError("variance model: alpha_by_distance must have M entries");
    auto check = [](double a) {
      if (!(a >= -1.0 && a <= 1.0)) throw ParameterError("variance model: alpha must lie in [-1,1]");
    };
    check(alpha);
    for (double a : alpha_by_distance) check(a);
  }
};

inline double checked_sigma2(const VarianceModel& model, const Exposure& e) {
  const double v = model.sigma2(e);
  if (!(v >= 0.0))
    throw ModelDomainError("negative variance " + std::to_string(v) + " at exposure (d=" + std::to_string(e.d) +
                           ", s=" + std::to_string(e.s) + ", l=" + std::to_string(e.l) + ")");
  return v;
}

/// Covariance of the errors of `units` (in the given order) under treatment vector D.
inline Eigen::MatrixXd build_covariance(const Network& net, std::span<const std::uint8_t> D, const VarianceModel& model,
                                        std::span<const NodeId> units, const NeighborhoodIndex& rings) {
  model.validate();
  if (rings.order() < model.M) throw ParameterError("build_covariance: ring index order is below the model's M");
  const std::size_t k = units.size();
  std::vector<Exposure> ex(k);
  std::vector<double> var(k);
  std::vector<std::ptrdiff_t> pos(net.size(), -1);
  for (std::size_t a = 0; a < k; ++a) {
    ex[a] = exposure(net, D, units[a]);
    var[a] = checked_sigma2(model, ex[a]);
    pos[static_cast<std::size_t>(units[a])] = static_cast<std::ptrdiff_t>(a);
  }
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t a = 0; a < k; ++a) {
    cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)) = var[a];
    for (int u = 1; u <= model.M; ++u) {
      const double al = model.alpha_at(u);
      if (al == 0.0) continue;
      for (NodeId j : rings.ring(units[a], u)) {
        const std::ptrdiff_t b = pos[static_cast<std::size_t>(j)];
        if (b < 0) continue;
        cov(static_cast<Eigen::Index>(a), b) = al * std::sqrt(var[a] * var[static_cast<std::size_t>(b)]);
      }
    }
  }
  return cov;
}

inline Eigen::MatrixXd build_covariance(const Network& net, std::span<const std::uint8_t> D, const VarianceModel& model,
                                        std::span<const NodeId> units) {
  return build_covariance(net, D, model, units, build_rings(net, model.M));
}

/// Draws N(0, cov). Uses a Cholesky factor when possible; otherwise an
/// eigen-decomposition with negative eigenvalues truncated to zero. A
/// truncation larger than 10% of the spectral radius is a ModelDomainError.
class GaussianSampler {
 public:
  static constexpr double kMaxRepairFraction = 0.10;

  explicit GaussianSampler(const Eigen::MatrixXd& cov) {
    if (cov.rows() == 0) return;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) {
      factor_ = llt.matrixL();
      return;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    Eigen::VectorXd ev = es.eigenvalues();
    const double radius = ev.cwiseAbs().maxCoeff();
    const double most_negative = std::min(0.0, ev.minCoeff());
    if (-most_negative > kMaxRepairFraction * radius)
      throw ModelDomainError("covariance is not positive semi-definite: eigenvalue " + std::to_string(most_negative) +
                             " exceeds the repair tolerance");
    repaired_ = most_negative < 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = std::sqrt(std::max(0.0, ev(i)));
    factor_ = es.eigenvectors() * ev.asDiagonal();
  }

  Eigen::VectorXd draw(Rng& rng) const {
    Eigen::VectorXd z(factor_.cols());
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = nd(rng);
    return factor_ * z;
  }

  bool repaired() const { return repaired_; }
  Eigen::Index dimension() const { return factor_.rows(); }

 private:
  Eigen::MatrixXd factor_;
  bool repaired_ = false;
};

struct OutcomeDraw {
  std::vector<NodeId> units;    // simulated units, in order
  std::vector<double> y;        // length N; NaN for nodes that were not simulated
  std::vector<double> epsilon;  // aligned with `units`
  bool psd_repair_flag = false;
};

/// Caches the covariance factor for a fixed (network, treatments, units) so
/// that Monte-Carlo loops only pay for the matrix-vector product per draw.
class OutcomeSimulator {
 public:
  OutcomeSimulator(const Network& net, std::span<const std::uint8_t> D, const MeanSpec& mean, const VarianceModel& model,
                   std::vector<NodeId> units, const NeighborhoodIndex& rings)
      : n_(net.size()), units_(std::move(units)), sampler_(build_covariance(net, D, model, units_, rings)) {
    means_.resize(units_.size());
    for (std::size_t a = 0; a < units_.size(); ++a) means_[a] = mean(exposure(net, D, units_[a]));
  }

  OutcomeSimulator(const Network& net, std::span<const std::uint8_t> D, const MeanSpec& mean, const VarianceModel& model,
                   std::vector<NodeId> units)
      : OutcomeSimulator(net, D, mean, model, std::move(units), build_rings(net, model.M)) {}

  OutcomeDraw draw(std::uint64_t seed) const {
    Rng rng = make_rng(seed);
    return draw(rng);
  }

  OutcomeDraw draw(Rng& rng) const {
    OutcomeDraw out;
    out.units = units_;
    out.y.assign(n_, std::numeric_limits<double>::quiet_NaN());
    out.epsilon.resize(units_.size());
    out.psd_repair_flag = sampler_.repaired();
    if (units_.empty()) return out;
    const Eigen::VectorXd eps = sampler_.draw(rng);
    for (std::size_t a = 0; a < units_.size(); ++a) {
      out.epsilon[a] = eps(static_cast<Eigen::Index>(a));
      out.y[static_cast<std::size_t>(units_[a])] = means_[a] + out.epsilon[a];
    }
    return out;
  }

  const std::vector<NodeId>& units() const { return units_; }
  bool psd_repaired() const { return sampler_.repaired(); }

 private:
  std::size_t n_;
  std::vector<NodeId> units_;
  std::vector<double> means_;
  GaussianSampler sampler_;
};

inline std::vector<NodeId> all_nodes(const Network& net) {
  std::vector<NodeId> v(net.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<NodeId>(i);
  return v;
}

/// One outcome draw for `units` (all nodes by default) under treatments D.
inline OutcomeDraw simulate_outcomes(const Network& net, std::span<const std::uint8_t> D, const MeanSpec& mean,
                                     const VarianceModel& model, std::uint64_t seed,
                                     std::vector<NodeId> units = {}) {
  if (units.empty()) units = all_nodes(net);
  return OutcomeSimulator(net, D, mean, model, std::move(units)).draw(seed);
}

inline OutcomeDraw simulate_outcomes(const Network& net, const Assignment& a, const MeanSpec& mean,
                                     const VarianceModel& model, std::uint64_t seed) {
  return simulate_outcomes(net, a.D, mean, model, seed);
}

}  // namespace eli
