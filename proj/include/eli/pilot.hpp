#pragma once

// First-wave experiment: choose the pilot set by a constrained min-cut
// program, randomize pilot treatments, fit the variance/covariance functions
// from pilot outcomes and produce the exclusion set J.

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eli/assignment.hpp"
#include "eli/errors.hpp"
#include "eli/graph.hpp"
#include "eli/outcome.hpp"
#include "eli/rng.hpp"

namespace eli {

struct PilotPlan {
  int M = 1;
  std::vector<NodeId> pilot_set;            // sorted
  std::vector<std::uint8_t> in_pilot;       // length N
  std::vector<std::uint8_t> in_exclusion;   // J = I plus rings up to M around I
  std::vector<std::uint8_t> treatment_fixed;  // I plus first-degree neighbors of I
  std::vector<std::uint8_t> pilot_treatments;  // D over treatment_fixed, 0 elsewhere
  long cut_value = 0;     // sum_i sum_{j in N_i} x_i (1 - x_j)
  long within_edges = 0;  // sum_i x_i sum_{j in N_i} x_j (each internal edge counted twice)

  std::size_t size() const { return pilot_set.size(); }
  std::size_t exclusion_size() const {
    return static_cast<std::size_t>(std::count(in_exclusion.begin(), in_exclusion.end(), 1));
  }
};

struct PilotObjective {
  long cut = 0;
  long within = 0;
};

inline PilotObjective pilot_objective(const Network& net, std::span<const std::uint8_t> x) {
  PilotObjective o;
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (!x[i]) continue;
    for (NodeId j : net.neighbors(static_cast<NodeId>(i))) {
      if (x[static_cast<std::size_t>(j)]) ++o.within;
      else ++o.cut;
    }
  }
  return o;
}

/// Builds the plan (exclusion set, cut and within counts) for a given pilot set.
inline PilotPlan make_pilot_plan(const Network& net, std::vector<NodeId> pilot, int M) {
  if (M < 1) throw ParameterError("pilot plan: M must be >= 1");
  const std::size_t N = net.size();
  PilotPlan plan;
  plan.M = M;
  std::sort(pilot.begin(), pilot.end());
  pilot.erase(std::unique(pilot.begin(), pilot.end()), pilot.end());
  plan.pilot_set = std::move(pilot);
  plan.in_pilot.assign(N, 0);
  plan.in_exclusion.assign(N, 0);
  plan.treatment_fixed.assign(N, 0);
  plan.pilot_treatments.assign(N, 0);
  for (NodeId i : plan.pilot_set) {
    if (i < 0 || static_cast<std::size_t>(i) >= N) throw ParameterError("pilot node out of range");
    plan.in_pilot[static_cast<std::size_t>(i)] = 1;
  }
  const NeighborhoodIndex rings(net, M);
  for (NodeId i : plan.pilot_set) {
    plan.in_exclusion[static_cast<std::size_t>(i)] = 1;
    plan.treatment_fixed[static_cast<std::size_t>(i)] = 1;
    for (int u = 1; u <= M; ++u)
      for (NodeId j : rings.ring(i, u)) plan.in_exclusion[static_cast<std::size_t>(j)] = 1;
    for (NodeId j : net.neighbors(i)) plan.treatment_fixed[static_cast<std::size_t>(j)] = 1;
  }
  const auto obj = pilot_objective(net, plan.in_pilot);
  plan.cut_value = obj.cut;
  plan.within_edges = obj.within;
  return plan;
}

/// A plan with no pilot at all (designs without a first wave).
inline PilotPlan empty_pilot_plan(const Network& net, int M = 1) { return make_pilot_plan(net, {}, M); }

/// ceil((n / max_degree)^(2/3)), at least 1.
inline std::size_t default_pilot_size(std::size_t n, int max_degree) {
  const double ratio = static_cast<double>(n) / std::max(1, max_degree);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::pow(ratio, 2.0 / 3.0) - 1e-12)));
}

inline long default_within_floor(std::size_t m) { return static_cast<long>((m + 3) / 4); }

struct PilotSolverConfig {
  enum class Backend { Auto, Exhaustive, Heuristic };
  Backend backend = Backend::Auto;
  int restarts = 8;
  int iterations = 0;  // annealing steps per restart; 0 = 50 * N
  std::uint64_t seed = 0;
};

namespace detail {

struct PilotScore {
  long violation = 0;
  long cut = 0;
  bool operator<(const PilotScore& o) const { return violation != o.violation ? violation < o.violation : cut < o.cut; }
  bool operator==(const PilotScore& o) const = default;
};

/// Lexicographic order of indicator vectors (x_0, x_1, ...), 0 < 1.
inline bool lex_less(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return a[i] < b[i];
  return false;
}

class PilotState {
 public:
  PilotState(const Network& net, long m_min, long m_max, long delta)
      : net_(&net), m_min_(m_min), m_max_(m_max), delta_(delta), x_(net.size(), 0), inside_(net.size(), 0) {}

  void add(NodeId v) {
    x_[idx(v)] = 1;
    ++size_;
    cut_ += net_->degree(v) - 2L * inside_[idx(v)];
    within_ += 2L * inside_[idx(v)];
    for (NodeId w : net_->neighbors(v)) ++inside_[idx(w)];
  }
  void remove(NodeId v) {
    x_[idx(v)] = 0;
    --size_;
    cut_ -= net_->degree(v) - 2L * inside_[idx(v)];
    within_ -= 2L * inside_[idx(v)];
    for (NodeId w : net_->neighbors(v)) --inside_[idx(w)];
  }

  PilotScore score() const { return score_of(size_, within_, cut_); }
  PilotScore score_of(long size, long within, long cut) const {
    long v = 0;
    if (size < m_min_) v += m_min_ - size;
    if (size > m_max_) v += size - m_max_;
    if (within < delta_) v += delta_ - within;
    return {v, cut};
  }
  /// Score after adding v, without mutating.
  PilotScore score_add(NodeId v) const {
    const long in = inside_[idx(v)];
    return score_of(size_ + 1, within_ + 2 * in, cut_ + net_->degree(v) - 2 * in);
  }
  PilotScore score_remove(NodeId v) const {
    const long in = inside_[idx(v)];
    return score_of(size_ - 1, within_ - 2 * in, cut_ - net_->degree(v) + 2 * in);
  }
  /// Score after removing `out` and adding `in`.
  PilotScore score_swap(NodeId out, NodeId in) const {
    const long adj = net_->has_edge(out, in) ? 1 : 0;
    const long in_out = inside_[idx(out)];
    const long in_in = inside_[idx(in)] - adj;
    const long within = within_ - 2 * in_out + 2 * in_in;
    const long cut = cut_ - (net_->degree(out) - 2 * in_out) + (net_->degree(in) - 2 * in_in);
    return score_of(size_, within, cut);
  }

  bool contains(NodeId v) const { return x_[idx(v)] != 0; }
  long size() const { return size_; }
  long inside(NodeId v) const { return inside_[idx(v)]; }
  const std::vector<std::uint8_t>& indicator() const { return x_; }
  long within() const { return within_; }
  long cut() const { return cut_; }

 private:
  static std::size_t idx(NodeId v) { return static_cast<std::size_t>(v); }
  const Network* net_;
  long m_min_, m_max_, delta_;
  std::vector<std::uint8_t> x_;
  std::vector<long> inside_;
  long size_ = 0, cut_ = 0, within_ = 0;
};

/// First-improvement descent over add / remove / swap moves.
inline void pilot_local_search(PilotState& st, const Network& net) {
  const auto N = static_cast<NodeId>(net.size());
  bool improved = true;
  while (improved) {
    improved = false;
    PilotScore cur = st.score();
    for (NodeId v = 0; v < N && !improved; ++v) {
      PilotScore s = st.contains(v) ? st.score_remove(v) : st.score_add(v);
      if (s < cur) {
        if (st.contains(v)) st.remove(v);
        else st.add(v);
        improved = true;
      }
    }
    for (NodeId out = 0; out < N && !improved; ++out) {
      if (!st.contains(out)) continue;
      for (NodeId in = 0; in < N; ++in) {
        if (st.contains(in)) continue;
        if (st.score_swap(out, in) < cur) {
          st.remove(out);
          st.add(in);
          improved = true;
          break;
        }
      }
    }
  }
}

struct PilotBest {
  PilotScore score{1L << 40, 0};
  std::vector<std::uint8_t> x;

  void offer(const PilotState& st) {
    const PilotScore s = st.score();
    if (x.empty() || s < score || (s == score && lex_less(st.indicator(), x))) {
      score = s;
      x = st.indicator();
    }
  }
};

inline std::vector<std::uint8_t> pilot_exhaustive(const Network& net, long m_min, long m_max, long delta,
                                                  PilotScore& best_score) {
  const std::size_t N = net.size();
  if (N > 24) throw ParameterError("exhaustive pilot search is limited to 24 nodes");
  std::vector<std::uint32_t> adj(N, 0);
  for (std::size_t i = 0; i < N; ++i)
    for (NodeId j : net.neighbors(static_cast<NodeId>(i))) adj[i] |= 1u << j;
  auto lex_less_mask = [](std::uint32_t a, std::uint32_t b) {
    const std::uint32_t diff = a ^ b;
    if (!diff) return false;
    const std::uint32_t low = diff & (~diff + 1);
    return (a & low) == 0;
  };
  bool found = false;
  std::uint32_t best = 0;
  long best_cut = 0;
  const std::uint32_t limit = N == 32 ? 0xFFFFFFFFu : ((1u << N) - 1);
  for (std::uint64_t m64 = 0; m64 <= limit; ++m64) {
    const auto mask = static_cast<std::uint32_t>(m64);
    const long size = std::popcount(mask);
    if (size < m_min || size > m_max) continue;
    long within = 0, cut = 0;
    for (std::uint32_t rest = mask; rest; rest &= rest - 1) {
      const int i = std::countr_zero(rest);
      within += std::popcount(adj[static_cast<std::size_t>(i)] & mask);
      cut += std::popcount(adj[static_cast<std::size_t>(i)] & ~mask);
    }
    if (within < delta) continue;
    if (!found || cut < best_cut || (cut == best_cut && lex_less_mask(mask, best))) {
      found = true;
      best = mask;
      best_cut = cut;
    }
  }
  if (!found) return {};
  best_score = {0, best_cut};
  std::vector<std::uint8_t> x(N, 0);
  for (std::size_t i = 0; i < N; ++i) x[i] = (best >> i) & 1u;
  return x;
}

}  // namespace detail

/// Minimizes sum_i sum_{j in N_i} x_i (1 - x_j) subject to
/// sum_i x_i in [m_min, m_max] and sum_i x_i sum_{j in N_i} x_j >= delta.
inline PilotPlan select_pilot(const Network& net, long m_min, long m_max, long delta, int M,
                              const PilotSolverConfig& cfg = {}) {
  const auto N = static_cast<long>(net.size());
  if (m_min < 0 || m_max < m_min) throw ParameterError("select_pilot: need 0 <= m_min <= m_max");
  if (delta < 0) throw ParameterError("select_pilot: delta must be >= 0");
  if (m_min > N) throw InfeasibleError("select_pilot: size lower bound exceeds the number of nodes");
  const long m_hi = std::min(m_max, N);
  if (m_hi * (m_hi - 1) < delta)
    throw InfeasibleError("select_pilot: within-pilot floor delta=" + std::to_string(delta) +
                          " cannot be met by " + std::to_string(m_hi) + " nodes");

  const bool exhaustive = cfg.backend == PilotSolverConfig::Backend::Exhaustive ||
                          (cfg.backend == PilotSolverConfig::Backend::Auto && N <= 20);
  std::vector<std::uint8_t> best_x;
  detail::PilotScore best_score{1L << 40, 0};

  if (exhaustive) {
    best_x = detail::pilot_exhaustive(net, m_min, m_max, delta, best_score);
    if (best_x.empty())
      throw InfeasibleError("select_pilot: no subset with size in [" + std::to_string(m_min) + "," +
                            std::to_string(m_max) + "] reaches within-pilot floor delta=" + std::to_string(delta));
  } else {
    detail::PilotBest best;
    // Greedy seeds: grow from every start node by the cheapest addition.
    for (NodeId start = 0; start < N; ++start) {
      detail::PilotState st(net, m_min, m_max, delta);
      st.add(start);
      while (st.size() < m_hi && (st.size() < m_min || st.within() < delta)) {
        NodeId pick = -1;
        detail::PilotScore pick_score{};
        for (NodeId v = 0; v < N; ++v) {
          if (st.contains(v)) continue;
          const auto s = st.score_add(v);
          if (pick < 0 || s < pick_score) pick = v, pick_score = s;
        }
        if (pick < 0) break;
        st.add(pick);
      }
      detail::pilot_local_search(st, net);
      best.offer(st);
    }
    // Annealing restarts over add / remove / swap moves on a penalized energy.
    const long penalty = 2L * net.max_degree() + 2;
    const int iters = cfg.iterations > 0 ? cfg.iterations : static_cast<int>(50 * N);
    for (int r = 0; r < cfg.restarts; ++r) {
      Rng rng = make_rng(derive_seed(cfg.seed, stream::kPilotSelect, static_cast<std::uint64_t>(r)));
      detail::PilotState st(net, m_min, m_max, delta);
      std::vector<NodeId> order(static_cast<std::size_t>(N));
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      const long init = m_min + static_cast<long>(uniform01(rng) * static_cast<double>(m_hi - m_min + 1));
      for (long k = 0; k < std::min(init, m_hi); ++k) st.add(order[static_cast<std::size_t>(k)]);
      auto energy = [&](const detail::PilotScore& s) { return static_cast<double>(s.cut + penalty * s.violation); };
      double temp = std::max(1.0, 0.5 * net.max_degree());
      const int epoch = std::max(1, iters / 1000);
      std::uniform_int_distribution<NodeId> pick(0, static_cast<NodeId>(N - 1));
      for (int it = 0; it < iters; ++it) {
        if (it % epoch == 0 && it > 0) temp *= 0.995;
        const double e0 = energy(st.score());
        const NodeId a = pick(rng);
        if (uniform01(rng) < 0.5) {
          const auto s = st.contains(a) ? st.score_remove(a) : st.score_add(a);
          const double de = energy(s) - e0;
          if (de <= 0 || uniform01(rng) < std::exp(-de / temp)) {
            if (st.contains(a)) st.remove(a);
            else st.add(a);
          }
        } else {
          const NodeId b = pick(rng);
          if (st.contains(a) == st.contains(b)) continue;
          const NodeId out = st.contains(a) ? a : b;
          const NodeId in = st.contains(a) ? b : a;
          const double de = energy(st.score_swap(out, in)) - e0;
          if (de <= 0 || uniform01(rng) < std::exp(-de / temp)) {
            st.remove(out);
            st.add(in);
          }
        }
        if (st.score().violation == 0) best.offer(st);
      }
      detail::pilot_local_search(st, net);
      best.offer(st);
    }
    best_x = best.x;
    best_score = best.score;
    if (best_score.violation > 0) {
      detail::PilotState st(net, m_min, m_max, delta);
      for (NodeId v = 0; v < N; ++v)
        if (best_x[static_cast<std::size_t>(v)]) st.add(v);
      const std::string binding = st.within() < delta ? "within-pilot floor delta=" + std::to_string(delta)
                                                      : "pilot size range [" + std::to_string(m_min) + "," +
                                                            std::to_string(m_max) + "]";
      throw InfeasibleError("select_pilot: no feasible pilot found; binding constraint: " + binding);
    }
  }

  std::vector<NodeId> pilot;
  for (NodeId v = 0; v < N; ++v)
    if (best_x[static_cast<std::size_t>(v)]) pilot.push_back(v);
  PilotPlan plan = make_pilot_plan(net, std::move(pilot), M);
  if (plan.cut_value != best_score.cut) throw std::logic_error("select_pilot: cut recount mismatch");
  return plan;
}

/// i.i.d. Bernoulli(p) treatments over the pilot and its neighbors, stored in the plan.
inline std::vector<std::uint8_t> randomize_pilot_treatments(PilotPlan& plan, double p_treat, std::uint64_t seed) {
  if (!(p_treat >= 0.0 && p_treat <= 1.0)) throw ParameterError("pilot treatment probability must lie in [0,1]");
  Rng rng = make_rng(derive_seed(seed, stream::kPilotTreat));
  for (std::size_t i = 0; i < plan.treatment_fixed.size(); ++i)
    plan.pilot_treatments[i] = plan.treatment_fixed[i] ? static_cast<std::uint8_t>(bernoulli(rng, p_treat)) : 0;
  return plan.pilot_treatments;
}

// ---------------------------------------------------------------------------
// Variance-model fit

enum class VarianceFamily { Parametric, CellMeans };

struct FitDiagnostics {
  std::size_t units = 0;
  std::size_t pilot_edges = 0;
  std::vector<double> mean_coefficients;  // (intercept, d, share)
  double mean_rss = 0.0;
  double variance_rss = 0.0;
  double alpha_raw = 0.0;
  bool variance_pooled = false;  // slopes not fitted, too few residual degrees of freedom
  std::map<Exposure, std::size_t> cell_counts;
};

struct FittedVarianceModel {
  VarianceModel model;
  FitDiagnostics diagnostics;
};

namespace detail {

inline Eigen::MatrixXd exposure_design(std::span<const Exposure> ex) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(ex.size()), 3);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    X(r, 0) = 1.0;
    X(r, 1) = ex[i].d;
    X(r, 2) = ex[i].share();
  }
  return X;
}

inline void require_identified(std::span<const Exposure> ex, const char* stage) {
  auto X = exposure_design(ex);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (ex.size() >= 3 && qr.rank() == 3) return;
  bool d_varies = false, share_varies = false;
  for (const auto& e : ex) {
    d_varies |= e.d != ex[0].d;
    share_varies |= std::abs(e.share() - ex[0].share()) > 1e-12;
  }
  std::string what = !d_varies        ? "treatment contrast (d)"
                     : !share_varies  ? "neighbor-share contrast (s/max(l,1))"
                                      : "independent variation of d and s/max(l,1)";
  throw IdentificationError(std::string(stage) + ": pilot exposures lack " + what);
}

}  // namespace detail

/// Least squares of `target` on (1, d, s/max(l,1)) subject to a nonnegative
/// fitted variance on the whole exposure domain (the four corners of
/// {0,1} x [0,1], which bound every realized exposure).
inline VarianceModel fit_variance_function(std::span<const Exposure> ex, std::span<const double> target) {
  if (ex.size() != target.size()) throw ParameterError("fit_variance_function: size mismatch");
  detail::require_identified(ex, "variance fit");
  const Eigen::MatrixXd X = detail::exposure_design(ex);
  Eigen::VectorXd t(static_cast<Eigen::Index>(target.size()));
  for (std::size_t i = 0; i < target.size(); ++i) t(static_cast<Eigen::Index>(i)) = target[i];
  Eigen::Matrix<double, 4, 3> C;
  C << 1, 0, 0,  //
      1, 1, 0,   //
      1, 0, 1,   //
      1, 1, 1;

  // Enumerate active sets of the four corner constraints; the feasible
  // candidate with the smallest residual is the constrained optimum.
  Eigen::Vector3d best = Eigen::Vector3d::Zero();
  double best_rss = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < 16; ++mask) {
    if (std::popcount(mask) > 3) continue;
    Eigen::MatrixXd A(std::popcount(mask), 3);
    int r = 0;
    for (int c = 0; c < 4; ++c)
      if (mask & (1u << c)) A.row(r++) = C.row(c);
    Eigen::MatrixXd Z;
    if (r == 0) {
      Z = Eigen::Matrix3d::Identity();
    } else {
      Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
      Z = lu.kernel();
      if (lu.rank() < r) continue;
      if (Z.cols() == 0 || (Z.cols() == 1 && Z.norm() == 0.0)) {
        Z.resize(3, 0);
      }
    }
    Eigen::Vector3d beta = Eigen::Vector3d::Zero();
    if (Z.cols() > 0) {
      const Eigen::MatrixXd XZ = X * Z;
      const Eigen::VectorXd g = XZ.colPivHouseholderQr().solve(t);
      beta = Z * g;
    }
    if ((C * beta).minCoeff() < -1e-12) continue;
    const double rss = (X * beta - t).squaredNorm();
    if (rss < best_rss - 1e-15) best_rss = rss, best = beta;
  }
  VarianceModel m;
  m.mu = best(0);
  m.beta1 = best(1);
  m.beta2 = best(2);
  // Clean up rounding so corner variances are exactly nonnegative.
  if (m.mu < 0) m.mu = 0;
  return m;
}

/// Three-stage fit on pilot outcomes: mean by least squares, variance by a
/// positivity-constrained regression of leverage-adjusted squared residuals,
/// and alpha as the clipped average standardized residual product over pilot edges.
inline FittedVarianceModel fit_variance_model(const Network& net, const PilotPlan& plan, std::span<const double> y,
                                              VarianceFamily family = VarianceFamily::Parametric,
                                              double alpha_max = 0.3) {
  const auto& units = plan.pilot_set;
  if (units.size() < 4) throw IdentificationError("fit: the pilot needs at least 4 units");
  std::vector<Exposure> ex(units.size());
  Eigen::VectorXd yv(static_cast<Eigen::Index>(units.size()));
  for (std::size_t a = 0; a < units.size(); ++a) {
    ex[a] = exposure(net, plan.pilot_treatments, units[a]);
    const double v = y[static_cast<std::size_t>(units[a])];
    if (std::isnan(v)) throw ParameterError("fit: missing pilot outcome for node " + std::to_string(units[a]));
    yv(static_cast<Eigen::Index>(a)) = v;
  }
  detail::require_identified(ex, "mean fit");

  FittedVarianceModel out;
  auto& diag = out.diagnostics;
  diag.units = units.size();
  for (const auto& e : ex) ++diag.cell_counts[e];

  const Eigen::MatrixXd X = detail::exposure_design(ex);
  const Eigen::Vector3d coef = X.colPivHouseholderQr().solve(yv);
  const Eigen::VectorXd resid = yv - X * coef;
  diag.mean_coefficients = {coef(0), coef(1), coef(2)};
  diag.mean_rss = resid.squaredNorm();
  const Eigen::MatrixXd XtXinv = (X.transpose() * X).inverse();

  std::vector<Exposure> ex2;
  std::vector<double> target;
  std::vector<double> standardized(units.size(), 0.0);
  std::vector<std::uint8_t> usable(units.size(), 0);
  for (std::size_t a = 0; a < units.size(); ++a) {
    const auto r = static_cast<Eigen::Index>(a);
    const double h = X.row(r) * XtXinv * X.row(r).transpose();
    if (h >= 1.0 - 1e-9) continue;
    const double e = resid(r) / std::sqrt(1.0 - h);
    standardized[a] = e;
    usable[a] = 1;
    ex2.push_back(ex[a]);
    target.push_back(e * e);
  }

  // With no more residual degrees of freedom than variance parameters the
  // slope regression interpolates, so the variance is pooled instead.
  const auto rank = static_cast<std::size_t>(X.colPivHouseholderQr().rank());
  if (family == VarianceFamily::Parametric && units.size() - rank <= 3) {
    double pooled = 0.0;
    for (double t : target) pooled += t;
    out.model.mu = target.empty() ? 0.0 : pooled / static_cast<double>(target.size());
    out.model.beta1 = out.model.beta2 = 0.0;
    diag.variance_pooled = true;
    diag.variance_rss = 0.0;
    for (double t : target) diag.variance_rss += (t - out.model.mu) * (t - out.model.mu);
  } else if (family == VarianceFamily::Parametric) {
    VarianceModel vm = fit_variance_function(ex2, target);
    diag.variance_rss = 0.0;
    for (std::size_t k = 0; k < ex2.size(); ++k) {
      const double d = vm.sigma2(ex2[k]) - target[k];
      diag.variance_rss += d * d;
    }
    out.model = vm;
  } else {
    std::map<Exposure, std::pair<double, std::size_t>> acc;
    double pooled = 0.0;
    for (std::size_t k = 0; k < ex2.size(); ++k) {
      acc[ex2[k]].first += target[k];
      acc[ex2[k]].second += 1;
      pooled += target[k];
    }
    out.model.mu = ex2.empty() ? 0.0 : pooled / static_cast<double>(ex2.size());
    out.model.beta1 = out.model.beta2 = 0.0;
    for (const auto& [e, s] : acc) out.model.cell_variance[e] = s.first / static_cast<double>(s.second);
  }

  std::vector<std::ptrdiff_t> pos(net.size(), -1);
  for (std::size_t a = 0; a < units.size(); ++a) pos[static_cast<std::size_t>(units[a])] = static_cast<std::ptrdiff_t>(a);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < units.size(); ++a) {
    for (NodeId j : net.neighbors(units[a])) {
      const auto b = pos[static_cast<std::size_t>(j)];
      if (b < 0 || units[a] > j) continue;
      ++diag.pilot_edges;
      const auto bu = static_cast<std::size_t>(b);
      if (!usable[a] || !usable[bu]) continue;
      const double sa = out.model.sigma2(ex[a]);
      const double sb = out.model.sigma2(ex[bu]);
      if (sa <= 0.0 || sb <= 0.0) continue;
      sum += standardized[a] * standardized[bu] / std::sqrt(sa * sb);
      ++count;
    }
  }
  if (diag.pilot_edges == 0) throw IdentificationError("fit: the pilot has no internal edges, alpha is not identified");
  diag.alpha_raw = count ? sum / static_cast<double>(count) : 0.0;
  out.model.alpha = std::clamp(diag.alpha_raw, 0.0, alpha_max);
  out.model.M = plan.M;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

/// CSV: node_id,in_pilot,in_exclusion,d_pilot
inline void save_pilot_plan(const PilotPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write pilot plan " + path.string());
  out << "node_id,in_pilot,in_exclusion,d_pilot\n";
  for (std::size_t i = 0; i < plan.in_pilot.size(); ++i)
    out << i << ',' << int(plan.in_pilot[i]) << ',' << int(plan.in_exclusion[i]) << ','
        << int(plan.pilot_treatments[i]) << '\n';
}

inline PilotPlan load_pilot_plan(const Network& net, const std::filesystem::path& path, int M) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open pilot plan " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::vector<NodeId> pilot;
  std::vector<std::uint8_t> d(net.size(), 0);
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) continue;
    auto f = detail::split_fields(line);
    if (f.empty()) continue;
    long long id = 0, p = 0, e = 0, dp = 0;
    if (f.size() < 4 || !detail::parse_int(f[0], id) || !detail::parse_int(f[1], p) || !detail::parse_int(f[2], e) ||
        !detail::parse_int(f[3], dp))
      throw ParseError("malformed pilot plan row at line " + std::to_string(lineno));
    if (id < 0 || static_cast<std::size_t>(id) >= net.size())
      throw ParseError("node id out of range at line " + std::to_string(lineno));
    if (p) pilot.push_back(static_cast<NodeId>(id));
    d[static_cast<std::size_t>(id)] = static_cast<std::uint8_t>(dp != 0);
  }
  PilotPlan plan = make_pilot_plan(net, std::move(pilot), M);
  for (std::size_t i = 0; i < d.size(); ++i) plan.pilot_treatments[i] = plan.treatment_fixed[i] ? d[i] : 0;
  return plan;
}

/// key=value report of a fitted model.
inline void write_fit_report(const FittedVarianceModel& fit, std::ostream& out) {
  out << std::setprecision(17);
  out << "mu=" << fit.model.mu << "\nbeta1=" << fit.model.beta1 << "\nbeta2=" << fit.model.beta2
      << "\nalpha=" << fit.model.alpha << "\nM=" << fit.model.M << "\nalpha_raw=" << fit.diagnostics.alpha_raw
      << "\nunits=" << fit.diagnostics.units << "\npilot_edges=" << fit.diagnostics.pilot_edges
      << "\nmean_rss=" << fit.diagnostics.mean_rss << "\nvariance_rss=" << fit.diagnostics.variance_rss << '\n';
  for (const auto& [e, v] : fit.model.cell_variance)
    out << "cell_" << e.d << '_' << e.s << '_' << e.l << '=' << v << '\n';
}

inline VarianceModel read_fit_report(std::istream& in) {
  VarianceModel m;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = detail::trim(line.substr(0, eq));
    const double v = std::stod(line.substr(eq + 1));
    if (key == "mu") m.mu = v;
    else if (key == "beta1") m.beta1 = v;
    else if (key == "beta2") m.beta2 = v;
    else if (key == "alpha") m.alpha = v;
    else if (key == "M") m.M = static_cast<int>(v);
    else if (key.rfind("cell_", 0) == 0) {
      Exposure e;
      if (std::sscanf(key.c_str(), "cell_%d_%d_%d", &e.d, &e.s, &e.l) == 3) m.cell_variance[e] = v;
    }
  }
  return m;
}

}  // namespace eli
