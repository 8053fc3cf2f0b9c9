#pragma once

// Second-wave design: choose participation R and treatments D to minimize the
// worst-case plug-in variance over a family of weight schemes, subject to
// participation bounds and the pilot exclusion set.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "eli/assignment.hpp"
#include "eli/errors.hpp"
#include "eli/estimators.hpp"
#include "eli/graph.hpp"
#include "eli/outcome.hpp"
#include "eli/pilot.hpp"
#include "eli/rng.hpp"

namespace eli {

/// Rectangular class: sigma bounded by B_sigma, eta in [-L B^2, U B^2].
struct VarianceBounds {
  double B_sigma = 1.0;
  double L_eta = 0.0;
  double U_eta = 0.0;

  void validate() const {
    if (!(B_sigma > 0.0)) throw ParameterError("variance bounds: B_sigma must be > 0");
    if (!(L_eta >= 0.0 && L_eta <= 1.0) || !(U_eta >= 0.0 && U_eta <= 1.0))
      throw ParameterError("variance bounds: L_eta and U_eta must lie in [0,1]");
  }
};

enum class EvaluatorKind { Plugin, WorstCase };

struct DesignProblem {
  std::vector<WeightScheme> schemes;
  EvaluatorKind evaluator = EvaluatorKind::Plugin;
  VarianceModel model;       // Plugin
  VarianceBounds bounds;     // WorstCase
  int M = 1;                 // dependence order for WorstCase (Plugin uses model.M)
  std::vector<double> scheme_weights;  // empty: max over schemes; else weighted average
  std::vector<double> beta;            // variance caps per scheme (sample-size programs)
  long n_min = 1;
  long n_max = 1;
  std::vector<NodeId> forced_out;
  std::vector<NodeId> candidates;  // empty: every node outside the exclusion set
  bool enforce_d_le_r = false;
  std::optional<UnitStats> stats;

  int order() const { return evaluator == EvaluatorKind::Plugin ? model.M : M; }
};

struct SolverConfig {
  enum class Backend { Auto, Exhaustive, LocalSearch, Anneal };
  Backend backend = Backend::Auto;
  long iterations = 0;  // per restart; 0 = 50 * free variables
  int restarts = 8;
  double t0 = 0.0;      // 0 = calibrated from sampled moves
  double decay = 0.995;
  std::uint64_t seed = 0;
  double tie_tolerance = 1e-9;
  long polish_budget = 20000;
  int exhaustive_limit = 24;
  int auto_exhaustive_bits = 20;
};

inline const char* backend_name(SolverConfig::Backend b) {
  switch (b) {
    case SolverConfig::Backend::Auto: return "auto";
    case SolverConfig::Backend::Exhaustive: return "exhaustive";
    case SolverConfig::Backend::LocalSearch: return "local";
    case SolverConfig::Backend::Anneal: return "anneal";
  }
  return "?";
}

inline SolverConfig::Backend parse_backend(const std::string& s) {
  if (s == "auto") return SolverConfig::Backend::Auto;
  if (s == "exhaustive") return SolverConfig::Backend::Exhaustive;
  if (s == "local" || s == "localsearch") return SolverConfig::Backend::LocalSearch;
  if (s == "anneal") return SolverConfig::Backend::Anneal;
  throw ParameterError("unknown solver backend '" + s + "'");
}

struct DesignScore {
  long penalty = 0;     // count of violated structural constraints and empty cells
  double excess = 0.0;  // sum of relative variance-cap violations
  double value = 0.0;   // objective; meaningful only when penalty == 0
  std::vector<double> per_scheme;
  std::string reason;

  bool feasible() const { return penalty == 0 && excess == 0.0; }
};

/// -1, 0, 1 comparison on (penalty, excess, value) with tolerance on the reals.
inline int compare_scores(const DesignScore& a, const DesignScore& b, double tol) {
  if (a.penalty != b.penalty) return a.penalty < b.penalty ? -1 : 1;
  if (std::abs(a.excess - b.excess) > tol) return a.excess < b.excess ? -1 : 1;
  if (a.penalty > 0) return 0;
  if (std::abs(a.value - b.value) > tol) return a.value < b.value ? -1 : 1;
  return 0;
}

struct SolverTrace {
  std::string backend;
  long iterations = 0;
  long evaluations = 0;
  long best_step = 0;
  int restarts = 0;
  int free_bits = 0;
};

struct DesignSolution {
  Assignment assignment;
  double objective = std::numeric_limits<double>::infinity();
  std::vector<double> per_scheme;
  bool feasible = false;
  SolverTrace trace;
};

/// Worst-case variance from weights over the rectangular class.
inline double worst_case_from_weights(std::span<const double> w, std::span<const std::uint8_t> R,
                                      const NeighborhoodIndex& rings, const VarianceBounds& b, int M) {
  std::size_t n = 0;
  for (auto r : R) n += r;
  if (n == 0) return 0.0;
  const double b2 = b.B_sigma * b.B_sigma;
  double acc = 0.0;
  const int order = std::min(M, rings.order());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!R[i] || w[i] == 0.0) continue;
    acc += w[i] * w[i] * b2;
    for (int u = 1; u <= order; ++u)
      for (NodeId j : rings.ring(static_cast<NodeId>(i), u)) {
        const auto ju = static_cast<std::size_t>(j);
        if (!R[ju] || w[ju] == 0.0) continue;
        const double p = w[i] * w[ju];
        acc += p > 0 ? p * b.U_eta * b2 : -p * b.L_eta * b2;
      }
  }
  const double nd = static_cast<double>(n);
  return acc / (nd * nd);
}

/// Evaluates designs for a fixed (network, pilot plan, problem).
class DesignEvaluator {
 public:
  DesignEvaluator(const Network& net, const PilotPlan& plan, const DesignProblem& problem)
      : net_(&net), problem_(problem), rings_(net, std::max({1, problem.order(), plan.M})) {
    const std::size_t N = net.size();
    if (problem_.schemes.empty()) throw ParameterError("design: at least one weight scheme is required");
    if (problem_.n_min < 0 || problem_.n_max < problem_.n_min)
      throw ParameterError("design: need 0 <= n_min <= n_max");
    if (!problem_.scheme_weights.empty() && problem_.scheme_weights.size() != problem_.schemes.size())
      throw ParameterError("design: scheme_weights must match the number of schemes");
    if (!problem_.beta.empty()) {
      if (problem_.beta.size() != problem_.schemes.size())
        throw ParameterError("design: beta caps must match the number of schemes");
      for (double b : problem_.beta)
        if (!(b > 0.0)) throw ParameterError("design: beta caps must be > 0");
    }
    if (problem_.evaluator == EvaluatorKind::Plugin) problem_.model.validate();
    else problem_.bounds.validate();
    if (plan.in_exclusion.size() != N && !plan.in_exclusion.empty())
      throw ParameterError("design: pilot plan does not match the network size");

    allowed_.assign(N, problem_.candidates.empty() ? 1 : 0);
    for (NodeId c : problem_.candidates) allowed_.at(static_cast<std::size_t>(c)) = 1;
    fixed_.assign(N, 0);
    fixed_d_.assign(N, 0);
    if (!plan.in_exclusion.empty()) {
      for (std::size_t i = 0; i < N; ++i) {
        if (plan.in_exclusion[i]) allowed_[i] = 0;
        if (plan.treatment_fixed[i]) {
          fixed_[i] = 1;
          fixed_d_[i] = plan.pilot_treatments[i];
        }
      }
    }
    for (NodeId f : problem_.forced_out) allowed_.at(static_cast<std::size_t>(f)) = 0;
    for (std::size_t i = 0; i < N; ++i)
      if (allowed_[i]) free_r_.push_back(static_cast<NodeId>(i));
    std::vector<std::uint8_t> dmark(N, 0);
    for (NodeId c : free_r_) {
      dmark[static_cast<std::size_t>(c)] = 1;
      if (!problem_.enforce_d_le_r)
        for (NodeId k : net.neighbors(c)) dmark[static_cast<std::size_t>(k)] = 1;
    }
    for (std::size_t i = 0; i < N; ++i)
      if (dmark[i] && !fixed_[i]) free_d_.push_back(static_cast<NodeId>(i));
    if (problem_.n_min > static_cast<long>(free_r_.size()))
      throw InfeasibleError("design: n_min=" + std::to_string(problem_.n_min) + " exceeds the " +
                            std::to_string(free_r_.size()) + " eligible units outside the exclusion set");
    ex_.resize(N);
  }
  // Holds a pointer to the network.
  DesignEvaluator(Network&&, const PilotPlan&, const DesignProblem&) = delete;

  const Network& network() const { return *net_; }
  const DesignProblem& problem() const { return problem_; }
  const NeighborhoodIndex& rings() const { return rings_; }
  const std::vector<NodeId>& free_r() const { return free_r_; }
  const std::vector<NodeId>& free_d() const { return free_d_; }
  bool allowed(NodeId i) const { return allowed_[static_cast<std::size_t>(i)] != 0; }
  bool fixed(NodeId i) const { return fixed_[static_cast<std::size_t>(i)] != 0; }
  std::uint8_t fixed_value(NodeId i) const { return fixed_d_[static_cast<std::size_t>(i)]; }
  int free_bits() const { return static_cast<int>(free_r_.size() + free_d_.size()); }

  /// Zeroes D outside participants and their neighbors and applies pilot-fixed values.
  void canonicalize(Assignment& a) const {
    const std::size_t N = net_->size();
    std::vector<std::uint8_t> active(N, 0);
    for (std::size_t i = 0; i < N; ++i) {
      if (!a.R[i]) continue;
      active[i] = 1;
      for (NodeId k : net_->neighbors(static_cast<NodeId>(i))) active[static_cast<std::size_t>(k)] = 1;
    }
    for (std::size_t i = 0; i < N; ++i) {
      if (fixed_[i]) a.D[i] = fixed_d_[i];
      else if (!active[i] || (problem_.enforce_d_le_r && !a.R[i])) a.D[i] = 0;
    }
  }

  DesignScore score(const Assignment& a) const { return score(a.R, a.D); }

  DesignScore score(std::span<const std::uint8_t> R, std::span<const std::uint8_t> D) const {
    const std::size_t N = net_->size();
    DesignScore sc;
    long size = 0;
    auto note = [&](const std::string& why) {
      if (sc.reason.empty()) sc.reason = why;
    };
    for (std::size_t i = 0; i < N; ++i) {
      if (R[i]) {
        ++size;
        if (!allowed_[i]) ++sc.penalty, note("participant " + std::to_string(i) + " is excluded");
      }
      if (fixed_[i] && D[i] != fixed_d_[i]) ++sc.penalty, note("pilot treatment changed at " + std::to_string(i));
      if (problem_.enforce_d_le_r && !fixed_[i] && D[i] > R[i]) ++sc.penalty, note("D > R at " + std::to_string(i));
    }
    if (size < problem_.n_min) sc.penalty += problem_.n_min - size, note("too few participants");
    if (size > problem_.n_max) sc.penalty += size - problem_.n_max, note("too many participants");
    for (std::size_t i = 0; i < N; ++i)
      if (R[i]) ex_[i] = exposure(*net_, D, static_cast<NodeId>(i));
    const UnitStats* stats = problem_.stats ? &*problem_.stats : nullptr;
    sc.per_scheme.assign(problem_.schemes.size(), 0.0);
    for (std::size_t k = 0; k < problem_.schemes.size(); ++k) {
      const auto& scheme = problem_.schemes[k];
      auto wr = weights_from_exposures(scheme, ex_, R, stats);
      if (!wr.ok()) {
        sc.penalty += empty_cells(scheme, R);
        note("scheme '" + scheme.id + "': " + wr.message);
        continue;
      }
      if (sc.penalty > 0) continue;
      try {
        sc.per_scheme[k] = problem_.evaluator == EvaluatorKind::Plugin
                               ? plugin_variance(wr.w, R, ex_, problem_.model, rings_)
                               : worst_case_from_weights(wr.w, R, rings_, problem_.bounds, problem_.M);
      } catch (const ModelDomainError& e) {
        ++sc.penalty;
        note(e.what());
      }
    }
    if (sc.penalty > 0) {
      sc.value = 0.0;
      return sc;
    }
    if (problem_.scheme_weights.empty()) {
      sc.value = *std::max_element(sc.per_scheme.begin(), sc.per_scheme.end());
    } else {
      for (std::size_t k = 0; k < sc.per_scheme.size(); ++k) sc.value += problem_.scheme_weights[k] * sc.per_scheme[k];
    }
    if (!problem_.beta.empty())
      for (std::size_t k = 0; k < sc.per_scheme.size(); ++k)
        sc.excess += std::max(0.0, sc.per_scheme[k] / problem_.beta[k] - 1.0);
    return sc;
  }

  /// Objective value, +infinity when infeasible.
  double objective(const Assignment& a) const {
    const auto sc = score(a);
    return sc.feasible() ? sc.value : std::numeric_limits<double>::infinity();
  }

 private:
  long empty_cells(const WeightScheme& scheme, std::span<const std::uint8_t> R) const {
    const auto* dm = std::get_if<DiffMeans>(&scheme.kind);
    if (!dm) return 1;
    long empty = 0;
    for (const auto& lw : dm->levels) {
      bool h1 = false, h0 = false;
      for (std::size_t i = 0; i < R.size(); ++i) {
        if (!R[i] || ex_[i].l != lw.level) continue;
        if (ex_[i].d == dm->treated.d && ex_[i].s == dm->treated.target_s(lw.level)) h1 = true;
        else if (ex_[i].d == dm->control.d && ex_[i].s == dm->control.target_s(lw.level)) h0 = true;
      }
      empty += !h1 + !h0;
    }
    return std::max<long>(empty, 1);
  }

  const Network* net_;
  DesignProblem problem_;
  NeighborhoodIndex rings_;
  std::vector<std::uint8_t> allowed_, fixed_, fixed_d_;
  std::vector<NodeId> free_r_, free_d_;
  mutable std::vector<Exposure> ex_;
};

/// Max (or weighted average) over schemes of the design objective; +inf when infeasible.
inline double evaluate_objective(const Network& net, const PilotPlan& plan, const DesignProblem& problem,
                                 const Assignment& a) {
  return DesignEvaluator(net, plan, problem).objective(a);
}

namespace detail {

inline bool assignment_lex_less(const Assignment& a, const Assignment& b) {
  if (a.R != b.R) return a.R < b.R;
  return a.D < b.D;
}

struct Incumbent {
  bool set = false;
  DesignScore score;
  Assignment a;
  long step = 0;

  bool offer(const DesignScore& s, const Assignment& x, double tol, long at) {
    if (!set) {
      set = true, score = s, a = x, step = at;
      return true;
    }
    const int c = compare_scores(s, score, tol);
    if (c < 0 || (c == 0 && assignment_lex_less(x, a))) {
      score = s, a = x, step = at;
      return true;
    }
    return false;
  }
};

template <class Ev>
DesignSolution finish(const Ev& ev, Incumbent& best, SolverTrace trace) {
  DesignSolution sol;
  ev.canonicalize(best.a);
  const auto audit = ev.score(best.a);
  if (best.score.penalty == 0 && std::abs(audit.value - best.score.value) > 1e-12 * std::max(1.0, audit.value))
    throw std::logic_error("design: objective self-audit failed");
  sol.assignment = best.a;
  sol.feasible = audit.feasible();
  sol.objective = audit.penalty == 0 ? audit.value : std::numeric_limits<double>::infinity();
  sol.per_scheme = audit.per_scheme;
  trace.best_step = best.step;
  sol.trace = trace;
  if (audit.penalty == 0) {
    const auto& p = ev.problem();
    const auto size = static_cast<long>(sol.assignment.participants());
    if (size < p.n_min || size > p.n_max) throw std::logic_error("design: feasibility audit failed (size)");
    for (std::size_t i = 0; i < sol.assignment.size(); ++i)
      if (sol.assignment.R[i] && !ev.allowed(static_cast<NodeId>(i)))
        throw std::logic_error("design: feasibility audit failed (exclusion)");
  }
  return sol;
}

template <class Ev>
DesignSolution solve_exhaustive(const Ev& ev, const SolverConfig& cfg) {
  const auto& net = ev.network();
  const auto& p = ev.problem();
  const auto& fr = ev.free_r();
  const auto& fd = ev.free_d();
  const int bits = ev.free_bits();
  if (bits > cfg.exhaustive_limit)
    throw ParameterError("exhaustive design search needs <= " + std::to_string(cfg.exhaustive_limit) +
                         " free variables, problem has " + std::to_string(bits));
  const std::size_t N = net.size();
  std::vector<std::ptrdiff_t> dpos(N, -1);
  for (std::size_t k = 0; k < fd.size(); ++k) dpos[static_cast<std::size_t>(fd[k])] = static_cast<std::ptrdiff_t>(k);
  std::vector<std::uint32_t> closure(fr.size(), 0);
  for (std::size_t k = 0; k < fr.size(); ++k) {
    auto add = [&](NodeId v) {
      if (dpos[static_cast<std::size_t>(v)] >= 0) closure[k] |= 1u << dpos[static_cast<std::size_t>(v)];
    };
    add(fr[k]);
    if (!p.enforce_d_le_r)
      for (NodeId nb : net.neighbors(fr[k])) add(nb);
  }
  Assignment a(N);
  for (std::size_t i = 0; i < N; ++i)
    if (ev.fixed(static_cast<NodeId>(i))) a.D[i] = ev.fixed_value(static_cast<NodeId>(i));
  Incumbent best;
  SolverTrace trace;
  trace.backend = "exhaustive";
  trace.free_bits = bits;
  const std::uint32_t rlimit = fr.empty() ? 1u : (1u << fr.size());
  for (std::uint32_t rm = 0; rm < rlimit; ++rm) {
    const long size = std::popcount(rm);
    if (size < p.n_min || size > p.n_max) continue;
    std::uint32_t cl = 0;
    for (std::size_t k = 0; k < fr.size(); ++k) {
      const bool on = (rm >> k) & 1u;
      a.R[static_cast<std::size_t>(fr[k])] = on;
      if (on) cl |= closure[k];
    }
    // Enumerate D over submasks of the active set only (canonical assignments).
    std::uint32_t dm = 0;
    while (true) {
      for (std::size_t k = 0; k < fd.size(); ++k) a.D[static_cast<std::size_t>(fd[k])] = (dm >> k) & 1u;
      const auto s = ev.score(a);
      ++trace.evaluations;
      best.offer(s, a, cfg.tie_tolerance, trace.evaluations);
      if (dm == cl) break;
      dm = (dm - cl) & cl;
    }
  }
  trace.iterations = trace.evaluations;
  if (!best.set) throw InfeasibleError("design: no assignment satisfies the participation bounds");
  return finish(ev, best, trace);
}

template <class Ev>
class AnnealSearch {
 public:
  AnnealSearch(const Ev& ev, const SolverConfig& cfg) : ev_(ev), cfg_(cfg), net_(ev.network()) {}

  DesignSolution run(bool anneal) {
    SolverTrace trace;
    trace.backend = anneal ? "anneal" : "local";
    trace.free_bits = ev_.free_bits();
    trace.restarts = cfg_.restarts;
    const long iters = cfg_.iterations > 0 ? cfg_.iterations : 50L * std::max(1, ev_.free_bits());
    for (int r = 0; r < std::max(1, cfg_.restarts); ++r) {
      Rng rng = make_rng(derive_seed(cfg_.seed, stream::kDesign, static_cast<std::uint64_t>(r)));
      Assignment cur = initial(rng, r == 0);
      DesignScore cur_s = eval(cur);
      polish(cur, cur_s, rng);
      if (anneal) {
        double t0 = cfg_.t0 > 0 ? cfg_.t0 : calibrate(cur, cur_s, rng);
        double temp = t0;
        const long epoch = std::max<long>(1, iters / 1000);
        for (long it = 0; it < iters; ++it) {
          if (it > 0 && it % epoch == 0) temp *= cfg_.decay;
          Assignment nxt = cur;
          if (!propose(nxt, rng)) continue;
          const auto s = eval(nxt);
          ++iterations_;
          if (accept(cur_s, s, temp, t0, rng)) {
            cur = std::move(nxt);
            cur_s = s;
          }
        }
        polish(cur, cur_s, rng);
      }
    }
    trace.iterations = iterations_;
    trace.evaluations = evaluations_;
    if (!best_.set) throw InfeasibleError("design: search produced no candidate");
    return finish(ev_, best_, trace);
  }

 private:
  DesignScore eval(Assignment& a) {
    ev_.canonicalize(a);
    auto s = ev_.score(a);
    ++evaluations_;
    best_.offer(s, a, cfg_.tie_tolerance, evaluations_);
    return s;
  }

  long size_of(const Assignment& a) const { return static_cast<long>(a.participants()); }

  Assignment initial(Rng& rng, bool balanced) {
    const auto& p = ev_.problem();
    const auto& fr = ev_.free_r();
    Assignment a(net_.size());
    std::vector<NodeId> order = fr;
    std::shuffle(order.begin(), order.end(), rng);
    const long hi = std::min<long>(p.n_max, static_cast<long>(fr.size()));
    const long lo = std::min(p.n_min, hi);
    const long k = balanced ? hi : lo + static_cast<long>(uniform01(rng) * static_cast<double>(hi - lo + 1));
    for (long c = 0; c < std::min(k, hi); ++c) a.R[static_cast<std::size_t>(order[static_cast<std::size_t>(c)])] = 1;
    for (NodeId v : ev_.free_d()) a.D[static_cast<std::size_t>(v)] = bernoulli(rng, 0.5);
    return a;
  }

  NodeId random_member(const Assignment& a, bool participant, Rng& rng) const {
    std::vector<NodeId> pool;
    for (NodeId v : ev_.free_r())
      if ((a.R[static_cast<std::size_t>(v)] != 0) == participant) pool.push_back(v);
    if (pool.empty()) return -1;
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  }

  bool propose(Assignment& a, Rng& rng) {
    const auto& p = ev_.problem();
    const auto& fr = ev_.free_r();
    if (fr.empty()) return false;
    const double u = uniform01(rng);
    if (u < 1.0 / 3.0) {
      const NodeId v = fr[std::uniform_int_distribution<std::size_t>(0, fr.size() - 1)(rng)];
      auto& rv = a.R[static_cast<std::size_t>(v)];
      rv = !rv;
      const long size = size_of(a);
      if (size > p.n_max) {
        NodeId o = random_member(a, true, rng);
        if (o == v || o < 0) return false;
        a.R[static_cast<std::size_t>(o)] = 0;
      } else if (size < p.n_min) {
        NodeId o = random_member(a, false, rng);
        if (o == v || o < 0) return false;
        a.R[static_cast<std::size_t>(o)] = 1;
      }
      if (rv && !p.enforce_d_le_r) a.D[static_cast<std::size_t>(v)] = bernoulli(rng, 0.5);
      return true;
    }
    if (u < 0.45 && !p.enforce_d_le_r) {
      // Saturate or clear the closed neighborhood of a participant.
      const NodeId c = random_member(a, true, rng);
      if (c < 0) return false;
      const std::uint8_t val = bernoulli(rng, 0.5);
      bool changed = false;
      auto set = [&](NodeId v) {
        if (ev_.fixed(v) || a.D[static_cast<std::size_t>(v)] == val) return;
        a.D[static_cast<std::size_t>(v)] = val;
        changed = true;
      };
      if (uniform01(rng) < 0.5) set(c);
      for (NodeId k : net_.neighbors(c)) set(k);
      return changed;
    }
    if (u < 2.0 / 3.0) {
      // Flip D on a participant or one of its neighbors.
      const NodeId c = random_member(a, true, rng);
      if (c < 0) return false;
      const auto nb = net_.neighbors(c);
      const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, nb.size())(rng);
      const NodeId v = pick == nb.size() ? c : nb[pick];
      if (ev_.fixed(v) || (p.enforce_d_le_r && !a.R[static_cast<std::size_t>(v)])) return false;
      a.D[static_cast<std::size_t>(v)] ^= 1;
      return true;
    }
    const NodeId out = random_member(a, true, rng);
    const NodeId in = random_member(a, false, rng);
    if (out < 0 || in < 0) return false;
    a.R[static_cast<std::size_t>(out)] = 0;
    a.R[static_cast<std::size_t>(in)] = 1;
    if (uniform01(rng) < 0.5) a.D[static_cast<std::size_t>(in)] = a.D[static_cast<std::size_t>(out)];
    return true;
  }

  double calibrate(const Assignment& start, const DesignScore& s0, Rng& rng) {
    double acc = 0.0;
    int cnt = 0;
    for (int k = 0; k < 40; ++k) {
      Assignment nxt = start;
      if (!propose(nxt, rng)) continue;
      const auto s = eval(nxt);
      if (s.penalty == 0 && s0.penalty == 0) {
        acc += std::abs(s.value - s0.value);
        ++cnt;
      }
    }
    if (cnt > 0 && acc > 0) return acc / cnt;
    return s0.penalty == 0 && s0.value > 0 ? 0.1 * s0.value : 1.0;
  }

  bool accept(const DesignScore& cur, const DesignScore& nxt, double temp, double t0, Rng& rng) {
    const int c = compare_scores(nxt, cur, 0.0);
    if (c <= 0) return true;
    const double rel = temp / t0;
    if (nxt.penalty > cur.penalty) return uniform01(rng) < std::exp(-static_cast<double>(nxt.penalty - cur.penalty) / rel);
    if (nxt.penalty < cur.penalty) return true;
    if (nxt.excess > cur.excess) return uniform01(rng) < std::exp(-(nxt.excess - cur.excess) / (0.1 * rel));
    return uniform01(rng) < std::exp(-(nxt.value - cur.value) / temp);
  }

  /// First-improvement descent over R toggles, D flips and swaps.
  void polish(Assignment& cur, DesignScore& cur_s, Rng&) {
    const auto& p = ev_.problem();
    const auto& fr = ev_.free_r();
    long budget = cfg_.polish_budget;
    auto try_move = [&](Assignment& cand) {
      --budget;
      const auto s = eval(cand);
      if (compare_scores(s, cur_s, cfg_.tie_tolerance) < 0) {
        cur = cand;
        cur_s = s;
        return true;
      }
      return false;
    };
    if (ev_.free_bits() <= kPairNeighborhoodBits) {
      polish_pairs(cur, cur_s, budget);
      return;
    }
    bool improved = true;
    while (improved && budget > 0) {
      improved = false;
      const long size = size_of(cur);
      for (NodeId v : fr) {
        if (budget <= 0 || improved) break;
        const bool in = cur.R[static_cast<std::size_t>(v)];
        if ((in && size - 1 < p.n_min) || (!in && size + 1 > p.n_max)) continue;
        for (int dv = 0; dv < (in || p.enforce_d_le_r ? 1 : 2) && !improved; ++dv) {
          Assignment cand = cur;
          cand.R[static_cast<std::size_t>(v)] = !in;
          if (!in && !p.enforce_d_le_r) cand.D[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(dv);
          improved = try_move(cand);
        }
      }
      if (improved) continue;
      for (NodeId v : ev_.free_d()) {
        if (budget <= 0 || improved) break;
        bool active = cur.R[static_cast<std::size_t>(v)];
        if (!p.enforce_d_le_r)
          for (NodeId k : net_.neighbors(v)) active = active || cur.R[static_cast<std::size_t>(k)];
        if (!active || (p.enforce_d_le_r && !cur.R[static_cast<std::size_t>(v)])) continue;
        Assignment cand = cur;
        cand.D[static_cast<std::size_t>(v)] ^= 1;
        improved = try_move(cand);
      }
      if (improved) continue;
      for (NodeId out : fr) {
        if (budget <= 0 || improved) break;
        if (!cur.R[static_cast<std::size_t>(out)]) continue;
        for (NodeId in : fr) {
          if (budget <= 0 || improved) break;
          if (cur.R[static_cast<std::size_t>(in)]) continue;
          for (int dv = 0; dv < (p.enforce_d_le_r ? 1 : 2) && !improved; ++dv) {
            Assignment cand = cur;
            cand.R[static_cast<std::size_t>(out)] = 0;
            cand.R[static_cast<std::size_t>(in)] = 1;
            if (!p.enforce_d_le_r) cand.D[static_cast<std::size_t>(in)] = static_cast<std::uint8_t>(dv);
            improved = try_move(cand);
          }
        }
      }
    }
  }

  static constexpr int kPairNeighborhoodBits = 40;

  /// Small problems: descent over every single and every pair of elementary
  /// moves (R toggles and D flips over the free variables).
  void polish_pairs(Assignment& cur, DesignScore& cur_s, long budget) {
    const auto& p = ev_.problem();
    struct Move {
      bool is_r;
      NodeId v;
    };
    std::vector<Move> moves;
    for (NodeId v : ev_.free_r()) moves.push_back({true, v});
    for (NodeId v : ev_.free_d()) moves.push_back({false, v});
    auto apply = [](Assignment& a, const Move& m) {
      auto& x = m.is_r ? a.R[static_cast<std::size_t>(m.v)] : a.D[static_cast<std::size_t>(m.v)];
      x ^= 1;
    };
    bool improved = true;
    while (improved && budget > 0) {
      improved = false;
      for (std::size_t a = 0; a < moves.size() && !improved && budget > 0; ++a) {
        for (std::size_t b = a; b < moves.size() && !improved && budget > 0; ++b) {
          Assignment cand = cur;
          apply(cand, moves[a]);
          if (b != a) apply(cand, moves[b]);
          const long size = size_of(cand);
          if (size < p.n_min || size > p.n_max) continue;
          Assignment canon = cand;
          ev_.canonicalize(canon);
          if (canon == cur) continue;
          --budget;
          const auto s = eval(canon);
          if (compare_scores(s, cur_s, cfg_.tie_tolerance) < 0) {
            cur = canon;
            cur_s = s;
            improved = true;
          }
        }
      }
    }
  }

  const Ev& ev_;
  const SolverConfig& cfg_;
  const Network& net_;
  Incumbent best_;
  long iterations_ = 0;
  long evaluations_ = 0;
};

template <class Ev>
DesignSolution solve(const Ev& ev, const SolverConfig& cfg) {
  auto backend = cfg.backend;
  if (backend == SolverConfig::Backend::Auto)
    backend = ev.free_bits() <= cfg.auto_exhaustive_bits ? SolverConfig::Backend::Exhaustive
                                                         : SolverConfig::Backend::Anneal;
  if (backend == SolverConfig::Backend::Exhaustive) return solve_exhaustive(ev, cfg);
  return AnnealSearch(ev, cfg).run(backend == SolverConfig::Backend::Anneal);
}

}  // namespace detail

/// Minimax (or weighted) plug-in variance design. Throws InfeasibleError when
/// no feasible assignment is found.
inline DesignSolution design_second_wave(const Network& net, const PilotPlan& plan, const DesignProblem& problem,
                                         const SolverConfig& solver = {}) {
  DesignEvaluator ev(net, plan, problem);
  auto sol = detail::solve(ev, solver);
  if (!sol.feasible) {
    const auto s = ev.score(sol.assignment);
    throw InfeasibleError("design: no feasible assignment found (" + (s.reason.empty() ? "variance caps" : s.reason) +
                          ")");
  }
  return sol;
}

/// Smallest participant count whose best design meets every variance cap;
/// ties at that size are broken by the worst-case variance.
inline DesignSolution min_sample_size_design(const Network& net, const PilotPlan& plan, const DesignProblem& problem,
                                             const SolverConfig& solver = {}) {
  if (problem.beta.size() != problem.schemes.size())
    throw ParameterError("sample-size design needs one variance cap per scheme");
  const DesignEvaluator base(net, plan, problem);
  const long hi = std::min<long>(problem.n_max, static_cast<long>(base.free_r().size()));
  const long lo = std::max<long>(1, problem.n_min);
  std::string binding = problem.schemes.front().id;
  for (long n = lo; n <= hi; ++n) {
    DesignProblem p = problem;
    p.n_min = p.n_max = n;
    DesignEvaluator ev(net, plan, p);
    auto sol = detail::solve(ev, solver);
    if (sol.feasible) return sol;
    const auto s = ev.score(sol.assignment);
    if (s.penalty == 0) {
      double worst = -1.0;
      for (std::size_t k = 0; k < s.per_scheme.size(); ++k)
        if (s.per_scheme[k] / problem.beta[k] > worst) worst = s.per_scheme[k] / problem.beta[k], binding = problem.schemes[k].id;
    }
  }
  throw InfeasibleError("sample-size design: no participant count up to " + std::to_string(hi) +
                        " meets the variance cap; binding scheme '" + binding + "'");
}

/// beta = nu^2 / z_{1-a}^2.
inline double beta_from_mde(double nu, double a) {
  if (!(nu > 0.0)) throw ParameterError("beta_from_mde: nu must be > 0");
  if (!(a > 0.0 && a < 1.0)) throw ParameterError("beta_from_mde: a must lie in (0,1)");
  const double z = normal_quantile(1.0 - a);
  if (!(z > 0.0)) throw ParameterError("beta_from_mde: z_{1-a} <= 0 gives an unbounded cap");
  return nu * nu / (z * z);
}

/// Max over schemes of the adversarial variance in the rectangular class.
inline double worst_case_variance(const Network& net, const Assignment& a, const std::vector<WeightScheme>& schemes,
                                  const VarianceBounds& bounds, int M) {
  bounds.validate();
  if (M < 1) throw ParameterError("worst_case_variance: M must be >= 1");
  const NeighborhoodIndex rings(net, M);
  const auto ex = exposures(net, a.D);
  double worst = 0.0;
  for (const auto& s : schemes) {
    auto wr = weights_from_exposures(s, ex, a.R);
    throw_if_failed(wr, s);
    worst = std::max(worst, worst_case_from_weights(wr.w, a.R, rings, bounds, M));
  }
  return worst;
}

/// Sample-size design against worst-case variance bounds, with no pilot.
inline DesignSolution minimax_design_no_pilot(const Network& net, DesignProblem problem,
                                              const SolverConfig& solver = {}) {
  problem.evaluator = EvaluatorKind::WorstCase;
  return min_sample_size_design(net, empty_pilot_plan(net, std::max(1, problem.M)), problem, solver);
}

}  // namespace eli
