#pragma once

// Design on a partially observed network: tri-state adjacency, an
// Erdos-Renyi/Beta posterior over missing pairs, Monte-Carlo expected plug-in
// variance and the design loop over completion batches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <string>
#include <unordered_set>
#include <vector>

#include "eli/design.hpp"
#include "eli/errors.hpp"
#include "eli/graph.hpp"
#include "eli/pilot.hpp"
#include "eli/rng.hpp"

namespace eli {

enum class PairState : std::uint8_t { Absent, Present, Missing };

class PartialAdjacency {
 public:
  PartialAdjacency() = default;

  /// `present` are observed edges, `missing` unobserved pairs; every other pair is an observed non-edge.
  PartialAdjacency(std::size_t n, std::vector<Edge> present, std::vector<Edge> missing) : n_(n) {
    auto norm = [&](std::vector<Edge>& v, const char* what) {
      for (auto& e : v) {
        if (e.first == e.second) throw ParameterError(std::string(what) + ": self pair");
        if (e.first < 0 || e.second < 0 || static_cast<std::size_t>(std::max(e.first, e.second)) >= n)
          throw ParameterError(std::string(what) + ": node id out of range");
        if (e.first > e.second) std::swap(e.first, e.second);
      }
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    norm(present, "partial adjacency edge");
    norm(missing, "partial adjacency missing pair");
    std::vector<Edge> clash;
    std::set_intersection(present.begin(), present.end(), missing.begin(), missing.end(), std::back_inserter(clash));
    if (!clash.empty()) throw ParameterError("a pair cannot be both observed present and missing");
    present_ = std::move(present);
    missing_ = std::move(missing);
    for (const auto& e : missing_) missing_set_.insert(key(e.first, e.second));
    observed_ = Network::from_edges(n_, present_);
  }

  static PartialAdjacency fully_observed(const Network& net) { return PartialAdjacency(net.size(), net.edges(), {}); }

  std::size_t size() const { return n_; }
  const std::vector<Edge>& present() const { return present_; }
  const std::vector<Edge>& missing() const { return missing_; }
  const Network& observed_network() const { return observed_; }
  std::size_t total_pairs() const { return n_ * (n_ - (n_ > 0)) / 2; }
  std::size_t observed_pairs() const { return total_pairs() - missing_.size(); }

  PairState state(NodeId i, NodeId j) const {
    if (i == j) return PairState::Absent;
    if (missing_set_.count(key(i, j))) return PairState::Missing;
    return observed_.has_edge(i, j) ? PairState::Present : PairState::Absent;
  }

  /// Observed edges plus every missing pair: the largest graph any completion can produce.
  Network union_network() const {
    std::vector<Edge> all = present_;
    all.insert(all.end(), missing_.begin(), missing_.end());
    return Network::from_edges(n_, all);
  }

 private:
  std::uint64_t key(NodeId i, NodeId j) const {
    if (i > j) std::swap(i, j);
    return (static_cast<std::uint64_t>(i) << 32) | static_cast<std::uint32_t>(j);
  }

  std::size_t n_ = 0;
  std::vector<Edge> present_, missing_;
  std::unordered_set<std::uint64_t> missing_set_;
  Network observed_;
};

/// Text format:
///   # nodes=N
///   i j                     observed edge
///   # observed_block=a..b   pairs inside [a,b] are observed (repeatable)
///   # observed_rows=a..b    pairs touching [a,b] are observed (repeatable)
///   [missing]
///   i j                     unobserved pair
/// With any block or row line, pairs covered by none of them are missing.
inline PartialAdjacency parse_partial_adjacency(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  long long n = -1;
  bool in_missing = false;
  std::vector<Edge> present, missing;
  std::vector<std::pair<long long, long long>> blocks, rows;
  long long max_id = -1;
  auto range = [&](const std::string& v, const char* what) {
    const auto dots = v.find("..");
    long long a = 0, b = 0;
    if (dots == std::string::npos || !detail::parse_int(detail::trim(v.substr(0, dots)), a) ||
        !detail::parse_int(detail::trim(v.substr(dots + 2)), b) || a > b || a < 0)
      throw ParseError(std::string("malformed ") + what + " at line " + std::to_string(lineno));
    return std::make_pair(a, b);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t == "[missing]") {
      in_missing = true;
      continue;
    }
    if (t[0] == '#') {
      const std::string body = detail::trim(t.substr(1));
      if (body.rfind("nodes=", 0) == 0) {
        if (!detail::parse_int(detail::trim(body.substr(6)), n) || n < 0)
          throw ParseError("malformed node count at line " + std::to_string(lineno));
      } else if (body.rfind("observed_block=", 0) == 0) {
        blocks.push_back(range(body.substr(15), "observed_block"));
      } else if (body.rfind("observed_rows=", 0) == 0) {
        rows.push_back(range(body.substr(14), "observed_rows"));
      } else if (body == "directed") {
        throw ParseError("directed graphs are not supported (line " + std::to_string(lineno) + ")");
      }
      continue;
    }
    const auto f = detail::split_fields(t);
    long long a = 0, b = 0;
    if (f.size() != 2 || !detail::parse_int(f[0], a) || !detail::parse_int(f[1], b) || a < 0 || b < 0)
      throw ParseError("malformed pair at line " + std::to_string(lineno));
    if (a == b) throw ParseError("self-loop at line " + std::to_string(lineno));
    if (n >= 0 && (a >= n || b >= n)) throw ParseError("id out of range at line " + std::to_string(lineno));
    max_id = std::max({max_id, a, b});
    (in_missing ? missing : present).push_back({static_cast<NodeId>(a), static_cast<NodeId>(b)});
  }
  if (n < 0) n = max_id + 1;
  for (auto [a, b] : blocks)
    if (b >= n) throw ParseError("observed_block exceeds the node count");
  for (auto [a, b] : rows)
    if (b >= n) throw ParseError("observed_rows exceeds the node count");
  if (!blocks.empty() || !rows.empty()) {
    auto covered = [&](long long i, long long j) {
      for (auto [a, b] : blocks)
        if (i >= a && i <= b && j >= a && j <= b) return true;
      for (auto [a, b] : rows)
        if ((i >= a && i <= b) || (j >= a && j <= b)) return true;
      return false;
    };
    std::vector<Edge> sorted_present = present;
    for (auto& e : sorted_present)
      if (e.first > e.second) std::swap(e.first, e.second);
    std::sort(sorted_present.begin(), sorted_present.end());
    for (long long i = 0; i < n; ++i)
      for (long long j = i + 1; j < n; ++j)
        if (!covered(i, j) && !std::binary_search(sorted_present.begin(), sorted_present.end(),
                                                  Edge{static_cast<NodeId>(i), static_cast<NodeId>(j)}))
          missing.push_back({static_cast<NodeId>(i), static_cast<NodeId>(j)});
  }
  return PartialAdjacency(static_cast<std::size_t>(n), std::move(present), std::move(missing));
}

inline PartialAdjacency load_partial_adjacency(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open partial adjacency " + path.string());
  return parse_partial_adjacency(in);
}

inline void write_partial_adjacency(const PartialAdjacency& p, std::ostream& out) {
  out << "# nodes=" << p.size() << '\n';
  for (auto [a, b] : p.present()) out << a << ' ' << b << '\n';
  out << "[missing]\n";
  for (auto [a, b] : p.missing()) out << a << ' ' << b << '\n';
}

/// Beta(alpha, beta) over the shared edge probability of missing pairs.
struct EdgePosterior {
  double alpha = 1.0;
  double beta = 1.0;
  std::size_t observed_pairs = 0;
  std::size_t observed_edges = 0;

  double mean() const { return alpha / (alpha + beta); }
};

/// alpha = observed edges + 1, beta = observed pairs - observed edges + 1.
inline EdgePosterior fit_edge_posterior(const PartialAdjacency& p) {
  EdgePosterior post;
  post.observed_pairs = p.observed_pairs();
  post.observed_edges = p.present().size();
  if (post.observed_pairs == 0) throw IdentificationError("edge posterior: no observed pairs");
  post.alpha = static_cast<double>(post.observed_edges) + 1.0;
  post.beta = static_cast<double>(post.observed_pairs - post.observed_edges) + 1.0;
  return post;
}

/// One completion: p ~ Beta(alpha, beta), then each missing pair ~ Bernoulli(p).
inline Network sample_completion(const PartialAdjacency& p, const EdgePosterior& post, std::uint64_t seed) {
  if (p.missing().empty()) return p.observed_network();
  Rng rng = make_rng(derive_seed(seed, stream::kCompletion));
  const double prob = beta_draw(rng, post.alpha, post.beta);
  std::vector<Edge> edges = p.present();
  for (const auto& e : p.missing())
    if (bernoulli(rng, prob)) edges.push_back(e);
  return Network::from_edges(p.size(), edges);
}

/// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) comp_ += (sum_ - t) + x;
    else comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct MonteCarloVariance {
  double mean = 0.0;
  double std_error = 0.0;
  double infeasible_fraction = 0.0;
  std::size_t completions = 0;
};

namespace detail {

/// Scores designs by averaging the design objective over a fixed batch of completions.
class CompletionBatchEvaluator {
 public:
  CompletionBatchEvaluator(const PartialAdjacency& partial, const PilotPlan& plan, const DesignProblem& problem,
                           std::vector<Network> completions)
      : union_(partial.union_network()), base_(union_, plan, problem), completions_(std::move(completions)) {
    evaluators_.reserve(completions_.size());
    for (const auto& g : completions_) evaluators_.emplace_back(g, plan, problem);
  }

  const Network& network() const { return union_; }
  const DesignProblem& problem() const { return base_.problem(); }
  const std::vector<NodeId>& free_r() const { return base_.free_r(); }
  const std::vector<NodeId>& free_d() const { return base_.free_d(); }
  bool allowed(NodeId i) const { return base_.allowed(i); }
  bool fixed(NodeId i) const { return base_.fixed(i); }
  std::uint8_t fixed_value(NodeId i) const { return base_.fixed_value(i); }
  int free_bits() const { return base_.free_bits(); }
  void canonicalize(Assignment& a) const { base_.canonicalize(a); }

  /// penalty: structural violations, plus completions beyond half that are infeasible;
  /// excess: infeasible fraction; value: mean objective over feasible completions.
  DesignScore score(const Assignment& a) const {
    DesignScore out;
    std::size_t bad = 0;
    CompensatedSum sum;
    std::size_t good = 0;
    for (const auto& ev : evaluators_) {
      const auto s = ev.score(a);
      if (!s.feasible()) {
        ++bad;
        if (out.reason.empty()) out.reason = s.reason;
        continue;
      }
      sum.add(s.value);
      ++good;
    }
    const std::size_t K = evaluators_.size();
    out.penalty = bad * 2 > K ? static_cast<long>(bad - K / 2) : 0;
    out.excess = K ? static_cast<double>(bad) / static_cast<double>(K) : 0.0;
    out.value = good ? sum.value() / static_cast<double>(good) : 0.0;
    if (out.penalty > 0) out.value = 0.0;
    return out;
  }

 private:
  Network union_;
  DesignEvaluator base_;
  std::vector<Network> completions_;
  std::vector<DesignEvaluator> evaluators_;
};

inline std::vector<Network> completion_batch(const PartialAdjacency& p, const EdgePosterior& post, std::size_t K,
                                             std::uint64_t seed, std::uint64_t offset) {
  std::vector<Network> out;
  out.reserve(K);
  for (std::size_t k = 0; k < K; ++k) out.push_back(sample_completion(p, post, derive_seed(seed, offset, k)));
  return out;
}

}  // namespace detail

/// Average over K posterior completions of the design objective for a fixed
/// assignment, with its Monte-Carlo standard error. Infeasible completions are
/// excluded from the average and reported as a fraction; more than half is an error.
inline MonteCarloVariance mc_expected_variance(const PartialAdjacency& partial, const EdgePosterior& post,
                                               const PilotPlan& plan, const DesignProblem& problem,
                                               const Assignment& a, std::size_t K, std::uint64_t seed) {
  if (K == 0) throw ParameterError("mc_expected_variance: K must be >= 1");
  MonteCarloVariance out;
  CompensatedSum sum, sum_sq;
  std::size_t bad = 0, good = 0;
  std::string reason;
  const std::size_t draws = partial.missing().empty() ? 1 : K;
  for (std::size_t k = 0; k < draws; ++k) {
    const Network g = sample_completion(partial, post, derive_seed(seed, stream::kCompletion, k));
    const auto s = DesignEvaluator(g, plan, problem).score(a);
    if (!s.feasible()) {
      ++bad;
      if (reason.empty()) reason = s.reason;
      continue;
    }
    sum.add(s.value);
    sum_sq.add(s.value * s.value);
    ++good;
  }
  out.completions = K;
  out.infeasible_fraction = static_cast<double>(bad) / static_cast<double>(draws);
  if (bad * 2 > draws)
    throw DegenerateAssignmentError("expected variance: " + std::to_string(bad) + " of " + std::to_string(draws) +
                                    " completions are infeasible (" + reason + ")");
  const double g = static_cast<double>(good);
  out.mean = sum.value() / g;
  if (good > 1 && draws > 1) {
    const double var = std::max(0.0, (sum_sq.value() - g * out.mean * out.mean) / (g - 1.0));
    out.std_error = std::sqrt(var / g);
  }
  return out;
}

struct PartialDesignSolution {
  DesignSolution solution;
  MonteCarloVariance final_score;  // re-scored on fresh completions
};

/// Each restart draws its own batch of K completions (common random numbers
/// within the restart) and runs the design search against the batch average;
/// the restart winners are re-scored on 4K fresh completions.
inline PartialDesignSolution design_partial(const PartialAdjacency& partial, const PilotPlan& plan,
                                            const DesignProblem& problem, const SolverConfig& solver = {},
                                            std::size_t K = 200) {
  PartialDesignSolution out;
  if (partial.missing().empty()) {
    out.solution = design_second_wave(partial.observed_network(), plan, problem, solver);
    out.final_score.mean = out.solution.objective;
    out.final_score.completions = 0;
    return out;
  }
  if (K == 0) throw ParameterError("design_partial: K must be >= 1");
  for (const auto& node : plan.pilot_set)
    for (NodeId c : problem.candidates)
      if (c == node) throw ParameterError("design_partial: the pilot component overlaps the candidate set");
  const auto post = fit_edge_posterior(partial);
  const int restarts = std::max(1, solver.restarts);
  std::vector<DesignSolution> winners;
  for (int r = 0; r < restarts; ++r) {
    detail::CompletionBatchEvaluator ev(partial, plan, problem,
                                        detail::completion_batch(partial, post, K, solver.seed,
                                                                 stream::kCompletion * 1000 + static_cast<std::uint64_t>(r)));
    SolverConfig cfg = solver;
    cfg.restarts = 1;
    cfg.seed = derive_seed(solver.seed, stream::kDesign, static_cast<std::uint64_t>(r));
    if (cfg.backend == SolverConfig::Backend::Auto) cfg.backend = SolverConfig::Backend::Anneal;
    winners.push_back(detail::solve(ev, cfg));
  }
  const std::uint64_t final_seed = derive_seed(solver.seed, stream::kCompletion, 0xF1A1);
  bool have = false;
  DesignScore best_score;
  for (auto& w : winners) {
    MonteCarloVariance mc;
    try {
      mc = mc_expected_variance(partial, post, plan, problem, w.assignment, 4 * K, final_seed);
    } catch (const DegenerateAssignmentError&) {
      continue;
    }
    DesignScore s;
    s.excess = mc.infeasible_fraction;
    s.value = mc.mean;
    const int c = have ? compare_scores(s, best_score, solver.tie_tolerance) : -1;
    if (c < 0 || (c == 0 && detail::assignment_lex_less(w.assignment, out.solution.assignment))) {
      have = true;
      best_score = s;
      out.solution = w;
      out.final_score = mc;
    }
  }
  if (!have) throw InfeasibleError("design_partial: no restart produced an assignment feasible on most completions");
  out.solution.objective = out.final_score.mean;
  out.solution.feasible = true;
  return out;
}

}  // namespace eli
