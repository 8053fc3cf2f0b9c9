#pragma once

// Experiment runner: INI configuration, the full two-wave protocol, the
// Monte-Carlo benchmark, the regret-versus-oracle study and the coverage study.

#include <atomic>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "eli/competitors.hpp"
#include "eli/design.hpp"
#include "eli/estimators.hpp"
#include "eli/graph.hpp"
#include "eli/outcome.hpp"
#include "eli/pilot.hpp"
#include "eli/rng.hpp"

namespace eli {

struct ExperimentConfig {
  // [network]
  std::string network_source = "er";  // er | ab | file
  std::size_t nodes = 200;
  double edge_prob = 0.0;  // 0: 2 / nodes
  std::string network_path;

  // [variance_model]
  VarianceModel truth{0.5, 0.5, 1.0, 0.1, 1, {}, {}};
  MeanSpec mean;

  // [estimands]
  std::vector<std::string> estimands{"overall"};
  std::vector<int> levels{1, 2};
  int direct_s = 0;
  int spillover_s = 1;
  std::vector<double> scheme_weights;

  // [pilot]
  std::size_t pilot_size = 0;  // 0: ceil((n / max degree)^(2/3))
  double pilot_min_fraction = 1.0;
  long within_floor = -1;  // -1: ceil(size / 4)
  double pilot_p_treat = 0.5;
  VarianceFamily family = VarianceFamily::Parametric;
  double alpha_max = 0.3;
  int pilot_restarts = 8;

  // [design]
  std::size_t participants = 100;
  double participants_min_fraction = 1.0;
  SolverConfig solver;
  bool enforce_d_le_r = false;
  double level = 0.95;
  std::size_t completions = 200;
  double mde = 1.0;
  double mde_a = 0.05;
  VarianceBounds bounds;

  // [benchmark]
  std::size_t replications = 50;
  std::vector<std::pair<double, double>> designs{{0.0, 0.0}, {0.5, 0.5}, {0.5, 1.0}};
  std::vector<std::string> methods{"eli", "random+", "cluster+", "saturation1+", "saturation2+", "saturation3+"};
  double saturation_rho = 0.1;
  std::vector<std::size_t> regret_n{40, 80, 160};
  std::size_t regret_reps = 50;
  int oracle_restarts = 16;
  std::size_t coverage_reps = 1000;
  std::size_t coverage_nodes = 300;
  std::size_t coverage_participants = 150;

  std::uint64_t seed = 1;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (!in || !(in >> std::ws).eof()) throw ParseError("config: bad value '" + text + "' for " + key);
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ParseError("config: bad boolean '" + text + "' for " + key);
}

inline std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

inline std::string join(const std::vector<std::string>& v, const char* sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

template <class T>
std::string join_numbers(const std::vector<T>& v) {
  std::vector<std::string> parts;
  for (const auto& x : v) {
    if constexpr (std::is_floating_point_v<T>) parts.push_back(fmt(x));
    else parts.push_back(std::to_string(x));
  }
  return join(parts);
}

inline const std::set<std::string>& known_methods() {
  static const std::set<std::string> m{"eli", "random", "cluster", "saturation1", "saturation2", "saturation3"};
  return m;
}

}  // namespace detail

inline void validate_config(const ExperimentConfig& c) {
  if (c.network_source != "er" && c.network_source != "ab" && c.network_source != "file")
    throw ParameterError("config: network source must be er, ab or file");
  if (c.network_source == "file" && c.network_path.empty()) throw ParameterError("config: network path is empty");
  if (c.network_source != "file" && c.nodes < 2) throw ParameterError("config: nodes must be >= 2");
  c.truth.validate();
  for (double d : {0.0, 1.0})
    for (double share : {0.0, 1.0})
      if (!(c.truth.mu + c.truth.beta1 * d + c.truth.beta2 * share >= 0.0))
        throw ParameterError("config: variance model is negative at a corner of the exposure domain");
  if (c.estimands.empty()) throw ParameterError("config: no estimands");
  for (const auto& e : c.estimands)
    if (e != "overall" && e != "direct" && e != "spillover") throw ParameterError("config: unknown estimand '" + e + "'");
  if (c.levels.empty()) throw ParameterError("config: no degree levels");
  if (!c.scheme_weights.empty() && c.scheme_weights.size() != c.estimands.size())
    throw ParameterError("config: estimand weights must match the estimand list");
  if (!(c.pilot_min_fraction > 0.0 && c.pilot_min_fraction <= 1.0))
    throw ParameterError("config: pilot min_fraction must lie in (0,1]");
  if (!(c.participants_min_fraction > 0.0 && c.participants_min_fraction <= 1.0))
    throw ParameterError("config: design min_fraction must lie in (0,1]");
  if (c.participants < 1) throw ParameterError("config: participants must be >= 1");
  if (!(c.level > 0.0 && c.level < 1.0)) throw ParameterError("config: level must lie in (0,1)");
  if (c.replications < 1) throw ParameterError("config: replication count must be >= 1");
  if (c.designs.empty()) throw ParameterError("config: no benchmark designs");
  for (const auto& m : c.methods) {
    std::string base = m;
    if (!base.empty() && base.back() == '+') base.pop_back();
    if (!detail::known_methods().count(base) || m == "eli+") throw ParameterError("config: unknown method '" + m + "'");
  }
  c.bounds.validate();
}

inline ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto num = [](auto& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) {
      field = detail::parse_value<std::decay_t<decltype(field)>>(k, v);
    };
  };
  auto str = [](std::string& field) -> Setter { return [&field](const std::string&, const std::string& v) { field = v; }; };
  std::map<std::string, std::map<std::string, Setter>> keys;
  keys["network"] = {{"source", str(c.network_source)},
                     {"nodes", num(c.nodes)},
                     {"edge_prob", num(c.edge_prob)},
                     {"path", str(c.network_path)}};
  keys["variance_model"] = {{"mu", num(c.truth.mu)},         {"beta1", num(c.truth.beta1)},
                            {"beta2", num(c.truth.beta2)},   {"alpha", num(c.truth.alpha)},
                            {"M", num(c.truth.M)},           {"gamma1", num(c.mean.gamma1)},
                            {"gamma2", num(c.mean.gamma2)}};
  keys["estimands"] = {
      {"schemes", [&](const std::string&, const std::string& v) { c.estimands = detail::split_list(v); }},
      {"levels",
       [&](const std::string& k, const std::string& v) {
         c.levels.clear();
         for (const auto& x : detail::split_list(v)) c.levels.push_back(detail::parse_value<int>(k, x));
       }},
      {"direct_s", num(c.direct_s)},
      {"spillover_s", num(c.spillover_s)},
      {"weights", [&](const std::string& k, const std::string& v) {
         c.scheme_weights.clear();
         for (const auto& x : detail::split_list(v)) c.scheme_weights.push_back(detail::parse_value<double>(k, x));
       }}};
  keys["pilot"] = {{"size", num(c.pilot_size)},
                   {"min_fraction", num(c.pilot_min_fraction)},
                   {"within_floor", num(c.within_floor)},
                   {"p_treat", num(c.pilot_p_treat)},
                   {"family",
                    [&](const std::string& k, const std::string& v) {
                      if (v == "parametric") c.family = VarianceFamily::Parametric;
                      else if (v == "cellmeans") c.family = VarianceFamily::CellMeans;
                      else throw ParseError("config: bad value '" + v + "' for " + k);
                    }},
                   {"alpha_max", num(c.alpha_max)},
                   {"restarts", num(c.pilot_restarts)}};
  keys["design"] = {
      {"participants", num(c.participants)},
      {"min_fraction", num(c.participants_min_fraction)},
      {"backend", [&](const std::string&, const std::string& v) { c.solver.backend = parse_backend(v); }},
      {"restarts", num(c.solver.restarts)},
      {"iterations", num(c.solver.iterations)},
      {"enforce_d_le_r", [&](const std::string& k, const std::string& v) { c.enforce_d_le_r = detail::parse_bool(k, v); }},
      {"level", num(c.level)},
      {"completions", num(c.completions)},
      {"mde", num(c.mde)},
      {"mde_a", num(c.mde_a)},
      {"b_sigma", num(c.bounds.B_sigma)},
      {"l_eta", num(c.bounds.L_eta)},
      {"u_eta", num(c.bounds.U_eta)}};
  keys["benchmark"] = {
      {"replications", num(c.replications)},
      {"designs",
       [&](const std::string& k, const std::string& v) {
         c.designs.clear();
         for (const auto& x : detail::split_list(v)) {
           const auto colon = x.find(':');
           if (colon == std::string::npos) throw ParseError("config: design '" + x + "' must be beta1:beta2");
           c.designs.emplace_back(detail::parse_value<double>(k, x.substr(0, colon)),
                                  detail::parse_value<double>(k, x.substr(colon + 1)));
         }
       }},
      {"methods", [&](const std::string&, const std::string& v) { c.methods = detail::split_list(v); }},
      {"saturation_rho", num(c.saturation_rho)},
      {"regret_n",
       [&](const std::string& k, const std::string& v) {
         c.regret_n.clear();
         for (const auto& x : detail::split_list(v)) c.regret_n.push_back(detail::parse_value<std::size_t>(k, x));
       }},
      {"regret_reps", num(c.regret_reps)},
      {"oracle_restarts", num(c.oracle_restarts)},
      {"coverage_reps", num(c.coverage_reps)},
      {"coverage_nodes", num(c.coverage_nodes)},
      {"coverage_participants", num(c.coverage_participants)},
      {"seed", num(c.seed)}};

  for (const auto& [section, body] : tree) {
    auto sec = keys.find(section);
    if (sec == keys.end()) throw ParseError("config: unknown section [" + section + "]");
    for (const auto& [key, node] : body) {
      auto it = sec->second.find(key);
      if (it == sec->second.end()) throw ParseError("config: unknown key '" + key + "' in [" + section + "]");
      it->second(section + "." + key, detail::trim(node.data()));
    }
  }
  c.truth.M = std::max(1, c.truth.M);
  validate_config(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path.string());
  return parse_config(in);
}

/// Every effective setting, one "section.key=value" line each, in a fixed order.
inline std::string canonical_config(const ExperimentConfig& c) {
  using detail::fmt;
  std::ostringstream o;
  o << "network.source=" << c.network_source << "\nnetwork.nodes=" << c.nodes << "\nnetwork.edge_prob="
    << fmt(c.edge_prob) << "\nnetwork.path=" << c.network_path << "\nvariance_model.mu=" << fmt(c.truth.mu)
    << "\nvariance_model.beta1=" << fmt(c.truth.beta1) << "\nvariance_model.beta2=" << fmt(c.truth.beta2)
    << "\nvariance_model.alpha=" << fmt(c.truth.alpha) << "\nvariance_model.M=" << c.truth.M
    << "\nvariance_model.gamma1=" << fmt(c.mean.gamma1) << "\nvariance_model.gamma2=" << fmt(c.mean.gamma2)
    << "\nestimands.schemes=" << detail::join(c.estimands) << "\nestimands.levels=" << detail::join_numbers(c.levels)
    << "\nestimands.direct_s=" << c.direct_s << "\nestimands.spillover_s=" << c.spillover_s
    << "\nestimands.weights=" << detail::join_numbers(c.scheme_weights) << "\npilot.size=" << c.pilot_size
    << "\npilot.min_fraction=" << fmt(c.pilot_min_fraction) << "\npilot.within_floor=" << c.within_floor
    << "\npilot.p_treat=" << fmt(c.pilot_p_treat)
    << "\npilot.family=" << (c.family == VarianceFamily::Parametric ? "parametric" : "cellmeans")
    << "\npilot.alpha_max=" << fmt(c.alpha_max) << "\npilot.restarts=" << c.pilot_restarts
    << "\ndesign.participants=" << c.participants << "\ndesign.min_fraction=" << fmt(c.participants_min_fraction)
    << "\ndesign.backend=" << backend_name(c.solver.backend) << "\ndesign.restarts=" << c.solver.restarts
    << "\ndesign.iterations=" << c.solver.iterations << "\ndesign.enforce_d_le_r=" << c.enforce_d_le_r
    << "\ndesign.level=" << fmt(c.level) << "\ndesign.completions=" << c.completions << "\ndesign.mde=" << fmt(c.mde)
    << "\ndesign.mde_a=" << fmt(c.mde_a) << "\ndesign.b_sigma=" << fmt(c.bounds.B_sigma)
    << "\ndesign.l_eta=" << fmt(c.bounds.L_eta) << "\ndesign.u_eta=" << fmt(c.bounds.U_eta)
    << "\nbenchmark.replications=" << c.replications << "\nbenchmark.designs=";
  for (std::size_t i = 0; i < c.designs.size(); ++i)
    o << (i ? " " : "") << fmt(c.designs[i].first) << ':' << fmt(c.designs[i].second);
  o << "\nbenchmark.methods=" << detail::join(c.methods) << "\nbenchmark.saturation_rho=" << fmt(c.saturation_rho)
    << "\nbenchmark.regret_n=" << detail::join_numbers(c.regret_n) << "\nbenchmark.regret_reps=" << c.regret_reps
    << "\nbenchmark.oracle_restarts=" << c.oracle_restarts << "\nbenchmark.coverage_reps=" << c.coverage_reps
    << "\nbenchmark.coverage_nodes=" << c.coverage_nodes
    << "\nbenchmark.coverage_participants=" << c.coverage_participants << "\nbenchmark.seed=" << c.seed << '\n';
  return o.str();
}

/// 64-bit FNV-1a of the canonical configuration, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::vector<WeightScheme> make_schemes(const ExperimentConfig& c) {
  std::vector<WeightScheme> out;
  for (const auto& e : c.estimands) {
    if (e == "overall") out.push_back(overall_effect(c.levels));
    else if (e == "direct") out.push_back(direct_effect(c.levels, c.direct_s));
    else if (e == "spillover") out.push_back(spillover_effect(c.levels, c.spillover_s));
    else throw ParameterError("unknown estimand '" + e + "'");
  }
  return out;
}

inline Network make_network(const ExperimentConfig& c, std::uint64_t seed) {
  if (c.network_source == "file") return load_edge_list(c.network_path);
  if (c.network_source == "ab") return generate_ab(c.nodes, derive_seed(seed, stream::kGraph));
  const double p = c.edge_prob > 0.0 ? c.edge_prob : 2.0 / static_cast<double>(c.nodes);
  return generate_er(c.nodes, p, derive_seed(seed, stream::kGraph));
}

inline std::size_t pilot_size_for(const ExperimentConfig& c, const Network& net) {
  return c.pilot_size ? c.pilot_size : default_pilot_size(c.participants, std::max(1, net.max_degree()));
}

inline DesignProblem make_problem(const ExperimentConfig& c, const VarianceModel& model) {
  DesignProblem p;
  p.schemes = make_schemes(c);
  p.model = model;
  p.M = model.M;
  p.bounds = c.bounds;
  p.scheme_weights = c.scheme_weights;
  p.n_max = static_cast<long>(c.participants);
  p.n_min = std::max<long>(1, static_cast<long>(std::ceil(c.participants_min_fraction * p.n_max - 1e-9)));
  p.enforce_d_le_r = c.enforce_d_le_r;
  return p;
}

// ---------------------------------------------------------------------------
// Two-wave protocol

struct TwoWaveResult {
  PilotPlan plan;
  FittedVarianceModel fit;
  DesignSolution design;
  std::vector<EffectEstimate> estimates;
  std::vector<double> true_variance;  // per scheme, under the simulator's model
  std::vector<double> estimand;       // tau_n(w) per scheme
  OutcomeDraw pilot_outcomes;
  OutcomeDraw main_outcomes;
  int pilot_treatment_draws = 0;
  long pilot_delta = 0;
};

namespace detail {

template <class F>
auto run_stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(std::string(name) + ": " + e.what());
  } catch (const IdentificationError& e) {
    throw IdentificationError(std::string(name) + ": " + e.what());
  } catch (const ParameterError& e) {
    throw ParameterError(std::string(name) + ": " + e.what());
  } catch (const Error& e) {
    throw Error(std::string(name) + ": " + e.what());
  }
}

/// The mean fit needs rank 3 on (1, d, share) and the variance fit needs the
/// same after dropping leverage-one rows. Both depend on treatments only.
inline bool pilot_identified(const Network& net, const PilotPlan& plan) {
  std::vector<Exposure> ex;
  for (NodeId i : plan.pilot_set) ex.push_back(exposure(net, plan.pilot_treatments, i));
  try {
    require_identified(ex, "pilot");
    const Eigen::MatrixXd X = exposure_design(ex);
    const Eigen::MatrixXd XtXinv = (X.transpose() * X).inverse();
    std::vector<Exposure> kept;
    for (std::size_t a = 0; a < ex.size(); ++a) {
      const auto r = static_cast<Eigen::Index>(a);
      if (X.row(r) * XtXinv * X.row(r).transpose() < 1.0 - 1e-9) kept.push_back(ex[a]);
    }
    require_identified(kept, "pilot");
  } catch (const IdentificationError&) {
    return false;
  }
  return true;
}

inline void audit_exclusion(const PilotPlan& plan, const Assignment& a) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.R[i] && plan.in_exclusion[i])
      throw Error("exclusion audit: participant " + std::to_string(i) + " lies in the pilot exclusion set");
}

}  // namespace detail

inline constexpr int kMaxPilotTreatmentDraws = 20;

/// Draws pilot treatments until the pilot exposures identify the mean model
/// (checked before any outcome exists). Returns the number of draws used.
inline int randomize_identified_pilot(const Network& net, PilotPlan& plan, double p_treat, std::uint64_t seed) {
  for (int attempt = 0; attempt < kMaxPilotTreatmentDraws; ++attempt) {
    randomize_pilot_treatments(plan, p_treat, derive_seed(seed, stream::kPilotTreat, static_cast<std::uint64_t>(attempt)));
    if (detail::pilot_identified(net, plan)) return attempt + 1;
  }
  throw IdentificationError("pilot randomization: no treatment draw identifies the mean model in " +
                            std::to_string(kMaxPilotTreatmentDraws) + " attempts");
}

/// Min-cut pilot with the configured size and within-pilot floor. When no
/// treatment draw identifies the model, the floor is doubled and the pilot
/// reselected; nothing here looks at outcomes.
inline PilotPlan select_identified_pilot(const Network& net, const ExperimentConfig& cfg, std::uint64_t seed,
                                         long* delta_used = nullptr, int* draws_used = nullptr) {
  const long m = std::min<long>(static_cast<long>(pilot_size_for(cfg, net)), static_cast<long>(net.size()));
  const long m_min = std::max<long>(1, static_cast<long>(std::ceil(cfg.pilot_min_fraction * m - 1e-9)));
  long delta = cfg.within_floor >= 0 ? cfg.within_floor : default_within_floor(static_cast<std::size_t>(m));
  const long delta_cap = m * (m - 1);
  PilotSolverConfig ps;
  ps.restarts = cfg.pilot_restarts;
  for (std::uint64_t round = 0;; ++round) {
    ps.seed = derive_seed(seed, stream::kPilotSelect, round);
    PilotPlan plan = select_pilot(net, m_min, m, delta, cfg.truth.M, ps);
    try {
      const int draws = randomize_identified_pilot(net, plan, cfg.pilot_p_treat, derive_seed(seed, stream::kPilotTreat, round));
      if (delta_used) *delta_used = delta;
      if (draws_used) *draws_used = draws;
      return plan;
    } catch (const IdentificationError&) {
      if (delta >= delta_cap) throw;
      delta = std::min(delta_cap, std::max(delta + 2, 2 * delta));
    }
  }
}

/// Pilot selection, pilot randomization, pilot outcomes, variance fit, second
/// wave design, main outcomes, estimates with plug-in variance and intervals.
/// Pilot treatments are redrawn (before any outcome is seen) until the pilot
/// exposures identify the mean model.
inline TwoWaveResult run_two_wave(const Network& net, const ExperimentConfig& cfg, std::uint64_t seed) {
  TwoWaveResult out;
  const auto& truth = cfg.truth;
  out.plan = detail::run_stage("pilot selection", [&] {
    return select_identified_pilot(net, cfg, seed, &out.pilot_delta, &out.pilot_treatment_draws);
  });

  out.pilot_outcomes = detail::run_stage("pilot outcomes", [&] {
    return simulate_outcomes(net, out.plan.pilot_treatments, cfg.mean, truth, derive_seed(seed, stream::kPilotOutcome),
                             out.plan.pilot_set);
  });
  out.fit = detail::run_stage("variance fit", [&] {
    return fit_variance_model(net, out.plan, out.pilot_outcomes.y, cfg.family, cfg.alpha_max);
  });
  out.fit.model.M = truth.M;

  const DesignProblem problem = make_problem(cfg, out.fit.model);
  SolverConfig solver = cfg.solver;
  solver.seed = derive_seed(seed, stream::kDesign);
  out.design = detail::run_stage("second-wave design", [&] { return design_second_wave(net, out.plan, problem, solver); });
  detail::audit_exclusion(out.plan, out.design.assignment);

  const Assignment& a = out.design.assignment;
  out.main_outcomes = detail::run_stage("main outcomes", [&] {
    return simulate_outcomes(net, a.D, cfg.mean, truth, derive_seed(seed, stream::kMainOutcome), a.participant_ids());
  });
  detail::run_stage("estimation", [&] {
    const NeighborhoodIndex rings(net, truth.M);
    for (const auto& scheme : problem.schemes) {
      auto est = estimate_effect(scheme, net, a, out.main_outcomes.y);
      est = with_variance(est, plugin_variance(scheme, net, a, out.fit.model, rings), cfg.level);
      out.estimates.push_back(est);
      out.true_variance.push_back(plugin_variance(scheme, net, a, truth, rings));
      out.estimand.push_back(conditional_estimand(scheme, net, a, cfg.mean));
    }
    return 0;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Parallel replication driver

/// Runs body(r) for r in [0, count) on `threads` workers. Results must be
/// written to slot r so that aggregation order never depends on scheduling.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t r = 0; r < count; ++r) body(r);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t r; (r = next.fetch_add(1)) < count;) {
        try {
          body(r);
        } catch (...) {
          errors[r] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Benchmark

struct ReplicationRecord {
  std::size_t rep = 0;
  std::string method;
  double beta1 = 0.0, beta2 = 0.0;
  std::string scheme;
  std::size_t participants = 0;
  std::size_t pilot_size = 0;
  bool ok = false;
  std::string status;
  double true_variance = 0.0;
  double tau_hat = 0.0;
  double estimand = 0.0;
};

struct BenchmarkRow {
  std::string method;
  double beta1 = 0.0, beta2 = 0.0;
  std::string scheme;
  std::size_t successes = 0;
  std::size_t failures = 0;
  double mean_variance = 0.0;       // mean over replications of Var(tau_hat | design)
  double mc_std_error = 0.0;
  double empirical_variance = 0.0;  // mean of (tau_hat - tau_n)^2 over replications
  double eli_better_fraction = 0.0; // paired: fraction of replications where ELI has lower variance
  double mean_pilot_size = 0.0;
};

struct BenchmarkReport {
  std::string config_hash;
  std::vector<ReplicationRecord> records;
  std::vector<BenchmarkRow> rows;
  double runtime_seconds = 0.0;
};

namespace detail {

inline std::string method_base(const std::string& m) {
  return !m.empty() && m.back() == '+' ? m.substr(0, m.size() - 1) : m;
}

inline Assignment competitor_design(const std::string& method, const Network& net, const Clustering& clusters,
                                    std::size_t budget, const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto base = method_base(method);
  if (base == "random") return design_random(net, budget, 0.5, seed);
  if (base == "cluster") return design_cluster(net, clusters, budget, seed);
  const SaturationModel sm{1.0, cfg.saturation_rho};
  if (base == "saturation1") return design_saturation(net, clusters, 1, budget, sm, seed);
  if (base == "saturation2") return design_saturation(net, clusters, 2, budget, sm, seed);
  if (base == "saturation3") return design_saturation(net, clusters, 3, budget, sm, seed);
  throw ParameterError("unknown method '" + method + "'");
}

}  // namespace detail

/// Per replication: a fresh network (when generated), every method designs,
/// outcomes come from the true model and tau_hat is computed. The primary
/// metric is the exact conditional variance of tau_hat under the true model.
inline BenchmarkReport run_benchmark(const ExperimentConfig& cfg, std::size_t threads = 1) {
  validate_config(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  BenchmarkReport report;
  report.config_hash = config_hash(cfg);
  const auto schemes = make_schemes(cfg);
  const std::size_t D = cfg.designs.size(), Mth = cfg.methods.size(), S = schemes.size();
  std::vector<std::vector<ReplicationRecord>> per_rep(cfg.replications);

  parallel_for(cfg.replications, threads, [&](std::size_t r) {
    const std::uint64_t rep_seed = derive_seed(cfg.seed, stream::kReplication, r);
    const Network net = make_network(cfg, rep_seed);
    const Clustering clusters = cluster_3net(net, derive_seed(rep_seed, stream::kCompetitor));
    const std::size_t m = pilot_size_for(cfg, net);
    auto& out = per_rep[r];
    for (std::size_t d = 0; d < D; ++d) {
      ExperimentConfig dc = cfg;
      dc.truth.beta1 = cfg.designs[d].first;
      dc.truth.beta2 = cfg.designs[d].second;
      const std::uint64_t dseed = derive_seed(rep_seed, stream::kReplication, d);
      const NeighborhoodIndex rings(net, dc.truth.M);
      for (std::size_t k = 0; k < Mth; ++k) {
        const std::string& method = cfg.methods[k];
        std::vector<ReplicationRecord> recs(S);
        for (std::size_t s = 0; s < S; ++s) {
          recs[s].rep = r;
          recs[s].method = method;
          recs[s].beta1 = dc.truth.beta1;
          recs[s].beta2 = dc.truth.beta2;
          recs[s].scheme = schemes[s].id;
        }
        try {
          if (method == "eli") {
            const auto tw = run_two_wave(net, dc, dseed);
            for (std::size_t s = 0; s < S; ++s) {
              recs[s].ok = true;
              recs[s].status = "ok";
              recs[s].participants = tw.design.assignment.participants();
              recs[s].pilot_size = tw.plan.size();
              recs[s].true_variance = tw.true_variance[s];
              recs[s].tau_hat = tw.estimates[s].tau_hat;
              recs[s].estimand = tw.estimand[s];
            }
          } else {
            const bool plus = method.back() == '+';
            const std::size_t budget = std::min(net.size(), cfg.participants + (plus ? m : 0));
            const Assignment a = detail::competitor_design(method, net, clusters, budget, dc,
                                                           derive_seed(dseed, stream::kCompetitor, k));
            const auto draw = simulate_outcomes(net, a.D, dc.mean, dc.truth,
                                                derive_seed(dseed, stream::kMainOutcome, k), a.participant_ids());
            for (std::size_t s = 0; s < S; ++s) {
              recs[s].participants = a.participants();
              try {
                recs[s].true_variance = plugin_variance(schemes[s], net, a, dc.truth, rings);
                recs[s].tau_hat = estimate_effect(schemes[s], net, a, draw.y).tau_hat;
                recs[s].estimand = conditional_estimand(schemes[s], net, a, dc.mean);
                recs[s].ok = true;
                recs[s].status = "ok";
              } catch (const Error& e) {
                recs[s].status = e.what();
              }
            }
          }
        } catch (const Error& e) {
          for (auto& rec : recs) rec.status = e.what();
        }
        for (auto& rec : recs) out.push_back(std::move(rec));
      }
    }
  });

  for (auto& v : per_rep)
    for (auto& rec : v) report.records.push_back(std::move(rec));

  // Records are laid out as [rep][design][method][scheme].
  auto at = [&](std::size_t r, std::size_t d, std::size_t k, std::size_t s) -> const ReplicationRecord& {
    return report.records[((r * D + d) * Mth + k) * S + s];
  };
  std::size_t eli_index = Mth;
  for (std::size_t k = 0; k < Mth; ++k)
    if (cfg.methods[k] == "eli") eli_index = k;
  for (std::size_t k = 0; k < Mth; ++k)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t s = 0; s < S; ++s) {
        BenchmarkRow row;
        row.method = cfg.methods[k];
        row.beta1 = cfg.designs[d].first;
        row.beta2 = cfg.designs[d].second;
        row.scheme = schemes[s].id;
        std::vector<double> vars;
        double sq = 0.0, pilot = 0.0;
        std::size_t better = 0;
        for (std::size_t r = 0; r < cfg.replications; ++r) {
          const auto& rec = at(r, d, k, s);
          if (rec.ok) {
            vars.push_back(rec.true_variance);
            sq += (rec.tau_hat - rec.estimand) * (rec.tau_hat - rec.estimand);
            pilot += static_cast<double>(rec.pilot_size);
          }
          if (eli_index < Mth) {
            const auto& e = at(r, d, eli_index, s);
            if (e.ok && (!rec.ok || e.true_variance < rec.true_variance)) ++better;
          }
        }
        row.successes = vars.size();
        row.failures = cfg.replications - vars.size();
        if (!vars.empty()) {
          const double n = static_cast<double>(vars.size());
          double mean = 0.0;
          for (double v : vars) mean += v;
          mean /= n;
          double ss = 0.0;
          for (double v : vars) ss += (v - mean) * (v - mean);
          row.mean_variance = mean;
          row.mc_std_error = vars.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
          row.empirical_variance = sq / n;
          row.mean_pilot_size = pilot / n;
        }
        row.eli_better_fraction = static_cast<double>(better) / static_cast<double>(cfg.replications);
        report.rows.push_back(row);
      }
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline void write_benchmark_csv(const BenchmarkReport& rep, std::ostream& out) {
  using detail::fmt;
  out << "config_hash,method,beta1,beta2,scheme,successes,failures,mean_variance,mc_std_error,"
         "empirical_variance,eli_better_fraction,mean_pilot_size\n";
  for (const auto& r : rep.rows)
    out << rep.config_hash << ',' << r.method << ',' << fmt(r.beta1) << ',' << fmt(r.beta2) << ',' << r.scheme << ','
        << r.successes << ',' << r.failures << ',' << fmt(r.mean_variance) << ',' << fmt(r.mc_std_error) << ','
        << fmt(r.empirical_variance) << ',' << fmt(r.eli_better_fraction) << ',' << fmt(r.mean_pilot_size) << '\n';
}

inline std::string csv_field(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + '"';
}

inline void write_replications_csv(const BenchmarkReport& rep, std::ostream& out) {
  using detail::fmt;
  out << "config_hash,rep,method,beta1,beta2,scheme,participants,pilot_size,ok,true_variance,tau_hat,estimand,status\n";
  for (const auto& r : rep.records)
    out << rep.config_hash << ',' << r.rep << ',' << r.method << ',' << fmt(r.beta1) << ',' << fmt(r.beta2) << ','
        << r.scheme << ',' << r.participants << ',' << r.pilot_size << ',' << (r.ok ? 1 : 0) << ','
        << fmt(r.true_variance) << ',' << fmt(r.tau_hat) << ',' << fmt(r.estimand) << ',' << csv_field(r.status)
        << '\n';
}

// ---------------------------------------------------------------------------
// Regret study

struct RegretRecord {
  std::size_t n = 0;
  std::size_t rep = 0;
  std::size_t m = 0;
  double feasible_objective = 0.0;  // true-model objective of the two-wave design
  double oracle_objective = 0.0;    // true-model objective of the oracle design
  double scaled_regret = 0.0;       // n (feasible - oracle)
  bool ok = false;
  bool certified = false;  // independent oracle runs agree
  std::size_t attempts = 0;
  std::string flag;
};

struct RegretReport {
  std::string config_hash;
  std::vector<RegretRecord> records;
};

/// Oracle: known true model, no pilot, full candidate set; two independent
/// multi-restart searches must agree for the oracle to count as certified.
inline DesignSolution oracle_design(const Network& net, const ExperimentConfig& cfg, std::uint64_t seed,
                                    bool* certified = nullptr) {
  const DesignProblem problem = make_problem(cfg, cfg.truth);
  const PilotPlan none = empty_pilot_plan(net, cfg.truth.M);
  SolverConfig solver = cfg.solver;
  solver.restarts = std::max(1, cfg.oracle_restarts);
  solver.seed = derive_seed(seed, stream::kOracle, 0);
  DesignSolution a = design_second_wave(net, none, problem, solver);
  if (!certified) return a;
  solver.seed = derive_seed(seed, stream::kOracle, 1);
  DesignSolution b = design_second_wave(net, none, problem, solver);
  *certified = std::abs(a.objective - b.objective) <= solver.tie_tolerance * std::max(1.0, std::abs(a.objective));
  return b.objective < a.objective ? b : a;
}

/// Objective of an assignment under the true model.
inline double true_objective(const Network& net, const ExperimentConfig& cfg, const Assignment& a) {
  const DesignProblem problem = make_problem(cfg, cfg.truth);
  DesignProblem loose = problem;
  loose.n_min = 0;
  loose.n_max = static_cast<long>(net.size());
  return evaluate_objective(net, empty_pilot_plan(net, cfg.truth.M), loose, a);
}

/// For each n: networks ER(2n, 2/(2n)), pilot size from cfg (0: the default rule),
/// regret n (V(two-wave design) - V(oracle design)) under the true model.
inline constexpr std::size_t kRegretAttempts = 3;

inline RegretReport run_regret_study(const ExperimentConfig& cfg, std::size_t threads = 1,
                                     double negative_tolerance = 1e-9) {
  RegretReport report;
  report.config_hash = config_hash(cfg);
  const std::size_t G = cfg.regret_n.size(), R = cfg.regret_reps;
  report.records.resize(G * R);
  parallel_for(G * R, threads, [&](std::size_t idx) {
    const std::size_t g = idx / R, r = idx % R;
    ExperimentConfig c = cfg;
    c.participants = cfg.regret_n[g];
    c.nodes = 2 * c.participants;
    c.edge_prob = 2.0 / static_cast<double>(c.nodes);
    c.network_source = "er";
    const std::uint64_t base = derive_seed(derive_seed(cfg.seed, stream::kReplication, c.participants), stream::kReplication, r);
    RegretRecord& rec = report.records[idx];
    rec.n = c.participants;
    rec.rep = r;
    // A replication whose pilot or design fails is replaced by a fresh draw.
    std::string failures;
    for (std::size_t k = 0; k < kRegretAttempts && !rec.ok; ++k) {
      const std::uint64_t rseed = k == 0 ? base : derive_seed(base, stream::kReplication, k);
      rec.attempts = k + 1;
      try {
        const Network net = make_network(c, rseed);
        rec.m = pilot_size_for(c, net);
        const auto tw = run_two_wave(net, c, rseed);
        bool certified = false;
        const auto oracle = oracle_design(net, c, rseed, &certified);
        rec.oracle_objective = true_objective(net, c, oracle.assignment);
        rec.feasible_objective = true_objective(net, c, tw.design.assignment);
        rec.scaled_regret = static_cast<double>(rec.n) * (rec.feasible_objective - rec.oracle_objective);
        rec.certified = certified;
        rec.ok = true;
      } catch (const Error& e) {
        failures += failures.empty() ? e.what() : std::string(";") + e.what();
      }
    }
    rec.flag = failures;
    if (rec.ok && !rec.certified) rec.flag += rec.flag.empty() ? "oracle-uncertified" : ";oracle-uncertified";
    if (rec.ok && rec.scaled_regret < -negative_tolerance) rec.flag += rec.flag.empty() ? "negative" : ";negative";
  });
  return report;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Median scaled regret per n, over successful replications.
inline std::vector<std::pair<std::size_t, double>> regret_medians(const RegretReport& rep) {
  std::map<std::size_t, std::vector<double>> by_n;
  for (const auto& r : rep.records)
    if (r.ok) by_n[r.n].push_back(r.scaled_regret);
  std::vector<std::pair<std::size_t, double>> out;
  for (auto& [n, v] : by_n) out.emplace_back(n, median(v));
  return out;
}

inline void write_regret_csv(const RegretReport& rep, std::ostream& out) {
  using detail::fmt;
  out << "config_hash,n,rep,m,feasible_objective,oracle_objective,scaled_regret,ok,certified,attempts,flag\n";
  for (const auto& r : rep.records)
    out << rep.config_hash << ',' << r.n << ',' << r.rep << ',' << r.m << ',' << fmt(r.feasible_objective) << ','
        << fmt(r.oracle_objective) << ',' << fmt(r.scaled_regret) << ',' << (r.ok ? 1 : 0) << ','
        << (r.certified ? 1 : 0) << ',' << r.attempts << ',' << csv_field(r.flag) << '\n';
}

// ---------------------------------------------------------------------------
// Coverage study

struct CoverageResult {
  std::string config_hash;
  std::string scheme;
  std::size_t reps = 0;
  double level = 0.95;
  double coverage = 0.0;
  double std_error = 0.0;
  double variance = 0.0;  // plug-in variance with the true model
  double estimand = 0.0;
};

/// Fixed network and design; known model; `reps` outcome draws, each giving a
/// normal interval that is checked against tau_n(w).
inline std::vector<CoverageResult> run_coverage_study(const Network& net, const Assignment& a,
                                                      const ExperimentConfig& cfg, std::size_t reps, double level,
                                                      std::uint64_t seed) {
  if (reps < 500) throw ParameterError("coverage study needs at least 500 replications");
  if (!(level > 0.0 && level < 1.0)) throw ParameterError("coverage level must lie in (0,1)");
  const auto schemes = make_schemes(cfg);
  const NeighborhoodIndex rings(net, cfg.truth.M);
  const OutcomeSimulator sim(net, a.D, cfg.mean, cfg.truth, a.participant_ids(), rings);
  std::vector<CoverageResult> out;
  std::vector<std::vector<double>> w;
  for (const auto& s : schemes) {
    CoverageResult c;
    c.config_hash = config_hash(cfg);
    c.scheme = s.id;
    c.reps = reps;
    c.level = level;
    c.variance = plugin_variance(s, net, a, cfg.truth, rings);
    if (!(c.variance > 0.0)) throw DegenerateVarianceError("coverage: scheme '" + s.id + "' has zero variance");
    c.estimand = conditional_estimand(s, net, a, cfg.mean);
    out.push_back(c);
    w.push_back(compute_weights(s, net, a));
  }
  const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  const double n = static_cast<double>(a.participants());
  std::vector<std::size_t> hits(schemes.size(), 0);
  for (std::size_t r = 0; r < reps; ++r) {
    const auto draw = sim.draw(derive_seed(seed, stream::kReplication, r));
    for (std::size_t s = 0; s < schemes.size(); ++s) {
      double acc = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a.R[i] && w[s][i] != 0.0) acc += w[s][i] * draw.y[i];
      const double tau = acc / n;
      if (std::abs(tau - out[s].estimand) <= z * std::sqrt(out[s].variance)) ++hits[s];
    }
  }
  for (std::size_t s = 0; s < schemes.size(); ++s) {
    out[s].coverage = static_cast<double>(hits[s]) / static_cast<double>(reps);
    out[s].std_error = std::sqrt(out[s].coverage * (1.0 - out[s].coverage) / static_cast<double>(reps));
  }
  return out;
}

/// Coverage on the configured coverage network with a known-model design.
inline std::vector<CoverageResult> run_coverage_study(const ExperimentConfig& cfg, std::size_t reps, double level) {
  ExperimentConfig c = cfg;
  c.network_source = cfg.network_source == "file" ? "file" : "er";
  if (c.network_source == "er") {
    c.nodes = cfg.coverage_nodes;
    c.edge_prob = 2.0 / static_cast<double>(c.nodes);
  }
  const Network net = make_network(c, cfg.seed);
  c.participants = std::min(cfg.coverage_participants, net.size());
  const auto design = oracle_design(net, c, cfg.seed);
  return run_coverage_study(net, design.assignment, c, reps, level, derive_seed(cfg.seed, stream::kMainOutcome));
}

inline void write_coverage_csv(const std::vector<CoverageResult>& rows, std::ostream& out) {
  using detail::fmt;
  out << "config_hash,scheme,reps,level,coverage,std_error,variance,estimand\n";
  for (const auto& r : rows)
    out << r.config_hash << ',' << r.scheme << ',' << r.reps << ',' << fmt(r.level) << ',' << fmt(r.coverage) << ','
        << fmt(r.std_error) << ',' << fmt(r.variance) << ',' << fmt(r.estimand) << '\n';
}

}  // namespace eli
