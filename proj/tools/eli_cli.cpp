// Command-line front end. Exit codes: 0 success, 2 infeasible, 1 error.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "eli/eli.hpp"

namespace fs = std::filesystem;
using namespace eli;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::size_t threads = 1;
};

ExperimentConfig load(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  return c;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out);
  return fs::path(g.out) / name;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw ParseError("cannot write " + p.string());
  return out;
}

PilotPlan plan_or_empty(const Network& net, const std::string& path, int M) {
  return path.empty() ? empty_pilot_plan(net, M) : load_pilot_plan(net, path, M);
}

VarianceModel model_from(const ExperimentConfig& c, const std::string& fit_path) {
  if (fit_path.empty()) return c.truth;
  std::ifstream in(fit_path);
  if (!in) throw ParseError("cannot open fit report " + fit_path);
  VarianceModel m = read_fit_report(in);
  m.M = c.truth.M;
  return m;
}

std::vector<double> load_outcomes(const std::string& path, std::size_t n) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open outcomes " + path);
  std::vector<double> y(n, std::numeric_limits<double>::quiet_NaN());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) continue;
    const auto f = eli::detail::split_fields(line);
    if (f.empty()) continue;
    long long id = 0;
    if (f.size() < 2 || !eli::detail::parse_int(f[0], id) || id < 0 || static_cast<std::size_t>(id) >= n)
      throw ParseError("malformed outcome row at line " + std::to_string(lineno));
    try {
      y[static_cast<std::size_t>(id)] = std::stod(f[1]);
    } catch (const std::exception&) {
      throw ParseError("malformed outcome value at line " + std::to_string(lineno));
    }
  }
  return y;
}

void save_outcomes(const OutcomeDraw& d, const fs::path& p) {
  auto out = open_out(p);
  out << "node_id,y\n" << std::setprecision(17);
  for (NodeId i : d.units) out << i << ',' << d.y[static_cast<std::size_t>(i)] << '\n';
}

void print_solution(const DesignSolution& s, const DesignProblem& p) {
  std::cout << "participants " << s.assignment.participants() << "\nobjective " << std::setprecision(10) << s.objective
            << '\n';
  for (std::size_t k = 0; k < s.per_scheme.size(); ++k)
    std::cout << "variance[" << p.schemes[k].id << "] " << s.per_scheme[k] << '\n';
  std::cout << "backend " << s.trace.backend << " evaluations " << s.trace.evaluations << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-wave experimental design under network interference"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "INI configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed (overrides the configuration)");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads for replication loops")->check(CLI::PositiveNumber);
  app.fallthrough();

  std::string graph, plan_file, fit_file, assignment_file, outcomes_file, partial_file, units = "participants";
  std::string type;
  std::size_t nodes = 0, reps = 0, completions = 0;
  double prob = 0.0, level = 0.0, mde = 0.0, mde_a = 0.0;
  bool worst_case = false;

  auto* gen = app.add_subcommand("gen-graph", "generate an ER or AB network");
  gen->add_option("--type", type, "er or ab (default from config)");
  gen->add_option("--nodes", nodes, "number of nodes");
  gen->add_option("--p", prob, "ER edge probability (default 2/nodes)");

  auto* pilot = app.add_subcommand("pilot", "select and randomize the pilot");
  pilot->add_option("--graph", graph, "edge list")->required()->check(CLI::ExistingFile);

  auto* sim = app.add_subcommand("simulate", "draw outcomes from the configured model");
  sim->add_option("--graph", graph)->required()->check(CLI::ExistingFile);
  sim->add_option("--assignment", assignment_file, "assignment CSV")->check(CLI::ExistingFile);
  sim->add_option("--plan", plan_file, "pilot plan CSV (simulates the pilot wave)")->check(CLI::ExistingFile);
  sim->add_option("--units", units, "participants or all");

  auto* fit = app.add_subcommand("fit", "fit the variance model from pilot outcomes");
  fit->add_option("--graph", graph)->required()->check(CLI::ExistingFile);
  fit->add_option("--plan", plan_file)->required()->check(CLI::ExistingFile);
  fit->add_option("--outcomes", outcomes_file)->required()->check(CLI::ExistingFile);

  auto* design = app.add_subcommand("design", "second-wave minimax design");
  auto* size = app.add_subcommand("sample-size", "smallest design meeting the variance cap");
  auto* milp = app.add_subcommand("export-milp", "write the design program as an LP-format MILP");
  for (auto* sc : {design, size, milp}) {
    sc->add_option("--graph", graph)->required()->check(CLI::ExistingFile);
    sc->add_option("--plan", plan_file, "pilot plan CSV")->check(CLI::ExistingFile);
    sc->add_option("--fit", fit_file, "fit report (default: configured model)")->check(CLI::ExistingFile);
  }
  size->add_option("--mde", mde, "minimum detectable effect");
  size->add_option("--a", mde_a, "one-sided test level");
  size->add_flag("--worst-case", worst_case, "use the worst-case variance bounds");

  auto* dpart = app.add_subcommand("design-partial", "design on a partially observed network");
  dpart->add_option("--partial", partial_file, "partial adjacency file")->required()->check(CLI::ExistingFile);
  dpart->add_option("--plan", plan_file)->check(CLI::ExistingFile);
  dpart->add_option("--fit", fit_file)->check(CLI::ExistingFile);
  dpart->add_option("--completions", completions, "completions per restart");

  auto* est = app.add_subcommand("estimate", "effect estimates with plug-in variance");
  est->add_option("--graph", graph)->required()->check(CLI::ExistingFile);
  est->add_option("--assignment", assignment_file)->required()->check(CLI::ExistingFile);
  est->add_option("--outcomes", outcomes_file)->required()->check(CLI::ExistingFile);
  est->add_option("--fit", fit_file)->check(CLI::ExistingFile);
  est->add_option("--level", level, "confidence level");

  auto* bench = app.add_subcommand("benchmark", "Monte-Carlo comparison with competitor designs");
  auto* regret = app.add_subcommand("regret", "regret of the two-wave design against the oracle");
  auto* cover = app.add_subcommand("coverage", "confidence-interval coverage study");
  cover->add_option("--reps", reps, "replications");
  cover->add_option("--level", level, "confidence level");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    ExperimentConfig cfg = load(g);
    const int M = cfg.truth.M;

    if (*gen) {
      if (!type.empty()) cfg.network_source = type;
      if (nodes) cfg.nodes = nodes;
      if (prob > 0.0) cfg.edge_prob = prob;
      if (cfg.network_source == "file") throw ParameterError("gen-graph: type must be er or ab");
      const Network net = make_network(cfg, cfg.seed);
      save_edge_list(net, out_path(g, "graph.txt"));
      std::cout << "nodes " << net.size() << "\nedges " << net.edges().size() << '\n';
    } else if (*pilot) {
      const Network net = load_edge_list(graph);
      long delta = 0;
      const PilotPlan plan = select_identified_pilot(net, cfg, cfg.seed, &delta);
      save_pilot_plan(plan, out_path(g, "pilot_plan.csv"));
      std::cout << "pilot " << plan.size() << "\nexclusion " << plan.exclusion_size() << "\ncut " << plan.cut_value
                << "\nwithin " << plan.within_edges << "\ndelta " << delta << '\n';
    } else if (*sim) {
      const Network net = load_edge_list(graph);
      OutcomeDraw d;
      if (!plan_file.empty()) {
        const PilotPlan plan = load_pilot_plan(net, plan_file, M);
        d = simulate_outcomes(net, plan.pilot_treatments, cfg.mean, cfg.truth,
                              derive_seed(cfg.seed, stream::kPilotOutcome), plan.pilot_set);
      } else {
        if (assignment_file.empty()) throw ParameterError("simulate: pass --assignment or --plan");
        const Assignment a = load_assignment(assignment_file, net.size());
        std::vector<NodeId> who;
        if (units == "participants") who = a.participant_ids();
        else if (units == "all") who = all_nodes(net);
        else throw ParameterError("simulate: --units must be participants or all");
        if (who.empty()) throw ParameterError("simulate: no units to simulate");
        d = simulate_outcomes(net, a.D, cfg.mean, cfg.truth, derive_seed(cfg.seed, stream::kMainOutcome), who);
      }
      save_outcomes(d, out_path(g, "outcomes.csv"));
      std::cout << "units " << d.units.size() << '\n';
    } else if (*fit) {
      const Network net = load_edge_list(graph);
      const PilotPlan plan = load_pilot_plan(net, plan_file, M);
      const auto y = load_outcomes(outcomes_file, net.size());
      const auto f = fit_variance_model(net, plan, y, cfg.family, cfg.alpha_max);
      auto out = open_out(out_path(g, "fit.txt"));
      write_fit_report(f, out);
      write_fit_report(f, std::cout);
    } else if (*design || *size || *milp) {
      const Network net = load_edge_list(graph);
      const PilotPlan plan = plan_or_empty(net, plan_file, M);
      DesignProblem problem = make_problem(cfg, model_from(cfg, fit_file));
      SolverConfig solver = cfg.solver;
      solver.seed = derive_seed(cfg.seed, stream::kDesign);
      if (*milp) {
        const auto model = export_milp(net, plan, problem);
        auto out = open_out(out_path(g, "design.lp"));
        write_lp(model, out);
        std::cout << "variables " << model.vars.size() << "\nrows " << model.rows.size() << "\nbinaries "
                  << model.num_binaries() << "\nt_variables " << model.t_count() << '\n';
        return 0;
      }
      DesignSolution sol;
      if (*design) {
        sol = design_second_wave(net, plan, problem, solver);
      } else {
        const double beta = beta_from_mde(mde > 0.0 ? mde : cfg.mde, mde_a > 0.0 ? mde_a : cfg.mde_a);
        problem.beta.assign(problem.schemes.size(), beta);
        problem.n_min = 1;
        std::cout << "beta " << std::setprecision(10) << beta << '\n';
        if (worst_case) {
          if (!plan_file.empty()) throw ParameterError("sample-size: --worst-case designs run without a pilot");
          sol = minimax_design_no_pilot(net, problem, solver);
        } else {
          sol = min_sample_size_design(net, plan, problem, solver);
        }
      }
      save_assignment(sol.assignment, out_path(g, "assignment.csv"));
      print_solution(sol, problem);
    } else if (*dpart) {
      const auto partial = load_partial_adjacency(partial_file);
      const Network uni = partial.union_network();
      const PilotPlan plan = plan_or_empty(uni, plan_file, M);
      const DesignProblem problem = make_problem(cfg, model_from(cfg, fit_file));
      SolverConfig solver = cfg.solver;
      solver.seed = derive_seed(cfg.seed, stream::kDesign);
      const auto res = design_partial(partial, plan, problem, solver, completions ? completions : cfg.completions);
      save_assignment(res.solution.assignment, out_path(g, "assignment.csv"));
      std::cout << "participants " << res.solution.assignment.participants() << "\nexpected_variance "
                << std::setprecision(10) << res.final_score.mean << "\nstd_error " << res.final_score.std_error
                << "\ninfeasible_fraction " << res.final_score.infeasible_fraction << '\n';
    } else if (*est) {
      const Network net = load_edge_list(graph);
      const Assignment a = load_assignment(assignment_file, net.size());
      const auto y = load_outcomes(outcomes_file, net.size());
      const VarianceModel model = model_from(cfg, fit_file);
      const NeighborhoodIndex rings(net, model.M);
      std::vector<EffectEstimate> rows;
      for (const auto& scheme : make_schemes(cfg)) {
        auto e = estimate_effect(scheme, net, a, y);
        rows.push_back(with_variance(e, plugin_variance(scheme, net, a, model, rings), level > 0.0 ? level : cfg.level));
      }
      auto out = open_out(out_path(g, "estimates.csv"));
      write_estimates_csv(out, rows);
      write_estimates_csv(std::cout, rows);
    } else if (*bench) {
      const auto rep = run_benchmark(cfg, g.threads);
      auto s = open_out(out_path(g, "benchmark_summary.csv"));
      write_benchmark_csv(rep, s);
      auto r = open_out(out_path(g, "benchmark_replications.csv"));
      write_replications_csv(rep, r);
      write_benchmark_csv(rep, std::cout);
      std::cerr << "runtime_seconds " << rep.runtime_seconds << '\n';
    } else if (*regret) {
      const auto rep = run_regret_study(cfg, g.threads);
      auto out = open_out(out_path(g, "regret.csv"));
      write_regret_csv(rep, out);
      for (const auto& [n, med] : regret_medians(rep)) std::cout << "n " << n << " median_scaled_regret " << med << '\n';
    } else if (*cover) {
      const auto rows = run_coverage_study(cfg, reps ? reps : cfg.coverage_reps, level > 0.0 ? level : cfg.level);
      auto out = open_out(out_path(g, "coverage.csv"));
      write_coverage_csv(rows, out);
      write_coverage_csv(rows, std::cout);
    }
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
