#pragma once

// Mixed-integer linear model of the minimax difference-in-means design.
//
// Exposure indicators t1 = 1{s >= h}, t2 = 1{s <= h}, u = D 1{s = h} are
// encoded with big-M rows whose strict sides use a 1e-6 gap. Cell counts are
// discretized (y_ck = 1{n_c = k}) so that the fractional terms 1/n_c and
// 1/(n_c n_c') become linear in y; z_c = 1/n_c is the Charnes-Cooper scaling
// variable with sum_i a_ic z_c = 1. Products of binaries use
// (x + y)/2 - 1 < A <= (x + y)/2 and products with a bounded continuous
// variable use McCormick rows, which are exact when one factor is binary.
// For difference-in-means weights the participant count n cancels from the
// variance, so the scaling is applied per cell count.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "eli/design.hpp"
#include "eli/errors.hpp"
#include "eli/estimators.hpp"
#include "eli/graph.hpp"
#include "eli/pilot.hpp"

namespace eli {

struct MilpVar {
  std::string name;
  bool binary = true;
  double lb = 0.0;
  double ub = 1.0;  // +inf allowed
};

struct MilpRow {
  enum class Sense { LE, GE, EQ };
  std::string name;
  std::vector<std::pair<int, double>> terms;
  Sense sense = Sense::LE;
  double rhs = 0.0;
};

struct MilpModel {
  static constexpr double kGap = 1e-6;

  std::vector<MilpVar> vars;
  std::vector<MilpRow> rows;
  std::vector<std::pair<int, double>> objective;
  std::vector<std::string> notes;

  std::size_t N = 0;
  std::vector<int> r_var;              // per node, -1 when R is fixed at 0
  std::vector<int> d_var;              // per node, -1 when D is a constant
  std::vector<std::uint8_t> d_const;   // constant D where d_var < 0
  long n_min = 0, n_max = 0;

  struct Unit {
    NodeId node = 0;
    int L = 0;
    std::vector<int> t1, t2, u;  // h = 0..L
    std::vector<std::size_t> indicator_rows;
  };
  std::vector<Unit> units;

  struct Cell {
    int d = 0, s = 0, l = 0;
    double sigma = 0.0;
    std::vector<std::pair<std::size_t, int>> members;  // (unit index, a var)
    std::vector<int> y;                                // k = 1..K
    int z = -1;
    std::vector<int> q;  // aligned with members
  };
  std::vector<Cell> cells;

  struct CellPair {
    std::size_t c = 0, c2 = 0;  // c <= c2
    int W = -1;
    std::vector<std::tuple<int, int, int>> Y;  // (k, k2, var), c != c2 only
  };
  std::vector<CellPair> cell_pairs;

  struct PairTerm {
    std::size_t ui = 0, uj = 0;  // unit indices, ui < uj
    std::size_t c = 0, c2 = 0;   // cell of ui, cell of uj
    std::size_t pair = 0;        // index into cell_pairs
    int G = -1, x = -1;
  };
  std::vector<PairTerm> pair_terms;

  int lambda = -1;
  std::vector<std::size_t> lambda_rows;

  std::size_t t_count() const {
    std::size_t c = 0;
    for (const auto& u : units) c += u.t1.size() + u.t2.size();
    return c;
  }
  std::size_t num_binaries() const {
    return static_cast<std::size_t>(std::count_if(vars.begin(), vars.end(), [](const MilpVar& v) { return v.binary; }));
  }
  /// Number of R and D variables.
  std::size_t decision_binaries() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < N; ++i) c += (r_var[i] >= 0) + (d_var[i] >= 0);
    return c;
  }

  int add_var(std::string name, bool binary, double lb = 0.0, double ub = 1.0) {
    vars.push_back({std::move(name), binary, lb, ub});
    return static_cast<int>(vars.size() - 1);
  }
  std::size_t add_row(std::string name, std::vector<std::pair<int, double>> terms, MilpRow::Sense sense, double rhs) {
    rows.push_back({std::move(name), std::move(terms), sense, rhs});
    return rows.size() - 1;
  }
};

namespace detail {

using Terms = std::vector<std::pair<int, double>>;

inline std::string nm(const char* fmt, auto... args) {
  char buf[128];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

/// 2A - x - y <= 0 and 2A - x - y >= -2 + gap, with x, y given as linear
/// expressions (plus a constant) over binaries.
inline void product_rows(MilpModel& m, const std::string& tag, int A, const Terms& x, double xc, const Terms& y,
                         double yc) {
  Terms t{{A, 2.0}};
  for (auto [v, c] : x) t.push_back({v, -c});
  for (auto [v, c] : y) t.push_back({v, -c});
  m.add_row(tag + "_hi", t, MilpRow::Sense::LE, xc + yc);
  m.add_row(tag + "_lo", t, MilpRow::Sense::GE, -2.0 + MilpModel::kGap + xc + yc);
}

/// x = G * W with G binary and W in [0, 1].
inline void mccormick_rows(MilpModel& m, const std::string& tag, int x, int G, int W) {
  m.add_row(tag + "_w", {{x, 1.0}, {W, -1.0}}, MilpRow::Sense::LE, 0.0);
  m.add_row(tag + "_g", {{x, 1.0}, {G, -1.0}}, MilpRow::Sense::LE, 0.0);
  m.add_row(tag + "_gw", {{x, 1.0}, {W, -1.0}, {G, -1.0}}, MilpRow::Sense::GE, -1.0);
}

}  // namespace detail

/// Builds the linearized minimax model for difference-in-means schemes.
inline MilpModel export_milp(const Network& net, const PilotPlan& plan, const DesignProblem& problem) {
  using detail::nm;
  using S = MilpRow::Sense;
  for (const auto& s : problem.schemes)
    if (!s.is_diff_means())
      throw UnsupportedSchemeError("MILP export covers difference-in-means schemes only; scheme '" + s.id +
                                   "' is model-based");
  const DesignEvaluator ev(net, plan, problem);
  const auto& rings = ev.rings();
  const int M = problem.order();
  MilpModel m;
  m.N = net.size();
  m.n_min = problem.n_min;
  m.n_max = problem.n_max;
  m.r_var.assign(m.N, -1);
  m.d_var.assign(m.N, -1);
  m.d_const.assign(m.N, 0);

  for (NodeId i : ev.free_r()) m.r_var[static_cast<std::size_t>(i)] = m.add_var(nm("R_%d", i), true);
  for (NodeId i : ev.free_d()) m.d_var[static_cast<std::size_t>(i)] = m.add_var(nm("D_%d", i), true);
  for (std::size_t i = 0; i < m.N; ++i)
    if (ev.fixed(static_cast<NodeId>(i))) m.d_const[i] = ev.fixed_value(static_cast<NodeId>(i));

  {
    detail::Terms t;
    for (NodeId i : ev.free_r()) t.push_back({m.r_var[static_cast<std::size_t>(i)], 1.0});
    m.add_row("size_lo", t, S::GE, static_cast<double>(problem.n_min));
    m.add_row("size_hi", t, S::LE, static_cast<double>(problem.n_max));
  }
  if (problem.enforce_d_le_r)
    for (NodeId i : ev.free_r())
      m.add_row(nm("dler_%d", i), {{m.d_var[static_cast<std::size_t>(i)], 1.0}, {m.r_var[static_cast<std::size_t>(i)], -1.0}},
                S::LE, 0.0);

  // Exposure indicators for every candidate participant.
  std::vector<std::ptrdiff_t> unit_of(m.N, -1);
  for (NodeId i : ev.free_r()) {
    MilpModel::Unit u;
    u.node = i;
    u.L = net.degree(i);
    detail::Terms s_terms;
    double s_const = 0.0;
    for (NodeId k : net.neighbors(i)) {
      const auto ku = static_cast<std::size_t>(k);
      if (m.d_var[ku] >= 0) s_terms.push_back({m.d_var[ku], 1.0});
      else s_const += m.d_const[ku];
    }
    const double L1 = u.L + 1.0;
    const int di = m.d_var[static_cast<std::size_t>(i)];
    for (int h = 0; h <= u.L; ++h) {
      const int t1 = m.add_var(nm("t1_%d_%d", i, h), true);
      const int t2 = m.add_var(nm("t2_%d_%d", i, h), true);
      const int uu = m.add_var(nm("u_%d_%d", i, h), true);
      u.t1.push_back(t1);
      u.t2.push_back(t2);
      u.u.push_back(uu);
      detail::Terms b{{t1, L1}};
      detail::Terms c{{t2, L1}};
      for (auto [v, cf] : s_terms) b.push_back({v, -cf}), c.push_back({v, cf});
      // (B): t1 = 1{s >= h}
      u.indicator_rows.push_back(m.add_row(nm("B1_%d_%d", i, h), b, S::GE, -h + MilpModel::kGap + s_const));
      u.indicator_rows.push_back(m.add_row(nm("B2_%d_%d", i, h), b, S::LE, -h + L1 + s_const));
      // (C): t2 = 1{s <= h}
      u.indicator_rows.push_back(m.add_row(nm("C1_%d_%d", i, h), c, S::GE, h + MilpModel::kGap - s_const));
      u.indicator_rows.push_back(m.add_row(nm("C2_%d_%d", i, h), c, S::LE, h + L1 - s_const));
      // (A): u = D 1{s = h}
      detail::Terms a{{uu, 3.0}, {t1, -1.0}, {t2, -1.0}};
      if (di >= 0) a.push_back({di, -1.0});
      const double dconst = di >= 0 ? 0.0 : m.d_const[static_cast<std::size_t>(i)];
      u.indicator_rows.push_back(m.add_row(nm("A1_%d_%d", i, h), a, S::LE, dconst));
      u.indicator_rows.push_back(m.add_row(nm("A2_%d_%d", i, h), a, S::GE, -3.0 + MilpModel::kGap + dconst));
    }
    unit_of[static_cast<std::size_t>(i)] = static_cast<std::ptrdiff_t>(m.units.size());
    m.units.push_back(std::move(u));
  }

  // Cells, deduplicated across schemes by (d, s, l); g[k][cell] is the signed level weight.
  std::map<std::tuple<int, int, int>, std::size_t> cell_index;
  std::vector<std::map<std::size_t, double>> g(problem.schemes.size());
  auto cell_for = [&](int d, int s, int l) {
    auto key = std::make_tuple(d, s, l);
    if (auto it = cell_index.find(key); it != cell_index.end()) return it->second;
    MilpModel::Cell c;
    c.d = d, c.s = s, c.l = l;
    const Exposure e{d, s, l};
    c.sigma = problem.evaluator == EvaluatorKind::Plugin ? checked_sigma2(problem.model, e)
                                                         : problem.bounds.B_sigma * problem.bounds.B_sigma;
    cell_index[key] = m.cells.size();
    m.cells.push_back(c);
    return m.cells.size() - 1;
  };
  for (std::size_t k = 0; k < problem.schemes.size(); ++k) {
    const auto& dm = std::get<DiffMeans>(problem.schemes[k].kind);
    for (const auto& lw : dm.levels) {
      g[k][cell_for(dm.treated.d, dm.treated.target_s(lw.level), lw.level)] += lw.v;
      g[k][cell_for(dm.control.d, dm.control.target_s(lw.level), lw.level)] -= lw.v;
    }
  }

  for (std::size_t c = 0; c < m.cells.size(); ++c) {
    auto& cell = m.cells[c];
    for (std::size_t ui = 0; ui < m.units.size(); ++ui) {
      const auto& u = m.units[ui];
      if (u.L != cell.l || cell.s > u.L) continue;
      const int a = m.add_var(nm("a_%d_%zu", u.node, c), true);
      const int r = m.r_var[static_cast<std::size_t>(u.node)];
      const auto h = static_cast<std::size_t>(cell.s);
      if (cell.d == 1) {
        detail::product_rows(m, nm("pa_%d_%zu", u.node, c), a, {{r, 1.0}}, 0.0, {{u.u[h], 1.0}}, 0.0);
      } else {
        // 1{D = 0, s = h} = t1 + t2 - 1 - u
        detail::product_rows(m, nm("pa_%d_%zu", u.node, c), a, {{r, 1.0}}, 0.0,
                             {{u.t1[h], 1.0}, {u.t2[h], 1.0}, {u.u[h], -1.0}}, -1.0);
      }
      cell.members.push_back({ui, a});
    }
    const std::size_t K = cell.members.size();
    if (K == 0)
      throw InfeasibleError(nm("MILP export: exposure cell (d=%d, s=%d, l=%d) has no eligible unit", cell.d, cell.s,
                               cell.l));
    detail::Terms one, count, zdef;
    cell.z = m.add_var(nm("z_%zu", c), false, 0.0, 1.0);
    zdef.push_back({cell.z, 1.0});
    for (std::size_t k = 1; k <= K; ++k) {
      const int y = m.add_var(nm("y_%zu_%zu", c, k), true);
      cell.y.push_back(y);
      one.push_back({y, 1.0});
      count.push_back({y, static_cast<double>(k)});
      zdef.push_back({y, -1.0 / static_cast<double>(k)});
    }
    for (auto [ui, a] : cell.members) count.push_back({a, -1.0});
    m.add_row(nm("ysum_%zu", c), one, S::EQ, 1.0);
    m.add_row(nm("ycount_%zu", c), count, S::EQ, 0.0);
    m.add_row(nm("zdef_%zu", c), zdef, S::EQ, 0.0);
    detail::Terms norm;
    for (auto [ui, a] : cell.members) {
      const int q = m.add_var(nm("q_%d_%zu", m.units[ui].node, c), false, 0.0, 1.0);
      cell.q.push_back(q);
      detail::mccormick_rows(m, nm("mq_%d_%zu", m.units[ui].node, c), q, a, cell.z);
      norm.push_back({q, 1.0});
    }
    m.add_row(nm("cc_%zu", c), norm, S::EQ, 1.0);
  }

  // Cross terms over unit pairs within distance M.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_index;
  auto cell_pair = [&](std::size_t c, std::size_t c2) {
    const auto key = std::minmax(c, c2);
    if (auto it = pair_index.find(key); it != pair_index.end()) return it->second;
    MilpModel::CellPair cp;
    cp.c = key.first, cp.c2 = key.second;
    cp.W = m.add_var(nm("W_%zu_%zu", cp.c, cp.c2), false, 0.0, 1.0);
    const auto& A = m.cells[cp.c];
    const auto& B = m.cells[cp.c2];
    detail::Terms wdef{{cp.W, 1.0}};
    if (cp.c == cp.c2) {
      for (std::size_t k = 1; k <= A.y.size(); ++k)
        wdef.push_back({A.y[k - 1], -1.0 / static_cast<double>(k * k)});
    } else {
      for (std::size_t k = 1; k <= A.y.size(); ++k)
        for (std::size_t k2 = 1; k2 <= B.y.size(); ++k2) {
          const int Y = m.add_var(nm("Y_%zu_%zu_%zu_%zu", cp.c, k, cp.c2, k2), true);
          detail::product_rows(m, nm("py_%zu_%zu_%zu_%zu", cp.c, k, cp.c2, k2), Y, {{A.y[k - 1], 1.0}}, 0.0,
                               {{B.y[k2 - 1], 1.0}}, 0.0);
          cp.Y.push_back({static_cast<int>(k), static_cast<int>(k2), Y});
          wdef.push_back({Y, -1.0 / static_cast<double>(k * k2)});
        }
    }
    m.add_row(nm("wdef_%zu_%zu", cp.c, cp.c2), wdef, S::EQ, 0.0);
    pair_index[key] = m.cell_pairs.size();
    m.cell_pairs.push_back(std::move(cp));
    return m.cell_pairs.size() - 1;
  };
  auto relevant = [&](std::size_t c, std::size_t c2) {
    for (const auto& gk : g)
      if (gk.count(c) && gk.count(c2) && gk.at(c) != 0.0 && gk.at(c2) != 0.0) return true;
    return false;
  };
  auto coupling = [&](std::size_t c, std::size_t c2, double gg, int u) {
    if (problem.evaluator == EvaluatorKind::Plugin)
      return problem.model.alpha_at(u) * std::sqrt(m.cells[c].sigma * m.cells[c2].sigma);
    const double b2 = problem.bounds.B_sigma * problem.bounds.B_sigma;
    return gg > 0 ? problem.bounds.U_eta * b2 : -problem.bounds.L_eta * b2;
  };
  struct Contribution {
    std::size_t term;
    int u;
  };
  std::vector<Contribution> contributions;
  for (std::size_t ui = 0; ui < m.units.size(); ++ui) {
    for (int u = 1; u <= M; ++u) {
      for (NodeId j : rings.ring(m.units[ui].node, u)) {
        const auto uj = unit_of[static_cast<std::size_t>(j)];
        if (uj < 0 || static_cast<std::size_t>(uj) <= ui) continue;
        for (std::size_t c = 0; c < m.cells.size(); ++c) {
          for (std::size_t c2 = 0; c2 < m.cells.size(); ++c2) {
            if (!relevant(c, c2)) continue;
            auto find_a = [&](std::size_t cell, std::size_t unit) {
              for (auto [mu, a] : m.cells[cell].members)
                if (mu == unit) return a;
              return -1;
            };
            const int ai = find_a(c, ui);
            const int aj = find_a(c2, static_cast<std::size_t>(uj));
            if (ai < 0 || aj < 0) continue;
            MilpModel::PairTerm pt;
            pt.ui = ui, pt.uj = static_cast<std::size_t>(uj), pt.c = c, pt.c2 = c2;
            pt.pair = cell_pair(c, c2);
            pt.G = m.add_var(nm("G_%d_%d_%zu_%zu", m.units[ui].node, j, c, c2), true);
            pt.x = m.add_var(nm("x_%d_%d_%zu_%zu", m.units[ui].node, j, c, c2), false, 0.0, 1.0);
            detail::product_rows(m, nm("pg_%d_%d_%zu_%zu", m.units[ui].node, j, c, c2), pt.G, {{ai, 1.0}}, 0.0,
                                 {{aj, 1.0}}, 0.0);
            detail::mccormick_rows(m, nm("mx_%d_%d_%zu_%zu", m.units[ui].node, j, c, c2), pt.x, pt.G,
                                   m.cell_pairs[pt.pair].W);
            contributions.push_back({m.pair_terms.size(), u});
            m.pair_terms.push_back(pt);
          }
        }
      }
    }
  }

  // Scheme objectives f_k and the epigraph variable.
  m.lambda = m.add_var("lambda", false, -std::numeric_limits<double>::infinity(),
                       std::numeric_limits<double>::infinity());
  std::vector<detail::Terms> f(problem.schemes.size());
  for (std::size_t k = 0; k < problem.schemes.size(); ++k) {
    std::map<int, double> acc;
    for (auto [c, gc] : g[k])
      if (gc != 0.0) acc[m.cells[c].z] += gc * gc * m.cells[c].sigma;
    for (const auto& [t, u] : contributions) {
      const auto& pt = m.pair_terms[t];
      const double gg = (g[k].count(pt.c) ? g[k].at(pt.c) : 0.0) * (g[k].count(pt.c2) ? g[k].at(pt.c2) : 0.0);
      if (gg == 0.0) continue;
      acc[pt.x] += 2.0 * gg * coupling(pt.c, pt.c2, gg, u);
    }
    for (auto [v, c] : acc)
      if (c != 0.0) f[k].push_back({v, c});
  }
  if (problem.scheme_weights.empty()) {
    for (std::size_t k = 0; k < f.size(); ++k) {
      detail::Terms t{{m.lambda, 1.0}};
      for (auto [v, c] : f[k]) t.push_back({v, -c});
      m.lambda_rows.push_back(m.add_row("epi_" + problem.schemes[k].id, t, S::GE, 0.0));
    }
  } else {
    std::map<int, double> acc;
    for (std::size_t k = 0; k < f.size(); ++k)
      for (auto [v, c] : f[k]) acc[v] += problem.scheme_weights[k] * c;
    detail::Terms t{{m.lambda, 1.0}};
    for (auto [v, c] : acc) t.push_back({v, -c});
    m.lambda_rows.push_back(m.add_row("epi_weighted", t, S::GE, 0.0));
  }
  m.objective = {{m.lambda, 1.0}};

  m.notes.push_back("minimize lambda >= f_k for every weight scheme k");
  m.notes.push_back("exposure indicators: t1 = 1{s >= h}, t2 = 1{s <= h}, u = D 1{s = h}; strict sides use gap 1e-6");
  m.notes.push_back("cell counts discretized: y_ck = 1{n_c = k}; z_c = 1/n_c is the Charnes-Cooper scaling, sum_i q_ic = 1");
  m.notes.push_back("participant count n cancels for difference-in-means weights; scaling is per cell count");
  m.notes.push_back(nm("t-variables: %zu, binaries: %zu, variables: %zu, constraints: %zu", m.t_count(), m.num_binaries(),
                       m.vars.size(), m.rows.size()));
  if (!problem.beta.empty()) m.notes.push_back("variance caps are not encoded; the model is the minimax program");
  return m;
}

/// Writes the model in LP format with %.17g coefficients.
inline void write_lp(const MilpModel& m, std::ostream& out) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  auto expr = [&](const std::vector<std::pair<int, double>>& terms) {
    std::string s;
    bool first = true;
    for (auto [v, c] : terms) {
      if (c == 0.0) continue;
      if (c < 0) s += first ? "- " : " - ";
      else if (!first) s += " + ";
      const double a = std::abs(c);
      if (a != 1.0) s += num(a) + " ";
      s += m.vars[static_cast<std::size_t>(v)].name;
      first = false;
    }
    return first ? std::string("0 ") + m.vars[static_cast<std::size_t>(m.lambda)].name : s;
  };
  for (const auto& n : m.notes) out << "\\ " << n << '\n';
  out << "Minimize\n obj: " << expr(m.objective) << "\nSubject To\n";
  for (const auto& r : m.rows) {
    const char* op = r.sense == MilpRow::Sense::LE ? "<=" : r.sense == MilpRow::Sense::GE ? ">=" : "=";
    out << ' ' << r.name << ": " << expr(r.terms) << ' ' << op << ' ' << num(r.rhs) << '\n';
  }
  out << "Bounds\n";
  for (const auto& v : m.vars) {
    if (v.binary) continue;
    if (std::isinf(v.lb) && std::isinf(v.ub)) out << ' ' << v.name << " free\n";
    else out << ' ' << num(v.lb) << " <= " << v.name << " <= " << num(v.ub) << '\n';
  }
  out << "Binaries\n";
  for (const auto& v : m.vars)
    if (v.binary) out << ' ' << v.name << '\n';
  out << "End\n";
}

struct MilpEvaluation {
  bool feasible = false;
  double objective = std::numeric_limits<double>::infinity();
  std::string violated;          // first violated row
  bool auxiliaries_forced = true;  // every single auxiliary-binary flip breaks a row
  std::vector<double> values;
};

inline bool milp_row_satisfied(const MilpRow& r, const std::vector<double>& x, double tol = 1e-9) {
  double lhs = 0.0;
  for (auto [v, c] : r.terms) lhs += c * x[static_cast<std::size_t>(v)];
  const double t = tol * std::max(1.0, std::abs(r.rhs));
  switch (r.sense) {
    case MilpRow::Sense::LE: return lhs <= r.rhs + t;
    case MilpRow::Sense::GE: return lhs >= r.rhs - t;
    case MilpRow::Sense::EQ: return std::abs(lhs - r.rhs) <= t;
  }
  return false;
}

/// Completes every auxiliary variable canonically from (R, D), checks all
/// rows and returns the objective (lambda at its smallest feasible value).
inline MilpEvaluation milp_evaluate(const MilpModel& m, const Assignment& a, bool check_forced = false) {
  MilpEvaluation ev;
  auto& x = ev.values;
  x.assign(m.vars.size(), 0.0);
  std::vector<std::uint8_t> D(m.N, 0);
  for (std::size_t i = 0; i < m.N; ++i) {
    if (m.r_var[i] >= 0) x[static_cast<std::size_t>(m.r_var[i])] = a.R[i];
    if (m.d_var[i] >= 0) x[static_cast<std::size_t>(m.d_var[i])] = a.D[i];
    D[i] = m.d_var[i] >= 0 ? a.D[i] : m.d_const[i];
  }
  auto set = [&](int v, double val) { x[static_cast<std::size_t>(v)] = val; };
  auto get = [&](int v) { return x[static_cast<std::size_t>(v)]; };
  std::vector<int> s(m.units.size(), 0);
  // Treated-neighbor counts, read off the D terms of each unit's first indicator row.
  for (std::size_t ui = 0; ui < m.units.size(); ++ui) {
    const auto& u = m.units[ui];
    const auto& row = m.rows[u.indicator_rows[0]];  // B1 for h = 0: (L+1) t1 - s >= gap + s_const
    double sv = 0.0;
    for (auto [v, c] : row.terms)
      if (v != u.t1[0]) sv += -c * get(v);
    sv += row.rhs - MilpModel::kGap;  // constant part of s
    s[ui] = static_cast<int>(std::lround(sv));
    const int di = D[static_cast<std::size_t>(u.node)];
    for (int h = 0; h <= u.L; ++h) {
      const auto hh = static_cast<std::size_t>(h);
      set(u.t1[hh], s[ui] >= h);
      set(u.t2[hh], s[ui] <= h);
      set(u.u[hh], di && s[ui] == h);
    }
  }
  std::vector<int> count(m.cells.size(), 0);
  for (std::size_t c = 0; c < m.cells.size(); ++c) {
    const auto& cell = m.cells[c];
    for (auto [ui, av] : cell.members) {
      const auto& u = m.units[ui];
      const bool in = a.R[static_cast<std::size_t>(u.node)] && D[static_cast<std::size_t>(u.node)] == cell.d &&
                      s[ui] == cell.s;
      set(av, in);
      count[c] += in;
    }
    for (std::size_t k = 1; k <= cell.y.size(); ++k) set(cell.y[k - 1], count[c] == static_cast<int>(k));
    const double z = count[c] > 0 ? 1.0 / count[c] : 0.0;
    set(cell.z, z);
    for (std::size_t t = 0; t < cell.members.size(); ++t) set(cell.q[t], get(cell.members[t].second) * z);
  }
  for (const auto& cp : m.cell_pairs) {
    const int n1 = count[cp.c], n2 = count[cp.c2];
    set(cp.W, n1 > 0 && n2 > 0 ? 1.0 / (static_cast<double>(n1) * n2) : 0.0);
    for (auto [k, k2, Y] : cp.Y) set(Y, n1 == k && n2 == k2);
  }
  for (const auto& pt : m.pair_terms) {
    auto a_of = [&](std::size_t cell, std::size_t unit) {
      for (auto [mu, av] : m.cells[cell].members)
        if (mu == unit) return get(av);
      return 0.0;
    };
    const double G = a_of(pt.c, pt.ui) * a_of(pt.c2, pt.uj);
    set(pt.G, G);
    set(pt.x, G * get(m.cell_pairs[pt.pair].W));
  }
  double lam = -std::numeric_limits<double>::infinity();
  for (std::size_t r : m.lambda_rows) {
    double f = 0.0;
    for (auto [v, c] : m.rows[r].terms)
      if (v != m.lambda) f -= c * get(v);
    lam = std::max(lam, f);
  }
  set(m.lambda, lam);

  for (const auto& r : m.rows)
    if (!milp_row_satisfied(r, x)) {
      ev.violated = r.name;
      return ev;
    }
  ev.feasible = true;
  ev.objective = lam;

  if (check_forced) {
    std::vector<std::vector<std::size_t>> rows_of(m.vars.size());
    for (std::size_t r = 0; r < m.rows.size(); ++r)
      for (auto [v, c] : m.rows[r].terms) rows_of[static_cast<std::size_t>(v)].push_back(r);
    for (std::size_t v = 0; v < m.vars.size(); ++v) {
      if (!m.vars[v].binary) continue;
      bool decision = false;
      for (std::size_t i = 0; i < m.N; ++i) decision |= m.r_var[i] == static_cast<int>(v) || m.d_var[i] == static_cast<int>(v);
      if (decision) continue;
      x[v] = 1.0 - x[v];
      bool broken = false;
      for (std::size_t r : rows_of[v]) broken |= !milp_row_satisfied(m.rows[r], x);
      x[v] = 1.0 - x[v];
      if (!broken) ev.auxiliaries_forced = false;
    }
  }
  return ev;
}

struct MilpBruteForce {
  bool feasible = false;
  double objective = std::numeric_limits<double>::infinity();
  Assignment argmin;
  std::size_t points = 0;
};

/// Minimum of the model over all values of its R and D binaries.
inline MilpBruteForce milp_brute_force(const MilpModel& m) {
  std::vector<std::pair<std::size_t, bool>> bits;  // (node, is_r)
  for (std::size_t i = 0; i < m.N; ++i) {
    if (m.r_var[i] >= 0) bits.push_back({i, true});
    if (m.d_var[i] >= 0) bits.push_back({i, false});
  }
  if (bits.size() > 24) throw ParameterError("milp_brute_force: too many decision binaries");
  MilpBruteForce out;
  Assignment a(m.N);
  for (std::uint32_t mask = 0; mask < (1u << bits.size()); ++mask) {
    long size = 0;
    for (std::size_t b = 0; b < bits.size(); ++b) {
      const std::uint8_t v = (mask >> b) & 1u;
      if (bits[b].second) a.R[bits[b].first] = v, size += v;
      else a.D[bits[b].first] = v;
    }
    if (size < m.n_min || size > m.n_max) continue;  // the size rows would reject it
    ++out.points;
    const auto ev = milp_evaluate(m, a);
    if (ev.feasible && ev.objective < out.objective - 1e-12) {
      out.feasible = true;
      out.objective = ev.objective;
      out.argmin = a;
    }
  }
  return out;
}

}  // namespace eli
