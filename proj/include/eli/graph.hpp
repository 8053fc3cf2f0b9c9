#pragma once

// Undirected simple graphs, random generators, edge-list I/O and the
// per-node statistics (degree, optional covariate, BFS rings) used by the
// estimators and the design engine.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "eli/errors.hpp"
#include "eli/rng.hpp"

namespace eli {

using NodeId = std::int32_t;
using Edge = std::pair<NodeId, NodeId>;

class Network {
 public:
  Network() = default;
  explicit Network(std::size_t n) : adj_(n) {}

  /// Builds a graph from an edge list. Duplicate and reversed edges are merged;
  /// self-loops and out-of-range ids throw ParameterError.
  static Network from_edges(std::size_t n, std::span<const Edge> edges) {
    Network g(n);
    for (const auto& [a, b] : edges) {
      if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= n || static_cast<std::size_t>(b) >= n)
        throw ParameterError("edge (" + std::to_string(a) + "," + std::to_string(b) + ") out of range");
      if (a == b) throw ParameterError("self-loop at node " + std::to_string(a));
      g.adj_[a].push_back(b);
      g.adj_[b].push_back(a);
    }
    for (auto& nb : g.adj_) {
      std::sort(nb.begin(), nb.end());
      nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
    return g;
  }

  std::size_t size() const { return adj_.size(); }
  std::span<const NodeId> neighbors(NodeId i) const { return adj_[static_cast<std::size_t>(i)]; }
  int degree(NodeId i) const { return static_cast<int>(adj_[static_cast<std::size_t>(i)].size()); }

  bool has_edge(NodeId i, NodeId j) const {
    const auto& nb = adj_[static_cast<std::size_t>(i)];
    return std::binary_search(nb.begin(), nb.end(), j);
  }

  std::size_t num_edges() const {
    std::size_t total = 0;
    for (const auto& nb : adj_) total += nb.size();
    return total / 2;
  }

  /// The maximal degree over all nodes (0 for an empty or edgeless graph).
  int max_degree() const {
    std::size_t best = 0;
    for (const auto& nb : adj_) best = std::max(best, nb.size());
    return static_cast<int>(best);
  }

  /// Edges with i < j, sorted.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(num_edges());
    for (std::size_t i = 0; i < adj_.size(); ++i)
      for (NodeId j : adj_[i])
        if (static_cast<NodeId>(i) < j) out.emplace_back(static_cast<NodeId>(i), j);
    return out;
  }

  /// Checks symmetry, loop-freeness and sortedness; used by tests and audits.
  bool is_valid() const {
    for (std::size_t i = 0; i < adj_.size(); ++i) {
      const auto& nb = adj_[i];
      if (!std::is_sorted(nb.begin(), nb.end())) return false;
      if (std::adjacent_find(nb.begin(), nb.end()) != nb.end()) return false;
      for (NodeId j : nb) {
        if (j < 0 || static_cast<std::size_t>(j) >= adj_.size()) return false;
        if (static_cast<std::size_t>(j) == i) return false;
        if (!has_edge(j, static_cast<NodeId>(i))) return false;
      }
    }
    return true;
  }

  friend bool operator==(const Network&, const Network&) = default;

 private:
  std::vector<std::vector<NodeId>> adj_;
};

/// Discrete per-node statistic theta_i: always the degree, optionally a covariate T_i.
struct UnitStats {
  std::vector<int> degree;
  std::vector<int> covariate;  // empty when no covariate is attached

  static UnitStats of(const Network& net, std::vector<int> covariate = {}) {
    if (!covariate.empty() && covariate.size() != net.size())
      throw ParameterError("covariate length does not match the number of nodes");
    UnitStats st;
    st.degree.resize(net.size());
    for (std::size_t i = 0; i < net.size(); ++i) st.degree[i] = net.degree(static_cast<NodeId>(i));
    st.covariate = std::move(covariate);
    return st;
  }

  bool has_covariate() const { return !covariate.empty(); }
  /// T_i when a covariate is attached, otherwise the degree.
  int extra(NodeId i) const {
    return has_covariate() ? covariate[static_cast<std::size_t>(i)] : degree[static_cast<std::size_t>(i)];
  }
};

/// Rings N_i^u = nodes at shortest-path distance exactly u, for u = 1..M.
class NeighborhoodIndex {
 public:
  NeighborhoodIndex() = default;

  NeighborhoodIndex(const Network& net, int order) : order_(order) {
    if (order < 1) throw ParameterError("ring order M must be >= 1");
    const std::size_t n = net.size();
    rings_.assign(n, std::vector<std::vector<NodeId>>(static_cast<std::size_t>(order)));
    std::vector<int> dist(n, -1);
    std::vector<NodeId> touched;
    for (std::size_t src = 0; src < n; ++src) {
      std::queue<NodeId> q;
      dist[src] = 0;
      touched.assign(1, static_cast<NodeId>(src));
      q.push(static_cast<NodeId>(src));
      while (!q.empty()) {
        const NodeId v = q.front();
        q.pop();
        const int dv = dist[static_cast<std::size_t>(v)];
        if (dv == order) continue;
        for (NodeId w : net.neighbors(v)) {
          if (dist[static_cast<std::size_t>(w)] >= 0) continue;
          dist[static_cast<std::size_t>(w)] = dv + 1;
          touched.push_back(w);
          rings_[src][static_cast<std::size_t>(dv)].push_back(w);
          q.push(w);
        }
      }
      for (auto& r : rings_[src]) std::sort(r.begin(), r.end());
      for (NodeId v : touched) dist[static_cast<std::size_t>(v)] = -1;
    }
    max_degree_ = net.max_degree();
  }

  int order() const { return order_; }
  std::size_t size() const { return rings_.size(); }
  /// Nodes at distance exactly u (1-based) from i.
  std::span<const NodeId> ring(NodeId i, int u) const {
    return rings_[static_cast<std::size_t>(i)][static_cast<std::size_t>(u - 1)];
  }
  /// Distance from i to j if it is at most M, otherwise 0.
  int distance(NodeId i, NodeId j) const {
    for (int u = 1; u <= order_; ++u) {
      auto r = ring(i, u);
      if (std::binary_search(r.begin(), r.end(), j)) return u;
    }
    return 0;
  }
  int max_degree() const { return max_degree_; }

 private:
  int order_ = 0;
  int max_degree_ = 0;
  std::vector<std::vector<std::vector<NodeId>>> rings_;
};

inline NeighborhoodIndex build_rings(const Network& net, int order) { return NeighborhoodIndex(net, order); }

// ---------------------------------------------------------------------------
// Generators

inline Network generate_er(std::size_t n, double p, std::uint64_t seed) {
  if (n < 1) throw ParameterError("generate_er: n must be >= 1");
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("generate_er: probability must lie in [0,1]");
  Rng rng = make_rng(seed);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (bernoulli(rng, p)) edges.emplace_back(static_cast<NodeId>(i), static_cast<NodeId>(j));
  return Network::from_edges(n, edges);
}

/// Size of the Erdos-Renyi core that seeds the preferential-attachment growth.
inline std::size_t ab_core_size(std::size_t n) { return std::min(n, std::max<std::size_t>(n / 5, 5)); }

/// Albert-Barabasi style growth: an ER(core, 2/n) seed, then each new node draws
/// one partner with probability proportional to the partner's current degree
/// (uniform while the running graph has no edges).
inline Network generate_ab(std::size_t n, std::uint64_t seed) {
  if (n < 5) throw ParameterError("generate_ab: n must be >= 5");
  Rng rng = make_rng(seed);
  const std::size_t core = ab_core_size(n);
  const double p = 2.0 / static_cast<double>(n);
  std::vector<Edge> edges;
  std::vector<std::size_t> deg(n, 0);
  // Endpoint list: a node appears once per incident edge, so a uniform pick
  // from it is a degree-proportional pick.
  std::vector<NodeId> endpoints;
  for (std::size_t i = 0; i < core; ++i)
    for (std::size_t j = i + 1; j < core; ++j)
      if (bernoulli(rng, p)) {
        edges.emplace_back(static_cast<NodeId>(i), static_cast<NodeId>(j));
        endpoints.push_back(static_cast<NodeId>(i));
        endpoints.push_back(static_cast<NodeId>(j));
      }
  for (std::size_t v = core; v < n; ++v) {
    NodeId target;
    if (endpoints.empty()) {
      target = static_cast<NodeId>(std::uniform_int_distribution<std::size_t>(0, v - 1)(rng));
    } else {
      target = endpoints[std::uniform_int_distribution<std::size_t>(0, endpoints.size() - 1)(rng)];
    }
    edges.emplace_back(static_cast<NodeId>(v), target);
    endpoints.push_back(static_cast<NodeId>(v));
    endpoints.push_back(target);
  }
  return Network::from_edges(n, edges);
}

// ---------------------------------------------------------------------------
// Edge-list I/O
//
// Format: one "i j" pair per line, whitespace or comma separated, 0-based ids.
// Optional header "# nodes=N". Other '#' lines are comments, except
// "# directed" which is rejected. Non-integer ids switch the loader to
// remapping mode; the external ids are returned in first-seen order.

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline bool parse_int(const std::string& s, long long& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

struct EdgeListData {
  Network network;
  std::vector<std::string> external_ids;  // non-empty only when ids were remapped
};

inline EdgeListData parse_edge_list(std::istream& in) {
  struct Raw {
    std::string a, b;
    std::size_t line;
  };
  std::vector<Raw> raw;
  long long declared = -1;
  std::string line;
  std::size_t lineno = 0;
  bool all_int = true;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      std::string body = detail::trim(std::string_view(t).substr(1));
      if (body.rfind("nodes=", 0) == 0) {
        if (!detail::parse_int(body.substr(6), declared) || declared < 0)
          throw ParseError("bad node count at line " + std::to_string(lineno));
      } else if (body.rfind("directed", 0) == 0) {
        throw ParseError("directed graphs are not supported (line " + std::to_string(lineno) + ")");
      }
      continue;
    }
    auto f = detail::split_fields(t);
    if (f.size() != 2) throw ParseError("malformed edge at line " + std::to_string(lineno));
    long long tmp;
    if (!detail::parse_int(f[0], tmp) || !detail::parse_int(f[1], tmp)) all_int = false;
    raw.push_back({f[0], f[1], lineno});
  }

  EdgeListData out;
  std::vector<Edge> edges;
  edges.reserve(raw.size());
  if (all_int) {
    long long max_id = -1;
    for (const auto& r : raw) {
      long long a = 0, b = 0;
      detail::parse_int(r.a, a);
      detail::parse_int(r.b, b);
      if (a < 0 || b < 0) throw ParseError("negative id at line " + std::to_string(r.line));
      if (a == b) throw ParseError("self-loop at line " + std::to_string(r.line));
      if (declared >= 0 && (a >= declared || b >= declared))
        throw ParseError("id out of range at line " + std::to_string(r.line));
      max_id = std::max({max_id, a, b});
      edges.emplace_back(static_cast<NodeId>(a), static_cast<NodeId>(b));
    }
    const std::size_t n = declared >= 0 ? static_cast<std::size_t>(declared) : static_cast<std::size_t>(max_id + 1);
    out.network = Network::from_edges(n, edges);
    return out;
  }

  std::unordered_map<std::string, NodeId> ids;
  auto intern = [&](const std::string& s) {
    auto [it, inserted] = ids.try_emplace(s, static_cast<NodeId>(out.external_ids.size()));
    if (inserted) out.external_ids.push_back(s);
    return it->second;
  };
  for (const auto& r : raw) {
    if (r.a == r.b) throw ParseError("self-loop at line " + std::to_string(r.line));
    const NodeId a = intern(r.a);
    const NodeId b = intern(r.b);
    edges.emplace_back(a, b);
  }
  std::size_t n = out.external_ids.size();
  if (declared >= 0) {
    if (static_cast<std::size_t>(declared) < n) throw ParseError("more distinct ids than the declared node count");
    n = static_cast<std::size_t>(declared);
  }
  out.network = Network::from_edges(n, edges);
  return out;
}

inline EdgeListData load_edge_list_data(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open edge list " + path.string());
  return parse_edge_list(in);
}

inline Network load_edge_list(const std::filesystem::path& path) { return load_edge_list_data(path).network; }

inline void write_edge_list(const Network& net, std::ostream& out) {
  out << "# nodes=" << net.size() << '\n';
  for (const auto& [a, b] : net.edges()) out << a << ' ' << b << '\n';
}

inline void save_edge_list(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write edge list " + path.string());
  write_edge_list(net, out);
}

/// Sidecar mapping external ids to dense internal ids, as "external_id,internal_id" CSV.
inline void save_id_map(const std::vector<std::string>& external_ids, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write id map " + path.string());
  out << "external_id,internal_id\n";
  for (std::size_t i = 0; i < external_ids.size(); ++i) out << external_ids[i] << ',' << i << '\n';
}

inline std::vector<std::string> load_id_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open id map " + path.string());
  std::string line;
  std::vector<std::pair<long long, std::string>> rows;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) continue;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto comma = t.rfind(',');
    long long id = 0;
    if (comma == std::string::npos || !detail::parse_int(t.substr(comma + 1), id))
      throw ParseError("malformed id map row at line " + std::to_string(lineno));
    rows.emplace_back(id, t.substr(0, comma));
  }
  std::vector<std::string> out(rows.size());
  for (auto& [id, ext] : rows) {
    if (id < 0 || static_cast<std::size_t>(id) >= out.size()) throw ParseError("id map is not dense");
    out[static_cast<std::size_t>(id)] = std::move(ext);
  }
  return out;
}

}  // namespace eli
