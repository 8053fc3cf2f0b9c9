#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "eli/errors.hpp"
#include "eli/graph.hpp"

namespace eli {

/// Joint participation (R) and treatment (D) vectors over all N nodes.
/// D is meaningful on participants and their neighbors; elsewhere it is the
/// exogenous baseline (0 unless fixed by a pilot wave).
struct Assignment {
  std::vector<std::uint8_t> R;
  std::vector<std::uint8_t> D;

  Assignment() = default;
  explicit Assignment(std::size_t n) : R(n, 0), D(n, 0) {}

  std::size_t size() const { return R.size(); }
  std::size_t participants() const {
    std::size_t c = 0;
    for (auto r : R) c += r;
    return c;
  }
  std::vector<NodeId> participant_ids() const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < R.size(); ++i)
      if (R[i]) out.push_back(static_cast<NodeId>(i));
    return out;
  }

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// Number of treated neighbors of i.
inline int treated_neighbors(const Network& net, const std::vector<std::uint8_t>& D, NodeId i) {
  int s = 0;
  for (NodeId k : net.neighbors(i)) s += D[static_cast<std::size_t>(k)];
  return s;
}

/// Assignment CSV: node_id,R,D
inline void save_assignment(const Assignment& a, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write assignment " + path.string());
  out << "node_id,R,D\n";
  for (std::size_t i = 0; i < a.size(); ++i) out << i << ',' << int(a.R[i]) << ',' << int(a.D[i]) << '\n';
}

inline Assignment load_assignment(const std::filesystem::path& path, std::size_t n) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open assignment " + path.string());
  Assignment a(n);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) continue;
    auto f = detail::split_fields(line);
    if (f.empty()) continue;
    long long id = 0, r = 0, d = 0;
    if (f.size() < 3 || !detail::parse_int(f[0], id) || !detail::parse_int(f[1], r) || !detail::parse_int(f[2], d))
      throw ParseError("malformed assignment row at line " + std::to_string(lineno));
    if (id < 0 || static_cast<std::size_t>(id) >= n) throw ParseError("node id out of range at line " + std::to_string(lineno));
    if ((r != 0 && r != 1) || (d != 0 && d != 1)) throw ParseError("R and D must be 0/1 at line " + std::to_string(lineno));
    a.R[static_cast<std::size_t>(id)] = static_cast<std::uint8_t>(r);
    a.D[static_cast<std::size_t>(id)] = static_cast<std::uint8_t>(d);
  }
  return a;
}

}  // namespace eli
