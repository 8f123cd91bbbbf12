#include "casif/graph.hpp"

#include <algorithm>
#include <unordered_map>

#include "casif/error.hpp"

namespace casif {

SessionGraph build_session_graph(std::span<const ItemIndex> prefix) {
  if (prefix.empty()) {
    throw ArgumentError("build_session_graph: empty prefix");
  }
  SessionGraph g;
  std::unordered_map<ItemIndex, std::size_t> node_of;
  g.alias.reserve(prefix.size());
  for (const auto item : prefix) {
    const auto [it, inserted] = node_of.try_emplace(item, g.nodes.size());
    if (inserted) {
      g.nodes.push_back(item);
    }
    g.alias.push_back(it->second);
  }

  const auto q = g.nodes.size();
  Matrix counts(q, q);
  for (std::size_t t = 1; t < g.alias.size(); ++t) {
    counts(g.alias[t - 1], g.alias[t]) += 1.0;
  }

  g.m_out = Matrix(q, q);
  g.m_in = Matrix(q, q);
  for (std::size_t i = 0; i < q; ++i) {
    double out_degree = 0.0;
    double in_degree = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      out_degree += counts(i, j);
      in_degree += counts(j, i);
    }
    for (std::size_t j = 0; j < q; ++j) {
      if (out_degree > 0.0) {
        g.m_out(i, j) = counts(i, j) / out_degree;
      }
      if (in_degree > 0.0) {
        g.m_in(i, j) = counts(j, i) / in_degree;
      }
    }
  }
  return g;
}

namespace {

nlohmann::json matrix_rows(const Matrix& m) {
  auto rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

}  // namespace

nlohmann::json graph_to_json(const SessionGraph& g) {
  return {{"nodes", g.nodes}, {"alias", g.alias}, {"m_in", matrix_rows(g.m_in)},
          {"m_out", matrix_rows(g.m_out)}};
}

}  // namespace casif
