#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "casif/corpus.hpp"
#include "casif/tensor.hpp"

namespace casif {

/// Directed graph of one session prefix.
///
/// nodes holds the distinct items in first-occurrence order and alias maps
/// each session position to its node. m_out[i][j] is the number of i->j
/// transitions divided by the total outgoing transitions of i; m_in[i][j] is
/// the number of j->i transitions divided by the total incoming transitions
/// of i. Rows of nodes without edges in that direction are zero.
struct SessionGraph {
  std::vector<ItemIndex> nodes;
  std::vector<std::size_t> alias;
  Matrix m_in;
  Matrix m_out;

  std::size_t num_nodes() const { return nodes.size(); }
  std::size_t length() const { return alias.size(); }
};

/// Throws ArgumentError for an empty prefix.
SessionGraph build_session_graph(std::span<const ItemIndex> prefix);

/// {nodes, alias, m_in, m_out} with row-major nested arrays.
nlohmann::json graph_to_json(const SessionGraph& g);

}  // namespace casif
