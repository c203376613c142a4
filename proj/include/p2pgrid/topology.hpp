#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "p2pgrid/errors.hpp"

namespace p2pgrid {

using NodeId = std::size_t;
using Edge = std::pair<NodeId, NodeId>;  // stored with first < second

/// Undirected communication graph with a common edge weight epsilon.
/// Removed nodes are tombstoned so NodeIds stay stable across failures;
/// edges incident to a dead node are treated as absent but reappear when
/// the node is restored.
class CommGraph {
 public:
  static CommGraph build(std::size_t node_count, const std::vector<Edge>& edges,
                         std::optional<double> epsilon = std::nullopt) {
    if (node_count < 1) throw InvalidNode("node_count must be >= 1");
    CommGraph g;
    g.n_ = node_count;
    g.alive_.assign(node_count, true);
    g.adj_.assign(node_count, std::vector<bool>(node_count, false));
    for (const auto& [a, b] : edges) {
      if (a >= node_count || b >= node_count)
        throw InvalidNode("edge references node " + std::to_string(std::max(a, b)) +
                          " outside [0, " + std::to_string(node_count) + ")");
      if (a == b) throw SelfLoop("self-loop on node " + std::to_string(a));
      g.adj_[a][b] = true;
      g.adj_[b][a] = true;
    }
    const std::size_t delta = g.max_degree();
    if (epsilon) {
      const double eps = *epsilon;
      if (eps <= 0.0 || (delta >= 1 && eps >= 1.0 / static_cast<double>(delta)))
        throw EpsilonOutOfRange("epsilon " + std::to_string(eps) +
                                " not in (0, 1/max_degree)");
      g.epsilon_ = eps;
    } else {
      g.epsilon_ = default_epsilon_for(delta);
    }
    return g;
  }

  std::size_t node_count() const { return n_; }

  std::size_t live_count() const {
    return static_cast<std::size_t>(std::count(alive_.begin(), alive_.end(), true));
  }

  bool alive(NodeId i) const {
    check_index(i);
    return alive_[i];
  }

  double epsilon() const { return epsilon_; }

  bool has_edge(NodeId i, NodeId j) const {
    check_index(i);
    check_index(j);
    return alive_[i] && alive_[j] && adj_[i][j];
  }

  /// Live neighbors of a live node, ascending.
  std::vector<NodeId> neighbors(NodeId i) const {
    check_live(i);
    std::vector<NodeId> out;
    for (NodeId j = 0; j < n_; ++j)
      if (alive_[j] && adj_[i][j]) out.push_back(j);
    return out;
  }

  std::size_t degree(NodeId i) const {
    check_live(i);
    std::size_t d = 0;
    for (NodeId j = 0; j < n_; ++j)
      if (alive_[j] && adj_[i][j]) ++d;
    return d;
  }

  std::size_t max_degree() const {
    std::size_t best = 0;
    for (NodeId i = 0; i < n_; ++i)
      if (alive_[i]) best = std::max(best, degree(i));
    return best;
  }

  /// True iff every live node is reachable from the first live node.
  bool is_connected() const {
    std::vector<NodeId> live;
    for (NodeId i = 0; i < n_; ++i)
      if (alive_[i]) live.push_back(i);
    if (live.empty()) return false;
    std::vector<bool> seen(n_, false);
    std::vector<NodeId> stack{live.front()};
    seen[live.front()] = true;
    while (!stack.empty()) {
      NodeId v = stack.back();
      stack.pop_back();
      for (NodeId j : neighbors(v))
        if (!seen[j]) {
          seen[j] = true;
          stack.push_back(j);
        }
    }
    return std::all_of(live.begin(), live.end(), [&](NodeId v) { return seen[v]; });
  }

  CommGraph remove_node(NodeId i) const {
    check_live(i);
    if (live_count() < 2) throw LastNode("cannot remove the last live node");
    CommGraph g = *this;
    g.alive_[i] = false;
    return g;
  }

  CommGraph restore_node(NodeId i) const {
    check_index(i);
    if (alive_[i]) throw UnknownTarget("node " + std::to_string(i) + " is already live");
    CommGraph g = *this;
    g.alive_[i] = true;
    return g;
  }

  CommGraph remove_edge(NodeId i, NodeId j) const {
    check_index(i);
    check_index(j);
    if (!adj_[i][j]) throw UnknownTarget("no edge {" + std::to_string(i) + "," +
                                         std::to_string(j) + "}");
    CommGraph g = *this;
    g.adj_[i][j] = false;
    g.adj_[j][i] = false;
    return g;
  }

  CommGraph add_edge(NodeId i, NodeId j) const {
    check_index(i);
    check_index(j);
    if (i == j) throw SelfLoop("self-loop on node " + std::to_string(i));
    if (adj_[i][j]) throw UnknownTarget("edge {" + std::to_string(i) + "," +
                                        std::to_string(j) + "} already present");
    CommGraph g = *this;
    g.adj_[i][j] = true;
    g.adj_[j][i] = true;
    return g;
  }

  /// Live edges, each once with first < second, lexicographic order.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (NodeId i = 0; i < n_; ++i) {
      if (!alive_[i]) continue;
      for (NodeId j = i + 1; j < n_; ++j)
        if (alive_[j] && adj_[i][j]) out.emplace_back(i, j);
    }
    return out;
  }

  /// Copy with every node outside `keep` tombstoned (induced subgraph).
  CommGraph restricted_to(const std::vector<bool>& keep) const {
    if (keep.size() != n_) throw DimensionMismatch("keep mask size mismatch");
    CommGraph g = *this;
    for (NodeId i = 0; i < n_; ++i)
      if (!keep[i]) g.alive_[i] = false;
    return g;
  }

  const std::vector<bool>& alive_mask() const { return alive_; }

  static double default_epsilon_for(std::size_t max_degree) {
    return max_degree == 0 ? 1.0 : 1.0 / static_cast<double>(max_degree + 1);
  }

  bool operator==(const CommGraph&) const = default;

 private:
  void check_index(NodeId i) const {
    if (i >= n_) throw InvalidNode("node " + std::to_string(i) + " out of range");
  }
  void check_live(NodeId i) const {
    check_index(i);
    if (!alive_[i]) throw InvalidNode("node " + std::to_string(i) + " is tombstoned");
  }

  std::size_t n_ = 0;
  double epsilon_ = 1.0;
  std::vector<bool> alive_;
  std::vector<std::vector<bool>> adj_;
};

inline double default_epsilon(const CommGraph& g) {
  return CommGraph::default_epsilon_for(g.max_degree());
}

}  // namespace p2pgrid
