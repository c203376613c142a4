#pragma once

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2pgrid/epidemic.hpp"
#include "p2pgrid/topology.hpp"

namespace p2pgrid::testing {

/// Random connected graph: random spanning tree plus extra edges.
inline CommGraph random_connected_graph(std::mt19937_64& rng, std::size_t n,
                                        double extra_edge_prob = 0.2) {
  std::vector<Edge> edges;
  for (std::size_t v = 1; v < n; ++v)
    edges.emplace_back(uniform_index(rng, v), v);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      bool present = false;
      for (const auto& e : edges)
        if ((e.first == i && e.second == j) || (e.first == j && e.second == i))
          present = true;
      if (!present && uniform_unit(rng) < extra_edge_prob) edges.emplace_back(i, j);
    }
  return CommGraph::build(n, edges);
}

inline CommGraph ring_graph(std::size_t n) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) edges.emplace_back(i, (i + 1) % n);
  return CommGraph::build(n, edges);
}

inline CommGraph path_graph(std::size_t n, std::optional<double> epsilon = {}) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  return CommGraph::build(n, edges, epsilon);
}

inline CommGraph complete_graph(std::size_t n) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) edges.emplace_back(i, j);
  return CommGraph::build(n, edges);
}

inline std::vector<double> random_values(std::mt19937_64& rng, std::size_t n,
                                         double lo = -10.0, double hi = 10.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = lo + (hi - lo) * uniform_unit(rng);
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace p2pgrid::testing
