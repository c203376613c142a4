#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "p2pgrid/errors.hpp"
#include "p2pgrid/topology.hpp"

namespace p2pgrid {

/// Draw a uniform index in [0, n) from the stream. Rejection sampling so the
/// result depends only on the mt19937_64 output sequence, not on library
/// distribution internals.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t span = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = span - span % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

struct ConsensusState {
  std::vector<double> values;
  std::vector<bool> live;  // aligned with values; mirrors the graph's mask
  std::size_t round = 0;
  double initial_sum = 0.0;

  bool operator==(const ConsensusState&) const = default;
};

struct PushSumState {
  std::vector<double> sums;
  std::vector<double> weights;
  std::vector<bool> live;

  bool operator==(const PushSumState&) const = default;
};

struct ConvergenceReport {
  bool converged = false;
  std::size_t rounds_used = 0;
  double final_residual = 0.0;
  double consensus_value = 0.0;  // defined when converged
  double sum_estimate = 0.0;     // live_count * consensus_value
};

namespace detail {

inline void check_dims(std::size_t got, const CommGraph& g) {
  if (got != g.node_count())
    throw DimensionMismatch("state dimension " + std::to_string(got) +
                            " does not match graph node count " +
                            std::to_string(g.node_count()));
}

inline void check_masks(const std::vector<bool>& state_live, const CommGraph& g) {
  if (state_live != g.alive_mask())
    throw DimensionMismatch("state live mask disagrees with graph");
}

}  // namespace detail

inline ConsensusState make_consensus_state(const std::vector<double>& init,
                                           const CommGraph& g) {
  detail::check_dims(init.size(), g);
  ConsensusState s;
  s.values = init;
  s.live = g.alive_mask();
  s.round = 0;
  s.initial_sum = 0.0;
  for (NodeId i = 0; i < init.size(); ++i)
    if (s.live[i]) s.initial_sum += init[i];
  return s;
}

/// Drop one agent from the state: its value no longer counts and the
/// conserved sum rebases to the survivors' current total.
inline ConsensusState drop_agent(const ConsensusState& s, NodeId i) {
  if (i >= s.values.size() || !s.live[i])
    throw UnknownTarget("agent " + std::to_string(i) + " not live in state");
  ConsensusState out = s;
  out.live[i] = false;
  out.initial_sum = 0.0;
  for (NodeId j = 0; j < out.values.size(); ++j)
    if (out.live[j]) out.initial_sum += out.values[j];
  return out;
}

inline ConsensusState readmit_agent(const ConsensusState& s, NodeId i, double value) {
  if (i >= s.values.size() || s.live[i])
    throw UnknownTarget("agent " + std::to_string(i) + " already live in state");
  ConsensusState out = s;
  out.live[i] = true;
  out.values[i] = value;
  out.initial_sum = 0.0;
  for (NodeId j = 0; j < out.values.size(); ++j)
    if (out.live[j]) out.initial_sum += out.values[j];
  return out;
}

/// One synchronous linear-consensus round restricted to `active_edges`.
/// Neighbor terms are read from `neighbor_values` (normally the state's own
/// values; the simulator passes a lagged snapshot when modeling delay).
inline ConsensusState consensus_step(const ConsensusState& state, const CommGraph& g,
                                     const std::vector<Edge>& active_edges,
                                     const std::vector<double>& neighbor_values) {
  detail::check_dims(state.values.size(), g);
  detail::check_dims(neighbor_values.size(), g);
  detail::check_masks(state.live, g);
  ConsensusState next = state;
  const double eps = g.epsilon();
  for (const auto& [i, j] : active_edges) {
    if (!g.has_edge(i, j)) continue;
    next.values[i] += eps * (neighbor_values[j] - state.values[i]);
    next.values[j] += eps * (neighbor_values[i] - state.values[j]);
  }
  next.round = state.round + 1;
  return next;
}

inline ConsensusState consensus_step(const ConsensusState& state, const CommGraph& g) {
  return consensus_step(state, g, g.edges(), state.values);
}

/// Spread max_i x_i - min_i x_i over live agents; zero at consensus.
inline double consensus_residual(const ConsensusState& state) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (NodeId i = 0; i < state.values.size(); ++i) {
    if (!state.live[i]) continue;
    lo = std::min(lo, state.values[i]);
    hi = std::max(hi, state.values[i]);
  }
  if (hi < lo) return 0.0;  // no live agents
  return hi - lo;
}

inline double live_mean(const ConsensusState& state) {
  double sum = 0.0;
  std::size_t n = 0;
  for (NodeId i = 0; i < state.values.size(); ++i)
    if (state.live[i]) {
      sum += state.values[i];
      ++n;
    }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

inline std::pair<ConsensusState, ConvergenceReport> run_consensus(
    const std::vector<double>& init, const CommGraph& g, double tol,
    std::size_t max_rounds) {
  if (tol <= 0.0) throw Error("tol must be positive");
  if (!g.is_connected())
    throw NotConnected("consensus requires a connected graph");
  ConsensusState state = make_consensus_state(init, g);
  ConvergenceReport report;
  double res = consensus_residual(state);
  while (res > tol && state.round < max_rounds) {
    state = consensus_step(state, g);
    res = consensus_residual(state);
  }
  report.rounds_used = state.round;
  report.final_residual = res;
  report.converged = res <= tol;
  if (report.converged) {
    report.consensus_value = live_mean(state);
    report.sum_estimate =
        report.consensus_value * static_cast<double>(g.live_count());
  }
  return {state, report};
}

inline PushSumState make_push_sum_state(const std::vector<double>& init,
                                        const CommGraph& g) {
  detail::check_dims(init.size(), g);
  PushSumState s;
  s.sums = init;
  s.weights.assign(init.size(), 1.0);
  s.live = g.alive_mask();
  return s;
}

/// One synchronous push-sum round: each live node halves its (sum, weight)
/// pair, keeps one half and pushes the other to one uniformly chosen live
/// neighbor. Total mass is redistributed, never created or lost.
inline PushSumState push_sum_round(const PushSumState& state, const CommGraph& g,
                                   std::mt19937_64& rng) {
  detail::check_dims(state.sums.size(), g);
  detail::check_dims(state.weights.size(), g);
  detail::check_masks(state.live, g);
  for (NodeId i = 0; i < state.weights.size(); ++i)
    if (state.live[i] && !(state.weights[i] > 0.0))
      throw Error("push-sum weight must stay positive");

  PushSumState next = state;
  for (NodeId i = 0; i < state.sums.size(); ++i) {
    if (!state.live[i]) continue;
    const auto nbrs = g.neighbors(i);
    if (nbrs.empty()) continue;  // isolated node keeps its full share
    const NodeId target = nbrs[uniform_index(rng, nbrs.size())];
    const double half_s = 0.5 * state.sums[i];
    const double half_w = 0.5 * state.weights[i];
    next.sums[i] -= half_s;
    next.weights[i] -= half_w;
    next.sums[target] += half_s;
    next.weights[target] += half_w;
  }
  return next;
}

inline double push_sum_residual(const PushSumState& state) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (NodeId i = 0; i < state.sums.size(); ++i) {
    if (!state.live[i]) continue;
    const double est = state.sums[i] / state.weights[i];
    lo = std::min(lo, est);
    hi = std::max(hi, est);
  }
  if (hi < lo) return 0.0;
  return hi - lo;
}

inline ConvergenceReport run_push_sum(const std::vector<double>& init,
                                      const CommGraph& g, double tol,
                                      std::size_t max_rounds, std::mt19937_64& rng) {
  if (tol <= 0.0) throw Error("tol must be positive");
  if (!g.is_connected())
    throw NotConnected("push-sum requires a connected graph");
  PushSumState state = make_push_sum_state(init, g);
  ConvergenceReport report;
  std::size_t rounds = 0;
  double res = push_sum_residual(state);
  while (res > tol && rounds < max_rounds) {
    state = push_sum_round(state, g, rng);
    ++rounds;
    res = push_sum_residual(state);
  }
  report.rounds_used = rounds;
  report.final_residual = res;
  report.converged = res <= tol;
  if (report.converged) {
    double s = 0.0, w = 0.0;
    for (NodeId i = 0; i < state.sums.size(); ++i)
      if (state.live[i]) {
        s += state.sums[i];
        w += state.weights[i];
      }
    report.consensus_value = s / w;
    report.sum_estimate = report.consensus_value * static_cast<double>(g.live_count());
  }
  return report;
}

}  // namespace p2pgrid
