#pragma once

#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "p2pgrid/epidemic.hpp"
#include "p2pgrid/errors.hpp"
#include "p2pgrid/grid_model.hpp"
#include "p2pgrid/topology.hpp"

namespace p2pgrid {

struct SecondaryParams {
  std::size_t period_rounds = 1;
  double gain = 1.0;  // in (0, 1]
  double consensus_tol = 1e-12;
  std::size_t consensus_max_rounds = 100000;

  bool operator==(const SecondaryParams&) const = default;
};

struct TertiaryState {
  std::vector<double> lambda_estimates;   // currency/MW, per agent
  std::vector<double> mismatch_estimate;  // MW, per agent
  double step_size = 0.1;

  bool operator==(const TertiaryState&) const = default;
};

/// Aggregate view of a lower-level microgrid as one dispatchable unit at
/// its point of common coupling.
struct CouplingProfile {
  std::string pcc_id;
  double agg_p_min = 0.0;
  double agg_p_max = 0.0;
  double agg_cost_a = 0.0;
  double agg_cost_b = 0.0;
  double current_p = 0.0;

  bool operator==(const CouplingProfile&) const = default;
};

/// Setpoint corrections restoring frequency: agents agree on the average
/// measured deviation, then each dispatchable DER shifts its setpoint in
/// proportion to its droop gain. Returns one correction per DER (zero for
/// non-dispatchable ones).
inline std::vector<double> secondary_update(const std::vector<DerSpec>& ders,
                                            const CommGraph& graph,
                                            const SecondaryParams& params,
                                            const std::vector<double>& measured_delta_f,
                                            std::size_t* consensus_rounds = nullptr) {
  auto [state, report] = run_consensus(measured_delta_f, graph, params.consensus_tol,
                                       params.consensus_max_rounds);
  if (consensus_rounds) *consensus_rounds = report.rounds_used;
  const double agreed_delta_f = live_mean(state);
  std::vector<double> corrections(ders.size(), 0.0);
  for (std::size_t i = 0; i < ders.size(); ++i)
    if (ders[i].dispatchable())
      corrections[i] = -params.gain * ders[i].droop_gain * agreed_delta_f;
  return corrections;
}

struct DispatchResult {
  std::vector<double> power;  // MW per agent
  double lambda = 0.0;        // currency/MW
};

/// Equal-marginal-cost dispatch with limit handling: bisection on lambda over
/// the monotone map lambda -> sum clamp((lambda - b_i)/a_i, p_min, p_max).
/// Correctness baseline for the distributed tertiary scheme.
inline DispatchResult centralized_dispatch_oracle(const std::vector<DerSpec>& agents,
                                                  double demand_mw) {
  double p_min_sum = 0.0, p_max_sum = 0.0;
  double lambda_lo = std::numeric_limits<double>::infinity();
  double lambda_hi = -std::numeric_limits<double>::infinity();
  for (const auto& a : agents) {
    if (!a.dispatchable())
      throw NotDispatchable("agent " + a.id + " cannot be dispatched");
    if (!(a.cost_a > 0.0))
      throw NotDispatchable("agent " + a.id + " needs cost_a > 0");
    p_min_sum += a.p_min;
    p_max_sum += a.p_max;
    lambda_lo = std::min(lambda_lo, marginal_cost(a, a.p_min));
    lambda_hi = std::max(lambda_hi, marginal_cost(a, a.p_max));
  }
  if (demand_mw < p_min_sum - 1e-9 || demand_mw > p_max_sum + 1e-9)
    throw Infeasible("demand " + std::to_string(demand_mw) + " MW outside [" +
                     std::to_string(p_min_sum) + ", " + std::to_string(p_max_sum) + "]");
  auto total_at = [&](double lambda) {
    double sum = 0.0;
    for (const auto& a : agents)
      sum += std::clamp((lambda - a.cost_b) / a.cost_a, a.p_min, a.p_max);
    return sum;
  };
  double lo = lambda_lo, hi = lambda_hi;
  for (int iter = 0; iter < 200 && hi - lo > 0.0; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (total_at(mid) < demand_mw)
      lo = mid;
    else
      hi = mid;
  }
  DispatchResult result;
  result.lambda = 0.5 * (lo + hi);
  result.power.reserve(agents.size());
  for (const auto& a : agents)
    result.power.push_back(
        std::clamp((result.lambda - a.cost_b) / a.cost_a, a.p_min, a.p_max));
  // Spread any residual bisection slack over the unclamped agents so the
  // total meets the demand to 1e-12 MW.
  double total = std::accumulate(result.power.begin(), result.power.end(), 0.0);
  double slack_cap = 0.0;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const double p = result.power[i];
    if (p > agents[i].p_min && p < agents[i].p_max) slack_cap += 1.0 / agents[i].cost_a;
  }
  if (slack_cap > 0.0) {
    const double shift = (demand_mw - total) / slack_cap;
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const double p = result.power[i];
      if (p > agents[i].p_min && p < agents[i].p_max) {
        result.power[i] = std::clamp(p + shift / agents[i].cost_a, agents[i].p_min,
                                     agents[i].p_max);
      }
    }
    result.lambda += shift;
  }
  return result;
}

/// One outer iteration of the distributed economic-dispatch scheme:
/// consensus equalizes the per-agent price estimates, each agent computes
/// the power implied by its price, the global demand mismatch is found by
/// push-sum, and prices move along the mismatch.
inline TertiaryState tertiary_dispatch_step(const std::vector<DerSpec>& agents,
                                            const CommGraph& graph, double demand_mw,
                                            const TertiaryState& state,
                                            std::mt19937_64& rng) {
  if (agents.size() != graph.node_count())
    throw DimensionMismatch("agent list must align with graph nodes");
  for (const auto& a : agents)
    if (graph.alive(&a - agents.data()) && !a.dispatchable())
      throw NotDispatchable("agent " + a.id + " cannot join tertiary dispatch");
  if (!graph.is_connected())
    throw NotConnected("tertiary dispatch requires a connected graph");

  TertiaryState next = state;
  auto [lam_state, lam_report] =
      run_consensus(state.lambda_estimates, graph, 1e-11,
                    200 * graph.node_count() * graph.node_count() + 1000);
  next.lambda_estimates = lam_state.values;

  const std::size_t n_live = graph.live_count();
  std::vector<double> local_mismatch(agents.size(), 0.0);
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (!graph.alive(i)) continue;
    const double p = std::clamp(
        (next.lambda_estimates[i] - agents[i].cost_b) / agents[i].cost_a,
        agents[i].p_min, agents[i].p_max);
    local_mismatch[i] = demand_mw / static_cast<double>(n_live) - p;
  }
  const ConvergenceReport mis =
      run_push_sum(local_mismatch, graph, 1e-10, 100000, rng);
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (!graph.alive(i)) continue;
    next.mismatch_estimate[i] = mis.sum_estimate;
    next.lambda_estimates[i] += state.step_size * next.mismatch_estimate[i];
  }
  return next;
}

inline TertiaryState make_tertiary_state(const std::vector<DerSpec>& agents,
                                         const CommGraph& graph,
                                         double step_size = 0.0) {
  TertiaryState s;
  s.lambda_estimates.assign(agents.size(), 0.0);
  s.mismatch_estimate.assign(agents.size(), 0.0);
  double a_sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (!graph.alive(i)) continue;
    s.lambda_estimates[i] = marginal_cost(agents[i], agents[i].p_set);
    a_sum += agents[i].cost_a;
    ++n;
  }
  s.step_size = step_size > 0.0
                    ? step_size
                    : 0.05 / (a_sum / static_cast<double>(std::max<std::size_t>(n, 1)));
  return s;
}

struct TertiaryResult {
  TertiaryState state;
  std::vector<double> power;  // implied MW per agent at the final prices
  std::size_t iterations = 0;
  bool converged = false;
};

/// Iterate tertiary steps to the equal-price, zero-mismatch fixed point.
inline TertiaryResult run_tertiary(const std::vector<DerSpec>& agents,
                                   const CommGraph& graph, double demand_mw,
                                   TertiaryState state, double tol_mw,
                                   std::size_t max_iters, std::mt19937_64& rng) {
  TertiaryResult result;
  for (std::size_t it = 0; it < max_iters; ++it) {
    state = tertiary_dispatch_step(agents, graph, demand_mw, state, rng);
    result.iterations = it + 1;
    double worst = 0.0;
    for (std::size_t i = 0; i < agents.size(); ++i)
      if (graph.alive(i)) worst = std::max(worst, std::abs(state.mismatch_estimate[i]));
    if (worst <= tol_mw) {
      result.converged = true;
      break;
    }
  }
  result.state = std::move(state);
  result.power.assign(agents.size(), 0.0);
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (!graph.alive(i)) continue;
    result.power[i] =
        std::clamp((result.state.lambda_estimates[i] - agents[i].cost_b) /
                       agents[i].cost_a,
                   agents[i].p_min, agents[i].p_max);
  }
  return result;
}

/// Horizontal sum of the members' affine marginal-cost curves; exact in the
/// unclamped region, limits handled by the oracle at disaggregation time.
inline CouplingProfile aggregate_microgrid(const std::string& pcc_id,
                                           const std::vector<DerSpec>& members) {
  if (members.empty()) throw NotDispatchable("cannot aggregate an empty microgrid");
  CouplingProfile prof;
  prof.pcc_id = pcc_id;
  double inv_a_sum = 0.0, b_over_a_sum = 0.0;
  for (const auto& m : members) {
    if (!m.dispatchable() || !(m.cost_a > 0.0))
      throw NotDispatchable("member " + m.id + " cannot be aggregated");
    prof.agg_p_min += m.p_min;
    prof.agg_p_max += m.p_max;
    prof.current_p += m.p_set;
    inv_a_sum += 1.0 / m.cost_a;
    b_over_a_sum += m.cost_b / m.cost_a;
  }
  prof.agg_cost_a = 1.0 / inv_a_sum;
  prof.agg_cost_b = prof.agg_cost_a * b_over_a_sum;
  return prof;
}

inline CouplingProfile aggregate_microgrid(const Microgrid& mg) {
  return aggregate_microgrid(mg.id, mg.ders);
}

/// Split an aggregate power command across members at equal marginal cost.
inline std::vector<double> disaggregate_setpoint(const CouplingProfile& profile,
                                                 const std::vector<DerSpec>& members,
                                                 double p_command_mw) {
  if (p_command_mw < profile.agg_p_min - 1e-9 ||
      p_command_mw > profile.agg_p_max + 1e-9)
    throw Infeasible("command " + std::to_string(p_command_mw) +
                     " MW outside aggregate limits of " + profile.pcc_id);
  return centralized_dispatch_oracle(members, p_command_mw).power;
}

/// A coupling profile seen from the level above, as a dispatchable unit.
inline DerSpec profile_as_der(const CouplingProfile& prof) {
  DerSpec d;
  d.id = prof.pcc_id;
  d.kind = DerKind::generator;
  d.p_set = prof.current_p;
  d.p_min = prof.agg_p_min;
  d.p_max = prof.agg_p_max;
  d.cost_a = prof.agg_cost_a;
  d.cost_b = prof.agg_cost_b;
  return d;
}

}  // namespace p2pgrid
