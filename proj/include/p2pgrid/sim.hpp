#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "p2pgrid/control.hpp"
#include "p2pgrid/epidemic.hpp"
#include "p2pgrid/errors.hpp"
#include "p2pgrid/grid_model.hpp"
#include "p2pgrid/topology.hpp"

namespace p2pgrid {

enum class FaultKind { agent_fail, agent_restore, link_fail, link_restore, load_step };

struct FaultEvent {
  std::size_t at_round = 0;
  FaultKind kind = FaultKind::load_step;
  std::string microgrid;
  NodeId node = 0;        // agent_fail / agent_restore
  Edge edge{0, 0};        // link_fail / link_restore
  double delta_mw = 0.0;  // load_step

  bool operator==(const FaultEvent&) const = default;
};

struct ChannelModel {
  double loss_probability = 0.0;
  std::size_t delay_rounds = 0;

  bool operator==(const ChannelModel&) const = default;
};

struct TertiaryParams {
  std::size_t period_rounds = 1;
  double step_size = 0.0;  // 0 = derive from the agents' cost curvature
  double tol_mw = 1e-9;
  std::size_t max_iters = 500;

  bool operator==(const TertiaryParams&) const = default;
};

struct OperatingLimits {
  double voltage_band_pu = 0.1;    // allowed |V - 1|
  double frequency_band_hz = 0.5;  // allowed |delta_f|

  bool operator==(const OperatingLimits&) const = default;
};

/// One microgrid as described in a scenario file. Graph nodes 0..n_der-1
/// carry the DERs in list order; one further node per child microgrid
/// carries that child's coupling agent.
struct MicrogridConfig {
  Microgrid grid;
  CommGraph graph;
  std::optional<SecondaryParams> secondary;
  std::optional<TertiaryParams> tertiary;
  std::vector<double> gossip_init;  // optional; empty = derive from setpoints

  bool operator==(const MicrogridConfig&) const = default;
};

struct InterLevelLink {
  std::string parent;
  std::string child;
  NodeId pcc_node = 0;  // node index in the parent graph

  bool operator==(const InterLevelLink&) const = default;
};

struct Scenario {
  std::string schema_version = "1";
  std::uint64_t seed = 0;
  std::size_t rounds = 0;
  ChannelModel channel;
  OperatingLimits limits;
  std::vector<MicrogridConfig> microgrids;
  std::vector<InterLevelLink> links;
  std::vector<FaultEvent> faults;

  bool operator==(const Scenario&) const = default;
};

struct NodeRow {
  std::size_t round = 0;
  double freq_hz = 0.0;
  std::size_t node_id = 0;  // flat index across microgrids
  double voltage_pu = 1.0;
  std::string der_id;
  double p_mw = 0.0;
  double residual = 0.0;
  std::size_t msgs_delivered = 0;
  std::size_t msgs_lost = 0;
};

struct RoundMeta {
  std::size_t round = 0;
  std::map<std::string, double> delta_f;  // per microgrid, Hz
  double generation_cost = 0.0;
  bool frequency_violation = false;
  bool voltage_violation = false;
  std::vector<std::size_t> secondary_consensus_rounds;
  std::vector<std::string> notes;  // faults applied, layers skipped
};

struct SimTrace {
  std::size_t rounds = 0;
  std::vector<NodeRow> rows;
  std::vector<RoundMeta> meta;
  std::vector<FaultEvent> faults;
  OperatingLimits limits;
  std::map<std::string, double> nominal_frequency;
};

/// Per-round symmetric edge loss: an edge carries both directions or
/// neither, so a consensus step over the survivors stays sum-preserving.
inline std::vector<Edge> deliver_round(const CommGraph& g, const ChannelModel& channel,
                                       std::mt19937_64& rng) {
  std::vector<Edge> delivered;
  for (const Edge& e : g.edges()) {
    const double u = uniform_unit(rng);
    if (u >= channel.loss_probability) delivered.push_back(e);
  }
  return delivered;
}

/// Live state of one microgrid during a run.
struct MgState {
  CommGraph graph;
  std::vector<DerSpec> ders;  // physical DERs; setpoints move with control
  double load_mw = 0.0;
  double export_mw = 0.0;  // scheduled flow to the parent
  double import_mw = 0.0;  // sum of the children's exports
  ConsensusState gossip;
  std::deque<std::vector<double>> gossip_history;
  std::vector<double> last_voltages;     // per DER node, previous round
  std::vector<double> coupling_p;        // per graph node, child commands
  std::vector<std::string> node_labels;  // der id or child microgrid id
  std::vector<int> children;             // indices into SimState::mgs
  std::size_t node_offset = 0;
  int parent = -1;
};

struct SimState {
  const Scenario* scenario = nullptr;
  std::vector<MgState> mgs;
  std::map<std::string, std::size_t> by_id;
};

namespace detail {

inline std::vector<double> initial_gossip(const MicrogridConfig& cfg) {
  if (!cfg.gossip_init.empty()) return cfg.gossip_init;
  std::vector<double> init(cfg.graph.node_count(), 0.0);
  for (std::size_t i = 0; i < cfg.grid.ders.size(); ++i) init[i] = cfg.grid.ders[i].p_set;
  return init;
}

}  // namespace detail

inline SimState make_sim_state(const Scenario& sc) {
  SimState w;
  w.scenario = &sc;
  w.mgs.resize(sc.microgrids.size());
  std::size_t offset = 0;
  for (std::size_t m = 0; m < sc.microgrids.size(); ++m) {
    const auto& cfg = sc.microgrids[m];
    MgState& rt = w.mgs[m];
    rt.graph = cfg.graph;
    rt.ders = cfg.grid.ders;
    rt.load_mw = cfg.grid.load_mw;
    rt.node_offset = offset;
    offset += cfg.graph.node_count();
    rt.coupling_p.assign(cfg.graph.node_count(), 0.0);
    rt.node_labels.assign(cfg.graph.node_count(), "");
    for (std::size_t i = 0; i < rt.ders.size(); ++i) rt.node_labels[i] = rt.ders[i].id;
    if (!cfg.grid.feeder.segments.empty())
      rt.last_voltages.assign(cfg.grid.feeder.segments.size(),
                              cfg.grid.feeder.source_voltage_pu);
    if (w.by_id.count(cfg.grid.id))
      throw ValidationFailed("duplicate microgrid id " + cfg.grid.id);
    w.by_id[cfg.grid.id] = m;
    rt.gossip = make_consensus_state(detail::initial_gossip(cfg), rt.graph);
  }
  for (const auto& link : sc.links) {
    const auto pit = w.by_id.find(link.parent);
    const auto cit = w.by_id.find(link.child);
    if (pit == w.by_id.end() || cit == w.by_id.end())
      throw DanglingReference("inter-level link references unknown microgrid");
    MgState& parent = w.mgs[pit->second];
    if (link.pcc_node >= parent.graph.node_count() ||
        link.pcc_node < parent.ders.size())
      throw DanglingReference("pcc node " + std::to_string(link.pcc_node) +
                              " is not a coupling slot of " + link.parent);
    parent.children.push_back(static_cast<int>(cit->second));
    w.mgs[cit->second].parent = static_cast<int>(pit->second);
    parent.node_labels[link.pcc_node] = link.child;
  }
  return w;
}

inline void apply_fault(SimState& w, const FaultEvent& ev) {
  const auto it = w.by_id.find(ev.microgrid);
  if (it == w.by_id.end())
    throw UnknownTarget("fault targets unknown microgrid " + ev.microgrid);
  MgState& rt = w.mgs[it->second];
  switch (ev.kind) {
    case FaultKind::agent_fail: {
      if (ev.node >= rt.graph.node_count() || !rt.graph.alive(ev.node))
        throw UnknownTarget("agent_fail: node " + std::to_string(ev.node) +
                            " is not a live agent of " + ev.microgrid);
      rt.graph = rt.graph.remove_node(ev.node);
      rt.gossip = drop_agent(rt.gossip, ev.node);
      break;
    }
    case FaultKind::agent_restore: {
      if (ev.node >= rt.graph.node_count() || rt.graph.alive(ev.node))
        throw UnknownTarget("agent_restore: node " + std::to_string(ev.node) +
                            " is not a failed agent of " + ev.microgrid);
      rt.graph = rt.graph.restore_node(ev.node);
      const double measurement =
          ev.node < rt.ders.size() ? rt.ders[ev.node].p_set : rt.coupling_p[ev.node];
      rt.gossip = readmit_agent(rt.gossip, ev.node, measurement);
      break;
    }
    case FaultKind::link_fail:
      rt.graph = rt.graph.remove_edge(ev.edge.first, ev.edge.second);
      break;
    case FaultKind::link_restore:
      rt.graph = rt.graph.add_edge(ev.edge.first, ev.edge.second);
      break;
    case FaultKind::load_step:
      rt.load_mw += ev.delta_mw;
      break;
  }
}

namespace detail {

inline std::vector<DerSpec> live_ders(const MgState& rt) {
  std::vector<DerSpec> out;
  for (std::size_t i = 0; i < rt.ders.size(); ++i)
    if (rt.graph.alive(i)) out.push_back(rt.ders[i]);
  return out;
}

inline double effective_load(const MgState& rt) {
  return rt.load_mw + rt.export_mw - rt.import_mw;
}

/// Frequency solve that degrades instead of aborting mid-run: when the
/// balance is unreachable the frequency pegs at the droop band edge and the
/// round is flagged as a violation.
inline FrequencySolution solve_or_peg(const std::vector<DerSpec>& ders, double load_mw,
                                      bool& violation) {
  try {
    return solve_lumped_frequency(ders, load_mw);
  } catch (const Error&) {
    violation = true;
    double p_set_sum = 0.0;
    for (const auto& d : ders) p_set_sum += d.p_set;
    FrequencySolution sol;
    sol.delta_f = p_set_sum < load_mw ? -5.0 : 5.0;  // deficit drags frequency down
    sol.dispatched.reserve(ders.size());
    for (const auto& d : ders)
      sol.dispatched.push_back(primary_droop_power(d, sol.delta_f));
    return sol;
  }
}

inline double subtree_load(const SimState& w, std::size_t m) {
  double load = w.mgs[m].load_mw;
  for (int c : w.mgs[m].children) load += subtree_load(w, static_cast<std::size_t>(c));
  return load;
}

/// Dispatchable units a coupling agent stands for: the microgrid's own live
/// dispatchable DERs plus, recursively, one profile per child.
inline std::vector<DerSpec> effective_members(const SimState& w, std::size_t m) {
  std::vector<DerSpec> members;
  const MgState& rt = w.mgs[m];
  for (std::size_t i = 0; i < rt.ders.size(); ++i)
    if (rt.graph.alive(i) && rt.ders[i].dispatchable()) members.push_back(rt.ders[i]);
  for (int c : rt.children) {
    const std::size_t ci = static_cast<std::size_t>(c);
    const auto sub = effective_members(w, ci);
    if (!sub.empty())
      members.push_back(profile_as_der(aggregate_microgrid(
          w.scenario->microgrids[ci].grid.id, sub)));
  }
  return members;
}

/// Distribute an assigned subtree generation total: equal-marginal-cost
/// split over effective members, own setpoints written directly, child
/// commands pushed down recursively, inter-level flows rebooked.
inline void assign_subtree(SimState& w, std::size_t m, double p_total) {
  MgState& rt = w.mgs[m];
  const auto members = effective_members(w, m);
  const auto prof = aggregate_microgrid(w.scenario->microgrids[m].grid.id, members);
  const auto split = disaggregate_setpoint(prof, members, p_total);
  std::size_t k = 0;
  double own_gen = 0.0;
  for (std::size_t i = 0; i < rt.ders.size(); ++i) {
    if (!rt.graph.alive(i) || !rt.ders[i].dispatchable()) continue;
    rt.ders[i].p_set = split[k];
    own_gen += split[k];
    ++k;
  }
  double child_exports = 0.0;
  for (int c : rt.children) {
    const std::size_t ci = static_cast<std::size_t>(c);
    if (effective_members(w, ci).empty()) continue;
    const double cmd = split[k++];
    assign_subtree(w, ci, cmd);
    for (std::size_t node = rt.ders.size(); node < rt.node_labels.size(); ++node)
      if (rt.node_labels[node] == w.scenario->microgrids[ci].grid.id)
        rt.coupling_p[node] = cmd;
    child_exports += w.mgs[ci].export_mw;
  }
  rt.import_mw = child_exports;
  rt.export_mw = own_gen + child_exports - rt.load_mw;
}

}  // namespace detail

/// Execute a validated scenario deterministically. One RNG stream, fixed
/// draw order: per round, edge losses microgrid by microgrid, then any
/// push-sum traffic inside tertiary activations.
inline SimTrace run_scenario(const Scenario& scenario) {
  SimState w = make_sim_state(scenario);
  std::mt19937_64 rng(scenario.seed);
  SimTrace trace;
  trace.rounds = scenario.rounds;
  trace.faults = scenario.faults;
  trace.limits = scenario.limits;
  for (const auto& cfg : scenario.microgrids)
    trace.nominal_frequency[cfg.grid.id] = cfg.grid.nominal_frequency;

  for (std::size_t r = 0; r < scenario.rounds; ++r) {
    RoundMeta meta;
    meta.round = r;

    for (const auto& ev : scenario.faults)
      if (ev.at_round == r) {
        apply_fault(w, ev);
        meta.notes.push_back("fault applied in " + ev.microgrid);
      }

    // Communication + gossip dissemination.
    std::vector<std::vector<Edge>> delivered(w.mgs.size());
    for (std::size_t m = 0; m < w.mgs.size(); ++m)
      delivered[m] = deliver_round(w.mgs[m].graph, scenario.channel, rng);
    for (std::size_t m = 0; m < w.mgs.size(); ++m) {
      MgState& rt = w.mgs[m];
      rt.gossip_history.push_back(rt.gossip.values);
      while (rt.gossip_history.size() > scenario.channel.delay_rounds + 1)
        rt.gossip_history.pop_front();
      const std::vector<double>& lagged = rt.gossip_history.front();
      rt.gossip = consensus_step(rt.gossip, rt.graph, delivered[m], lagged);
    }

    // Primary: droop equilibrium from the current setpoints.
    std::vector<FrequencySolution> freq(w.mgs.size());
    for (std::size_t m = 0; m < w.mgs.size(); ++m)
      freq[m] = detail::solve_or_peg(detail::live_ders(w.mgs[m]),
                                     detail::effective_load(w.mgs[m]),
                                     meta.frequency_violation);

    // Secondary: restore frequency by consensus on the measured deviation.
    for (std::size_t m = 0; m < w.mgs.size(); ++m) {
      MgState& rt = w.mgs[m];
      const auto& cfg = scenario.microgrids[m];
      if (!cfg.secondary || r == 0 || r % cfg.secondary->period_rounds != 0) continue;
      std::vector<DerSpec> node_agents(rt.graph.node_count());
      for (std::size_t i = 0; i < rt.ders.size(); ++i) node_agents[i] = rt.ders[i];
      const std::vector<double> measured(rt.graph.node_count(), freq[m].delta_f);
      try {
        std::size_t rounds_used = 0;
        const auto corrections = secondary_update(node_agents, rt.graph,
                                                  *cfg.secondary, measured, &rounds_used);
        meta.secondary_consensus_rounds.push_back(rounds_used);
        for (std::size_t i = 0; i < rt.ders.size(); ++i)
          if (rt.graph.alive(i))
            rt.ders[i].p_set = std::clamp(rt.ders[i].p_set + corrections[i],
                                          rt.ders[i].p_min, rt.ders[i].p_max);
      } catch (const NotConnected&) {
        meta.notes.push_back("secondary skipped in " + cfg.grid.id +
                             ": graph not connected");
      }
    }

    // Tertiary: distributed economic dispatch, driven from the root of each
    // microgrid tree over its own communication graph.
    for (std::size_t m = 0; m < w.mgs.size(); ++m) {
      MgState& rt = w.mgs[m];
      const auto& cfg = scenario.microgrids[m];
      if (!cfg.tertiary || rt.parent != -1) continue;
      if (r == 0 || r % cfg.tertiary->period_rounds != 0) continue;
      std::vector<DerSpec> agents(rt.graph.node_count());
      std::vector<bool> keep(rt.graph.node_count(), false);
      for (std::size_t i = 0; i < rt.ders.size(); ++i) {
        agents[i] = rt.ders[i];
        keep[i] = rt.graph.alive(i) && rt.ders[i].dispatchable() &&
                  rt.ders[i].cost_a > 0.0;
      }
      for (int c : rt.children) {
        const std::size_t ci = static_cast<std::size_t>(c);
        const auto sub = detail::effective_members(w, ci);
        if (sub.empty()) continue;
        const auto prof =
            aggregate_microgrid(w.scenario->microgrids[ci].grid.id, sub);
        for (std::size_t node = rt.ders.size(); node < rt.node_labels.size(); ++node)
          if (rt.node_labels[node] == prof.pcc_id) {
            agents[node] = profile_as_der(prof);
            keep[node] = rt.graph.alive(node);
          }
      }
      const CommGraph dispatch_graph = rt.graph.restricted_to(keep);
      const double demand = detail::subtree_load(w, m);
      try {
        TertiaryState ts = make_tertiary_state(agents, dispatch_graph,
                                               cfg.tertiary->step_size);
        const auto result =
            run_tertiary(agents, dispatch_graph, demand, ts, cfg.tertiary->tol_mw,
                         cfg.tertiary->max_iters, rng);
        if (result.converged) {
          double child_exports = 0.0;
          for (std::size_t i = 0; i < rt.ders.size(); ++i)
            if (keep[i])
              rt.ders[i].p_set = std::clamp(result.power[i], rt.ders[i].p_min,
                                            rt.ders[i].p_max);
          for (std::size_t node = rt.ders.size(); node < rt.node_labels.size();
               ++node) {
            if (!keep[node]) continue;
            const std::size_t ci = w.by_id.at(rt.node_labels[node]);
            detail::assign_subtree(w, ci, result.power[node]);
            rt.coupling_p[node] = result.power[node];
            child_exports += w.mgs[ci].export_mw;
          }
          rt.import_mw = child_exports;
        } else {
          meta.notes.push_back("tertiary did not converge in " + cfg.grid.id);
        }
      } catch (const Error& e) {
        meta.notes.push_back("tertiary skipped in " + cfg.grid.id + ": " + e.what());
      }
    }

    // Final physics for the round after all control actions.
    for (std::size_t m = 0; m < w.mgs.size(); ++m) {
      MgState& rt = w.mgs[m];
      const auto& cfg = scenario.microgrids[m];
      freq[m] = detail::solve_or_peg(detail::live_ders(rt),
                                     detail::effective_load(rt),
                                     meta.frequency_violation);
      meta.delta_f[cfg.grid.id] = freq[m].delta_f;
      if (std::abs(freq[m].delta_f) > scenario.limits.frequency_band_hz)
        meta.frequency_violation = true;

      // Map dispatched power back onto graph nodes.
      std::vector<double> node_p(rt.graph.node_count(), 0.0);
      {
        std::size_t k = 0;
        for (std::size_t i = 0; i < rt.ders.size(); ++i)
          if (rt.graph.alive(i)) node_p[i] = freq[m].dispatched[k++];
        for (std::size_t node = rt.ders.size(); node < rt.graph.node_count(); ++node)
          node_p[node] = rt.coupling_p[node];
      }
      for (std::size_t i = 0; i < rt.ders.size(); ++i)
        if (rt.graph.alive(i) && rt.ders[i].dispatchable())
          meta.generation_cost += generation_cost(rt.ders[i], node_p[i]);

      // Voltages along the feeder, reactive droop held at last round's volts.
      std::vector<double> volts;
      if (!cfg.grid.feeder.segments.empty()) {
        FeederModel feeder = cfg.grid.feeder;
        feeder.withdrawals.resize(feeder.segments.size());
        for (std::size_t kseg = 0; kseg < feeder.segments.size(); ++kseg) {
          const double load_here =
              feeder.segments[kseg].load_fraction * rt.load_mw;
          double q_mvar = 0.0;
          if (kseg < rt.ders.size() && rt.graph.alive(kseg))
            q_mvar = reactive_droop_power(rt.ders[kseg], rt.last_voltages[kseg]);
          feeder.withdrawals[kseg] = {(load_here - node_p[kseg]) / feeder.base_mva,
                                      -q_mvar / feeder.base_mva};
        }
        volts = feeder_voltages(feeder);
        for (std::size_t kseg = 0; kseg < feeder.segments.size(); ++kseg) {
          rt.last_voltages[kseg] = volts[kseg + 1];
          if (std::abs(volts[kseg + 1] - 1.0) > scenario.limits.voltage_band_pu)
            meta.voltage_violation = true;
        }
      }

      const std::size_t d_count = delivered[m].size();
      const std::size_t lost_count = rt.graph.edges().size() - d_count;
      std::vector<std::size_t> node_delivered(rt.graph.node_count(), 0);
      std::vector<std::size_t> node_lost(rt.graph.node_count(), 0);
      for (const auto& [a, b] : delivered[m]) {
        ++node_delivered[a];
        ++node_delivered[b];
      }
      if (lost_count > 0) {
        for (std::size_t node = 0; node < rt.graph.node_count(); ++node)
          if (rt.graph.alive(node))
            node_lost[node] = rt.graph.degree(node) - node_delivered[node];
      }

      const double residual = consensus_residual(rt.gossip);
      for (std::size_t node = 0; node < rt.graph.node_count(); ++node) {
        if (!rt.graph.alive(node)) continue;
        NodeRow row;
        row.round = r;
        row.freq_hz = cfg.grid.nominal_frequency + freq[m].delta_f;
        row.node_id = rt.node_offset + node;
        row.voltage_pu = (!volts.empty() && node < rt.ders.size())
                             ? volts[node + 1]
                             : 1.0;
        row.der_id = rt.node_labels[node];
        row.p_mw = node_p[node];
        row.residual = residual;
        row.msgs_delivered = node_delivered[node];
        row.msgs_lost = node_lost[node];
        trace.rows.push_back(std::move(row));
      }
    }
    trace.meta.push_back(std::move(meta));
  }
  return trace;
}

}  // namespace p2pgrid
