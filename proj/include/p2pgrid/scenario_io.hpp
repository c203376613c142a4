#pragma once

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <initializer_list>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "p2pgrid/errors.hpp"
#include "p2pgrid/sim.hpp"

namespace p2pgrid {

using json = nlohmann::ordered_json;

namespace io_detail {

inline void expect_object(const json& v, const std::string& path) {
  if (!v.is_object()) throw SchemaViolation(path + ": expected an object");
}

inline void expect_keys(const json& obj, const std::string& path,
                        std::initializer_list<const char*> allowed) {
  expect_object(obj, path);
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) {
        ok = true;
        break;
      }
    if (!ok) throw SchemaViolation(path + "." + key + ": unknown field");
  }
}

template <typename T>
T get_as(const json& v, const std::string& path) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw SchemaViolation(path + ": wrong type");
  }
}

inline const json& require(const json& obj, const std::string& path,
                           const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end())
    throw SchemaViolation(path + "." + key + ": required field missing");
  return *it;
}

inline double require_number(const json& obj, const std::string& path,
                             const char* key) {
  const json& v = require(obj, path, key);
  if (!v.is_number()) throw SchemaViolation(path + "." + key + ": expected a number");
  return v.get<double>();
}

inline double number_or(const json& obj, const std::string& path, const char* key,
                        double def) {
  const auto it = obj.find(key);
  if (it == obj.end()) return def;
  if (!it->is_number()) throw SchemaViolation(path + "." + key + ": expected a number");
  return it->get<double>();
}

inline std::size_t require_index(const json& obj, const std::string& path,
                                 const char* key) {
  const json& v = require(obj, path, key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw SchemaViolation(path + "." + key + ": expected a non-negative integer");
  return static_cast<std::size_t>(v.get<std::int64_t>());
}

inline std::size_t index_or(const json& obj, const std::string& path, const char* key,
                            std::size_t def) {
  if (obj.find(key) == obj.end()) return def;
  return require_index(obj, path, key);
}

inline std::string require_string(const json& obj, const std::string& path,
                                  const char* key) {
  const json& v = require(obj, path, key);
  if (!v.is_string()) throw SchemaViolation(path + "." + key + ": expected a string");
  return v.get<std::string>();
}

inline std::vector<Edge> parse_edges(const json& arr, const std::string& path,
                                     std::size_t node_count) {
  if (!arr.is_array()) throw SchemaViolation(path + ": expected an array");
  std::vector<Edge> edges;
  for (std::size_t e = 0; e < arr.size(); ++e) {
    const std::string epath = path + "[" + std::to_string(e) + "]";
    const json& pair = arr[e];
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() ||
        !pair[1].is_number_integer())
      throw SchemaViolation(epath + ": expected a pair of node indices");
    const std::int64_t a = pair[0].get<std::int64_t>();
    const std::int64_t b = pair[1].get<std::int64_t>();
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= node_count ||
        static_cast<std::size_t>(b) >= node_count)
      throw DanglingReference(epath + ": node " + std::to_string(std::max(a, b)) +
                              " does not exist");
    if (a == b) throw SchemaViolation(epath + ": self-loop on node " + std::to_string(a));
    edges.emplace_back(static_cast<NodeId>(a), static_cast<NodeId>(b));
  }
  return edges;
}

inline DerSpec parse_der(const json& obj, const std::string& path) {
  expect_keys(obj, path,
              {"id", "kind", "p_set_mw", "p_min_mw", "p_max_mw", "droop_mw_per_hz",
               "q_droop_mvar_per_pu", "cost_a", "cost_b"});
  DerSpec d;
  d.id = require_string(obj, path, "id");
  const std::string kind = obj.contains("kind")
                               ? get_as<std::string>(obj["kind"], path + ".kind")
                               : "generator";
  if (kind == "generator")
    d.kind = DerKind::generator;
  else if (kind == "load")
    d.kind = DerKind::load;
  else if (kind == "storage")
    d.kind = DerKind::storage;
  else
    throw SchemaViolation(path + ".kind: must be generator, load or storage");
  d.p_set = require_number(obj, path, "p_set_mw");
  d.p_min = require_number(obj, path, "p_min_mw");
  d.p_max = require_number(obj, path, "p_max_mw");
  d.droop_gain = number_or(obj, path, "droop_mw_per_hz", 0.0);
  d.q_droop_gain = number_or(obj, path, "q_droop_mvar_per_pu", 0.0);
  d.cost_a = number_or(obj, path, "cost_a", 0.0);
  d.cost_b = number_or(obj, path, "cost_b", 0.0);
  if (d.p_min > d.p_set || d.p_set > d.p_max)
    throw SchemaViolation(path + ": p_min_mw <= p_set_mw <= p_max_mw violated");
  if (d.droop_gain < 0.0)
    throw SchemaViolation(path + ".droop_mw_per_hz: must be >= 0");
  if (d.q_droop_gain < 0.0)
    throw SchemaViolation(path + ".q_droop_mvar_per_pu: must be >= 0");
  if (d.cost_a < 0.0) throw SchemaViolation(path + ".cost_a: must be >= 0");
  return d;
}

inline FeederModel parse_feeder(const json& obj, const std::string& path,
                                std::size_t der_count) {
  expect_keys(obj, path, {"source_voltage_pu", "base_mva", "segments"});
  FeederModel f;
  f.source_voltage_pu = number_or(obj, path, "source_voltage_pu", 1.0);
  f.base_mva = number_or(obj, path, "base_mva", 1.0);
  if (!(f.source_voltage_pu > 0.0))
    throw SchemaViolation(path + ".source_voltage_pu: must be > 0");
  if (!(f.base_mva > 0.0)) throw SchemaViolation(path + ".base_mva: must be > 0");
  const json& segs = require(obj, path, "segments");
  if (!segs.is_array()) throw SchemaViolation(path + ".segments: expected an array");
  if (segs.size() != der_count)
    throw SchemaViolation(path + ".segments: need one segment per DER (" +
                          std::to_string(der_count) + ")");
  double frac_sum = 0.0;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const std::string spath = path + ".segments[" + std::to_string(s) + "]";
    expect_keys(segs[s], spath, {"r_pu", "x_pu", "load_fraction"});
    FeederSegment seg;
    seg.r_pu = require_number(segs[s], spath, "r_pu");
    seg.x_pu = require_number(segs[s], spath, "x_pu");
    seg.load_fraction = number_or(segs[s], spath, "load_fraction", 0.0);
    if (seg.r_pu < 0.0 || seg.x_pu < 0.0)
      throw SchemaViolation(spath + ": impedances must be >= 0");
    if (seg.load_fraction < 0.0)
      throw SchemaViolation(spath + ".load_fraction: must be >= 0");
    frac_sum += seg.load_fraction;
    f.segments.push_back(seg);
  }
  if (frac_sum == 0.0 && !f.segments.empty()) {
    for (auto& seg : f.segments)
      seg.load_fraction = 1.0 / static_cast<double>(f.segments.size());
  } else if (std::abs(frac_sum - 1.0) > 1e-9) {
    throw SchemaViolation(path + ".segments: load_fraction values must sum to 1");
  }
  return f;
}

inline SecondaryParams parse_secondary(const json& obj, const std::string& path) {
  expect_keys(obj, path,
              {"period_rounds", "gain", "consensus_tol", "consensus_max_rounds"});
  SecondaryParams p;
  p.period_rounds = require_index(obj, path, "period_rounds");
  p.gain = require_number(obj, path, "gain");
  p.consensus_tol = number_or(obj, path, "consensus_tol", 1e-12);
  p.consensus_max_rounds = index_or(obj, path, "consensus_max_rounds", 100000);
  if (p.period_rounds < 1)
    throw SchemaViolation(path + ".period_rounds: must be >= 1");
  if (!(p.gain > 0.0 && p.gain <= 1.0))
    throw SchemaViolation(path + ".gain: must be in (0, 1]");
  if (!(p.consensus_tol > 0.0))
    throw SchemaViolation(path + ".consensus_tol: must be > 0");
  return p;
}

inline TertiaryParams parse_tertiary(const json& obj, const std::string& path) {
  expect_keys(obj, path, {"period_rounds", "step_size", "tol_mw", "max_iters"});
  TertiaryParams p;
  p.period_rounds = require_index(obj, path, "period_rounds");
  p.step_size = number_or(obj, path, "step_size", 0.0);
  p.tol_mw = number_or(obj, path, "tol_mw", 1e-9);
  p.max_iters = index_or(obj, path, "max_iters", 500);
  if (p.period_rounds < 1)
    throw SchemaViolation(path + ".period_rounds: must be >= 1");
  if (p.step_size < 0.0) throw SchemaViolation(path + ".step_size: must be >= 0");
  if (!(p.tol_mw > 0.0)) throw SchemaViolation(path + ".tol_mw: must be > 0");
  return p;
}

inline FaultEvent parse_fault(const json& obj, const std::string& path) {
  expect_keys(obj, path, {"at_round", "kind", "microgrid", "node", "edge", "delta_mw"});
  FaultEvent ev;
  ev.at_round = require_index(obj, path, "at_round");
  ev.microgrid = require_string(obj, path, "microgrid");
  const std::string kind = require_string(obj, path, "kind");
  if (kind == "agent_fail" || kind == "agent_restore") {
    ev.kind = kind == "agent_fail" ? FaultKind::agent_fail : FaultKind::agent_restore;
    ev.node = require_index(obj, path, "node");
  } else if (kind == "link_fail" || kind == "link_restore") {
    ev.kind = kind == "link_fail" ? FaultKind::link_fail : FaultKind::link_restore;
    const auto edges = parse_edges(json::array({require(obj, path, "edge")}),
                                   path + ".edge", SIZE_MAX);
    ev.edge = edges.front();
  } else if (kind == "load_step") {
    ev.kind = FaultKind::load_step;
    ev.delta_mw = require_number(obj, path, "delta_mw");
  } else {
    throw SchemaViolation(path + ".kind: unknown fault kind " + kind);
  }
  return ev;
}

inline std::string fault_kind_name(FaultKind k) {
  switch (k) {
    case FaultKind::agent_fail: return "agent_fail";
    case FaultKind::agent_restore: return "agent_restore";
    case FaultKind::link_fail: return "link_fail";
    case FaultKind::link_restore: return "link_restore";
    case FaultKind::load_step: return "load_step";
  }
  return "?";
}

}  // namespace io_detail

/// Strict parse of a scenario document. Unknown fields, bad types and
/// dangling cross-references are rejected with the path of the offending
/// field.
inline Scenario parse_scenario(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SyntaxError(std::string("invalid JSON: ") + e.what());
  }
  using namespace io_detail;
  expect_keys(doc, "$",
              {"schema_version", "seed", "rounds", "channel", "limits", "microgrids",
               "inter_level_links", "faults"});
  Scenario sc;
  sc.schema_version = require_string(doc, "$", "schema_version");
  if (sc.schema_version != "1")
    throw SchemaViolation("$.schema_version: unsupported version " + sc.schema_version);
  {
    const json& seed = require(doc, "$", "seed");
    if (!seed.is_number_integer() ||
        (seed.is_number_integer() && !seed.is_number_unsigned() &&
         seed.get<std::int64_t>() < 0))
      throw SchemaViolation("$.seed: expected a non-negative integer");
    sc.seed = seed.get<std::uint64_t>();
  }
  sc.rounds = require_index(doc, "$", "rounds");

  if (doc.contains("channel")) {
    expect_keys(doc["channel"], "$.channel", {"loss_probability", "delay_rounds"});
    sc.channel.loss_probability =
        number_or(doc["channel"], "$.channel", "loss_probability", 0.0);
    sc.channel.delay_rounds = index_or(doc["channel"], "$.channel", "delay_rounds", 0);
    if (sc.channel.loss_probability < 0.0 || sc.channel.loss_probability > 1.0)
      throw SchemaViolation("$.channel.loss_probability: must be in [0, 1]");
  }
  if (doc.contains("limits")) {
    expect_keys(doc["limits"], "$.limits", {"voltage_band_pu", "frequency_band_hz"});
    sc.limits.voltage_band_pu =
        number_or(doc["limits"], "$.limits", "voltage_band_pu", 0.1);
    sc.limits.frequency_band_hz =
        number_or(doc["limits"], "$.limits", "frequency_band_hz", 0.5);
  }

  const json& mgs = require(doc, "$", "microgrids");
  if (!mgs.is_array() || mgs.empty())
    throw SchemaViolation("$.microgrids: expected a non-empty array");

  // Children per parent id; needed to size the graphs (one coupling node
  // per child follows the DER nodes).
  std::map<std::string, std::size_t> child_count;
  std::map<std::string, std::string> parent_of;
  if (doc.contains("inter_level_links")) {
    const json& links = doc["inter_level_links"];
    if (!links.is_array())
      throw SchemaViolation("$.inter_level_links: expected an array");
    for (std::size_t l = 0; l < links.size(); ++l) {
      const std::string lpath = "$.inter_level_links[" + std::to_string(l) + "]";
      expect_keys(links[l], lpath, {"parent", "child", "pcc_node"});
      const std::string parent = require_string(links[l], lpath, "parent");
      const std::string child = require_string(links[l], lpath, "child");
      if (parent_of.count(child))
        throw SchemaViolation(lpath + ": child " + child + " already has a parent");
      parent_of[child] = parent;
      ++child_count[parent];
      InterLevelLink link;
      link.parent = parent;
      link.child = child;
      link.pcc_node = require_index(links[l], lpath, "pcc_node");
      sc.links.push_back(link);
    }
  }

  std::set<std::string> mg_ids;
  for (std::size_t m = 0; m < mgs.size(); ++m) {
    const std::string mpath = "$.microgrids[" + std::to_string(m) + "]";
    expect_keys(mgs[m], mpath,
                {"id", "nominal_frequency_hz", "load_mw", "ders", "graph", "secondary",
                 "tertiary", "feeder", "gossip_init"});
    MicrogridConfig cfg;
    cfg.grid.id = require_string(mgs[m], mpath, "id");
    if (!mg_ids.insert(cfg.grid.id).second)
      throw SchemaViolation(mpath + ".id: duplicate microgrid id " + cfg.grid.id);
    cfg.grid.nominal_frequency =
        number_or(mgs[m], mpath, "nominal_frequency_hz", 50.0);
    cfg.grid.load_mw = require_number(mgs[m], mpath, "load_mw");

    const json& ders = require(mgs[m], mpath, "ders");
    if (!ders.is_array() || ders.empty())
      throw SchemaViolation(mpath + ".ders: expected a non-empty array");
    std::set<std::string> der_ids;
    for (std::size_t d = 0; d < ders.size(); ++d) {
      const std::string dpath = mpath + ".ders[" + std::to_string(d) + "]";
      cfg.grid.ders.push_back(parse_der(ders[d], dpath));
      if (!der_ids.insert(cfg.grid.ders.back().id).second)
        throw SchemaViolation(dpath + ".id: duplicate DER id");
    }

    const std::size_t node_count =
        cfg.grid.ders.size() +
        (child_count.count(cfg.grid.id) ? child_count[cfg.grid.id] : 0);
    const json& graph = require(mgs[m], mpath, "graph");
    expect_keys(graph, mpath + ".graph", {"edges", "epsilon"});
    const auto edges =
        parse_edges(require(graph, mpath + ".graph", "edges"),
                    mpath + ".graph.edges", node_count);
    std::optional<double> epsilon;
    if (graph.contains("epsilon")) {
      if (!graph["epsilon"].is_number())
        throw SchemaViolation(mpath + ".graph.epsilon: expected a number");
      epsilon = graph["epsilon"].get<double>();
    }
    try {
      cfg.graph = CommGraph::build(node_count, edges, epsilon);
    } catch (const EpsilonOutOfRange& e) {
      throw SchemaViolation(mpath + ".graph.epsilon: " + e.what());
    }

    if (mgs[m].contains("secondary"))
      cfg.secondary = parse_secondary(mgs[m]["secondary"], mpath + ".secondary");
    if (mgs[m].contains("tertiary"))
      cfg.tertiary = parse_tertiary(mgs[m]["tertiary"], mpath + ".tertiary");
    if (cfg.secondary || cfg.tertiary) {
      bool any_dispatchable = false;
      for (const auto& d : cfg.grid.ders) any_dispatchable |= d.dispatchable();
      if (!any_dispatchable)
        throw SchemaViolation(mpath + ": secondary/tertiary control needs at least "
                              "one dispatchable DER");
    }
    if (mgs[m].contains("feeder"))
      cfg.grid.feeder =
          parse_feeder(mgs[m]["feeder"], mpath + ".feeder", cfg.grid.ders.size());
    if (mgs[m].contains("gossip_init")) {
      const json& gi = mgs[m]["gossip_init"];
      if (!gi.is_array() || gi.size() != node_count)
        throw SchemaViolation(mpath + ".gossip_init: expected one value per node (" +
                              std::to_string(node_count) + ")");
      for (std::size_t i = 0; i < gi.size(); ++i) {
        if (!gi[i].is_number())
          throw SchemaViolation(mpath + ".gossip_init[" + std::to_string(i) +
                                "]: expected a number");
        cfg.gossip_init.push_back(gi[i].get<double>());
      }
    }
    sc.microgrids.push_back(std::move(cfg));
  }

  // Cross-reference and tree checks on the links.
  std::map<std::string, std::size_t> by_id;
  for (std::size_t m = 0; m < sc.microgrids.size(); ++m)
    by_id[sc.microgrids[m].grid.id] = m;
  std::set<std::pair<std::string, NodeId>> used_slots;
  for (std::size_t l = 0; l < sc.links.size(); ++l) {
    const std::string lpath = "$.inter_level_links[" + std::to_string(l) + "]";
    const auto& link = sc.links[l];
    if (!by_id.count(link.parent))
      throw DanglingReference(lpath + ".parent: unknown microgrid " + link.parent);
    if (!by_id.count(link.child))
      throw DanglingReference(lpath + ".child: unknown microgrid " + link.child);
    const auto& parent_cfg = sc.microgrids[by_id[link.parent]];
    if (link.pcc_node < parent_cfg.grid.ders.size() ||
        link.pcc_node >= parent_cfg.graph.node_count())
      throw DanglingReference(lpath + ".pcc_node: node " +
                              std::to_string(link.pcc_node) +
                              " is not a coupling slot of " + link.parent);
    if (!used_slots.insert({link.parent, link.pcc_node}).second)
      throw SchemaViolation(lpath + ".pcc_node: slot already bound to another child");
    // walk up from the parent; meeting the child again means a cycle
    std::string cur = link.parent;
    std::size_t hops = 0;
    while (parent_of.count(cur)) {
      cur = parent_of[cur];
      if (cur == link.child || ++hops > sc.links.size())
        throw SchemaViolation(lpath + ": levels must form a tree");
    }
  }

  if (doc.contains("faults")) {
    const json& faults = doc["faults"];
    if (!faults.is_array()) throw SchemaViolation("$.faults: expected an array");
    for (std::size_t f = 0; f < faults.size(); ++f) {
      const std::string fpath = "$.faults[" + std::to_string(f) + "]";
      FaultEvent ev = io_detail::parse_fault(faults[f], fpath);
      if (!by_id.count(ev.microgrid))
        throw DanglingReference(fpath + ".microgrid: unknown microgrid " +
                                ev.microgrid);
      const auto& cfg = sc.microgrids[by_id[ev.microgrid]];
      const std::size_t n = cfg.graph.node_count();
      if ((ev.kind == FaultKind::agent_fail || ev.kind == FaultKind::agent_restore) &&
          ev.node >= n)
        throw DanglingReference(fpath + ".node: node " + std::to_string(ev.node) +
                                " does not exist");
      if ((ev.kind == FaultKind::link_fail || ev.kind == FaultKind::link_restore) &&
          (ev.edge.first >= n || ev.edge.second >= n))
        throw DanglingReference(fpath + ".edge: node " +
                                std::to_string(std::max(ev.edge.first, ev.edge.second)) +
                                " does not exist");
      sc.faults.push_back(ev);
    }
  }
  return sc;
}

/// Inverse of parse_scenario for everything the parser retains:
/// parse_scenario(serialize_scenario(s)) == s.
inline std::string serialize_scenario(const Scenario& sc) {
  using namespace io_detail;
  json doc;
  doc["schema_version"] = sc.schema_version;
  doc["seed"] = sc.seed;
  doc["rounds"] = sc.rounds;
  doc["channel"] = {{"loss_probability", sc.channel.loss_probability},
                    {"delay_rounds", sc.channel.delay_rounds}};
  doc["limits"] = {{"voltage_band_pu", sc.limits.voltage_band_pu},
                   {"frequency_band_hz", sc.limits.frequency_band_hz}};
  doc["microgrids"] = json::array();
  for (const auto& cfg : sc.microgrids) {
    json mg;
    mg["id"] = cfg.grid.id;
    mg["nominal_frequency_hz"] = cfg.grid.nominal_frequency;
    mg["load_mw"] = cfg.grid.load_mw;
    mg["ders"] = json::array();
    for (const auto& d : cfg.grid.ders) {
      json der;
      der["id"] = d.id;
      der["kind"] = d.kind == DerKind::generator ? "generator"
                    : d.kind == DerKind::load    ? "load"
                                                 : "storage";
      der["p_set_mw"] = d.p_set;
      der["p_min_mw"] = d.p_min;
      der["p_max_mw"] = d.p_max;
      der["droop_mw_per_hz"] = d.droop_gain;
      der["q_droop_mvar_per_pu"] = d.q_droop_gain;
      der["cost_a"] = d.cost_a;
      der["cost_b"] = d.cost_b;
      mg["ders"].push_back(der);
    }
    json graph;
    graph["edges"] = json::array();
    for (const auto& [a, b] : cfg.graph.edges())
      graph["edges"].push_back(json::array({a, b}));
    graph["epsilon"] = cfg.graph.epsilon();
    mg["graph"] = graph;
    if (cfg.secondary)
      mg["secondary"] = {{"period_rounds", cfg.secondary->period_rounds},
                         {"gain", cfg.secondary->gain},
                         {"consensus_tol", cfg.secondary->consensus_tol},
                         {"consensus_max_rounds", cfg.secondary->consensus_max_rounds}};
    if (cfg.tertiary)
      mg["tertiary"] = {{"period_rounds", cfg.tertiary->period_rounds},
                        {"step_size", cfg.tertiary->step_size},
                        {"tol_mw", cfg.tertiary->tol_mw},
                        {"max_iters", cfg.tertiary->max_iters}};
    if (!cfg.grid.feeder.segments.empty()) {
      json feeder;
      feeder["source_voltage_pu"] = cfg.grid.feeder.source_voltage_pu;
      feeder["base_mva"] = cfg.grid.feeder.base_mva;
      feeder["segments"] = json::array();
      for (const auto& seg : cfg.grid.feeder.segments)
        feeder["segments"].push_back({{"r_pu", seg.r_pu},
                                      {"x_pu", seg.x_pu},
                                      {"load_fraction", seg.load_fraction}});
      mg["feeder"] = feeder;
    }
    if (!cfg.gossip_init.empty()) mg["gossip_init"] = cfg.gossip_init;
    doc["microgrids"].push_back(mg);
  }
  if (!sc.links.empty()) {
    doc["inter_level_links"] = json::array();
    for (const auto& link : sc.links)
      doc["inter_level_links"].push_back(
          {{"parent", link.parent}, {"child", link.child}, {"pcc_node", link.pcc_node}});
  }
  if (!sc.faults.empty()) {
    doc["faults"] = json::array();
    for (const auto& ev : sc.faults) {
      json f;
      f["at_round"] = ev.at_round;
      f["kind"] = fault_kind_name(ev.kind);
      f["microgrid"] = ev.microgrid;
      switch (ev.kind) {
        case FaultKind::agent_fail:
        case FaultKind::agent_restore:
          f["node"] = ev.node;
          break;
        case FaultKind::link_fail:
        case FaultKind::link_restore:
          f["edge"] = json::array({ev.edge.first, ev.edge.second});
          break;
        case FaultKind::load_step:
          f["delta_mw"] = ev.delta_mw;
          break;
      }
      doc["faults"].push_back(f);
    }
  }
  return doc.dump(2) + "\n";
}

struct FaultRecovery {
  std::size_t fault_index = 0;
  std::size_t at_round = 0;
  long long rounds_to_restore = -1;  // -1 = never restored

  bool operator==(const FaultRecovery&) const = default;
};

struct SummaryReport {
  std::map<std::string, double> final_frequency_hz;
  double max_voltage_pu = 1.0;
  double min_voltage_pu = 1.0;
  double total_generation_cost = 0.0;
  std::vector<FaultRecovery> fault_recovery;
  std::vector<std::size_t> secondary_consensus_rounds;
  bool frequency_violation = false;
  bool voltage_violation = false;

  bool operator==(const SummaryReport&) const = default;
};

inline SummaryReport build_summary(const SimTrace& trace) {
  SummaryReport rep;
  for (const auto& [id, nominal] : trace.nominal_frequency)
    rep.final_frequency_hz[id] = nominal;
  if (!trace.meta.empty())
    for (const auto& [id, df] : trace.meta.back().delta_f)
      rep.final_frequency_hz[id] = trace.nominal_frequency.at(id) + df;
  bool first_row = true;
  for (const auto& row : trace.rows) {
    if (first_row) {
      rep.max_voltage_pu = rep.min_voltage_pu = row.voltage_pu;
      first_row = false;
    } else {
      rep.max_voltage_pu = std::max(rep.max_voltage_pu, row.voltage_pu);
      rep.min_voltage_pu = std::min(rep.min_voltage_pu, row.voltage_pu);
    }
  }
  for (const auto& meta : trace.meta) {
    rep.total_generation_cost += meta.generation_cost;
    rep.frequency_violation |= meta.frequency_violation;
    rep.voltage_violation |= meta.voltage_violation;
    for (std::size_t rounds : meta.secondary_consensus_rounds)
      rep.secondary_consensus_rounds.push_back(rounds);
  }
  for (std::size_t f = 0; f < trace.faults.size(); ++f) {
    FaultRecovery rec;
    rec.fault_index = f;
    rec.at_round = trace.faults[f].at_round;
    for (std::size_t r = rec.at_round; r < trace.meta.size(); ++r) {
      bool restored = true;
      for (const auto& [id, df] : trace.meta[r].delta_f)
        restored &= std::abs(df) <= 1e-6;
      if (restored) {
        rec.rounds_to_restore = static_cast<long long>(r - rec.at_round);
        break;
      }
    }
    rep.fault_recovery.push_back(rec);
  }
  return rep;
}

inline std::string format_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12f", v);
  // normalize the sign of zero so equal values serialize identically
  if (std::string(buf) == "-0.000000000000") return "0.000000000000";
  return buf;
}

/// Fixed-header CSV, one row per live node per round, LF line endings.
inline std::string trace_to_csv(const SimTrace& trace) {
  std::string out =
      "round,freq_hz,node_id,voltage_pu,der_id,p_mw,residual,msgs_delivered,"
      "msgs_lost\n";
  for (const auto& row : trace.rows) {
    out += std::to_string(row.round);
    out += ',';
    out += format_fixed(row.freq_hz);
    out += ',';
    out += std::to_string(row.node_id);
    out += ',';
    out += format_fixed(row.voltage_pu);
    out += ',';
    out += row.der_id;
    out += ',';
    out += format_fixed(row.p_mw);
    out += ',';
    out += format_fixed(row.residual);
    out += ',';
    out += std::to_string(row.msgs_delivered);
    out += ',';
    out += std::to_string(row.msgs_lost);
    out += '\n';
  }
  return out;
}

inline json summary_to_json(const SummaryReport& rep) {
  json doc;
  doc["final_frequency_hz"] = rep.final_frequency_hz;
  doc["max_voltage_pu"] = rep.max_voltage_pu;
  doc["min_voltage_pu"] = rep.min_voltage_pu;
  doc["total_generation_cost"] = rep.total_generation_cost;
  doc["fault_recovery"] = json::array();
  for (const auto& rec : rep.fault_recovery)
    doc["fault_recovery"].push_back({{"fault_index", rec.fault_index},
                                     {"at_round", rec.at_round},
                                     {"rounds_to_restore", rec.rounds_to_restore}});
  doc["secondary_consensus_rounds"] = rep.secondary_consensus_rounds;
  doc["violations"] = {{"frequency_out_of_band", rep.frequency_violation},
                       {"voltage_out_of_band", rep.voltage_violation}};
  return doc;
}

inline SummaryReport parse_summary(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SyntaxError(std::string("invalid JSON: ") + e.what());
  }
  SummaryReport rep;
  rep.final_frequency_hz =
      doc.at("final_frequency_hz").get<std::map<std::string, double>>();
  rep.max_voltage_pu = doc.at("max_voltage_pu").get<double>();
  rep.min_voltage_pu = doc.at("min_voltage_pu").get<double>();
  rep.total_generation_cost = doc.at("total_generation_cost").get<double>();
  for (const auto& rec : doc.at("fault_recovery")) {
    FaultRecovery fr;
    fr.fault_index = rec.at("fault_index").get<std::size_t>();
    fr.at_round = rec.at("at_round").get<std::size_t>();
    fr.rounds_to_restore = rec.at("rounds_to_restore").get<long long>();
    rep.fault_recovery.push_back(fr);
  }
  rep.secondary_consensus_rounds =
      doc.at("secondary_consensus_rounds").get<std::vector<std::size_t>>();
  rep.frequency_violation =
      doc.at("violations").at("frequency_out_of_band").get<bool>();
  rep.voltage_violation = doc.at("violations").at("voltage_out_of_band").get<bool>();
  return rep;
}

struct TraceFiles {
  std::string csv;
  std::string summary_json;
};

inline TraceFiles write_trace(const SimTrace& trace) {
  TraceFiles files;
  files.csv = trace_to_csv(trace);
  files.summary_json = summary_to_json(build_summary(trace)).dump(2) + "\n";
  return files;
}

}  // namespace p2pgrid
