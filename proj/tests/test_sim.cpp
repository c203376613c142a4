#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "p2pgrid/scenario_io.hpp"
#include "p2pgrid/sim.hpp"

using namespace p2pgrid;
using namespace p2pgrid::testing;

namespace {

DerSpec gen(const std::string& id, double p_set, double droop = 20.0,
            double p_max = 10.0) {
  DerSpec d;
  d.id = id;
  d.kind = DerKind::generator;
  d.p_set = p_set;
  d.p_min = 0.0;
  d.p_max = p_max;
  d.droop_gain = droop;
  d.cost_a = 1.0;
  return d;
}

Scenario two_gen_scenario(bool with_secondary) {
  Scenario sc;
  sc.seed = 42;
  sc.rounds = 60;
  MicrogridConfig cfg;
  cfg.grid.id = "mg";
  cfg.grid.load_mw = 8.0;
  cfg.grid.ders = {gen("a", 4.0), gen("b", 4.0)};
  cfg.graph = CommGraph::build(2, {{0, 1}});
  if (with_secondary) {
    SecondaryParams p;
    p.period_rounds = 20;
    p.gain = 1.0;
    cfg.secondary = p;
  }
  sc.microgrids.push_back(cfg);
  FaultEvent step;
  step.at_round = 10;
  step.kind = FaultKind::load_step;
  step.microgrid = "mg";
  step.delta_mw = 2.0;
  sc.faults.push_back(step);
  return sc;
}

Scenario ring_scenario(std::size_t n, std::size_t rounds) {
  Scenario sc;
  sc.seed = 7;
  sc.rounds = rounds;
  MicrogridConfig cfg;
  cfg.grid.id = "ring";
  cfg.grid.load_mw = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    cfg.grid.ders.push_back(gen("g" + std::to_string(i), 2.0));
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) edges.emplace_back(i, (i + 1) % n);
  cfg.graph = CommGraph::build(n, edges);
  for (std::size_t i = 0; i < n; ++i)
    cfg.gossip_init.push_back(static_cast<double>(i + 1));
  sc.microgrids.push_back(cfg);
  return sc;
}

}  // namespace

TEST_CASE("balanced scenario holds nominal frequency every round") {
  Scenario sc = two_gen_scenario(false);
  sc.faults.clear();
  const auto trace = run_scenario(sc);
  REQUIRE(trace.meta.size() == sc.rounds);
  for (const auto& meta : trace.meta) CHECK(meta.delta_f.at("mg") == 0.0);
  for (const auto& row : trace.rows) CHECK(row.freq_hz == 50.0);
}

TEST_CASE("load step settles at the droop equilibrium without secondary") {
  const auto trace = run_scenario(two_gen_scenario(false));
  for (const auto& meta : trace.meta) {
    if (meta.round < 10)
      CHECK(meta.delta_f.at("mg") == 0.0);
    else
      CHECK(meta.delta_f.at("mg") == doctest::Approx(-0.05).epsilon(1e-9));
  }
}

TEST_CASE("secondary eliminates the steady-state error at its activation") {
  const auto trace = run_scenario(two_gen_scenario(true));
  for (const auto& meta : trace.meta) {
    if (meta.round >= 10 && meta.round < 20)
      CHECK(meta.delta_f.at("mg") == doctest::Approx(-0.05).epsilon(1e-9));
    if (meta.round >= 20) CHECK(std::abs(meta.delta_f.at("mg")) <= 1e-9);
  }
  bool saw_activation = false;
  for (const auto& meta : trace.meta)
    saw_activation |= !meta.secondary_consensus_rounds.empty();
  CHECK(saw_activation);
}

TEST_CASE("apply_fault topology consequences") {
  Scenario sc = ring_scenario(3, 10);
  sc.microgrids[0].graph = CommGraph::build(3, {{0, 1}, {1, 2}});  // path
  SimState w = make_sim_state(sc);

  FaultEvent kill;
  kill.kind = FaultKind::agent_fail;
  kill.microgrid = "ring";
  kill.node = 1;
  apply_fault(w, kill);
  CHECK_FALSE(w.mgs[0].graph.is_connected());
  CHECK(w.mgs[0].graph.live_count() == 2);

  FaultEvent restore = kill;
  restore.kind = FaultKind::agent_restore;
  apply_fault(w, restore);
  CHECK(w.mgs[0].graph.is_connected());
  CHECK_THROWS_AS(apply_fault(w, restore), UnknownTarget);

  FaultEvent cut;
  cut.kind = FaultKind::link_fail;
  cut.microgrid = "ring";
  cut.edge = {0, 1};
  apply_fault(w, cut);
  CHECK_FALSE(w.mgs[0].graph.has_edge(0, 1));
  CHECK_THROWS_AS(apply_fault(w, cut), UnknownTarget);

  FaultEvent bad;
  bad.kind = FaultKind::load_step;
  bad.microgrid = "nope";
  CHECK_THROWS_AS(apply_fault(w, bad), UnknownTarget);
}

TEST_CASE("killing the middle node skips secondary but keeps primary") {
  Scenario sc = two_gen_scenario(true);
  sc.rounds = 80;
  sc.microgrids[0].grid.ders = {gen("a", 4.0), gen("m", 0.0, 0.0, 0.0), gen("b", 4.0)};
  sc.microgrids[0].graph = CommGraph::build(3, {{0, 1}, {1, 2}});
  FaultEvent kill;
  kill.at_round = 15;
  kill.kind = FaultKind::agent_fail;
  kill.microgrid = "mg";
  kill.node = 1;
  sc.faults.push_back(kill);

  const auto trace = run_scenario(sc);
  bool skipped = false;
  for (const auto& meta : trace.meta)
    for (const auto& note : meta.notes) skipped |= note.find("secondary skipped") == 0;
  CHECK(skipped);
  // primary equilibrium holds exactly after the partition: setpoints frozen
  const double expected =
      solve_lumped_frequency({gen("a", 4.0), gen("b", 4.0)}, 10.0).delta_f;
  for (const auto& meta : trace.meta)
    if (meta.round >= 15) CHECK(meta.delta_f.at("mg") == expected);
}

TEST_CASE("link failure on a ring keeps consensus alive") {
  Scenario sc = ring_scenario(5, 300);
  FaultEvent cut;
  cut.at_round = 20;
  cut.kind = FaultKind::link_fail;
  cut.microgrid = "ring";
  cut.edge = {0, 1};
  sc.faults.push_back(cut);
  const auto trace = run_scenario(sc);
  CHECK(trace.rows.back().residual <= 1e-9);
}

TEST_CASE("survivors reconverge after an agent failure") {
  Scenario sc = ring_scenario(5, 400);
  FaultEvent kill;
  kill.at_round = 50;
  kill.kind = FaultKind::agent_fail;
  kill.microgrid = "ring";
  kill.node = 2;
  sc.faults.push_back(kill);
  const auto trace = run_scenario(sc);
  CHECK(trace.rows.back().residual <= 1e-9);
  // dead node emits no rows after the failure
  std::size_t rows_at_100 = 0;
  for (const auto& row : trace.rows)
    if (row.round == 100) ++rows_at_100;
  CHECK(rows_at_100 == 4);
  // frequency stays bounded throughout
  for (const auto& meta : trace.meta)
    CHECK(std::abs(meta.delta_f.at("ring")) <= 0.5);
}

TEST_CASE("deliver_round endpoints") {
  const auto g = ring_graph(4);
  std::mt19937_64 rng(1);
  ChannelModel all{0.0, 0};
  CHECK(deliver_round(g, all, rng).size() == 4);
  ChannelModel none{1.0, 0};
  CHECK(deliver_round(g, none, rng).empty());
}

TEST_CASE("full loss freezes the consensus state") {
  Scenario sc = ring_scenario(4, 30);
  sc.channel.loss_probability = 1.0;
  const auto trace = run_scenario(sc);
  for (const auto& row : trace.rows) {
    CHECK(row.msgs_delivered == 0);
    CHECK(row.residual == 3.0);  // initial spread of 1..4 never shrinks
  }
}

TEST_CASE("lossy channel conserves the consensus sum") {
  Scenario sc = ring_scenario(6, 50);
  sc.channel.loss_probability = 0.3;
  SimState w = make_sim_state(sc);
  std::mt19937_64 rng(sc.seed);
  const double sum0 = w.mgs[0].gossip.initial_sum;
  for (int r = 0; r < 50; ++r) {
    const auto delivered = deliver_round(w.mgs[0].graph, sc.channel, rng);
    w.mgs[0].gossip = consensus_step(w.mgs[0].gossip, w.mgs[0].graph, delivered,
                                     w.mgs[0].gossip.values);
    double sum = 0.0;
    for (double v : w.mgs[0].gossip.values) sum += v;
    CHECK(std::abs(sum - sum0) <= 1e-12 * std::abs(sum0));
  }
}

TEST_CASE("consensus stays live under heavy loss") {
  // loss-free baseline round count
  Scenario base = ring_scenario(10, 2000);
  const auto free_trace = run_scenario(base);
  std::size_t free_rounds = base.rounds;
  for (const auto& row : free_trace.rows)
    if (row.residual <= 1e-6) {
      free_rounds = row.round;
      break;
    }
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Scenario sc = ring_scenario(10, 50 * free_rounds);
    sc.seed = seed;
    sc.channel.loss_probability = 0.5;
    const auto trace = run_scenario(sc);
    CHECK(trace.rows.back().residual <= 1e-6);
  }
}

TEST_CASE("message delay holds the last sample but still mixes") {
  Scenario sc = ring_scenario(4, 600);
  sc.channel.delay_rounds = 2;
  const auto trace = run_scenario(sc);
  CHECK(trace.rows.back().residual <= 1e-6);
}

TEST_CASE("determinism: identical scenario gives identical serialized traces") {
  Scenario sc = ring_scenario(8, 100);
  sc.channel.loss_probability = 0.25;
  const auto a = write_trace(run_scenario(sc));
  const auto b = write_trace(run_scenario(sc));
  CHECK(a.csv == b.csv);
  CHECK(a.summary_json == b.summary_json);
}

TEST_CASE("row count equals rounds times live nodes") {
  Scenario sc = ring_scenario(5, 40);
  FaultEvent kill;
  kill.at_round = 10;
  kill.kind = FaultKind::agent_fail;
  kill.microgrid = "ring";
  kill.node = 0;
  sc.faults.push_back(kill);
  const auto trace = run_scenario(sc);
  CHECK(trace.rows.size() == 10 * 5 + 30 * 4);
}

TEST_CASE("two-level tertiary dispatch matches the pooled oracle") {
  Scenario sc;
  sc.seed = 99;
  sc.rounds = 12;

  MicrogridConfig mv;
  mv.grid.id = "mv";
  mv.grid.load_mw = 2.0;
  mv.grid.ders = {gen("g0", 2.0)};
  mv.grid.ders[0].cost_a = 1.5;
  mv.grid.ders[0].cost_b = 0.0;
  mv.graph = CommGraph::build(2, {{0, 1}});
  TertiaryParams tp;
  tp.period_rounds = 10;
  tp.step_size = 0.3;
  mv.tertiary = tp;
  sc.microgrids.push_back(mv);

  MicrogridConfig lv;
  lv.grid.id = "lv";
  lv.grid.load_mw = 3.0;
  lv.grid.ders = {gen("g1", 2.0), gen("g2", 1.0)};
  lv.grid.ders[0].cost_a = 1.0;
  lv.grid.ders[0].cost_b = 2.0;
  lv.grid.ders[1].cost_a = 2.0;
  lv.grid.ders[1].cost_b = 1.0;
  lv.graph = CommGraph::build(2, {{0, 1}});
  sc.microgrids.push_back(lv);

  InterLevelLink link;
  link.parent = "mv";
  link.child = "lv";
  link.pcc_node = 1;
  sc.links.push_back(link);

  const auto trace = run_scenario(sc);

  std::vector<DerSpec> pooled = {mv.grid.ders[0], lv.grid.ders[0], lv.grid.ders[1]};
  const auto oracle = centralized_dispatch_oracle(pooled, 5.0);

  std::map<std::string, double> final_p;
  for (const auto& row : trace.rows)
    if (row.round == sc.rounds - 1) final_p[row.der_id] = row.p_mw;
  CHECK(std::abs(final_p.at("g0") - oracle.power[0]) <= 1e-6);
  CHECK(std::abs(final_p.at("g1") - oracle.power[1]) <= 1e-6);
  CHECK(std::abs(final_p.at("g2") - oracle.power[2]) <= 1e-6);
  CHECK(std::abs(final_p.at("lv") - (oracle.power[1] + oracle.power[2])) <= 1e-6);
  // both levels sit at nominal frequency after the dispatch
  CHECK(std::abs(trace.meta.back().delta_f.at("mv")) <= 1e-6);
  CHECK(std::abs(trace.meta.back().delta_f.at("lv")) <= 1e-6);
}
