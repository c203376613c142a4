#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "p2pgrid/epidemic.hpp"

using namespace p2pgrid;
using namespace p2pgrid::testing;

TEST_CASE("consensus_step hand oracle on the path graph") {
  const auto g = path_graph(3, 0.25);
  auto s = make_consensus_state({0.0, 1.0, 2.0}, g);
  s = consensus_step(s, g);
  CHECK(s.values == std::vector<double>{0.25, 1.0, 1.75});
  CHECK(s.round == 1);
  CHECK(s.values[0] + s.values[1] + s.values[2] == 3.0);
  CHECK(consensus_residual(s) == 1.5);
}

TEST_CASE("consensus_step fixed points") {
  const auto g = complete_graph(4);
  auto s = make_consensus_state({5, 5, 5, 5}, g);
  CHECK(consensus_step(s, g).values == std::vector<double>{5, 5, 5, 5});

  const auto single = path_graph(1);
  auto s1 = make_consensus_state({7.0}, single);
  CHECK(consensus_step(s1, single).values == std::vector<double>{7.0});

  CHECK_THROWS_AS(consensus_step(s, path_graph(3)), DimensionMismatch);
}

TEST_CASE("consensus_residual") {
  const auto g = path_graph(3);
  CHECK(consensus_residual(make_consensus_state({0, 1, 2}, g)) == 2.0);
  CHECK(consensus_residual(make_consensus_state({5, 5, 5}, g)) == 0.0);
}

TEST_CASE("run_consensus reaches the average") {
  const auto g = path_graph(3);
  auto [state, report] = run_consensus({0, 1, 2}, g, 1e-9, 100000);
  CHECK(report.converged);
  CHECK(report.consensus_value == doctest::Approx(1.0).epsilon(1e-9));

  auto [s2, r2] = run_consensus({1, 1, 1, 1}, complete_graph(4), 1e-9, 100);
  CHECK(r2.converged);
  CHECK(r2.rounds_used == 0);
  CHECK(r2.consensus_value == 1.0);

  CHECK_THROWS_AS(run_consensus({0, 1, 2}, CommGraph::build(3, {{0, 1}}), 1e-9, 100),
                  NotConnected);
}

TEST_CASE("sum conservation and contraction under consensus_step") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 20);
    const auto g = random_connected_graph(rng, n);
    auto s = make_consensus_state(random_values(rng, n), g);
    for (int k = 0; k < 20; ++k) {
      double before_sum = 0, before_max = -1e30, before_min = 1e30;
      for (double v : s.values) {
        before_sum += v;
        before_max = std::max(before_max, v);
        before_min = std::min(before_min, v);
      }
      s = consensus_step(s, g);
      double after_sum = 0, after_max = -1e30, after_min = 1e30;
      for (double v : s.values) {
        after_sum += v;
        after_max = std::max(after_max, v);
        after_min = std::min(after_min, v);
      }
      CHECK(std::abs(after_sum - before_sum) <=
            1e-12 * std::max(1.0, std::abs(before_sum)));
      CHECK(after_max <= before_max + 1e-12);
      CHECK(after_min >= before_min - 1e-12);
    }
  }
}

TEST_CASE("convergence on random connected graphs") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 49);
    const auto g = random_connected_graph(rng, n);
    const auto init = random_values(rng, n);
    auto [state, report] = run_consensus(init, g, 1e-9, 200 * n * n);
    CHECK(report.converged);
    CHECK(std::abs(report.consensus_value - mean_of(init)) <= 1e-9);
  }
}

TEST_CASE("exponentially decaying residual on a ring") {
  const auto g = ring_graph(20);
  std::mt19937_64 rng(3);
  auto s = make_consensus_state(random_values(rng, 20), g);
  std::vector<double> residuals{consensus_residual(s)};
  for (int k = 0; k < 1000; ++k) {
    s = consensus_step(s, g);
    residuals.push_back(consensus_residual(s));
  }
  for (std::size_t t = 10; 2 * t < residuals.size(); ++t)
    CHECK(residuals[2 * t] <= residuals[t]);
}

TEST_CASE("survivors converge to the survivor mean after a drop") {
  const auto ring = ring_graph(5);
  auto s = make_consensus_state({1, 2, 3, 4, 5}, ring);
  for (int k = 0; k < 30; ++k) s = consensus_step(s, ring);
  const auto g2 = ring.remove_node(2);
  s = drop_agent(s, 2);
  const double survivor_mean = live_mean(s);
  for (int k = 0; k < 20000 && consensus_residual(s) > 1e-12; ++k)
    s = consensus_step(s, g2);
  for (NodeId i = 0; i < 5; ++i)
    if (s.live[i]) CHECK(s.values[i] == doctest::Approx(survivor_mean).epsilon(1e-9));
}

TEST_CASE("push_sum_round conserves mass and keeps ratios") {
  const auto g = path_graph(3);
  std::mt19937_64 rng(11);

  // equal ratios stay equal
  PushSumState eq = make_push_sum_state({2.5, 2.5, 2.5}, g);
  const auto eq2 = push_sum_round(eq, g, rng);
  for (NodeId i = 0; i < 3; ++i)
    CHECK(eq2.sums[i] / eq2.weights[i] == doctest::Approx(2.5).epsilon(1e-12));

  // singleton unchanged
  const auto single = path_graph(1);
  const auto s1 = make_push_sum_state({4.0}, single);
  CHECK(push_sum_round(s1, single, rng) == s1);

  // conservation with arbitrary values and seeds
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 r2(seed);
    auto st = make_push_sum_state({0.0, 3.0, 6.0}, g);
    for (int k = 0; k < 50; ++k) {
      st = push_sum_round(st, g, r2);
      const double s_sum = st.sums[0] + st.sums[1] + st.sums[2];
      const double w_sum = st.weights[0] + st.weights[1] + st.weights[2];
      CHECK(std::abs(s_sum - 9.0) <= 1e-12 * 9.0);
      CHECK(std::abs(w_sum - 3.0) <= 1e-12 * 3.0);
      for (NodeId i = 0; i < 3; ++i) CHECK(st.weights[i] > 0.0);
    }
  }
}

TEST_CASE("run_push_sum estimates the mean") {
  const auto g = path_graph(3);
  std::mt19937_64 rng(21);
  const auto report = run_push_sum({0.0, 3.0, 6.0}, g, 1e-6, 100000, rng);
  CHECK(report.converged);
  CHECK(report.consensus_value == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(report.sum_estimate == doctest::Approx(9.0).epsilon(1e-6));

  std::mt19937_64 rng2(22);
  const auto flat = run_push_sum({2.5, 2.5}, path_graph(2), 1e-6, 100, rng2);
  CHECK(flat.converged);
  CHECK(flat.rounds_used == 0);
  CHECK(flat.consensus_value == 2.5);

  std::mt19937_64 rng3(23);
  CHECK_THROWS_AS(run_push_sum({0, 1, 2}, CommGraph::build(3, {{0, 1}}), 1e-6, 100, rng3),
                  NotConnected);
}

TEST_CASE("push-sum matches the arithmetic-mean oracle across graphs and seeds") {
  std::mt19937_64 gen_rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + uniform_index(gen_rng, 19);
    const auto g = random_connected_graph(gen_rng, n);
    const auto init = random_values(gen_rng, n);
    const double mean = mean_of(init);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(seed);
      const auto report = run_push_sum(init, g, 1e-7, 1000000, rng);
      REQUIRE(report.converged);
      CHECK(std::abs(report.consensus_value - mean) <= 1e-6);
    }
  }
}

TEST_CASE("push-sum is deterministic per seed") {
  const auto g = ring_graph(6);
  const std::vector<double> init{1, 2, 3, 4, 5, 6};
  std::mt19937_64 a(77), b(77);
  auto sa = make_push_sum_state(init, g);
  auto sb = make_push_sum_state(init, g);
  for (int k = 0; k < 100; ++k) {
    sa = push_sum_round(sa, g, a);
    sb = push_sum_round(sb, g, b);
    REQUIRE(sa == sb);
  }
}

TEST_CASE("default_epsilon") {
  CHECK(default_epsilon(path_graph(3)) == doctest::Approx(1.0 / 3.0));
  CHECK(default_epsilon(path_graph(1)) == 1.0);
  CHECK(default_epsilon(complete_graph(4)) == doctest::Approx(0.25));
}
