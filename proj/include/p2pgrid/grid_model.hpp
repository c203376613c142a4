#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "p2pgrid/errors.hpp"
#include "p2pgrid/topology.hpp"

namespace p2pgrid {

enum class DerKind { generator, load, storage };

/// Electrical envelope of one DER: setpoint, limits, droop gains and
/// quadratic cost C(p) = cost_a * p^2 / 2 + cost_b * p.
struct DerSpec {
  std::string id;
  DerKind kind = DerKind::generator;
  double p_set = 0.0;   // MW
  double p_min = 0.0;   // MW
  double p_max = 0.0;   // MW
  double droop_gain = 0.0;    // MW per Hz
  double q_droop_gain = 0.0;  // MVAr per pu volt
  double cost_a = 0.0;  // currency per MW^2
  double cost_b = 0.0;  // currency per MW

  bool dispatchable() const { return kind != DerKind::load; }
  bool operator==(const DerSpec&) const = default;
};

struct FeederSegment {
  double r_pu = 0.0;
  double x_pu = 0.0;
  double load_fraction = 0.0;  // share of the microgrid load at this node

  bool operator==(const FeederSegment&) const = default;
};

/// Radial feeder, one segment per DER in list order. Node 0 is the source
/// bus; DER k sits at the downstream end of segment k. `withdrawals` holds
/// the net (P, Q) taken out of each DER node in pu (negative = injection).
struct FeederModel {
  double source_voltage_pu = 1.0;
  double base_mva = 1.0;
  std::vector<FeederSegment> segments;
  std::vector<std::pair<double, double>> withdrawals;  // pu, per DER node

  bool operator==(const FeederModel&) const = default;
};

struct Microgrid;  // defined after the droop operations

inline double primary_droop_power(const DerSpec& der, double delta_f_hz) {
  const double p = der.p_set - der.droop_gain * delta_f_hz;
  return std::clamp(p, der.p_min, der.p_max);
}

inline double reactive_droop_power(const DerSpec& der, double local_voltage_pu) {
  if (!(local_voltage_pu > 0.0))
    throw NonPositiveVoltage("local voltage must be positive, got " +
                             std::to_string(local_voltage_pu));
  return der.q_droop_gain * (1.0 - local_voltage_pu);
}

inline double marginal_cost(const DerSpec& der, double p_mw) {
  if (!der.dispatchable())
    throw NotDispatchable("DER " + der.id + " has no dispatchable cost curve");
  return der.cost_a * p_mw + der.cost_b;
}

inline double generation_cost(const DerSpec& der, double p_mw) {
  return 0.5 * der.cost_a * p_mw * p_mw + der.cost_b * p_mw;
}

struct Microgrid {
  std::string id;
  std::vector<DerSpec> ders;
  FeederModel feeder;  // segments may be empty (no voltage model)
  double nominal_frequency = 50.0;  // Hz
  double load_mw = 0.0;             // aggregate uncontrolled load

  bool operator==(const Microgrid&) const = default;
};

struct FrequencySolution {
  double delta_f = 0.0;  // Hz
  std::vector<double> dispatched;  // MW, aligned with the DER list
};

namespace detail {

inline double total_droop_output(const std::vector<DerSpec>& ders, double delta_f) {
  double sum = 0.0;
  for (const auto& d : ders) sum += primary_droop_power(d, delta_f);
  return sum;
}

}  // namespace detail

/// Find the frequency deviation at which droop-responding output balances
/// the load. Total output is non-increasing in delta_f, so bisection on
/// [-5, +5] Hz converges unconditionally when a balance exists.
inline FrequencySolution solve_lumped_frequency(const std::vector<DerSpec>& ders,
                                                double load_mw) {
  double p_min_sum = 0.0, p_max_sum = 0.0, droop_sum = 0.0, p_set_sum = 0.0;
  for (const auto& d : ders) {
    p_min_sum += d.p_min;
    p_max_sum += d.p_max;
    droop_sum += d.droop_gain;
    p_set_sum += d.p_set;
  }
  if (load_mw < p_min_sum - 1e-12 || load_mw > p_max_sum + 1e-12)
    throw Infeasible("load " + std::to_string(load_mw) + " MW outside [" +
                     std::to_string(p_min_sum) + ", " + std::to_string(p_max_sum) + "]");
  FrequencySolution sol;
  if (droop_sum == 0.0) {
    if (std::abs(p_set_sum - load_mw) > 1e-12)
      throw NoDroopResponse("imbalance with zero total droop gain");
    sol.delta_f = 0.0;
  } else {
    double lo = -5.0, hi = 5.0;
    const double at_lo = detail::total_droop_output(ders, lo);
    const double at_hi = detail::total_droop_output(ders, hi);
    if (load_mw > at_lo + 1e-12 || load_mw < at_hi - 1e-12)
      throw Infeasible("balance not reachable within the droop band");
    // f(delta) = total(delta) - load is non-increasing; keep f(lo) >= 0 >= f(hi).
    while (hi - lo > 1e-12) {
      const double mid = 0.5 * (lo + hi);
      if (detail::total_droop_output(ders, mid) >= load_mw)
        lo = mid;
      else
        hi = mid;
    }
    sol.delta_f = 0.5 * (lo + hi);
    // Snap to zero when the setpoints already balance; avoids 1e-13 noise.
    if (std::abs(p_set_sum - load_mw) <= 1e-12 &&
        std::abs(sol.delta_f) < 1e-9)
      sol.delta_f = 0.0;
  }
  sol.dispatched.reserve(ders.size());
  for (const auto& d : ders) sol.dispatched.push_back(primary_droop_power(d, sol.delta_f));
  return sol;
}

inline FrequencySolution solve_lumped_frequency(const Microgrid& mg) {
  return solve_lumped_frequency(mg.ders, mg.load_mw);
}

/// Node voltages along the feeder, source first: size segments + 1.
/// V_k = V_{k-1} - (R_k * P_down + X_k * Q_down) / V0 with P, Q the net
/// withdrawals at or downstream of node k.
inline std::vector<double> feeder_voltages(const FeederModel& feeder) {
  const std::size_t m = feeder.segments.size();
  if (feeder.withdrawals.size() != m)
    throw DimensionMismatch("feeder withdrawals must match segment count");
  if (!(feeder.source_voltage_pu > 0.0))
    throw NonPositiveVoltage("source voltage must be positive");
  std::vector<double> volts(m + 1, feeder.source_voltage_pu);
  // Suffix sums of withdrawals give the power crossing each segment.
  std::vector<double> p_down(m + 1, 0.0), q_down(m + 1, 0.0);
  for (std::size_t k = m; k-- > 0;) {
    p_down[k] = p_down[k + 1] + feeder.withdrawals[k].first;
    q_down[k] = q_down[k + 1] + feeder.withdrawals[k].second;
  }
  for (std::size_t k = 0; k < m; ++k) {
    const auto& seg = feeder.segments[k];
    volts[k + 1] = volts[k] - (seg.r_pu * p_down[k] + seg.x_pu * q_down[k]) /
                                  feeder.source_voltage_pu;
  }
  return volts;
}

}  // namespace p2pgrid
