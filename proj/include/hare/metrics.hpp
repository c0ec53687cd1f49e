#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hare/energy_model.hpp"
#include "hare/sim_engine.hpp"
#include "hare/trace.hpp"
#include "hare/units.hpp"

namespace hare::metrics {

// ---------------------------------------------------------------------------
// Packet delivery ratio
// ---------------------------------------------------------------------------

// Cumulative PDR per transmission window over the application data phases:
// pdr[k] is the fraction of expected (station, beacon) payloads the gateway
// holds by the end of window k+1. Statistics phases are exempt from error
// injection, so they are kept out of the ratio.
inline std::vector<double> compute_pdr(const trace::Trace& tr, int windows) {
  std::vector<std::int64_t> delivered(windows, 0);
  std::int64_t expected = 0;
  int phase_beacon = -1;
  bool phase_stats = false;
  std::set<int> phase_expected_hosts;

  for (const auto& r : tr.records()) {
    if (r.ev == trace::Ev::PhaseStart) {
      phase_beacon = static_cast<int>(r.a);
      phase_stats = r.b != 0;
      phase_expected_hosts.clear();
      std::stringstream ss(r.s);
      std::string part;
      while (std::getline(ss, part, ';'))
        if (!part.empty()) phase_expected_hosts.insert(std::stoi(part));
      if (!phase_stats) expected += static_cast<std::int64_t>(phase_expected_hosts.size());
    } else if (r.ev == trace::Ev::GwHold && !phase_stats &&
               static_cast<int>(r.b) == phase_beacon && r.e == 0) {
      if (phase_expected_hosts.contains(static_cast<int>(r.a))) {
        int w = std::min(windows - 1, static_cast<int>(r.c));
        ++delivered[w];
      }
    }
  }
  if (expected == 0)
    return std::vector<double>(windows, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> pdr(windows, 0.0);
  std::int64_t cum = 0;
  for (int k = 0; k < windows; ++k) {
    cum += delivered[k];
    pdr[k] = static_cast<double>(cum) / static_cast<double>(expected);
  }
  return pdr;
}

// ---------------------------------------------------------------------------
// Transmissions per packet received
// ---------------------------------------------------------------------------

// Quotient between application data frames put on the air by stations and
// the distinct application payloads the gateway ended up holding.
inline double compute_tx_per_packet(const trace::Trace& tr) {
  std::int64_t sent = 0, received = 0;
  for (const auto& r : tr.records()) {
    if (r.ev == trace::Ev::FrameTx && static_cast<FrameKind>(r.a) == FrameKind::DataSegment)
      ++sent;
    if (r.ev == trace::Ev::GwHold && r.e == 0) ++received;
  }
  if (received == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(sent) / static_cast<double>(received);
}

// ---------------------------------------------------------------------------
// Association metrics
// ---------------------------------------------------------------------------

// One repetition spans from a network association beacon to the next: the
// routing table dumped with the following association beacon reflects who
// held a path after the interleaved data beacon gave latecomers their
// chance. Returns per-repetition success fractions.
inline std::vector<double> association_success(const trace::Trace& tr, int station_count,
                                               const std::set<int>& assoc_beacons) {
  std::map<int, int> dump_size;  // beacon -> table size
  for (const auto& r : tr.records())
    if (r.ev == trace::Ev::RouteDump) ++dump_size[static_cast<int>(r.a)];
  std::vector<double> reps;
  for (auto it = assoc_beacons.begin(); it != assoc_beacons.end(); ++it) {
    auto next = std::next(it);
    if (next == assoc_beacons.end()) break;
    reps.push_back(static_cast<double>(dump_size[*next]) / station_count);
  }
  return reps;
}

// (station node, parent node) pair counts across the routing dumps of data
// primaries: the line thicknesses of an association diagram.
inline std::map<std::pair<int, int>, int> link_frequency(const trace::Trace& tr,
                                                         const std::set<int>& assoc_beacons) {
  std::map<int, std::map<int, int>> host_node_at;  // beacon -> host -> node
  for (const auto& r : tr.records())
    if (r.ev == trace::Ev::RouteDump)
      host_node_at[static_cast<int>(r.a)][static_cast<int>(r.b)] = static_cast<int>(r.e);
  std::map<std::pair<int, int>, int> freq;
  for (const auto& r : tr.records()) {
    if (r.ev != trace::Ev::RouteDump) continue;
    int beacon = static_cast<int>(r.a);
    if (assoc_beacons.contains(beacon)) continue;  // count data-beacon snapshots
    int parent_host = static_cast<int>(r.c);
    int parent_node = parent_host == 0 ? 0 : host_node_at[beacon][parent_host];
    ++freq[{static_cast<int>(r.e), parent_node}];
  }
  return freq;
}

// ---------------------------------------------------------------------------
// Energy summaries
// ---------------------------------------------------------------------------

struct NodeEnergy {
  int node = 0;
  energy::EnergyLedger ledger;
  energy::EnergyBreakdown breakdown;
  double lifetime_days_3min = 0.0;
  double lifetime_days_1h = 0.0;
  double lifetime_days_4h = 0.0;
};

// Battery projections assume the run's per-period cost repeats; longer
// periods add only sleep current for the idle tail.
inline NodeEnergy summarize_node_energy(int node, const energy::EnergyLedger& led,
                                        SimTime run_duration, SimTime t_p,
                                        double battery_mah = 800.0,
                                        const energy::CurrentProfile& profile = {}) {
  NodeEnergy out;
  out.node = node;
  out.ledger = led;
  out.breakdown = energy::energy_total(led, profile);
  double periods = static_cast<double>(run_duration) / static_cast<double>(t_p);
  if (periods <= 0) return out;
  double per_period = out.breakdown.e_total_j / periods;
  if (per_period <= 0) return out;
  auto project = [&](SimTime period) {
    double e = per_period;
    if (period > t_p) e = energy::extrapolate_period_energy_j(per_period, t_p, period, profile);
    return energy::battery_lifetime_days(e, period, battery_mah, profile);
  };
  out.lifetime_days_3min = project(minutes(3));
  out.lifetime_days_1h = project(hours(1));
  out.lifetime_days_4h = project(hours(4));
  return out;
}

// ---------------------------------------------------------------------------
// Whole-run report
// ---------------------------------------------------------------------------

struct MetricsReport {
  std::vector<double> pdr;  // cumulative per window
  double tx_per_packet = 0.0;
  double association_success_rate = 1.0;
  std::map<std::pair<int, int>, int> links;
  std::vector<NodeEnergy> node_energy;  // index 0 = gateway
  double mean_sta_energy_j = 0.0;
  double mean_sta_radio_j = 0.0;
  double mean_sta_up_j = 0.0;
  double energy_per_bit_mj = std::numeric_limits<double>::quiet_NaN();
  std::int64_t delivered_app_payloads = 0;
  std::int64_t delivered_app_bits = 0;
  double max_clock_skew_us = 0.0;
};

inline MetricsReport compute_metrics(const sim::RunResult& res, const sim::Scenario& scn) {
  MetricsReport m;
  m.pdr = compute_pdr(res.trace, scn.protocol.windows);
  m.tx_per_packet = compute_tx_per_packet(res.trace);
  auto reps = association_success(res.trace, static_cast<int>(scn.placements.size()) - 1,
                                  scn.beacons.association);
  if (!reps.empty()) {
    double sum = 0;
    for (double r : reps) sum += r;
    m.association_success_rate = sum / static_cast<double>(reps.size());
  }
  m.links = link_frequency(res.trace, scn.beacons.association);

  for (std::size_t i = 0; i < res.ledgers.size(); ++i)
    m.node_energy.push_back(summarize_node_energy(static_cast<int>(i), res.ledgers[i],
                                                  res.end_time, scn.protocol.t_p));
  double sum = 0, sum_radio = 0, sum_up = 0;
  for (std::size_t i = 1; i < m.node_energy.size(); ++i) {
    sum += m.node_energy[i].breakdown.e_total_j;
    sum_radio += m.node_energy[i].breakdown.e_radio_j;
    sum_up += m.node_energy[i].breakdown.e_up_j;
  }
  if (m.node_energy.size() > 1) {
    double n = static_cast<double>(m.node_energy.size() - 1);
    m.mean_sta_energy_j = sum / n;
    m.mean_sta_radio_j = sum_radio / n;
    m.mean_sta_up_j = sum_up / n;
  }

  for (const auto& r : res.trace.records())
    if (r.ev == trace::Ev::GwHold && r.e == 0) {
      ++m.delivered_app_payloads;
      m.delivered_app_bits += r.d * 8;
    }
  if (m.delivered_app_bits > 0)
    m.energy_per_bit_mj = energy::energy_per_bit_mj(sum, m.delivered_app_bits);
  m.max_clock_skew_us = res.max_clock_skew_us;
  return m;
}

}  // namespace hare::metrics
