#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "hare/protocol_types.hpp"
#include "hare/units.hpp"

namespace hare::net {

// ---------------------------------------------------------------------------
// Parent selection
// ---------------------------------------------------------------------------

struct CandidateInfo {
  NetworkAddress address;
  int ring = 0;          // candidate's ring (gateway = 0)
  int child_count = 0;
  double rssi_tx_dbm = 0.0;  // measured at the candidate for our discovery
  double rssi_rx_dbm = 0.0;  // measured at us for the candidate's response
  double p_tx_max_dbm = 14.0;
};

// Routing score: lower is better. Both link directions are charged by
// their distance to the transceiver's maximum power, then ring depth and
// current child load are added with their own weights.
inline double score_candidate(const CandidateInfo& c, const RoutingWeights& w) {
  return w.a1 * (c.p_tx_max_dbm - c.rssi_tx_dbm) + w.a2 * (c.p_tx_max_dbm - c.rssi_rx_dbm) +
         w.a3 * static_cast<double>(c.ring) + w.a4 * static_cast<double>(c.child_count);
}

// Minimum-score candidate among those that still take children; equal
// scores break toward the lowest address so runs replay identically.
inline std::optional<CandidateInfo> select_parent(const std::vector<CandidateInfo>& candidates,
                                                  const RoutingWeights& w, int max_children) {
  std::optional<CandidateInfo> best;
  double best_score = 0.0;
  for (const auto& c : candidates) {
    if (c.child_count >= max_children) continue;
    double s = score_candidate(c, w);
    if (!best || s < best_score || (s == best_score && c.address < best->address)) {
      best = c;
      best_score = s;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Association turn plan
// ---------------------------------------------------------------------------

// Stations pick their association turn from the beacon's strength: the
// stronger the beacon, the earlier the turn. Thresholds are descending;
// a station below every threshold takes the last turn.
struct AssociationTurnPlan {
  std::vector<double> thresholds_dbm;

  int turns() const { return static_cast<int>(thresholds_dbm.size()) + 1; }

  // Default plan: `turns` buckets with thresholds evenly spanning
  // [sensitivity, 0] dBm.
  static AssociationTurnPlan evenly_spanning(int turns, double sensitivity_dbm) {
    if (turns < 1) throw std::domain_error("turn plan needs at least one turn");
    AssociationTurnPlan plan;
    double step = -sensitivity_dbm / turns;
    for (int i = 1; i < turns; ++i) plan.thresholds_dbm.push_back(-step * i);
    return plan;
  }

  void validate() const {
    for (std::size_t i = 1; i < thresholds_dbm.size(); ++i)
      if (!(thresholds_dbm[i] < thresholds_dbm[i - 1]))
        throw std::domain_error("turn thresholds must be strictly descending");
  }
};

inline int association_turn(double beacon_rssi_dbm, const AssociationTurnPlan& plan) {
  int turn = 0;
  for (double th : plan.thresholds_dbm) {
    if (beacon_rssi_dbm >= th) return turn;
    ++turn;
  }
  return turn;
}

// ---------------------------------------------------------------------------
// Gateway routing table
// ---------------------------------------------------------------------------

struct RoutingTableEntry {
  NetworkAddress sta;
  NetworkAddress parent;
  int ring = 0;
  HardwareId hw_id = 0;
  // Index of the data primary beacon whose phase last carried this
  // station's payload to the gateway (set to the admission beacon on
  // join, so silence counting starts only after the grace period).
  int last_heard_beacon = 0;
};

class RoutingTable {
 public:
  bool contains(NetworkAddress a) const { return entries_.contains(a); }

  const RoutingTableEntry* find(NetworkAddress a) const {
    auto it = entries_.find(a);
    return it == entries_.end() ? nullptr : &it->second;
  }

  void upsert(RoutingTableEntry e) {
    check(e.ring >= 1, "routing entry with non-positive ring");
    entries_[e.sta] = e;
    verify_consistency();
  }

  void erase(NetworkAddress a) { entries_.erase(a); }

  void note_heard(NetworkAddress a, int beacon_index) {
    auto it = entries_.find(a);
    if (it != entries_.end())
      it->second.last_heard_beacon = std::max(it->second.last_heard_beacon, beacon_index);
  }

  int child_count(NetworkAddress parent) const {
    int n = 0;
    for (const auto& [a, e] : entries_)
      if (e.parent == parent) ++n;
    return n;
  }

  std::vector<NetworkAddress> children_of(NetworkAddress parent) const {
    std::vector<NetworkAddress> out;
    for (const auto& [a, e] : entries_)
      if (e.parent == parent) out.push_back(a);
    return out;
  }

  int max_ring() const {
    int r = 0;
    for (const auto& [a, e] : entries_) r = std::max(r, e.ring);
    return r;
  }

  const std::map<NetworkAddress, RoutingTableEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Every parent pointer must terminate at the gateway with rings
  // descending one per hop.
  void verify_consistency() const {
    for (const auto& [addr, e] : entries_) {
      int hops = 0;
      NetworkAddress cur = addr;
      while (true) {
        auto it = entries_.find(cur);
        check(it != entries_.end(), "routing chain hits unknown node");
        const auto& entry = it->second;
        if (entry.parent.is_gateway()) {
          check(entry.ring == 1, "gateway child not in ring 1");
          break;
        }
        auto pit = entries_.find(entry.parent);
        check(pit != entries_.end(), "parent missing from routing table");
        check(pit->second.ring == entry.ring - 1, "parent ring mismatch");
        cur = entry.parent;
        check(++hops <= 256, "routing cycle detected");
      }
    }
  }

  // Removes stations that delivered nothing for more than `n_pd`
  // consecutive data primaries. Returns the removal roster for the next
  // primary beacon.
  std::vector<RoutingTableEntry> disassociation_sweep(int current_data_beacon, int n_pd) {
    std::vector<RoutingTableEntry> removed;
    for (auto it = entries_.begin(); it != entries_.end();) {
      if (current_data_beacon - it->second.last_heard_beacon > n_pd) {
        removed.push_back(it->second);
        it = entries_.erase(it);
      } else {
        ++it;
      }
    }
    return removed;
  }

 private:
  std::map<NetworkAddress, RoutingTableEntry> entries_;
};

// ---------------------------------------------------------------------------
// Self-disassociation
// ---------------------------------------------------------------------------

enum class StaLiveness : std::uint8_t { Alive, Dead };

// A station that hears no beacon at all for t_d turns itself off for good;
// the timer rearms on every received beacon.
inline StaLiveness self_disassociation_check(SimTime last_beacon_heard, SimTime now, SimTime t_d) {
  return (now - last_beacon_heard) >= t_d ? StaLiveness::Dead : StaLiveness::Alive;
}

}  // namespace hare::net
