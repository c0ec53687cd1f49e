#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "hare/protocol_types.hpp"
#include "hare/units.hpp"

namespace hare::transport {

// ---------------------------------------------------------------------------
// Poisoning
// ---------------------------------------------------------------------------

enum class PoisonCause : std::uint8_t {
  None = 0,
  ReceivedPoisonedPacket,
  MissingChildPacket,
  IncompleteChildSegments,
};

inline const char* poison_cause_name(PoisonCause c) {
  switch (c) {
    case PoisonCause::None: return "none";
    case PoisonCause::ReceivedPoisonedPacket: return "received_poisoned_packet";
    case PoisonCause::MissingChildPacket: return "missing_child_packet";
    case PoisonCause::IncompleteChildSegments: return "incomplete_child_segments";
  }
  return "?";
}

struct PoisonState {
  bool poisoned = false;
  PoisonCause cause = PoisonCause::None;
};

// What a parent saw from one expected child during the current window.
struct ChildWindowStatus {
  NetworkAddress child;
  bool heard_anything = false;
  bool stream_complete = false;
};

// Evaluated right before the station's own transmission: part of a
// poisoned path, a silent child, or a segment-incomplete child all poison
// the outgoing packet.
inline PoisonState evaluate_poison(bool received_poisoned_packet,
                                   const std::vector<ChildWindowStatus>& expected_children) {
  if (received_poisoned_packet) return {true, PoisonCause::ReceivedPoisonedPacket};
  for (const auto& c : expected_children)
    if (!c.heard_anything) return {true, PoisonCause::MissingChildPacket};
  for (const auto& c : expected_children)
    if (!c.stream_complete) return {true, PoisonCause::IncompleteChildSegments};
  return {false, PoisonCause::None};
}

// ---------------------------------------------------------------------------
// End-to-end ACK
// ---------------------------------------------------------------------------

struct E2eAckMessage {
  std::vector<NetworkAddress> acked;  // sorted by address
};

// The gateway lists exactly the stations whose payload bytes it holds;
// `expected` is the uplink traffic it compares against (the associated set
// at the phase start), which determines who still counts as missing.
inline E2eAckMessage build_e2e_ack(const std::set<NetworkAddress>& held_sources,
                                   const std::set<NetworkAddress>& /*expected*/) {
  E2eAckMessage msg;
  msg.acked.assign(held_sources.begin(), held_sources.end());
  return msg;
}

// ---------------------------------------------------------------------------
// Awake / sleep decision at a window boundary
// ---------------------------------------------------------------------------

enum class AwakeDecision : std::uint8_t { StayAwake, Sleep };

// Taken by every station when the e2e ACK ends window `windows_done`
// (1-based). A station sleeps when nothing it is responsible for is still
// pending: its parent acknowledged all outgoing data and no poison
// condition fired. Once asleep it stays asleep until the next primary.
inline AwakeDecision awake_decision(bool all_pending_acked, bool poisoned, int windows_done,
                                    int total_windows) {
  if (windows_done >= total_windows) return AwakeDecision::Sleep;
  if (all_pending_acked && !poisoned) return AwakeDecision::Sleep;
  return AwakeDecision::StayAwake;
}

// ---------------------------------------------------------------------------
// Distributed cache
// ---------------------------------------------------------------------------

struct CacheEntry {
  std::vector<PayloadItem> items;
  std::vector<std::uint8_t> bytes;
  SimTime committed_at = 0;
};

// Custody storage at a parent: one entry per child whose complete stream
// was link-acknowledged, held until the gateway's e2e ACK covers every
// source in it or the data phase ends.
class CacheStore {
 public:
  explicit CacheStore(std::size_t capacity_bytes = 8 * 1024) : capacity_(capacity_bytes) {}

  // Idempotent per child: a duplicate stream overwrites its previous
  // entry. Returns children evicted (oldest first) if capacity overflows.
  std::vector<NetworkAddress> commit(NetworkAddress child, std::vector<PayloadItem> items,
                                     std::vector<std::uint8_t> bytes, SimTime now) {
    entries_[child] = CacheEntry{std::move(items), std::move(bytes), now};
    std::vector<NetworkAddress> evicted;
    while (total_bytes() > capacity_ && entries_.size() > 1) {
      auto oldest = entries_.begin();
      for (auto it = entries_.begin(); it != entries_.end(); ++it)
        if (it->second.committed_at < oldest->second.committed_at) oldest = it;
      if (oldest->first == child && entries_.size() == 1) break;
      evicted.push_back(oldest->first);
      entries_.erase(oldest);
    }
    return evicted;
  }

  // Drops entries whose every source the gateway now acknowledges.
  std::vector<NetworkAddress> clear_covered(const std::set<NetworkAddress>& e2e_acked) {
    std::vector<NetworkAddress> cleared;
    for (auto it = entries_.begin(); it != entries_.end();) {
      bool covered = std::all_of(it->second.items.begin(), it->second.items.end(),
                                 [&](const PayloadItem& i) { return e2e_acked.contains(i.source); });
      if (covered) {
        cleared.push_back(it->first);
        it = entries_.erase(it);
      } else {
        ++it;
      }
    }
    return cleared;
  }

  void clear_all() { entries_.clear(); }

  std::size_t total_bytes() const {
    std::size_t n = 0;
    for (const auto& [c, e] : entries_) n += e.bytes.size();
    return n;
  }

  const std::map<NetworkAddress, CacheEntry>& entries() const { return entries_; }
  bool holds(NetworkAddress child) const { return entries_.contains(child); }

 private:
  std::size_t capacity_;
  std::map<NetworkAddress, CacheEntry> entries_;
};

// ---------------------------------------------------------------------------
// Retransmission planning
// ---------------------------------------------------------------------------

struct RetransmissionPlan {
  std::vector<std::uint8_t> resend_segments;  // unacknowledged indices
  bool append_cached = false;                 // new custody data joins the stream
};

// A missing link ACK means the whole stream goes again; a bitmap keeps
// only the holes. Cached child data not yet covered upstream is appended
// as fresh segments.
inline RetransmissionPlan plan_retransmission(std::optional<std::uint64_t> link_ack_bitmap,
                                              std::uint8_t segment_count,
                                              bool have_uncovered_cache) {
  RetransmissionPlan plan;
  for (std::uint8_t i = 0; i < segment_count; ++i) {
    bool acked = link_ack_bitmap && ((*link_ack_bitmap >> i) & 1ULL);
    if (!acked) plan.resend_segments.push_back(i);
  }
  plan.append_cached = have_uncovered_cache;
  return plan;
}

}  // namespace hare::transport
