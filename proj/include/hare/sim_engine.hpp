#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "hare/energy_model.hpp"
#include "hare/mac_layer.hpp"
#include "hare/network_layer.hpp"
#include "hare/protocol_types.hpp"
#include "hare/radio_medium.hpp"
#include "hare/rng.hpp"
#include "hare/sim_scenario.hpp"
#include "hare/trace.hpp"
#include "hare/transport_layer.hpp"
#include "hare/units.hpp"

namespace hare::sim {

// ---------------------------------------------------------------------------
// Event queue
// ---------------------------------------------------------------------------

class EventQueue {
 public:
  using Handler = std::function<void()>;

  void schedule(SimTime t, Handler h) { heap_.push(Item{t, seq_++, std::move(h)}); }
  bool empty() const { return heap_.empty(); }

  Handler pop(SimTime& t) {
    Item item = std::move(const_cast<Item&>(heap_.top()));
    heap_.pop();
    t = item.t;
    return std::move(item.h);
  }

 private:
  struct Item {
    SimTime t;
    std::uint64_t seq;  // insertion order breaks time ties deterministically
    Handler h;
    bool operator>(const Item& o) const { return t != o.t ? t > o.t : seq > o.seq; }
  };
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap_;
  std::uint64_t seq_ = 0;
};

// ---------------------------------------------------------------------------
// Streams
// ---------------------------------------------------------------------------

enum class RadioMode : std::uint8_t { Sleep = 0, Rx = 1, Tx = 2 };

struct StreamItemMeta {
  PayloadItem item;
  std::uint32_t offset = 0;  // into the aggregate stream
};

// Sender-side outgoing stream for one data phase. Built from own data plus
// cached child payloads; data cached later appends fresh segments so
// acknowledged segment boundaries never move.
struct OutgoingStream {
  std::vector<std::uint8_t> bytes;
  std::vector<StreamItemMeta> items;
  std::vector<mac::Segment> segments;
  std::vector<bool> acked;

  bool empty() const { return segments.empty(); }

  bool all_acked() const {
    for (bool a : acked)
      if (!a) return false;
    return true;
  }

  std::vector<int> pending() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < segments.size(); ++i)
      if (!acked[i]) out.push_back(static_cast<int>(i));
    return out;
  }

  void append(const std::vector<PayloadItem>& add_items, const std::vector<std::uint8_t>& add_bytes,
              int max_payload) {
    std::uint32_t base = static_cast<std::uint32_t>(bytes.size());
    std::uint32_t off = 0;
    for (const auto& it : add_items) {
      items.push_back({it, base + off});
      off += it.length;
    }
    check(off == add_bytes.size(), "item lengths disagree with payload bytes");
    bytes.insert(bytes.end(), add_bytes.begin(), add_bytes.end());
    auto tail = mac::segment_stream(add_bytes, max_payload);
    std::size_t first = segments.size();
    if (first + tail.size() > mac::kMaxSegments)
      throw std::length_error("stream exceeds the ack bitmap width");
    for (auto& seg : tail) {
      seg.index = static_cast<std::uint8_t>(first + seg.index);
      seg.stream_offset += base;
      segments.push_back(std::move(seg));
      acked.push_back(false);
    }
    std::uint8_t count = static_cast<std::uint8_t>(segments.size());
    for (auto& seg : segments) seg.count = count;
  }

  void mark_acked(std::uint64_t bitmap) {
    for (std::size_t i = 0; i < segments.size(); ++i)
      if ((bitmap >> i) & 1ULL) acked[i] = true;  // sticky
  }
};

// Receiver-side view of one child's stream. A stream may grow mid-phase
// when the child appends newly cached data, so completion and custody
// commits are tracked against the highest advertised segment count.
struct InboundStream {
  mac::SegmentAssembly assembly;
  std::vector<StreamItemMeta> item_table;  // latest table advertised by the child
  bool heard_this_window = false;
  bool new_segments_this_window = false;
  bool last_frame_poisoned = false;
  std::uint8_t committed_count = 0;  // segment count at the last custody commit
  double last_rssi = 0.0;
};

struct NodeState {
  int idx = 0;
  bool is_gw = false;
  HardwareId hw_id = 0;
  Rng rng;
  double drift_ppm = 0.0;

  bool powered = true;
  bool dead = false;

  // radio & energy
  RadioMode radio = RadioMode::Sleep;
  SimTime radio_since = 0;
  int radio_tx_level = -1;
  energy::EnergyLedger ledger;
  bool cpu_busy = false;
  SimTime cpu_since = 0;
  SimTime cpu_busy_until = 0;
  SimTime rx_hold_until = 0;    // reception in progress (duty sampling pauses)
  SimTime listen_until = 0;     // end of the current listening assignment
  bool duty_listening = false;  // X-MAC: sampling instead of continuous RX
  SimTime sample_phase = 0;     // offset of this node's sampling grid

  radio::TxPowerLevel level = radio::TxPowerLevel::max();

  // association
  bool associated = false;
  NetworkAddress addr;
  int ring = 0;
  NetworkAddress parent;
  std::vector<NetworkAddress> children;  // confirmed, sorted
  SimTime associated_since = -1;
  SimTime last_beacon_heard = 0;
  int last_primary_index = 0;
  bool scanning = true;  // powered but not yet synchronized to any beacon
  double last_beacon_rssi = -200.0;
  int ack_silent_phases = 0;  // phases in a row with pending data and no link ack

  // association-turn scratch
  bool requesting = false;
  std::optional<radio::TxPowerLevel> responder_saved_level;
  bool gained_child_this_turn = false;
  std::vector<net::CandidateInfo> turn_candidates;
  int pending_turn = -1;

  // data-phase state
  int phase_beacon = -1;
  bool phase_stats = false;
  int phase_num_rings = 0;
  bool participating = false;
  bool heard_link_ack_this_phase = false;
  OutgoingStream out;
  bool out_built = false;
  std::map<NetworkAddress, std::size_t> appended_counts;  // child items already in `out`
  std::map<NetworkAddress, InboundStream> inbound;
  transport::CacheStore cache{8 * 1024};
  std::optional<PayloadItem> own_item;
  std::vector<std::uint8_t> own_bytes;
  bool received_poisoned_this_window = false;
  bool e2e_covered = false;  // latest e2e ack covers everything we carry
  transport::PoisonState poison;
  std::vector<RssiControl> window_requests;             // requests others made of us
  std::map<std::uint8_t, RssiControl> request_to_peer;  // requests we make of others
  bool sent_this_window = false;

  bool alive() const { return powered && !dead; }
};

// ---------------------------------------------------------------------------
// Run results
// ---------------------------------------------------------------------------

struct RunResult {
  trace::Trace trace;
  std::vector<energy::EnergyLedger> ledgers;
  std::vector<NetworkAddress> final_addresses;  // host 255 = unassociated
  net::RoutingTable final_table;
  SimTime end_time = 0;
  double max_clock_skew_us = 0.0;
  std::uint64_t events_processed = 0;
};

// ---------------------------------------------------------------------------
// World
// ---------------------------------------------------------------------------

class World {
 public:
  explicit World(Scenario scenario) : scn_(std::move(scenario)) {
    auto errs = scn_.validate();
    if (!errs.empty()) throw std::invalid_argument("scenario invalid: " + errs.front());
    medium_ = radio::Medium(scn_.placements, scn_.channel, scn_.errors, scn_.seed);
    horizon_ = scn_.end_time();
    turn_plan_ = scn_.effective_turn_plan();
    weights_ = scn_.protocol.routing_weights;
    int n = static_cast<int>(scn_.placements.size());
    nodes_.resize(n);
    for (int i = 0; i < n; ++i) {
      auto& node = nodes_[i];
      node.idx = i;
      node.is_gw = (i == 0);
      node.hw_id = static_cast<HardwareId>(1000 + i);
      node.rng = Rng(scn_.seed, static_cast<std::uint64_t>(i));
      node.drift_ppm = scn_.timing.clock_drift_ppm;
      node.cache = transport::CacheStore(scn_.cache_capacity_bytes);
      node.sample_phase = static_cast<SimTime>(node.rng.uniform(
          static_cast<std::uint64_t>(std::max<SimTime>(1, scn_.xmac.wake_interval))));
    }
  }

  const Scenario& scenario() const { return scn_; }

  RunResult run() {
    bootstrap();
    SimTime t = 0;
    while (!queue_.empty()) {
      auto h = queue_.pop(t);
      check(t >= now_, "event queue went backwards");
      now_ = t;
      h();
      if (++events_ > kEventBudget) throw std::runtime_error("watchdog: event budget exhausted");
    }
    finalize(horizon_);
    RunResult res;
    res.trace = std::move(trace_);
    res.ledgers.reserve(nodes_.size());
    for (auto& n : nodes_) res.ledgers.push_back(n.ledger);
    for (auto& n : nodes_)
      res.final_addresses.push_back(n.associated ? n.addr : NetworkAddress{prefix_, 255});
    res.final_table = table_;
    res.end_time = horizon_;
    res.max_clock_skew_us = clock_sync_check();
    res.events_processed = events_;
    return res;
  }

  // Max deviation between any station's next-primary estimate and the
  // gateway's actual schedule, in microseconds.
  double clock_sync_check() const {
    double worst = 0.0;
    for (const auto& n : nodes_) {
      if (n.is_gw || !n.alive() || n.scanning) continue;
      double err = std::abs(n.drift_ppm) * 1e-6 * static_cast<double>(scn_.protocol.t_p);
      worst = std::max(worst, err);
    }
    return worst;
  }

 private:
  static constexpr std::uint64_t kEventBudget = 200'000'000;

  // ---- bootstrap and beacons ----

  void bootstrap() {
    for (auto& n : nodes_) {
      if (n.is_gw) {
        if (xmac()) {
          // the gateway runs the same duty-cycled MAC; its energy is mains
          // but its sampling grid decides when senders stop strobing
          n.duty_listening = true;
          schedule_sample(n, next_sample_at(n, 0));
        } else {
          n.listen_until = horizon_;  // no duty cycling: always receptive
          set_radio(n, RadioMode::Rx);
        }
      } else {
        n.scanning = true;
        n.listen_until = horizon_;  // scan until the first beacon is heard
        set_radio(n, RadioMode::Rx);
        arm_self_disassociation(n);
      }
    }
    for (int i = 1; i <= scn_.beacons.count; ++i) {
      SimTime t = scn_.beacon_time(i);
      schedule(t, [this, i] { gw_emit_primary(i); });
      for (int j = 1; j <= scn_.protocol.k_s; ++j) {
        SimTime ts = t + j * scn_.protocol.t_s();
        if (ts < horizon_) schedule(ts, [this, i, j] { gw_emit_secondary(i, j); });
      }
    }
    for (const auto& f : scn_.faults) {
      SimTime t = scn_.beacon_time(f.after_beacon) + scn_.protocol.t_p * 3 / 4;
      schedule(t, [this, f] { apply_fault(f.node); });
    }
  }

  void gw_emit_primary(int index) {
    auto& gw = nodes_[0];
    cpu_work(gw);
    bool assoc = scn_.beacons.is_association(index);
    bool stats = scn_.beacons.is_statistics(index);
    turn_joiners_.clear();
    if (!assoc) ++data_seq_;

    // the disassociation sweep runs while composing every primary beacon
    auto removed = table_.disassociation_sweep(data_seq_, scn_.protocol.n_pd);
    std::vector<std::uint8_t> roster;
    for (const auto& e : removed) {
      roster.push_back(e.sta.host);
      allocator_.release(e.hw_id);
      trace_.emit({now_, 0, trace::Ev::SweepRemove, e.sta.host, index, e.hw_id - 1000});
    }

    for (const auto& [addr, e] : table_.entries())
      trace_.emit({now_, -1, trace::Ev::RouteDump, index, addr.host, e.parent.host, e.ring,
                   e.hw_id - 1000});

    if (assoc && scn_.protocol.renew_all_on_assoc) {
      // routing starts afresh; stations keep their address allocations
      table_.clear();
    }

    int announced_rings = std::max(1, table_.max_ring());
    announced_rings_ = announced_rings;

    Frame b;
    b.kind = assoc ? FrameKind::PrimaryBeaconAssoc : FrameKind::PrimaryBeaconData;
    b.src = NetworkAddress::gateway(prefix_);
    b.dst = NetworkAddress::broadcast(prefix_);
    b.beacon_index = static_cast<std::uint16_t>(index);
    b.timestamp = now_;
    b.next_primary_in = scn_.protocol.t_p;
    b.stats_request = stats;
    b.num_rings = static_cast<std::uint8_t>(announced_rings);
    b.weights = scn_.protocol.routing_weights;
    b.roster = roster;
    trace_.emit({now_, 0, trace::Ev::BeaconTx, index, static_cast<std::int64_t>(b.kind), stats, 0,
                 0, 0.0, trace::host_list(roster)});
    TxPlan plan = plan_tx(gw, b, now_);
    execute_tx(gw, b, radio::TxPowerLevel::max(), plan);

    if (assoc)
      schedule_association_phase(index);
    else
      schedule_data_phase(index, stats);
  }

  void gw_emit_secondary(int primary_index, int j) {
    auto& gw = nodes_[0];
    cpu_work(gw);
    Frame b;
    b.kind = FrameKind::SecondaryBeacon;
    b.src = NetworkAddress::gateway(prefix_);
    b.dst = NetworkAddress::broadcast(prefix_);
    b.beacon_index = static_cast<std::uint16_t>(primary_index);
    b.timestamp = now_;
    b.next_primary_in = scn_.beacon_time(primary_index + 1) - now_;
    b.num_rings = static_cast<std::uint8_t>(std::max(1, table_.max_ring()));
    b.weights = scn_.protocol.routing_weights;
    trace_.emit({now_, 0, trace::Ev::BeaconTx, primary_index, static_cast<std::int64_t>(b.kind),
                 0, j});
    TxPlan plan = plan_tx(gw, b, now_);
    execute_tx(gw, b, radio::TxPowerLevel::max(), plan);
  }

  // Synchronized stations wake shortly before the next expected beacon:
  // duty sampling through the guard, then solid RX around the beacon body.
  void schedule_beacon_listen(NodeState& n, SimTime beacon_at) {
    SimTime drift_err = static_cast<SimTime>(std::abs(n.drift_ppm) * 1e-6 *
                                             static_cast<double>(beacon_at - n.last_beacon_heard));
    SimTime wake = beacon_at - scn_.timing.beacon_guard - drift_err;
    SimTime solid_from = beacon_at - ms(10) - drift_err;
    SimTime until = beacon_at + scn_.timing.airtime(128) + scn_.timing.beacon_grace + drift_err;
    schedule(wake, [this, idx = n.idx, solid_from, until] {
      auto& node = nodes_[idx];
      if (!node.alive() || node.scanning) return;
      begin_listen(node, solid_from);
      hold_rx(node, solid_from, until);
    });
  }

  // ---- radio / energy bookkeeping ----

  void account_radio(NodeState& n, SimTime t) {
    SimTime span = t - n.radio_since;
    if (span <= 0) {
      n.radio_since = t;
      return;
    }
    switch (n.radio) {
      case RadioMode::Sleep: n.ledger.t_sl += span; break;
      case RadioMode::Rx: n.ledger.t_rx += span; break;
      case RadioMode::Tx: n.ledger.t_tx[n.radio_tx_level] += span; break;
    }
    n.radio_since = t;
  }

  void set_radio(NodeState& n, RadioMode mode, int tx_level = -1) {
    if (n.radio == mode && (mode != RadioMode::Tx || tx_level == n.radio_tx_level)) return;
    account_radio(n, now_);
    n.radio = mode;
    n.radio_tx_level = mode == RadioMode::Tx ? tx_level : -1;
    trace_.emit({now_, n.idx, trace::Ev::RadioState, static_cast<std::int64_t>(mode),
                 n.radio_tx_level});
  }

  void cpu_work(NodeState& n) {
    if (!n.alive()) return;
    SimTime cost = scn_.timing.cpu_event_cost;
    if (n.cpu_busy) {
      n.cpu_busy_until = std::max(n.cpu_busy_until, now_ + cost);
      return;
    }
    n.ledger.t_lpm += now_ - n.cpu_since;
    n.cpu_busy = true;
    n.cpu_since = now_;
    n.cpu_busy_until = now_ + cost;
    trace_.emit({now_, n.idx, trace::Ev::CpuState, 1});
    schedule_cpu_idle(n);
  }

  void schedule_cpu_idle(NodeState& n) {
    SimTime at = n.cpu_busy_until;
    schedule(at, [this, idx = n.idx, at] {
      auto& node = nodes_[idx];
      if (!node.cpu_busy) return;
      if (node.cpu_busy_until > at) {
        schedule_cpu_idle(node);
        return;
      }
      node.ledger.t_cpu += now_ - node.cpu_since;
      node.cpu_busy = false;
      node.cpu_since = now_;
      trace_.emit({now_, node.idx, trace::Ev::CpuState, 0});
    });
  }

  bool xmac() const { return scn_.protocol.mac == MacModel::XMac; }

  // Under X-MAC the duty-cycle layer owns the radio whenever nothing more
  // specific does: synchronized stations sample the channel around the
  // clock, which is where most of their radio budget goes.
  void resume_idle(NodeState& n) {
    if (!xmac() || !n.alive() || n.scanning) return;
    if (n.duty_listening) return;
    n.duty_listening = true;
    schedule_sample(n, next_sample_at(n, now_));
  }

  void redraw_sample_phase(NodeState& n) {
    // wake timers drift apart between windows; grids must not stay aligned
    n.sample_phase = static_cast<SimTime>(
        n.rng.uniform(static_cast<std::uint64_t>(std::max<SimTime>(1, scn_.xmac.wake_interval))));
  }

  // Listening assignment until `until`: NULLMAC holds the radio in RX,
  // X-MAC keeps riding its sampling grid.
  void begin_listen(NodeState& n, SimTime until) {
    if (!n.alive() || until <= now_) return;
    n.listen_until = std::max(n.listen_until, until);
    if (!xmac() || n.is_gw) {
      set_radio(n, RadioMode::Rx);
      SimTime end = n.listen_until;
      schedule(end, [this, idx = n.idx, end] {
        auto& node = nodes_[idx];
        if (!node.alive() || (node.is_gw && !xmac())) return;
        if (node.listen_until > end || node.rx_hold_until > now_) return;
        if (node.radio == RadioMode::Rx) set_radio(node, RadioMode::Sleep);
        resume_idle(node);
      });
      return;
    }
    resume_idle(n);
  }

  SimTime next_sample_at(const NodeState& n, SimTime from) const {
    SimTime w = scn_.xmac.wake_interval;
    SimTime k = (from - n.sample_phase) / w;
    SimTime t = n.sample_phase + k * w;
    while (t < from) t += w;
    return t;
  }

  void schedule_sample(NodeState& n, SimTime at) {
    schedule(at, [this, idx = n.idx] {
      auto& node = nodes_[idx];
      if (!node.alive() || !node.duty_listening) return;
      if (node.rx_hold_until > now_ || node.radio == RadioMode::Tx) {
        schedule_sample(node, next_sample_at(node, std::max(node.rx_hold_until, now_ + 1)));
        return;
      }
      set_radio(node, RadioMode::Rx);
      SimTime off = now_ + scn_.xmac.sample_duration;
      schedule(off, [this, idx] {
        auto& node2 = nodes_[idx];
        if (!node2.alive()) return;
        if (node2.rx_hold_until > now_ || node2.radio != RadioMode::Rx) return;
        set_radio(node2, RadioMode::Sleep);
      });
      schedule_sample(node, next_sample_at(node, now_ + 1));
    });
  }

  // Hold the radio solidly in RX through an incoming frame, then fall back
  // to whatever listening mode was active.
  void hold_rx(NodeState& n, SimTime from, SimTime until) {
    if (!n.alive() || until <= now_) return;
    n.rx_hold_until = std::max(n.rx_hold_until, until);
    schedule(from, [this, idx = n.idx] {
      auto& node = nodes_[idx];
      if (!node.alive() || node.radio == RadioMode::Tx) return;
      if (node.rx_hold_until <= now_) return;
      set_radio(node, RadioMode::Rx);
    });
    schedule(until, [this, idx = n.idx, until] {
      auto& node = nodes_[idx];
      if (!node.alive()) return;
      if (node.rx_hold_until > until || node.radio != RadioMode::Rx) return;
      bool keep_rx = !xmac() && node.listen_until > now_;
      if (keep_rx) return;
      set_radio(node, RadioMode::Sleep);
      resume_idle(node);
    });
  }

  // Protocol-level sleep: drop every listening assignment. A NULLMAC radio
  // goes dark; an X-MAC radio falls back to duty sampling.
  void force_sleep(NodeState& n) {
    n.listen_until = now_;
    n.rx_hold_until = now_;
    n.duty_listening = false;
    if (n.radio == RadioMode::Rx) set_radio(n, RadioMode::Sleep);
    resume_idle(n);
  }

  // ---- transmission plumbing ----

  struct TxPlan {
    SimTime strobe_start = 0;  // == frame_start when no preamble is needed
    SimTime frame_start = 0;
    SimTime frame_end = 0;
  };

  // Frame timing for a sender whose CCA cleared at `cca_clear`. Beacons,
  // e2e acks and link acks run at scheduled instants their receivers
  // already cover in solid RX; everything else is strobed under X-MAC:
  // unicast until the addressee's next sample, broadcast for a full wake
  // interval so every sampler catches it.
  TxPlan plan_tx(const NodeState& sender, const Frame& f, SimTime cca_clear) {
    (void)sender;
    SimTime start = cca_clear + scn_.csma.turnaround;
    SimTime airtime = scn_.timing.airtime(wire_length(f));
    TxPlan plan;
    plan.strobe_start = start;
    plan.frame_start = start;
    // association traffic happens inside turns where every participant
    // holds solid RX, so like beacons, link acks and e2e acks it needs no
    // preamble; only in-slot data must strobe for sampling receivers
    bool scheduled_kind = is_beacon(f.kind) || f.kind == FrameKind::E2eAck ||
                          f.kind == FrameKind::LinkAck || is_association_frame(f.kind);
    if (xmac() && !scheduled_kind) {
      int rx_idx = -1;
      if (f.kind == FrameKind::DiscoveryResponse)
        rx_idx = node_by_hw(f.hw_id);
      else if (!f.broadcast())
        rx_idx = node_by_addr(f.dst);
      if (rx_idx < 0) {
        plan.frame_start = start + scn_.xmac.wake_interval;
      } else {
        const auto& rx = nodes_[rx_idx];
        bool needs_strobe = rx.duty_listening && rx.rx_hold_until <= start &&
                            rx.radio != RadioMode::Rx;
        plan.frame_start = needs_strobe ? std::max(next_sample_at(rx, start), start) : start;
      }
    }
    plan.frame_end = plan.frame_start + airtime;
    return plan;
  }

  void execute_tx(NodeState& sender, Frame f, radio::TxPowerLevel power, const TxPlan& plan) {
    auto tx = medium_.begin_tx(sender.idx, f, power.dbm(), plan.strobe_start, plan.frame_end,
                               sender.rng, plan.frame_start);

    schedule(plan.strobe_start, [this, idx = sender.idx, lvl = power.index, tx] {
      auto& n = nodes_[idx];
      if (!n.alive()) return;
      trace_.emit({now_, idx, trace::Ev::FrameTx, static_cast<std::int64_t>(tx.frame.kind),
                   tx.frame.dst.host, tx.frame.beacon_index,
                   (static_cast<std::int64_t>(tx.frame.segment_index) << 8) |
                       tx.frame.segment_count,
                   lvl, tx.frame.poison ? 1.0 : 0.0,
                   tx.frame.kind == FrameKind::E2eAck ? trace::host_list(tx.frame.acked_hosts)
                                                      : std::string()});
      set_radio(n, RadioMode::Tx, lvl);
    });

    // pull listeners into RX for the frame body
    if (xmac()) {
      int addressee = -1;
      if (f.kind == FrameKind::DiscoveryResponse)
        addressee = node_by_hw(f.hw_id);
      else if (!f.broadcast())
        addressee = node_by_addr(f.dst);
      if (plan.frame_start > plan.strobe_start) {
        for (auto& rx : nodes_) {
          if (rx.idx == sender.idx || !rx.alive() || !rx.duty_listening) continue;
          if (!medium_.audible(sender.idx, rx.idx, power.dbm())) continue;
          SimTime catch_at = next_sample_at(rx, plan.strobe_start);
          if (catch_at > plan.frame_start) continue;
          // overhearers check the preamble's address and drop out; only
          // the addressee (or everyone, for a broadcast) rides it out
          bool mine = f.broadcast() || rx.idx == addressee;
          hold_rx(rx, catch_at, mine ? plan.frame_end + ms(5) : catch_at + ms(10));
        }
      }
      if (addressee >= 0 && addressee != sender.idx) {
        auto& rx = nodes_[addressee];
        if (rx.alive() && (rx.duty_listening || rx.rx_hold_until > now_))
          hold_rx(rx, plan.frame_start, plan.frame_end + ms(5));
      }
    }

    schedule(plan.frame_end, [this, idx = sender.idx, tx] {
      // resolve first: overlapping records must still be on the books
      if (!aborted_.contains({idx, tx.end})) {
        resolve_deliveries(tx);
        medium_.end_tx(idx, tx.end);
      } else {
        aborted_.erase({idx, tx.end});
      }
      auto& n = nodes_[idx];
      if (!n.alive()) return;
      if (n.radio == RadioMode::Tx) {
        bool keep_rx = (!xmac() && n.listen_until > now_) || n.rx_hold_until > now_;
        set_radio(n, keep_rx ? RadioMode::Rx : RadioMode::Sleep);
        resume_idle(n);
      }
    });
  }

  bool link_blocked(int tx, int rx, int beacon, int window) const {
    for (const auto& lb : scn_.link_blocks)
      if (lb.tx_node == tx && lb.rx_node == rx && lb.beacon == beacon && lb.window == window)
        return true;
    return false;
  }

  void resolve_deliveries(const radio::Transmission& tx) {
    for (auto& rx : nodes_) {
      if (rx.idx == tx.tx_node || !rx.alive()) continue;
      bool intended = tx.frame.broadcast() || node_by_addr(tx.frame.dst) == rx.idx ||
                      (tx.frame.kind == FrameKind::DiscoveryResponse && rx.hw_id == tx.frame.hw_id);
      if (!intended) continue;
      // half-duplex: the radio must cover the whole frame body in RX
      bool covered = rx.radio == RadioMode::Rx && rx.radio_since <= tx.body_start;
      if (!covered) continue;
      auto outcome = medium_.resolve(tx, rx.idx);
      if (outcome.kind == radio::DeliveryKind::Delivered && is_data_frame(tx.frame.kind) &&
          link_blocked(tx.tx_node, rx.idx, tx.frame.beacon_index, tx.frame.window_index))
        outcome.kind = radio::DeliveryKind::InjectedDrop;
      if (outcome.kind == radio::DeliveryKind::Delivered) {
        trace_.emit({now_, rx.idx, trace::Ev::FrameRx, static_cast<std::int64_t>(tx.frame.kind),
                     tx.frame.src.host, tx.frame.beacon_index,
                     (static_cast<std::int64_t>(tx.frame.segment_index) << 8) |
                         tx.frame.segment_count,
                     0, outcome.rssi_dbm});
        on_frame(rx, tx.frame, outcome.rssi_dbm);
      } else {
        trace_.emit({now_, rx.idx, trace::Ev::FrameLost, static_cast<std::int64_t>(tx.frame.kind),
                     tx.tx_node, static_cast<std::int64_t>(outcome.kind), 0, 0, outcome.rssi_dbm});
      }
    }
  }

  // ---- frame dispatch ----

  void on_frame(NodeState& n, const Frame& f, double rssi) {
    cpu_work(n);
    switch (f.kind) {
      case FrameKind::PrimaryBeaconAssoc:
      case FrameKind::PrimaryBeaconData:
      case FrameKind::SecondaryBeacon:
        on_beacon(n, f, rssi);
        break;
      case FrameKind::DiscoveryRequest:
        on_discovery_request(n, f, rssi);
        break;
      case FrameKind::DiscoveryResponse:
        on_discovery_response(n, f, rssi);
        break;
      case FrameKind::ParentRequest:
        on_parent_request(n, f);
        break;
      case FrameKind::AssocConfirm:
        on_assoc_confirm(n, f);
        break;
      case FrameKind::AssocSummary:
        break;  // informational broadcast
      case FrameKind::DataSegment:
      case FrameKind::StatisticsPacket:
        on_data_segment(n, f, rssi);
        break;
      case FrameKind::LinkAck:
        on_link_ack(n, f, rssi);
        break;
      case FrameKind::E2eAck:
        on_e2e_ack(n, f);
        break;
    }
  }

  // ---- beacons, sync, self-disassociation ----

  void arm_self_disassociation(NodeState& n) {
    SimTime deadline = n.last_beacon_heard + scn_.protocol.t_d;
    schedule(deadline, [this, idx = n.idx, deadline] {
      auto& node = nodes_[idx];
      if (!node.alive()) return;
      if (node.last_beacon_heard + scn_.protocol.t_d > deadline) {
        arm_self_disassociation(node);
        return;
      }
      node.dead = true;
      node.associated = false;
      node.participating = false;
      trace_.emit({now_, node.idx, trace::Ev::SelfDisassoc});
      set_radio(node, RadioMode::Sleep);
      node.duty_listening = false;
    });
  }

  void on_beacon(NodeState& n, const Frame& f, double rssi) {
    if (n.is_gw) return;
    bool was_scanning = n.scanning;
    n.last_beacon_heard = now_;
    n.scanning = false;
    n.last_beacon_rssi = rssi;
    trace_.emit({now_, n.idx, trace::Ev::BeaconRx, f.beacon_index,
                 static_cast<std::int64_t>(f.kind)});
    if (was_scanning) force_sleep(n);  // scan over; from now on wake on schedule

    SimTime frame_started = now_ - scn_.timing.airtime(wire_length(f));
    SimTime next = frame_started + scn_.protocol.t_s();
    if (next < horizon_) schedule_beacon_listen(n, next);

    if (f.kind == FrameKind::SecondaryBeacon) return;
    n.last_primary_index = f.beacon_index;
    weights_ = f.weights;

    // roster handling: a rostered self or parent breaks the path; rostered
    // children stop being expected
    for (auto host : f.roster) {
      NetworkAddress a{prefix_, host};
      if (n.associated && a == n.addr) {
        n.associated = false;
        trace_.emit({now_, n.idx, trace::Ev::PathBroken, 0, 0, 0, 0, 0, 0.0, "rostered_self"});
      } else if (n.associated && a == n.parent) {
        n.associated = false;
        trace_.emit({now_, n.idx, trace::Ev::PathBroken, 0, 0, 0, 0, 0, 0.0, "rostered_parent"});
      }
      std::erase(n.children, a);
    }

    n.phase_beacon = f.beacon_index;
    reset_phase_state(n);
    if (f.kind == FrameKind::PrimaryBeaconData) {
      n.phase_stats = f.stats_request;
      n.phase_num_rings = f.num_rings;
      if (n.associated && n.ring <= f.num_rings) {
        n.participating = true;
        generate_own_item(n);
      }
    } else if (scn_.protocol.renew_all_on_assoc) {
      n.associated = false;
      n.children.clear();
    }
  }

  void generate_own_item(NodeState& n) {
    PayloadItem item;
    item.source = n.addr;
    item.beacon_index = static_cast<std::uint16_t>(n.phase_beacon);
    item.length = static_cast<std::uint16_t>(n.phase_stats ? scn_.stats_payload_bytes
                                                           : scn_.app_payload_bytes);
    item.statistics = n.phase_stats;
    n.own_item = item;
    n.own_bytes.assign(item.length,
                       static_cast<std::uint8_t>(n.addr.host ^ (n.phase_beacon & 0xff)));
  }

  void reset_phase_state(NodeState& n) {
    n.out = OutgoingStream{};
    n.out_built = false;
    n.appended_counts.clear();
    n.inbound.clear();
    n.cache.clear_all();
    n.own_item.reset();
    n.own_bytes.clear();
    n.received_poisoned_this_window = false;
    n.e2e_covered = false;
    n.poison = transport::PoisonState{};
    n.window_requests.clear();
    n.sent_this_window = false;
    n.heard_link_ack_this_phase = false;
    n.participating = false;
    n.phase_stats = false;
  }

  // ---- association machinery ----

  void schedule_association_phase(int beacon_index) {
    int turns = turn_plan_.turns();
    SimTime base = now_ + scn_.timing.airtime(128) + scn_.timing.phase_gap;
    for (int t = 0; t < turns; ++t) {
      SimTime start = base + t * scn_.timing.assoc_turn;
      SimTime end = start + scn_.timing.assoc_turn;
      schedule(start, [this, beacon_index, t, end] { begin_turn(beacon_index, t, end, false); });
      schedule(end, [this, beacon_index, t] { end_turn(beacon_index, t); });
    }
  }

  // A turn in a network association phase, or (single_turn) the lone turn
  // following a data primary beacon.
  void begin_turn(int beacon_index, int turn, SimTime end, bool single_turn) {
    current_turn_start_ = now_;
    if (xmac()) {
      redraw_sample_phase(nodes_[0]);
      hold_rx(nodes_[0], now_, end);
    }
    // association turns are solid listening periods: the gateway and every
    // associated station may be asked as a candidate or relay a parent
    // request, so they hold RX until the turn closes
    for (auto& n : nodes_) {
      if (!n.alive() || n.is_gw) continue;
      if (xmac() && !n.scanning) redraw_sample_phase(n);
      if (n.associated && n.phase_beacon == beacon_index) {
        begin_listen(n, end);
        hold_rx(n, now_, end);
      }
    }
    for (auto& n : nodes_) {
      if (!n.alive() || n.is_gw || n.associated) continue;
      if (n.phase_beacon != beacon_index || n.scanning) continue;
      int my_turn = single_turn ? turn : net::association_turn(n.last_beacon_rssi, turn_plan_);
      if (my_turn != turn) continue;
      n.requesting = true;
      n.pending_turn = turn;
      n.turn_candidates.clear();
      begin_listen(n, end);
      hold_rx(n, now_, end);
      SimTime jitter = static_cast<SimTime>(n.rng.uniform(
          static_cast<std::uint64_t>(std::max<SimTime>(1, scn_.timing.discovery_jitter))));
      SimTime deadline = end - scn_.timing.select_after - ms(120);
      schedule_with_csma(n.idx, now_ + jitter, deadline, [this, idx = n.idx, end](SimTime cca) {
        send_discovery(nodes_[idx], cca, end);
      });
    }
    if (!single_turn)
      schedule(end - ms(60), [this, beacon_index, turn] { gw_send_summary(beacon_index, turn); });
  }

  void end_turn(int beacon_index, int turn) {
    (void)beacon_index;
    for (auto& n : nodes_) {
      if (!n.alive() || n.is_gw) continue;
      if (n.responder_saved_level) {
        // responders answered at maximum power; the ones not selected as
        // parents fall back to the level they had before
        if (!n.gained_child_this_turn && *n.responder_saved_level != n.level)
          change_level(n, *n.responder_saved_level, "revert_responder");
        n.responder_saved_level.reset();
      }
      n.gained_child_this_turn = false;
      if (n.requesting && n.pending_turn == turn) {
        n.requesting = false;
        if (!n.associated)
          trace_.emit({now_, n.idx, trace::Ev::AssocFail, n.hw_id, 0, 0, 0, 0, 0.0, "no_confirm"});
      }
    }
  }

  void gw_send_summary(int beacon_index, int turn) {
    auto& gw = nodes_[0];
    cpu_work(gw);
    Frame f;
    f.kind = FrameKind::AssocSummary;
    f.src = NetworkAddress::gateway(prefix_);
    f.dst = NetworkAddress::broadcast(prefix_);
    f.beacon_index = static_cast<std::uint16_t>(beacon_index);
    f.turn = static_cast<std::uint8_t>(turn);
    f.acked_hosts = turn_joiners_;
    turn_joiners_.clear();
    transmit_with_csma(gw, f, radio::TxPowerLevel::max(), now_, now_ + ms(55));
  }

  void send_discovery(NodeState& n, SimTime cca_clear, SimTime turn_end) {
    if (!n.alive() || n.associated || !n.requesting) return;
    Frame f;
    f.kind = FrameKind::DiscoveryRequest;
    f.src = NetworkAddress{prefix_, 255};
    f.dst = NetworkAddress::broadcast(prefix_);
    f.hw_id = n.hw_id;
    TxPlan plan = plan_tx(n, f, cca_clear);
    execute_tx(n, f, radio::TxPowerLevel::max(), plan);
    SimTime select_at = std::min(plan.frame_end + scn_.timing.select_after, turn_end - ms(80));
    schedule(select_at, [this, idx = n.idx, turn_end] { select_and_request(nodes_[idx], turn_end); });
  }

  void on_discovery_request(NodeState& n, const Frame& f, double rssi) {
    // Candidates: the gateway and stations associated before this turn
    // began with spare child slots. Every response goes out at maximum
    // power; stations remember their level to fall back to.
    if (!n.is_gw) {
      if (!n.associated || n.associated_since >= current_turn_start_) return;
      if (scn_.protocol.topology == TopologyMode::SingleHop) return;
      if (static_cast<int>(n.children.size()) >= scn_.protocol.max_children) return;
    } else if (scn_.protocol.topology == TopologyMode::MultiHop &&
               table_.child_count(NetworkAddress::gateway(prefix_)) >= scn_.protocol.max_children) {
      return;
    }
    Frame r;
    r.kind = FrameKind::DiscoveryResponse;
    r.src = n.is_gw ? NetworkAddress::gateway(prefix_) : n.addr;
    r.dst = NetworkAddress{prefix_, 254};  // addressed by hardware id
    r.hw_id = f.hw_id;
    r.ring = static_cast<std::uint8_t>(n.is_gw ? 0 : n.ring);
    r.child_count =
        static_cast<std::uint8_t>(n.is_gw ? table_.child_count(NetworkAddress::gateway(prefix_))
                                          : n.children.size());
    r.timestamp = static_cast<SimTime>(rssi * 1000.0);  // reported uplink rssi, milli-dBm

    if (!n.is_gw && !n.responder_saved_level) {
      n.responder_saved_level = n.level;
      if (n.level != radio::TxPowerLevel::max())
        change_level(n, radio::TxPowerLevel::max(), "discovery_response");
      else
        trace_.emit({now_, n.idx, trace::Ev::PowerLevel, n.level.index, n.level.index, 0, 0, 0,
                     0.0, "discovery_response"});
    }

    int rank = n.is_gw ? 0 : n.addr.host;
    SimTime ready = now_ + scn_.timing.response_start + rank * scn_.timing.response_subslot;
    transmit_with_csma(n, r, radio::TxPowerLevel::max(), ready, ready + ms(400));
  }

  void on_discovery_response(NodeState& n, const Frame& f, double rssi) {
    if (!n.requesting || f.hw_id != n.hw_id) return;
    net::CandidateInfo c;
    c.address = f.src;
    c.ring = f.ring;
    c.child_count = f.child_count;
    c.rssi_tx_dbm = static_cast<double>(f.timestamp) / 1000.0;
    c.rssi_rx_dbm = rssi;
    c.p_tx_max_dbm = radio::TxPowerLevel::max().dbm();
    n.turn_candidates.push_back(c);
  }

  void select_and_request(NodeState& n, SimTime turn_end) {
    if (!n.alive() || n.associated || !n.requesting) return;
    int cap = scn_.protocol.topology == TopologyMode::SingleHop ? 255 : scn_.protocol.max_children;
    auto choice = net::select_parent(n.turn_candidates, weights_, cap);
    if (!choice) {
      trace_.emit({now_, n.idx, trace::Ev::AssocFail, n.hw_id, 0, 0, 0, 0, 0.0, "no_parent"});
      n.requesting = false;
      return;
    }
    Frame f;
    f.kind = FrameKind::ParentRequest;
    f.src = NetworkAddress{prefix_, 254};
    f.dst = choice->address;
    f.hw_id = n.hw_id;
    f.parent = choice->address;
    transmit_with_csma(n, f, radio::TxPowerLevel::max(), now_, turn_end - ms(40));
  }

  void on_parent_request(NodeState& n, const Frame& f) {
    if (n.is_gw) {
      gw_admit(f);
      return;
    }
    if (!n.associated) return;
    // relay one hop up this station's own path toward the gateway
    Frame g = f;
    g.src = n.addr;
    g.dst = n.parent;
    transmit_with_csma(n, g, n.level, now_, now_ + ms(300));
  }

  void gw_admit(const Frame& f) {
    NetworkAddress parent = f.parent;
    int parent_ring = 0;
    if (!parent.is_gateway()) {
      const auto* pe = table_.find(parent);
      if (pe == nullptr) return;  // the chosen parent vanished meanwhile
      parent_ring = pe->ring;
    }
    if (scn_.protocol.topology == TopologyMode::MultiHop &&
        table_.child_count(parent) >= scn_.protocol.max_children) {
      trace_.emit({now_, 0, trace::Ev::AssocFail, f.hw_id, 0, 0, 0, 0, 0.0, "parent_full"});
      return;
    }
    NetworkAddress addr = allocator_.allocate(f.hw_id);
    net::RoutingTableEntry e;
    e.sta = addr;
    e.parent = parent;
    e.ring = parent_ring + 1;
    e.hw_id = f.hw_id;
    e.last_heard_beacon = data_seq_;
    table_.upsert(e);
    turn_joiners_.push_back(addr.host);

    Frame c;
    c.kind = FrameKind::AssocConfirm;
    c.src = NetworkAddress::gateway(prefix_);
    c.dst = NetworkAddress::broadcast(prefix_);
    c.hw_id = f.hw_id;
    c.parent = parent;
    c.ring = static_cast<std::uint8_t>(e.ring);
    c.acked_hosts = {addr.host};  // the allocated address rides here
    transmit_with_csma(nodes_[0], c, radio::TxPowerLevel::max(), now_, now_ + ms(200));
  }

  void on_assoc_confirm(NodeState& n, const Frame& f) {
    NetworkAddress new_addr{prefix_, f.acked_hosts.empty() ? std::uint8_t(255) : f.acked_hosts[0]};
    if (f.hw_id == n.hw_id && n.requesting) {
      n.associated = true;
      n.addr = new_addr;
      n.parent = f.parent;
      n.ring = f.ring;
      n.children.clear();
      n.associated_since = now_;
      n.requesting = false;
      n.ack_silent_phases = 0;
      if (n.level != radio::TxPowerLevel::max())
        change_level(n, radio::TxPowerLevel::max(), "joined");
      trace_.emit({now_, n.idx, trace::Ev::Assoc, new_addr.host, f.parent.host, f.ring,
                   n.pending_turn, n.hw_id});
      maybe_join_running_phase(n);
      return;
    }
    if (n.associated && f.parent == n.addr) {
      if (std::find(n.children.begin(), n.children.end(), new_addr) == n.children.end()) {
        n.children.push_back(new_addr);
        std::sort(n.children.begin(), n.children.end());
      }
      n.gained_child_this_turn = true;
      // a freshly selected parent starts the link at maximum power
      if (n.level != radio::TxPowerLevel::max())
        change_level(n, radio::TxPowerLevel::max(), "new_child");
    }
  }

  // A station admitted in the turn after a data beacon still owes that
  // phase its payload, provided its ring has a slot in the announced plan.
  void maybe_join_running_phase(NodeState& n) {
    if (n.phase_beacon < 0 || scn_.beacons.is_association(n.phase_beacon)) return;
    if (n.ring > n.phase_num_rings) {
      trace_.emit({now_, n.idx, trace::Ev::Note, 0, 0, 0, 0, 0, 0.0, "ring_beyond_schedule"});
      return;
    }
    n.participating = true;
    generate_own_item(n);
  }

  // ---- CSMA helpers ----

  // Runs the backoff/CCA state machine as events against the live medium;
  // `on_clear` fires at the CCA instant that found the channel idle. On
  // exhaustion the attempt is re-paced until `deadline` runs out.
  void schedule_with_csma(int node_idx, SimTime ready, SimTime deadline,
                          std::function<void(SimTime)> on_clear) {
    if (ready > deadline) return;
    auto session = std::make_shared<mac::CsmaSession>(scn_.csma);
    csma_step(node_idx, ready, deadline, session, std::move(on_clear));
  }

  void csma_step(int node_idx, SimTime at, SimTime deadline,
                 std::shared_ptr<mac::CsmaSession> session, std::function<void(SimTime)> on_clear) {
    auto& n = nodes_[node_idx];
    if (!n.alive()) return;
    SimTime cca_at = at + session->draw_backoff(n.rng);
    if (cca_at > deadline) return;
    schedule(cca_at, [this, node_idx, deadline, session, on_clear = std::move(on_clear)]() mutable {
      auto& node = nodes_[node_idx];
      if (!node.alive()) return;
      if (!medium_.carrier_busy(node_idx, now_)) {
        on_clear(now_);
        return;
      }
      session->on_busy();
      if (!session->exhausted()) {
        csma_step(node_idx, now_, deadline, session, std::move(on_clear));
        return;
      }
      trace_.emit({now_, node_idx, trace::Ev::AccessFailure, 0, current_phase_beacon_,
                   current_window_});
      SimTime pace = scn_.timing.retry_pacing_min +
                     static_cast<SimTime>(node.rng.uniform(static_cast<std::uint64_t>(
                         scn_.timing.retry_pacing_max - scn_.timing.retry_pacing_min + 1)));
      schedule_with_csma(node_idx, now_ + pace, deadline, std::move(on_clear));
    });
  }

  void transmit_with_csma(NodeState& n, const Frame& f, radio::TxPowerLevel power, SimTime ready,
                          SimTime deadline) {
    schedule_with_csma(n.idx, ready, deadline, [this, idx = n.idx, f, power](SimTime cca) {
      auto& node = nodes_[idx];
      if (!node.alive()) return;
      TxPlan plan = plan_tx(node, f, cca);
      execute_tx(node, f, power, plan);
    });
  }

  void change_level(NodeState& n, radio::TxPowerLevel to, const char* reason) {
    if (n.level == to) return;
    trace_.emit({now_, n.idx, trace::Ev::PowerLevel, to.index, n.level.index, 0, 0, 0, 0.0,
                 reason});
    n.level = to;
  }

  // ---- data phase ----

  void schedule_data_phase(int beacon_index, bool stats) {
    SimTime beacon_end = now_ + scn_.timing.airtime(128);
    SimTime turn_start = beacon_end + scn_.timing.phase_gap;
    SimTime turn_end = turn_start + scn_.timing.sta_assoc_turn;
    schedule(turn_start, [this, beacon_index, turn_end] {
      begin_turn(beacon_index, 0, turn_end, /*single_turn=*/true);
    });
    schedule(turn_end, [this, beacon_index] { end_turn(beacon_index, 0); });
    SimTime windows_at = turn_end + scn_.timing.phase_gap;
    schedule(windows_at, [this, beacon_index, stats] { begin_windows(beacon_index, stats); });
  }

  void begin_windows(int beacon_index, bool stats) {
    current_phase_beacon_ = beacon_index;
    current_window_ = -1;
    int rings = announced_rings_;
    phase_schedule_ = mac::build_slot_schedule(rings, scn_.timing.window_duration);
    SimTime slot_len = phase_schedule_.slots.front().end - phase_schedule_.slots.front().start;
    if (slot_len < scn_.timing.ack_tail + ms(40))
      throw std::runtime_error("slot too small for the ack tail; adjust window_duration");
    if (xmac() && slot_len < scn_.timing.ack_tail + scn_.xmac.wake_interval + ms(100))
      throw std::runtime_error("slot too small for the x-mac wake interval; adjust window_duration");

    phase_expected_.clear();
    gw_holds_.clear();
    for (const auto& [addr, e] : table_.entries()) phase_expected_.insert(addr);
    std::vector<std::uint8_t> hosts;
    for (const auto& a : phase_expected_) hosts.push_back(a.host);
    trace_.emit({now_, -1, trace::Ev::PhaseStart, beacon_index, stats, rings,
                 scn_.protocol.windows, 0, 0.0, trace::host_list(hosts)});

    auto& gw = nodes_[0];
    gw.phase_beacon = beacon_index;
    gw.inbound.clear();

    SimTime w_len = scn_.timing.window_duration + scn_.timing.e2e_gap;
    for (int k = 0; k < scn_.protocol.windows; ++k) {
      SimTime w_start = now_ + k * w_len;
      schedule(w_start, [this, beacon_index, k] { begin_window(beacon_index, k); });
      SimTime w_end = w_start + scn_.timing.window_duration;
      schedule(w_end + ms(40), [this, beacon_index, k] { gw_send_e2e(beacon_index, k); });
      schedule(w_start + w_len - us(1), [this, beacon_index, k] { window_boundary(beacon_index, k); });
    }
    schedule(now_ + scn_.protocol.windows * w_len, [this, beacon_index] { phase_end(beacon_index); });
  }

  void begin_window(int beacon_index, int k) {
    current_window_ = k;
    trace_.emit({now_, -1, trace::Ev::WindowStart, beacon_index, k});
    SimTime w0 = now_;
    for (auto& [child, ib] : nodes_[0].inbound) {
      ib.heard_this_window = false;
      ib.new_segments_this_window = false;
    }
    if (xmac()) redraw_sample_phase(nodes_[0]);
    schedule_gw_window(w0);
    for (auto& n : nodes_) {
      if (n.is_gw || !n.alive()) continue;
      if (xmac() && !n.scanning) redraw_sample_phase(n);
      if (!n.participating || n.phase_beacon != beacon_index) continue;
      n.received_poisoned_this_window = false;
      n.sent_this_window = false;
      for (auto& [child, ib] : n.inbound) {
        ib.heard_this_window = false;
        ib.new_segments_this_window = false;
      }
      schedule_sta_window(n, w0);
    }
  }

  std::vector<NetworkAddress> expected_children(const NodeState& n) const {
    std::vector<NetworkAddress> out;
    for (const auto& c : n.children) {
      auto it = n.inbound.find(c);
      if (it == n.inbound.end())
        out.push_back(c);  // never heard this phase
      else if (!it->second.assembly.complete() || it->second.last_frame_poisoned)
        out.push_back(c);
    }
    return out;
  }

  void schedule_sta_window(NodeState& n, SimTime w0) {
    // RX duty in the slot where my children transmit; with every child
    // done or disassociated the whole period is skipped
    auto expected = expected_children(n);
    const auto* rx = n.ring < phase_schedule_.num_rings() ? phase_schedule_.rx_slot(n.ring)
                                                          : nullptr;
    if (rx != nullptr && !expected.empty()) {
      SimTime rx_start = w0 + rx->start;
      SimTime rx_end = w0 + rx->end;
      schedule(rx_start, [this, idx = n.idx, rx_end] {
        auto& node = nodes_[idx];
        if (!node.alive() || !node.participating) return;
        begin_listen(node, rx_end - scn_.timing.ack_tail);
      });
      schedule(rx_end - scn_.timing.ack_tail, [this, idx = n.idx, rx_end] {
        send_link_acks(nodes_[idx], rx_end);
      });
    }

    // TX duty in my ring's slot
    if (n.ring >= 1 && n.ring <= phase_schedule_.num_rings()) {
      const auto& tx = phase_schedule_.tx_slot(n.ring);
      SimTime tx_start = w0 + tx.start;
      SimTime tx_end = w0 + tx.end;
      schedule(tx_start, [this, idx = n.idx, tx_start, tx_end] {
        sta_tx_slot(nodes_[idx], tx_start, tx_end);
      });
    }

    // everyone still in the phase listens for the e2e ack
    SimTime listen_from = w0 + scn_.timing.window_duration + ms(20);
    schedule(listen_from, [this, idx = n.idx, listen_from] {
      auto& node = nodes_[idx];
      if (!node.alive() || !node.participating) return;
      hold_rx(node, listen_from, listen_from + ms(180));
    });
  }

  void schedule_gw_window(SimTime w0) {
    const auto* rx = phase_schedule_.rx_slot(0);
    if (rx == nullptr) return;
    SimTime rx_end = w0 + rx->end;
    schedule(rx_end - scn_.timing.ack_tail, [this, rx_end] { send_link_acks(nodes_[0], rx_end); });
  }

  // Sender behavior inside its TDMA slot.
  void sta_tx_slot(NodeState& n, SimTime slot_start, SimTime slot_end) {
    (void)slot_start;
    if (!n.alive() || !n.participating || n.phase_beacon != current_phase_beacon_) return;
    cpu_work(n);

    build_or_extend_stream(n);
    n.poison = transport::evaluate_poison(n.received_poisoned_this_window, window_child_status(n));
    if (n.poison.poisoned)
      trace_.emit({now_, n.idx, trace::Ev::Poison, static_cast<std::int64_t>(n.poison.cause),
                   current_window_, current_phase_beacon_});

    auto pending = n.out.pending();
    if (pending.empty()) return;  // nothing outstanding: no ack to wait for either

    SimTime data_deadline = slot_end - scn_.timing.ack_tail - ms(5);
    begin_listen(n, xmac() ? data_deadline : slot_end);
    SimTime jitter = static_cast<SimTime>(n.rng.uniform(
        static_cast<std::uint64_t>(std::max<SimTime>(1, scn_.timing.slot_jitter))));
    send_next_segment(n.idx, 0, now_ + jitter, data_deadline, slot_end);
  }

  void hold_for_ack_tail(int node_idx, SimTime slot_end) {
    schedule(std::max(now_, slot_end - scn_.timing.ack_tail), [this, node_idx, slot_end] {
      auto& node = nodes_[node_idx];
      if (!node.alive() || !node.participating) return;
      if (node.out.all_acked()) return;
      hold_rx(node, now_, slot_end);
    });
  }

  void send_next_segment(int node_idx, std::size_t plan_pos, SimTime ready, SimTime data_deadline,
                         SimTime slot_end) {
    auto& n = nodes_[node_idx];
    if (!n.alive() || !n.participating) return;
    auto pending = n.out.pending();
    if (plan_pos >= pending.size()) {
      hold_for_ack_tail(node_idx, slot_end);
      return;
    }
    int seg_idx = pending[plan_pos];
    Frame probe = make_data_frame(n, seg_idx);
    SimTime span = scn_.timing.airtime(wire_length(probe)) + scn_.csma.turnaround +
                   (xmac() ? scn_.xmac.wake_interval : 0);
    if (ready + span > data_deadline) {
      trace_.emit({now_, n.idx, trace::Ev::SlotOverrun, current_phase_beacon_, current_window_,
                   n.ring});
      hold_for_ack_tail(node_idx, slot_end);
      return;
    }
    schedule_with_csma(
        node_idx, ready, data_deadline - span + scn_.csma.turnaround,
        [this, node_idx, plan_pos, seg_idx, data_deadline, slot_end](SimTime cca) {
          auto& node = nodes_[node_idx];
          if (!node.alive() || !node.participating) return;
          Frame f = make_data_frame(node, seg_idx);
          TxPlan plan = plan_tx(node, f, cca);
          if (plan.frame_end > data_deadline) {
            trace_.emit({now_, node.idx, trace::Ev::SlotOverrun, current_phase_beacon_,
                         current_window_, node.ring});
            hold_for_ack_tail(node_idx, slot_end);
            return;
          }
          execute_tx(node, f, node.level, plan);
          node.sent_this_window = true;
          schedule(plan.frame_end + scn_.timing.interframe_gap,
                   [this, node_idx, plan_pos, data_deadline, slot_end] {
                     send_next_segment(node_idx, plan_pos + 1, now_, data_deadline, slot_end);
                   });
        });
  }

  Frame make_data_frame(NodeState& n, int seg_idx) {
    const auto& seg = n.out.segments[seg_idx];
    Frame f;
    f.kind = n.phase_stats ? FrameKind::StatisticsPacket : FrameKind::DataSegment;
    f.src = n.addr;
    f.dst = n.parent;
    f.beacon_index = static_cast<std::uint16_t>(n.phase_beacon);
    f.window_index = static_cast<std::uint8_t>(current_window_);
    f.segment_index = seg.index;
    f.segment_count = static_cast<std::uint8_t>(n.out.segments.size());
    f.poison = n.poison.poisoned;
    f.rssi_control = take_request(n, n.parent.host);
    f.payload_len = static_cast<std::uint16_t>(seg.bytes.size());
    for (const auto& m : n.out.items) f.items.push_back(m.item);
    f.stream_offset = seg.stream_offset;
    return f;
  }

  RssiControl take_request(NodeState& n, std::uint8_t peer_host) {
    auto it = n.request_to_peer.find(peer_host);
    return it == n.request_to_peer.end() ? RssiControl::Keep : it->second;
  }

  // Appends the slice of a cache entry that is not yet in the outgoing
  // stream; entries grow when a child recovers more of its subtree.
  void append_cache_delta(NodeState& n, NetworkAddress child, const transport::CacheEntry& entry,
                          int max_payload) {
    std::size_t done = n.appended_counts[child];
    if (entry.items.size() <= done) return;
    std::vector<PayloadItem> items(entry.items.begin() + done, entry.items.end());
    std::size_t skip = 0;
    for (std::size_t i = 0; i < done; ++i) skip += entry.items[i].length;
    std::vector<std::uint8_t> bytes(entry.bytes.begin() + skip, entry.bytes.end());
    n.out.append(items, bytes, max_payload);
    n.appended_counts[child] = entry.items.size();
  }

  void build_or_extend_stream(NodeState& n) {
    int max_payload = scn_.protocol.max_payload;
    if (!n.out_built) {
      n.out_built = true;
      std::vector<PayloadItem> items;
      std::vector<std::uint8_t> bytes;
      if (n.own_item) {
        items.push_back(*n.own_item);
        bytes.insert(bytes.end(), n.own_bytes.begin(), n.own_bytes.end());
      }
      for (const auto& [child, entry] : n.cache.entries()) {
        for (const auto& it : entry.items) items.push_back(it);
        bytes.insert(bytes.end(), entry.bytes.begin(), entry.bytes.end());
        n.appended_counts[child] = entry.items.size();
      }
      if (!items.empty()) n.out.append(items, bytes, max_payload);
      return;
    }
    // custody acquired since the last transmission joins as new segments
    for (const auto& [child, entry] : n.cache.entries())
      append_cache_delta(n, child, entry, max_payload);
  }

  std::vector<transport::ChildWindowStatus> window_child_status(const NodeState& n) const {
    std::vector<transport::ChildWindowStatus> out;
    for (const auto& c : expected_children(n)) {
      auto it = n.inbound.find(c);
      bool heard = it != n.inbound.end() && it->second.heard_this_window;
      bool complete = it != n.inbound.end() && it->second.assembly.complete();
      out.push_back({c, heard, complete});
    }
    return out;
  }

  void on_data_segment(NodeState& n, const Frame& f, double rssi) {
    bool for_me = n.is_gw ? f.dst.is_gateway() : (n.associated && f.dst == n.addr);
    if (!for_me) return;
    if (!n.is_gw && (!n.participating || f.beacon_index != n.phase_beacon)) return;
    if (n.is_gw && f.beacon_index != current_phase_beacon_) return;

    auto& ib = n.inbound[f.src];
    ib.heard_this_window = true;
    ib.last_frame_poisoned = f.poison;
    ib.last_rssi = rssi;
    if (f.poison) n.received_poisoned_this_window = true;

    bool fresh = ((ib.assembly.bitmap >> f.segment_index) & 1ULL) == 0;
    mac::Segment seg;
    seg.index = f.segment_index;
    seg.count = f.segment_count;
    seg.stream_offset = f.stream_offset;
    seg.bytes.assign(f.payload_len, 0);
    ib.assembly.accept(seg);
    if (fresh) ib.new_segments_this_window = true;
    ib.item_table.clear();
    std::uint32_t off = 0;
    for (const auto& item : f.items) {
      ib.item_table.push_back({item, off});
      off += item.length;
    }

    // power regulation: measure their link, queue our request for them;
    // collect the request they carried about our own level
    n.request_to_peer[f.src.host] =
        mac::rssi_request(rssi, scn_.protocol.rssi_min_dbm, scn_.protocol.rssi_max_dbm);
    n.window_requests.push_back(f.rssi_control);

    if (ib.assembly.complete() && ib.assembly.expected_count > ib.committed_count)
      commit_stream(n, f.src, ib);
    maybe_early_sleep_rx(n);
  }

  void commit_stream(NodeState& n, NetworkAddress child, InboundStream& ib) {
    ib.committed_count = ib.assembly.expected_count;
    std::vector<PayloadItem> items;
    std::vector<std::uint8_t> hosts;
    std::uint32_t total = 0;
    for (const auto& m : ib.item_table) {
      items.push_back(m.item);
      hosts.push_back(m.item.source.host);
      total += m.item.length;
    }
    if (n.is_gw) {
      for (const auto& item : items) {
        auto key = std::pair<std::uint8_t, int>(item.source.host, item.beacon_index);
        if (gw_holds_.contains(key)) {
          trace_.emit({now_, 0, trace::Ev::GwDuplicate, item.source.host, item.beacon_index,
                       current_window_});
        } else {
          gw_holds_.insert(key);
          table_.note_heard(item.source, data_seq_);
          const auto* entry = table_.find(item.source);
          trace_.emit({now_, 0, trace::Ev::GwHold, item.source.host, item.beacon_index,
                       current_window_, item.length, item.statistics,
                       entry ? static_cast<double>(entry->hw_id - 1000) : -1.0});
        }
      }
      return;
    }
    auto evicted = n.cache.commit(child, items, std::vector<std::uint8_t>(total, 0), now_);
    for (auto ev : evicted)
      trace_.emit({now_, n.idx, trace::Ev::CacheClear, ev.host, current_phase_beacon_, 0, 0, 0,
                   0.0, "evicted"});
    trace_.emit({now_, n.idx, trace::Ev::CacheCommit, child.host, current_phase_beacon_, 0, 0, 0,
                 0.0, trace::host_list(hosts)});
  }

  // A parent that has received everything it was expecting sleeps out the
  // rest of its RX period; it returns for the ack tail.
  void maybe_early_sleep_rx(NodeState& n) {
    if (n.is_gw || !n.participating) return;
    if (!expected_children(n).empty()) return;
    if (n.radio == RadioMode::Tx) return;
    const auto* rx = phase_schedule_.rx_slot(n.ring);
    if (rx == nullptr) return;
    force_sleep(n);
  }

  void send_link_acks(NodeState& n, SimTime slot_end) {
    if (!n.alive()) return;
    if (!n.is_gw && (!n.participating || n.phase_beacon != current_phase_beacon_)) return;
    // any child heard in this slot gets its selective ack, even when every
    // segment it sent was already on the books
    std::vector<NetworkAddress> to_ack;
    for (const auto& [child, ib] : n.inbound)
      if (ib.heard_this_window) to_ack.push_back(child);
    if (to_ack.empty()) return;
    cpu_work(n);
    if (!n.is_gw) begin_listen(n, slot_end);

    SimTime spacing = scn_.timing.airtime(kMinWireBytes) + ms(5);
    int i = 0;
    for (const auto& child : to_ack) {
      const auto& ib = n.inbound.at(child);
      auto ack = mac::selective_ack(
          ib.assembly, n.is_gw ? NetworkAddress::gateway(prefix_) : n.addr, child,
          static_cast<std::uint16_t>(current_phase_beacon_),
          static_cast<std::uint8_t>(std::max(0, current_window_)));
      if (!ack) continue;
      ack->rssi_control = take_request(n, child.host);
      radio::TxPowerLevel p = n.is_gw ? radio::TxPowerLevel::max() : n.level;
      // jitter keeps parallel parents' ack ladders from locking step
      SimTime ready = now_ + i * spacing + static_cast<SimTime>(n.rng.uniform(ms(4)));
      transmit_with_csma(n, *ack, p, ready, slot_end - scn_.timing.airtime(kMinWireBytes));
      ++i;
    }
  }

  void on_link_ack(NodeState& n, const Frame& f, double rssi) {
    if (!n.associated || f.dst != n.addr) return;
    if (!n.participating || f.beacon_index != n.phase_beacon) return;
    n.out.mark_acked(f.ack_bitmap);
    n.heard_link_ack_this_phase = true;
    n.window_requests.push_back(f.rssi_control);
    n.request_to_peer[f.src.host] =
        mac::rssi_request(rssi, scn_.protocol.rssi_min_dbm, scn_.protocol.rssi_max_dbm);
    // fully acknowledged: nothing left to wait for in this slot
    if (n.out.all_acked()) force_sleep(n);
  }

  void gw_send_e2e(int beacon_index, int k) {
    auto& gw = nodes_[0];
    cpu_work(gw);
    std::set<NetworkAddress> held;
    for (const auto& [host, beacon] : gw_holds_)
      if (beacon == beacon_index) held.insert(NetworkAddress{prefix_, host});
    auto msg = transport::build_e2e_ack(held, phase_expected_);
    Frame f;
    f.kind = FrameKind::E2eAck;
    f.src = NetworkAddress::gateway(prefix_);
    f.dst = NetworkAddress::broadcast(prefix_);
    f.beacon_index = static_cast<std::uint16_t>(beacon_index);
    f.window_index = static_cast<std::uint8_t>(k);
    for (const auto& a : msg.acked) f.acked_hosts.push_back(a.host);
    transmit_with_csma(gw, f, radio::TxPowerLevel::max(), now_, now_ + ms(120));
  }

  void on_e2e_ack(NodeState& n, const Frame& f) {
    if (n.is_gw || !n.participating || f.beacon_index != n.phase_beacon) return;
    std::set<NetworkAddress> acked;
    for (auto h : f.acked_hosts) acked.insert(NetworkAddress{prefix_, h});
    for (auto cleared : n.cache.clear_covered(acked))
      trace_.emit({now_, n.idx, trace::Ev::CacheClear, cleared.host, f.beacon_index, 0, 0, 0, 0.0,
                   "e2e"});
    // the gateway confirming custody of everything we sent or hold is as
    // good as a link ack: the path did its job even if the ack was lost
    bool covered = !n.out.empty() && n.cache.entries().empty();
    for (const auto& m : n.out.items)
      if (!acked.contains(m.item.source)) covered = false;
    n.e2e_covered = covered;
  }

  // End-of-window bookkeeping: the sleep/stay-awake decision, power
  // regulation, and window state reset.
  void window_boundary(int beacon_index, int k) {
    for (auto& n : nodes_) {
      if (n.is_gw || !n.alive()) continue;  // the gateway stays awake throughout
      if (!n.participating || n.phase_beacon != beacon_index) continue;
      cpu_work(n);
      n.poison =
          transport::evaluate_poison(n.received_poisoned_this_window, window_child_status(n));
      bool all_acked = n.out.all_acked() || n.e2e_covered;
      auto decision =
          transport::awake_decision(all_acked, n.poison.poisoned, k + 1, scn_.protocol.windows);
      trace_.emit({now_, n.idx, trace::Ev::AwakeDecision,
                   decision == transport::AwakeDecision::StayAwake ? 1 : 0, k + 1, beacon_index,
                   all_acked, n.poison.poisoned});

      bool retransmission_pending =
          !all_acked && !n.out.empty() && decision == transport::AwakeDecision::StayAwake;
      auto next = mac::power_regulation_step(n.level, n.window_requests, retransmission_pending);
      if (next != n.level)
        change_level(n, next,
                     retransmission_pending && next.index > n.level.index ? "regulation_retx"
                                                                          : "regulation");
      n.window_requests.clear();

      if (decision == transport::AwakeDecision::Sleep) {
        n.participating = false;
        force_sleep(n);
      }
    }
  }

  void phase_end(int beacon_index) {
    trace_.emit({now_, -1, trace::Ev::PhaseEnd, beacon_index});
    for (auto& n : nodes_) {
      if (n.is_gw || !n.alive()) continue;
      if (n.phase_beacon != beacon_index) continue;
      // a station whose parent never acknowledged anything for two phases
      // in a row treats its path as broken
      if (!n.out.empty() && !n.out.all_acked() && !n.heard_link_ack_this_phase && n.associated) {
        if (++n.ack_silent_phases >= 2) {
          n.associated = false;
          n.ack_silent_phases = 0;
          trace_.emit({now_, n.idx, trace::Ev::PathBroken, 0, 0, 0, 0, 0, 0.0, "ack_silence"});
        }
      } else if (n.heard_link_ack_this_phase) {
        n.ack_silent_phases = 0;
      }
      for (const auto& [child, entry] : n.cache.entries())
        trace_.emit({now_, n.idx, trace::Ev::CacheClear, child.host, beacon_index, 0, 0, 0, 0.0,
                     "phase_end"});
      reset_phase_state(n);
    }
    current_phase_beacon_ = -1;
    current_window_ = -1;
  }

  // ---- faults ----

  void apply_fault(int node_idx) {
    auto& n = nodes_[node_idx];
    if (!n.alive()) {
      trace_.emit({now_, node_idx, trace::Ev::Note, 0, 0, 0, 0, 0, 0.0, "fault_on_dead_node"});
      return;
    }
    trace_.emit({now_, node_idx, trace::Ev::Fault});
    for (SimTime end : medium_.abort_node(node_idx)) aborted_.insert({node_idx, end});
    n.powered = false;
    if (n.cpu_busy) {
      n.ledger.t_cpu += now_ - n.cpu_since;
      n.cpu_busy = false;
      n.cpu_since = now_;
      trace_.emit({now_, n.idx, trace::Ev::CpuState, 0});
    }
    set_radio(n, RadioMode::Sleep);
    n.duty_listening = false;
    n.participating = false;
  }

  // ---- finalization ----

  void finalize(SimTime end) {
    now_ = end;
    for (auto& n : nodes_) {
      account_radio(n, end);
      if (n.cpu_busy)
        n.ledger.t_cpu += end - n.cpu_since;
      else
        n.ledger.t_lpm += end - n.cpu_since;
      n.cpu_since = end;
      check(n.ledger.partitions_consistent(end), "energy ledger partitions broken");
    }
  }

  void schedule(SimTime t, EventQueue::Handler h) {
    if (t < now_) t = now_;
    if (t > horizon_) return;
    queue_.schedule(t, std::move(h));
  }

  int node_by_addr(NetworkAddress a) const {
    if (a.is_broadcast() || a.host == 254) return -1;
    if (a.is_gateway()) return 0;
    const auto* e = table_.find(a);
    if (e != nullptr) {
      for (const auto& n : nodes_)
        if (n.hw_id == e->hw_id) return n.idx;
    }
    for (const auto& n : nodes_)
      if (n.associated && n.addr == a) return n.idx;
    return -1;
  }

  int node_by_hw(HardwareId hw) const {
    for (const auto& n : nodes_)
      if (n.hw_id == hw) return n.idx;
    return -1;
  }

  Scenario scn_;
  radio::Medium medium_;
  EventQueue queue_;
  trace::Trace trace_;
  std::vector<NodeState> nodes_;
  net::RoutingTable table_;
  AddressAllocator allocator_{1};
  net::AssociationTurnPlan turn_plan_;
  RoutingWeights weights_;
  std::uint8_t prefix_ = 1;
  SimTime now_ = 0;
  SimTime horizon_ = 0;
  std::uint64_t events_ = 0;
  int data_seq_ = 0;
  SimTime current_turn_start_ = 0;
  std::set<std::pair<int, SimTime>> aborted_;

  // running data phase
  int announced_rings_ = 1;
  int current_phase_beacon_ = -1;
  int current_window_ = -1;
  mac::SlotSchedule phase_schedule_;
  std::set<NetworkAddress> phase_expected_;
  std::set<std::pair<std::uint8_t, int>> gw_holds_;
  std::vector<std::uint8_t> turn_joiners_;
};

}  // namespace hare::sim
