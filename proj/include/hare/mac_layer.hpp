#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "hare/protocol_types.hpp"
#include "hare/radio_medium.hpp"
#include "hare/rng.hpp"
#include "hare/units.hpp"

namespace hare::mac {

// ---------------------------------------------------------------------------
// Staggered TDMA slot schedule
// ---------------------------------------------------------------------------

struct Slot {
  int ring = 0;        // ring transmitting in this slot
  SimTime start = 0;   // offset from window start
  SimTime end = 0;
};

// One transmission window split into as many slots as the network has
// rings. The highest ring transmits first; a ring is awake for its own TX
// slot plus the preceding one, where its children transmit.
struct SlotSchedule {
  SimTime window_duration = 0;
  std::vector<Slot> slots;  // ordered highest ring first

  const Slot& tx_slot(int ring) const {
    for (const auto& s : slots)
      if (s.ring == ring) return s;
    throw std::out_of_range("no TX slot for ring");
  }

  // RX interval of `ring` = TX slot of ring+1 (its children), if any.
  const Slot* rx_slot(int ring) const {
    for (const auto& s : slots)
      if (s.ring == ring + 1) return &s;
    return nullptr;
  }

  int num_rings() const { return static_cast<int>(slots.size()); }
};

inline SlotSchedule build_slot_schedule(int num_rings, SimTime window_duration) {
  if (num_rings < 1) throw std::domain_error("schedule needs at least one ring");
  if (window_duration <= 0) throw std::domain_error("window duration must be positive");
  SlotSchedule sched;
  sched.window_duration = window_duration;
  SimTime base = window_duration / num_rings;
  SimTime rem = window_duration % num_rings;
  SimTime cursor = 0;
  for (int i = 0; i < num_rings; ++i) {
    SimTime len = base + (i < rem ? 1 : 0);
    sched.slots.push_back({num_rings - i, cursor, cursor + len});
    cursor += len;
  }
  return sched;
}

// ---------------------------------------------------------------------------
// CSMA/CA inside a slot
// ---------------------------------------------------------------------------

struct CsmaParams {
  int mac_min_be = 0;
  int mac_max_be = 4;
  int mac_max_csma_backoffs = 5;
  SimTime unit_backoff = us(320);
  SimTime turnaround = us(192);  // CCA-to-TX; the collision-vulnerable window
};

enum class CsmaResult : std::uint8_t { Sent, ChannelAccessFailure };

// Backoff bookkeeping for one frame; the caller supplies timing and the
// carrier state, so the same state machine drives both the event loop and
// scripted unit tests.
class CsmaSession {
 public:
  explicit CsmaSession(const CsmaParams& p) : params_(p), be_(p.mac_min_be) {}

  SimTime draw_backoff(Rng& rng) {
    std::int64_t slots = (1LL << be_) - 1;
    std::int64_t n = slots > 0 ? rng.uniform_range(0, slots) : 0;
    return n * params_.unit_backoff;
  }

  // Channel was busy at CCA: grow the exponent, count the attempt.
  void on_busy() {
    ++attempts_;
    be_ = std::min(be_ + 1, params_.mac_max_be);
  }

  bool exhausted() const { return attempts_ >= params_.mac_max_csma_backoffs; }
  int attempts() const { return attempts_; }

 private:
  CsmaParams params_;
  int be_ = 0;
  int attempts_ = 0;
};

// Synchronous driver used by tests and by senders whose slot has sole
// ownership of timing: walks the backoff/CCA sequence against a carrier
// oracle and reports when the transmission would start.
struct CsmaOutcome {
  CsmaResult result = CsmaResult::Sent;
  SimTime tx_start = 0;  // meaningful when Sent
  int attempts = 0;
};

inline CsmaOutcome csma_transmit(SimTime ready, const CsmaParams& params, Rng& rng,
                                 const std::function<bool(SimTime)>& carrier_busy) {
  CsmaSession s(params);
  SimTime t = ready;
  while (true) {
    t += s.draw_backoff(rng);
    if (!carrier_busy(t)) return {CsmaResult::Sent, t + params.turnaround, s.attempts() + 1};
    s.on_busy();
    if (s.exhausted()) return {CsmaResult::ChannelAccessFailure, 0, s.attempts()};
  }
}

// ---------------------------------------------------------------------------
// Aggregation and segmentation
// ---------------------------------------------------------------------------

struct Segment {
  std::uint8_t index = 0;
  std::uint8_t count = 0;
  std::uint32_t stream_offset = 0;
  std::vector<std::uint8_t> bytes;
};

constexpr int kMaxSegments = 64;  // selective-ack bitmap width

inline std::vector<Segment> segment_stream(const std::vector<std::uint8_t>& stream,
                                           int max_payload) {
  if (max_payload < 1) throw std::domain_error("max_payload must be >= 1");
  std::vector<Segment> out;
  if (stream.empty()) return out;
  std::size_t n = (stream.size() + max_payload - 1) / max_payload;
  if (n > kMaxSegments) throw std::length_error("stream needs more segments than the ack bitmap holds");
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = i * max_payload;
    std::size_t len = std::min<std::size_t>(max_payload, stream.size() - off);
    Segment seg;
    seg.index = static_cast<std::uint8_t>(i);
    seg.count = static_cast<std::uint8_t>(n);
    seg.stream_offset = static_cast<std::uint32_t>(off);
    seg.bytes.assign(stream.begin() + off, stream.begin() + off + len);
    out.push_back(std::move(seg));
  }
  return out;
}

// Own data first, then cached child payloads by ascending child address,
// split into ceil(total / max_payload) segments.
inline std::vector<Segment> aggregate_and_segment(
    const std::vector<std::uint8_t>& own_payload,
    const std::map<NetworkAddress, std::vector<std::uint8_t>>& cached, int max_payload) {
  std::vector<std::uint8_t> stream = own_payload;
  for (const auto& [addr, bytes] : cached) stream.insert(stream.end(), bytes.begin(), bytes.end());
  return segment_stream(stream, max_payload);
}

// Receiver-side reassembly of one child's stream. The advertised segment
// count may grow mid-phase when the sender appends newly cached data.
struct SegmentAssembly {
  std::uint8_t expected_count = 0;
  std::uint64_t bitmap = 0;
  std::map<std::uint8_t, std::vector<std::uint8_t>> slices;

  void accept(const Segment& seg) {
    if (seg.index >= kMaxSegments) throw std::length_error("segment index beyond bitmap");
    expected_count = std::max(expected_count, seg.count);
    bitmap |= (1ULL << seg.index);
    slices[seg.index] = seg.bytes;
  }

  bool complete() const {
    if (expected_count == 0) return false;
    std::uint64_t all = expected_count >= 64 ? ~0ULL : ((1ULL << expected_count) - 1);
    return (bitmap & all) == all;
  }

  bool anything_received() const { return bitmap != 0; }

  std::vector<std::uint8_t> reassemble() const {
    check(complete(), "reassembling an incomplete stream");
    std::vector<std::uint8_t> out;
    for (int i = 0; i < expected_count; ++i) {
      const auto& s = slices.at(static_cast<std::uint8_t>(i));
      out.insert(out.end(), s.begin(), s.end());
    }
    return out;
  }
};

// Selective ACK emitted before the slot ends: the bitmap lists exactly the
// segments received from `child`, so upper layers retransmit the rest.
// No ACK is emitted when nothing was received; the child learns by absence.
inline std::optional<Frame> selective_ack(const SegmentAssembly& received,
                                          NetworkAddress self, NetworkAddress child,
                                          std::uint16_t beacon_index, std::uint8_t window) {
  if (!received.anything_received()) return std::nullopt;
  Frame f;
  f.kind = FrameKind::LinkAck;
  f.src = self;
  f.dst = child;
  f.beacon_index = beacon_index;
  f.window_index = window;
  f.segment_count = received.expected_count;
  f.ack_bitmap = received.bitmap;
  return f;
}

// ---------------------------------------------------------------------------
// Power regulation
// ---------------------------------------------------------------------------

inline RssiControl rssi_request(double measured_dbm, double rssi_min_dbm, double rssi_max_dbm) {
  if (!(rssi_min_dbm < rssi_max_dbm)) throw std::domain_error("rssi band inverted");
  if (measured_dbm < rssi_min_dbm) return RssiControl::Increase;
  if (measured_dbm > rssi_max_dbm) return RssiControl::Decrease;
  return RssiControl::Keep;
}

// One regulation round over the requests heard in the elapsed window:
// any Increase wins, Decrease needs unanimity, otherwise hold. A pending
// retransmission to the parent adds one level on top, each new window.
inline radio::TxPowerLevel power_regulation_step(radio::TxPowerLevel current,
                                                 const std::vector<RssiControl>& requests,
                                                 bool retransmission_pending) {
  int idx = current.index;
  bool any_increase = false;
  bool all_decrease = !requests.empty();
  for (auto r : requests) {
    if (r == RssiControl::Increase) any_increase = true;
    if (r != RssiControl::Decrease) all_decrease = false;
  }
  if (any_increase)
    idx += 1;
  else if (all_decrease)
    idx -= 1;
  if (retransmission_pending) idx += 1;
  return radio::TxPowerLevel::clamped(idx);
}

// ---------------------------------------------------------------------------
// Underlying MAC models
// ---------------------------------------------------------------------------

struct XMacParams {
  SimTime wake_interval = ms(150);  // receiver sampling period
  SimTime sample_duration = ms(2);
  SimTime strobe_max = ms(150);     // preamble spans at least one wake interval

  void validate() const {
    if (sample_duration >= wake_interval)
      throw std::domain_error("xmac sample must be shorter than the wake interval");
    if (strobe_max < wake_interval)
      throw std::domain_error("xmac strobe must span at least one wake interval");
  }
};

struct Rendezvous {
  SimTime delay = 0;           // strobe time until the receiver samples
  SimTime sender_awake = 0;    // strobe + frame
  SimTime receiver_awake = 0;  // catching sample + frame
};

// Sender strobes from `ready` until the receiver's next periodic sample.
// The receiver's grid is anchored at `receiver_phase` (absolute time of
// any one sample start).
inline Rendezvous xmac_rendezvous(SimTime ready, SimTime receiver_phase,
                                  const XMacParams& p, SimTime frame_airtime) {
  SimTime delta = (ready - receiver_phase) % p.wake_interval;
  if (delta < 0) delta += p.wake_interval;
  SimTime delay = delta == 0 ? 0 : p.wake_interval - delta;
  return {delay, delay + frame_airtime, p.sample_duration + frame_airtime};
}

}  // namespace hare::mac
