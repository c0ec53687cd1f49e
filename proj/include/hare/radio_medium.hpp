#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "hare/protocol_types.hpp"
#include "hare/rng.hpp"
#include "hare/units.hpp"

namespace hare::radio {

// ---------------------------------------------------------------------------
// Geometry and channel
// ---------------------------------------------------------------------------

struct NodePlacement {
  int id = 0;
  double x = 0.0;  // meters
  double y = 0.0;
  bool gateway = false;
};

inline double distance_m(const NodePlacement& a, const NodePlacement& b) {
  double dx = a.x - b.x, dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

// Log-distance path loss; defaults tuned for an indoor office floor so a
// dozen nodes along a corridor split into a few rings.
struct ChannelModel {
  double path_loss_exponent = 3.0;
  double reference_loss_db = 40.0;  // at 1 m
  double sensitivity_dbm = -120.0;
  double shadowing_sigma_db = 0.0;  // 0 = deterministic

  void validate() const {
    if (path_loss_exponent < 2.0) throw std::domain_error("path_loss_exponent must be >= 2");
    if (shadowing_sigma_db < 0.0) throw std::domain_error("shadowing sigma must be >= 0");
  }
};

inline double path_loss_db(double d_m, const ChannelModel& ch) {
  return ch.reference_loss_db + 10.0 * ch.path_loss_exponent * std::log10(d_m);
}

// Received signal strength over the link, optionally with one lognormal
// shadowing draw. Deterministic when sigma is zero.
inline double rssi_at(const NodePlacement& tx, const NodePlacement& rx, double tx_power_dbm,
                      const ChannelModel& ch, Rng* rng = nullptr) {
  double d = distance_m(tx, rx);
  if (d <= 0.0) throw std::domain_error("rssi_at: zero distance");
  double rssi = tx_power_dbm - path_loss_db(d, ch);
  if (ch.shadowing_sigma_db > 0.0 && rng != nullptr) rssi -= ch.shadowing_sigma_db * rng->gaussian();
  return rssi;
}

// ---------------------------------------------------------------------------
// Transmit power levels (31 steps, -16..+14 dBm)
// ---------------------------------------------------------------------------

struct TxPowerLevel {
  int index = kMaxIndex;

  static constexpr int kMaxIndex = 30;
  static constexpr double kMinDbm = -16.0;
  static constexpr double kMaxDbm = 14.0;

  double dbm() const { return kMinDbm + index; }
  static TxPowerLevel max() { return {kMaxIndex}; }
  static TxPowerLevel min() { return {0}; }
  static TxPowerLevel clamped(int idx) { return {std::max(0, std::min(kMaxIndex, idx))}; }

  bool operator==(const TxPowerLevel&) const = default;
  auto operator<=>(const TxPowerLevel&) const = default;
};

// ---------------------------------------------------------------------------
// Injected error configurations
// ---------------------------------------------------------------------------

struct ErrorConfig {
  double data_error_prob = 0.0;
  double ack_error_prob = 0.0;

  void validate() const {
    if (data_error_prob < 0 || data_error_prob > 1 || ack_error_prob < 0 || ack_error_prob > 1)
      throw std::domain_error("error probabilities must lie in [0,1]");
  }
};

// Only application data frames and their ACKs are subject to injected
// errors; association traffic and statistics packets are exempt.
inline bool error_eligible(FrameKind k) {
  return k == FrameKind::DataSegment || k == FrameKind::LinkAck || k == FrameKind::E2eAck;
}

inline double error_probability(FrameKind k, const ErrorConfig& ec) {
  if (k == FrameKind::DataSegment) return ec.data_error_prob;
  if (k == FrameKind::LinkAck || k == FrameKind::E2eAck) return ec.ack_error_prob;
  return 0.0;
}

// ---------------------------------------------------------------------------
// Delivery
// ---------------------------------------------------------------------------

enum class DeliveryKind : std::uint8_t { Delivered, BelowSensitivity, Collided, InjectedDrop };

inline const char* delivery_kind_name(DeliveryKind k) {
  switch (k) {
    case DeliveryKind::Delivered: return "delivered";
    case DeliveryKind::BelowSensitivity: return "below_sensitivity";
    case DeliveryKind::Collided: return "collided";
    case DeliveryKind::InjectedDrop: return "injected_drop";
  }
  return "?";
}

struct DeliveryOutcome {
  DeliveryKind kind = DeliveryKind::Delivered;
  double rssi_dbm = 0.0;  // meaningful for Delivered (and Collided diagnostics)
};

struct Transmission {
  int tx_node = 0;
  Frame frame;
  double tx_power_dbm = TxPowerLevel::kMaxDbm;
  SimTime start = 0;       // channel occupied from here (preamble included)
  SimTime end = 0;
  SimTime body_start = 0;  // the frame body itself; receivers must cover it
  bool injected_drop = false;  // drawn once, at the sender
};

inline bool overlaps(SimTime a0, SimTime a1, SimTime b0, SimTime b1) {
  return a0 < b1 && b0 < a1;
}

// Reference delivery decision for one (transmission, receiver) pair.
// `concurrent` are the other transmissions the scheduler knows about.
inline DeliveryOutcome deliver(const Frame& frame, double tx_power_dbm,
                               const NodePlacement& tx, const NodePlacement& rx,
                               SimTime start, SimTime end,
                               const std::vector<Transmission>& concurrent,
                               const std::vector<NodePlacement>& placements,
                               const ChannelModel& ch, const ErrorConfig& ec, Rng& rng) {
  double rssi = rssi_at(tx, rx, tx_power_dbm, ch, &rng);
  if (rssi < ch.sensitivity_dbm) return {DeliveryKind::BelowSensitivity, rssi};
  for (const auto& other : concurrent) {
    if (other.tx_node == tx.id || other.tx_node == rx.id) continue;
    if (!overlaps(start, end, other.start, other.end)) continue;
    double other_rssi = rssi_at(placements[other.tx_node], rx, other.tx_power_dbm, ch, &rng);
    if (other_rssi >= ch.sensitivity_dbm) return {DeliveryKind::Collided, rssi};
  }
  double p = error_probability(frame.kind, ec);
  if (p > 0.0 && rng.bernoulli(p)) return {DeliveryKind::InjectedDrop, rssi};
  return {DeliveryKind::Delivered, rssi};
}

// ---------------------------------------------------------------------------
// Shared medium owned by one simulation world
// ---------------------------------------------------------------------------

class Medium {
 public:
  Medium() = default;
  Medium(std::vector<NodePlacement> placements, ChannelModel ch, ErrorConfig ec,
         std::uint64_t seed)
      : placements_(std::move(placements)), channel_(ch), errors_(ec),
        shadow_rng_(seed, 0xABCDEF) {}

  const std::vector<NodePlacement>& placements() const { return placements_; }
  const ChannelModel& channel() const { return channel_; }
  const ErrorConfig& errors() const { return errors_; }

  // Shadowing is drawn once per directed link and then frozen, so the rssi
  // a receiver measures is the rssi the delivery decision used.
  double rssi(int tx_node, int rx_node, double tx_power_dbm) {
    double base = rssi_at(placements_[tx_node], placements_[rx_node], tx_power_dbm, channel_);
    if (channel_.shadowing_sigma_db > 0.0) base -= shadow_offset(tx_node, rx_node);
    return base;
  }

  bool audible(int tx_node, int rx_node, double tx_power_dbm) {
    return rssi(tx_node, rx_node, tx_power_dbm) >= channel_.sensitivity_dbm;
  }

  // The sender draws the injected-error verdict when the frame enters the
  // air: a dropped broadcast is dropped for every receiver alike, and the
  // frame still occupies airtime and transmit energy.
  Transmission begin_tx(int node, Frame frame, double power_dbm, SimTime start,
                        SimTime end, Rng& sender_rng, SimTime body_start = -1) {
    Transmission t{node, std::move(frame), power_dbm, start, end,
                   body_start < 0 ? start : body_start, false};
    double p = error_probability(t.frame.kind, errors_);
    if (p > 0.0) t.injected_drop = sender_rng.bernoulli(p);
    active_.push_back(t);
    return t;
  }

  // Rips a node's in-flight transmissions off the air (power failure).
  std::vector<SimTime> abort_node(int node) {
    std::vector<SimTime> ends;
    for (const auto& t : active_)
      if (t.tx_node == node) ends.push_back(t.end);
    std::erase_if(active_, [&](const Transmission& t) { return t.tx_node == node; });
    return ends;
  }

  void end_tx(int node, SimTime end) {
    for (auto it = active_.begin(); it != active_.end(); ++it) {
      if (it->tx_node == node && it->end == end) {
        finished_.push_back(*it);
        active_.erase(it);
        prune(end);
        return;
      }
    }
    throw std::logic_error("end_tx: no such active transmission");
  }

  // Busy iff any in-progress transmission is audible at the listener. A
  // node's own ongoing transmission counts: the radio cannot send twice.
  bool carrier_busy(int listener, SimTime t) {
    for (const auto& tx : active_) {
      if (t < tx.start || t >= tx.end) continue;
      if (tx.tx_node == listener) return true;
      if (audible(tx.tx_node, listener, tx.tx_power_dbm)) return true;
    }
    return false;
  }

  // Clear-channel assessment as seen by a listener; sensing with the radio
  // asleep is a caller bug.
  bool carrier_sense(int listener, SimTime t, bool radio_in_rx) {
    if (!radio_in_rx) throw std::logic_error("carrier sense with the radio asleep");
    return carrier_busy(listener, t);
  }

  // Delivery decision at frame end for one receiver; the rssi reported on
  // Delivered is exactly the value the channel model produced. Must be
  // called before end_tx() retires the transmission, while overlapping
  // records are still retained.
  DeliveryOutcome resolve(const Transmission& tx, int rx_node) {
    double rssi = this->rssi(tx.tx_node, rx_node, tx.tx_power_dbm);
    if (rssi < channel_.sensitivity_dbm) return {DeliveryKind::BelowSensitivity, rssi};
    auto collided_with = [&](const Transmission& other) {
      if (other.tx_node == tx.tx_node || other.tx_node == rx_node) return false;
      if (!overlaps(tx.start, tx.end, other.start, other.end)) return false;
      return audible(other.tx_node, rx_node, other.tx_power_dbm);
    };
    for (const auto& other : active_)
      if (collided_with(other)) return {DeliveryKind::Collided, rssi};
    for (const auto& other : finished_)
      if (collided_with(other)) return {DeliveryKind::Collided, rssi};
    if (tx.injected_drop) return {DeliveryKind::InjectedDrop, rssi};
    return {DeliveryKind::Delivered, rssi};
  }

 private:
  void prune(SimTime now) {
    SimTime oldest_active = now;
    for (const auto& t : active_) oldest_active = std::min(oldest_active, t.start);
    std::erase_if(finished_, [&](const Transmission& t) { return t.end <= oldest_active; });
  }

  double shadow_offset(int tx_node, int rx_node) {
    std::uint64_t key = (static_cast<std::uint64_t>(tx_node) << 32) |
                        static_cast<std::uint32_t>(rx_node);
    auto it = shadow_.find(key);
    if (it == shadow_.end())
      it = shadow_.emplace(key, channel_.shadowing_sigma_db * shadow_rng_.gaussian()).first;
    return it->second;
  }

  std::vector<NodePlacement> placements_;
  ChannelModel channel_;
  ErrorConfig errors_;
  Rng shadow_rng_;
  std::map<std::uint64_t, double> shadow_;
  std::vector<Transmission> active_;
  std::vector<Transmission> finished_;
};

}  // namespace hare::radio
