#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hare/units.hpp"

namespace hare {

// ---------------------------------------------------------------------------
// Addressing (Rime-style: two 8-bit numbers, host 0 = gateway)
// ---------------------------------------------------------------------------

struct NetworkAddress {
  std::uint8_t prefix = 0;
  std::uint8_t host = 0;

  bool operator==(const NetworkAddress&) const = default;
  auto operator<=>(const NetworkAddress&) const = default;

  bool is_gateway() const { return host == 0; }
  bool is_broadcast() const { return host == kBroadcastHost; }

  static constexpr std::uint8_t kGatewayHost = 0;
  static constexpr std::uint8_t kBroadcastHost = 255;

  static NetworkAddress gateway(std::uint8_t prefix) { return {prefix, kGatewayHost}; }
  static NetworkAddress broadcast(std::uint8_t prefix) { return {prefix, kBroadcastHost}; }

  std::string str() const { return std::to_string(prefix) + "." + std::to_string(host); }
};

// Hardware identifier a node carries before it owns a network address.
using HardwareId = std::uint16_t;

// Allocates unique host numbers for a network prefix. A node keeps its
// address for as long as it stays associated; the mapping is dropped only
// by the gateway's disassociation sweep, after which the host number
// returns to the free pool.
class AddressAllocator {
 public:
  explicit AddressAllocator(std::uint8_t prefix = 1) : prefix_(prefix) {}

  NetworkAddress allocate(HardwareId hw) {
    auto it = by_hw_.find(hw);
    if (it != by_hw_.end()) return {prefix_, it->second};
    for (int host = 1; host < NetworkAddress::kBroadcastHost; ++host) {
      auto h = static_cast<std::uint8_t>(host);
      if (!used_.contains(h)) {
        used_.emplace(h, hw);
        by_hw_.emplace(hw, h);
        return {prefix_, h};
      }
    }
    throw std::length_error("address space exhausted");
  }

  void release(HardwareId hw) {
    auto it = by_hw_.find(hw);
    if (it == by_hw_.end()) return;
    used_.erase(it->second);
    by_hw_.erase(it);
  }

  std::optional<NetworkAddress> lookup(HardwareId hw) const {
    auto it = by_hw_.find(hw);
    if (it == by_hw_.end()) return std::nullopt;
    return NetworkAddress{prefix_, it->second};
  }

  std::size_t size() const { return used_.size(); }
  std::uint8_t prefix() const { return prefix_; }

 private:
  std::uint8_t prefix_;
  std::map<std::uint8_t, HardwareId> used_;
  std::map<HardwareId, std::uint8_t> by_hw_;
};

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

enum class FrameKind : std::uint8_t {
  PrimaryBeaconAssoc = 0,
  PrimaryBeaconData = 1,
  SecondaryBeacon = 2,
  DiscoveryRequest = 3,
  DiscoveryResponse = 4,
  ParentRequest = 5,
  AssocConfirm = 6,
  AssocSummary = 7,
  DataSegment = 8,
  LinkAck = 9,
  E2eAck = 10,
  StatisticsPacket = 11,
};

inline const char* frame_kind_name(FrameKind k) {
  switch (k) {
    case FrameKind::PrimaryBeaconAssoc: return "primary_beacon_assoc";
    case FrameKind::PrimaryBeaconData: return "primary_beacon_data";
    case FrameKind::SecondaryBeacon: return "secondary_beacon";
    case FrameKind::DiscoveryRequest: return "discovery_request";
    case FrameKind::DiscoveryResponse: return "discovery_response";
    case FrameKind::ParentRequest: return "parent_request";
    case FrameKind::AssocConfirm: return "assoc_confirm";
    case FrameKind::AssocSummary: return "assoc_summary";
    case FrameKind::DataSegment: return "data_segment";
    case FrameKind::LinkAck: return "link_ack";
    case FrameKind::E2eAck: return "e2e_ack";
    case FrameKind::StatisticsPacket: return "statistics_packet";
  }
  return "?";
}

inline bool is_beacon(FrameKind k) {
  return k == FrameKind::PrimaryBeaconAssoc || k == FrameKind::PrimaryBeaconData ||
         k == FrameKind::SecondaryBeacon;
}

// Frames that carry uplink payload (statistics ride the same machinery but
// keep their own kind so error injection can exempt them).
inline bool is_data_frame(FrameKind k) {
  return k == FrameKind::DataSegment || k == FrameKind::StatisticsPacket;
}

inline bool is_association_frame(FrameKind k) {
  return k == FrameKind::DiscoveryRequest || k == FrameKind::DiscoveryResponse ||
         k == FrameKind::ParentRequest || k == FrameKind::AssocConfirm ||
         k == FrameKind::AssocSummary;
}

enum class RssiControl : std::uint8_t { Increase = 0, Keep = 1, Decrease = 2 };

inline const char* rssi_control_name(RssiControl c) {
  switch (c) {
    case RssiControl::Increase: return "increase";
    case RssiControl::Keep: return "keep";
    case RssiControl::Decrease: return "decrease";
  }
  return "?";
}

// One sensor reading travelling uplink: the payload generated by `source`
// for the data phase opened by beacon `beacon_index`. Parents aggregate
// items from their subtree into a single outgoing stream.
struct PayloadItem {
  NetworkAddress source;
  std::uint16_t beacon_index = 0;
  std::uint16_t length = 0;
  bool statistics = false;

  bool operator==(const PayloadItem&) const = default;
};

struct RoutingWeights {
  double a1 = 10.0, a2 = 10.0, a3 = 1.0, a4 = 5.0;
  bool operator==(const RoutingWeights&) const = default;
};

// On-air unit. One flat record covers every kind; which fields are
// meaningful depends on `kind` (see docs/wire-format.md).
struct Frame {
  FrameKind kind = FrameKind::DataSegment;
  NetworkAddress src;
  NetworkAddress dst;
  HardwareId hw_id = 0;       // pre-association identity (discovery flow)
  std::uint16_t beacon_index = 0;
  std::uint8_t window_index = 0;
  std::uint8_t segment_index = 0;
  std::uint8_t segment_count = 0;
  bool poison = false;                       // DataSegment/StatisticsPacket only
  RssiControl rssi_control = RssiControl::Keep;  // data + link ack headers
  std::uint16_t payload_len = 0;

  // Embedded fields, meaningful per kind.
  SimTime timestamp = 0;              // beacons
  SimTime next_primary_in = 0;        // beacons: time until next primary
  bool stats_request = false;         // data primary beacons
  std::uint8_t num_rings = 0;         // data primary beacons
  RoutingWeights weights;             // primary beacons
  std::vector<std::uint8_t> roster;   // primary beacons: freshly disassociated hosts
  std::uint8_t ring = 0;              // discovery response / assoc confirm
  std::uint8_t child_count = 0;       // discovery response
  NetworkAddress parent;              // parent request / assoc confirm
  std::uint64_t ack_bitmap = 0;       // link ack: received segment indices
  std::vector<std::uint8_t> acked_hosts;  // e2e ack / assoc summary
  std::uint8_t turn = 0;              // assoc summary

  // Simulator-side bookkeeping (not encoded on the wire): the items whose
  // bytes this segment carries, with the slice of the aggregate stream.
  std::vector<PayloadItem> items;
  std::uint32_t stream_offset = 0;

  bool broadcast() const { return dst.is_broadcast(); }
};

// ---------------------------------------------------------------------------
// Wire-size accounting
// ---------------------------------------------------------------------------

// Fixed frame header: kind, flags, src, dst, segment and control fields.
constexpr int kFrameHeaderBytes = 16;
// Radios in this class pad every transmitted packet to at least 43 bytes.
constexpr int kMinWireBytes = 43;
constexpr int kMaxPayloadBytes = 1024;

inline int frame_wire_length(int payload_len) {
  if (payload_len < 0) throw std::domain_error("negative payload length");
  if (payload_len > kMaxPayloadBytes)
    throw std::length_error("payload exceeds maximum frame size; segment it");
  return std::max(kMinWireBytes, kFrameHeaderBytes + payload_len);
}

// ---------------------------------------------------------------------------
// Protocol configuration
// ---------------------------------------------------------------------------

enum class TopologyMode : std::uint8_t { SingleHop, MultiHop };
enum class MacModel : std::uint8_t { NullMac, XMac };

inline SimTime secondary_period(SimTime t_p, int k_s) {
  if (t_p <= 0) throw std::domain_error("primary beacon period must be positive");
  if (k_s < 0) throw std::domain_error("secondary beacon count must be non-negative");
  return t_p / (k_s + 1);
}

struct ProtocolConfig {
  SimTime t_p = minutes(3);   // primary beacon period
  int k_s = 2;                // secondary beacons per primary
  int n_pr = 0;               // primaries between network associations (0 = only the plan's own)
  int n_pd = 2;               // silent primaries before gateway disassociation
  SimTime t_d = minutes(6);   // self-disassociation timeout
  int windows = 5;            // transmission windows per data phase
  int max_children = 5;
  int max_payload = 80;       // bytes per segment
  RoutingWeights routing_weights;
  double rssi_min_dbm = -110.0;
  double rssi_max_dbm = -100.0;
  TopologyMode topology = TopologyMode::MultiHop;
  MacModel mac = MacModel::XMac;
  bool renew_all_on_assoc = false;  // re-run routing for everyone on assoc beacons

  SimTime t_s() const { return secondary_period(t_p, k_s); }

  void validate() const {
    if (windows < 1) throw std::domain_error("windows must be >= 1");
    if (!(rssi_min_dbm < rssi_max_dbm)) throw std::domain_error("rssi_min must be < rssi_max");
    if (max_children < 1) throw std::domain_error("max_children must be >= 1");
    if (max_payload < 1 || max_payload > kMaxPayloadBytes - kFrameHeaderBytes)
      throw std::domain_error("max_payload out of range");
    secondary_period(t_p, k_s);
  }
};

// ---------------------------------------------------------------------------
// Little-endian codec
// ---------------------------------------------------------------------------

namespace wire {

inline void put_u8(std::vector<std::uint8_t>& b, std::uint8_t v) { b.push_back(v); }
inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
inline void put_i64(std::vector<std::uint8_t>& b, std::int64_t v) {
  put_u64(b, static_cast<std::uint64_t>(v));
}

struct Reader {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;

  std::uint8_t u8() {
    if (pos + 1 > b.size()) throw std::out_of_range("frame truncated");
    return b[pos++];
  }
  std::uint16_t u16() {
    std::uint16_t lo = u8(), hi = u8();
    return static_cast<std::uint16_t>(lo | (hi << 8));
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
};

}  // namespace wire

// Serializes the fixed header plus the kind-specific embedded fields.
// Byte order is little-endian so traces replay identically everywhere.
inline std::vector<std::uint8_t> encode_frame(const Frame& f) {
  std::vector<std::uint8_t> b;
  b.reserve(kFrameHeaderBytes + 32);
  wire::put_u8(b, static_cast<std::uint8_t>(f.kind));
  std::uint8_t flags = 0;
  if (f.poison) flags |= 0x01;
  if (f.stats_request) flags |= 0x02;
  flags |= static_cast<std::uint8_t>(static_cast<int>(f.rssi_control) << 2);
  wire::put_u8(b, flags);
  wire::put_u8(b, f.src.prefix);
  wire::put_u8(b, f.src.host);
  wire::put_u8(b, f.dst.prefix);
  wire::put_u8(b, f.dst.host);
  wire::put_u8(b, f.segment_index);
  wire::put_u8(b, f.segment_count);
  wire::put_u8(b, f.window_index);
  wire::put_u8(b, f.num_rings);
  wire::put_u16(b, f.beacon_index);
  wire::put_u16(b, f.hw_id);
  wire::put_u16(b, f.payload_len);

  switch (f.kind) {
    case FrameKind::PrimaryBeaconAssoc:
    case FrameKind::PrimaryBeaconData:
    case FrameKind::SecondaryBeacon: {
      wire::put_i64(b, f.timestamp);
      wire::put_i64(b, f.next_primary_in);
      wire::put_u64(b, static_cast<std::uint64_t>(f.weights.a1 * 1000));
      wire::put_u64(b, static_cast<std::uint64_t>(f.weights.a2 * 1000));
      wire::put_u64(b, static_cast<std::uint64_t>(f.weights.a3 * 1000));
      wire::put_u64(b, static_cast<std::uint64_t>(f.weights.a4 * 1000));
      wire::put_u8(b, static_cast<std::uint8_t>(f.roster.size()));
      for (auto h : f.roster) wire::put_u8(b, h);
      break;
    }
    case FrameKind::DiscoveryRequest:
      break;
    case FrameKind::DiscoveryResponse:
      wire::put_u8(b, f.ring);
      wire::put_u8(b, f.child_count);
      break;
    case FrameKind::ParentRequest:
      wire::put_u8(b, f.parent.prefix);
      wire::put_u8(b, f.parent.host);
      break;
    case FrameKind::AssocConfirm:
      wire::put_u8(b, f.parent.prefix);
      wire::put_u8(b, f.parent.host);
      wire::put_u8(b, f.ring);
      break;
    case FrameKind::AssocSummary:
      wire::put_u8(b, f.turn);
      wire::put_u8(b, static_cast<std::uint8_t>(f.acked_hosts.size()));
      for (auto h : f.acked_hosts) wire::put_u8(b, h);
      break;
    case FrameKind::DataSegment:
    case FrameKind::StatisticsPacket:
      break;  // payload bytes accounted by payload_len
    case FrameKind::LinkAck:
      wire::put_u64(b, f.ack_bitmap);
      break;
    case FrameKind::E2eAck:
      wire::put_u8(b, static_cast<std::uint8_t>(f.acked_hosts.size()));
      for (auto h : f.acked_hosts) wire::put_u8(b, h);
      break;
  }
  return b;
}

inline Frame decode_frame(const std::vector<std::uint8_t>& bytes) {
  wire::Reader r{bytes};
  Frame f;
  f.kind = static_cast<FrameKind>(r.u8());
  std::uint8_t flags = r.u8();
  f.poison = (flags & 0x01) != 0;
  f.stats_request = (flags & 0x02) != 0;
  f.rssi_control = static_cast<RssiControl>((flags >> 2) & 0x03);
  f.src.prefix = r.u8();
  f.src.host = r.u8();
  f.dst.prefix = r.u8();
  f.dst.host = r.u8();
  f.segment_index = r.u8();
  f.segment_count = r.u8();
  f.window_index = r.u8();
  f.num_rings = r.u8();
  f.beacon_index = r.u16();
  f.hw_id = r.u16();
  f.payload_len = r.u16();

  switch (f.kind) {
    case FrameKind::PrimaryBeaconAssoc:
    case FrameKind::PrimaryBeaconData:
    case FrameKind::SecondaryBeacon: {
      f.timestamp = r.i64();
      f.next_primary_in = r.i64();
      f.weights.a1 = static_cast<double>(r.u64()) / 1000.0;
      f.weights.a2 = static_cast<double>(r.u64()) / 1000.0;
      f.weights.a3 = static_cast<double>(r.u64()) / 1000.0;
      f.weights.a4 = static_cast<double>(r.u64()) / 1000.0;
      int n = r.u8();
      for (int i = 0; i < n; ++i) f.roster.push_back(r.u8());
      break;
    }
    case FrameKind::DiscoveryRequest:
      break;
    case FrameKind::DiscoveryResponse:
      f.ring = r.u8();
      f.child_count = r.u8();
      break;
    case FrameKind::ParentRequest:
      f.parent.prefix = r.u8();
      f.parent.host = r.u8();
      break;
    case FrameKind::AssocConfirm:
      f.parent.prefix = r.u8();
      f.parent.host = r.u8();
      f.ring = r.u8();
      break;
    case FrameKind::AssocSummary: {
      f.turn = r.u8();
      int n = r.u8();
      for (int i = 0; i < n; ++i) f.acked_hosts.push_back(r.u8());
      break;
    }
    case FrameKind::DataSegment:
    case FrameKind::StatisticsPacket:
      break;
    case FrameKind::LinkAck:
      f.ack_bitmap = r.u64();
      break;
    case FrameKind::E2eAck: {
      int n = r.u8();
      for (int i = 0; i < n; ++i) f.acked_hosts.push_back(r.u8());
      break;
    }
  }
  return f;
}

// Wire length of a fully built frame: embedded fields count as payload for
// every kind except data segments, whose payload is the stream slice itself.
inline int wire_length(const Frame& f) {
  if (is_data_frame(f.kind)) return frame_wire_length(f.payload_len);
  int embedded = static_cast<int>(encode_frame(f).size()) - kFrameHeaderBytes;
  return frame_wire_length(std::max<int>(embedded, f.payload_len));
}

}  // namespace hare
