#pragma once

#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "hare/units.hpp"

namespace hare::trace {

// Every protocol decision and every radio/CPU state change lands here.
// The energy oracle, the custody checker and the metrics all work from
// this stream alone, never from simulator internals.
enum class Ev : std::uint8_t {
  RadioState,   // a: 0=sleep 1=rx 2=tx, b: tx power level index (else -1)
  CpuState,     // a: 0=lpm 1=cpu
  BeaconTx,     // a: beacon index, b: frame kind, c: stats flag, s: roster hosts
  BeaconRx,     // a: beacon index, b: frame kind
  FrameTx,      // a: frame kind, b: dst host, c: beacon idx, d: seg_idx<<8|seg_cnt,
                // e: power level, v: poison flag, s: e2e-ack host list
  FrameRx,      // a: frame kind, b: src host, c: beacon idx, d: seg_idx<<8|seg_cnt, v: rssi
  FrameLost,    // a: frame kind, b: src node index, c: outcome kind, v: rssi
  PowerLevel,   // a: new level, b: old level, s: reason
  PhaseStart,   // node -1; a: beacon idx, b: stats flag, c: num rings, d: windows, s: expected hosts
  WindowStart,  // node -1; a: beacon idx, b: window index
  PhaseEnd,     // node -1; a: beacon idx
  Poison,       // a: cause, b: window, c: beacon idx
  AwakeDecision,// a: 1=stay awake 0=sleep, b: windows done, c: beacon idx,
                // d: all pending acked, e: poisoned
  CacheCommit,  // a: child host, b: beacon idx, s: source hosts
  CacheClear,   // a: child host, b: beacon idx, s: reason
  GwHold,       // a: source host, b: beacon idx, c: window, d: payload bytes,
                // e: stats flag, v: source node index
  GwDuplicate,  // a: source host, b: beacon idx, c: window
  Assoc,        // a: host, b: parent host, c: ring, d: turn, e: hardware id
  AssocFail,    // a: hardware id, s: reason
  SweepRemove,  // node 0; a: removed host, b: beacon idx, c: removed node index
  SelfDisassoc, // station turned itself off
  PathBroken,   // s: trigger
  Fault,        // scheduled shutdown fired
  RouteDump,    // node -1; a: beacon idx, b: sta host, c: parent host, d: ring,
                // e: sta node index
  SlotOverrun,  // a: beacon idx, b: window, c: ring
  AccessFailure,// a: frame kind, b: beacon idx, c: window
  Note,         // s: free-form diagnostics
};

inline const char* ev_name(Ev e) {
  switch (e) {
    case Ev::RadioState: return "radio_state";
    case Ev::CpuState: return "cpu_state";
    case Ev::BeaconTx: return "beacon_tx";
    case Ev::BeaconRx: return "beacon_rx";
    case Ev::FrameTx: return "frame_tx";
    case Ev::FrameRx: return "frame_rx";
    case Ev::FrameLost: return "frame_lost";
    case Ev::PowerLevel: return "power_level";
    case Ev::PhaseStart: return "phase_start";
    case Ev::WindowStart: return "window_start";
    case Ev::PhaseEnd: return "phase_end";
    case Ev::Poison: return "poison";
    case Ev::AwakeDecision: return "awake_decision";
    case Ev::CacheCommit: return "cache_commit";
    case Ev::CacheClear: return "cache_clear";
    case Ev::GwHold: return "gw_hold";
    case Ev::GwDuplicate: return "gw_duplicate";
    case Ev::Assoc: return "assoc";
    case Ev::AssocFail: return "assoc_fail";
    case Ev::SweepRemove: return "sweep_remove";
    case Ev::SelfDisassoc: return "self_disassoc";
    case Ev::PathBroken: return "path_broken";
    case Ev::Fault: return "fault";
    case Ev::RouteDump: return "route_dump";
    case Ev::SlotOverrun: return "slot_overrun";
    case Ev::AccessFailure: return "access_failure";
    case Ev::Note: return "note";
  }
  return "?";
}

struct TraceRecord {
  SimTime t = 0;
  int node = -1;  // -1 = world-level record
  Ev ev = Ev::Note;
  std::int64_t a = 0, b = 0, c = 0, d = 0, e = 0;
  double v = 0.0;
  std::string s;
};

class Trace {
 public:
  TraceRecord& emit(TraceRecord r) {
    records_.push_back(std::move(r));
    return records_.back();
  }

  const std::vector<TraceRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  void write_csv(std::ostream& os) const {
    os << "time_us,node,event,a,b,c,d,e,v,s\n";
    char buf[64];
    for (const auto& r : records_) {
      std::snprintf(buf, sizeof buf, "%.6g", r.v);
      os << r.t << ',' << r.node << ',' << ev_name(r.ev) << ',' << r.a << ',' << r.b << ','
         << r.c << ',' << r.d << ',' << r.e << ',' << buf << ',' << escape(r.s) << '\n';
    }
  }

  void write_jsonl(std::ostream& os) const {
    char buf[64];
    for (const auto& r : records_) {
      std::snprintf(buf, sizeof buf, "%.6g", r.v);
      os << "{\"t\":" << r.t << ",\"node\":" << r.node << ",\"ev\":\"" << ev_name(r.ev)
         << "\",\"a\":" << r.a << ",\"b\":" << r.b << ",\"c\":" << r.c << ",\"d\":" << r.d
         << ",\"e\":" << r.e << ",\"v\":" << buf << ",\"s\":\"" << escape(r.s) << "\"}\n";
    }
  }

 private:
  static std::string escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
      if (ch == ',' || ch == '"' || ch == '\n' || ch == '\\') out.push_back('\\');
      out.push_back(ch);
    }
    return out;
  }

  std::vector<TraceRecord> records_;
};

// Helper for host lists carried in record strings.
inline std::string host_list(const std::vector<std::uint8_t>& hosts) {
  std::string s;
  for (std::size_t i = 0; i < hosts.size(); ++i) {
    if (i) s.push_back(';');
    s += std::to_string(hosts[i]);
  }
  return s;
}

}  // namespace hare::trace
