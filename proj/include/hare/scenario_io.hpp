#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hare/sim_scenario.hpp"

namespace hare::io {

using nlohmann::json;

struct LoadResult {
  sim::Scenario scenario;
  std::vector<std::string> errors;  // located messages; empty = usable

  bool ok() const { return errors.empty(); }
};

namespace detail {

inline void reject_unknown(const json& obj, const std::string& where,
                           const std::set<std::string>& allowed, std::vector<std::string>& errs) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.contains(it.key())) errs.push_back(where + ": unknown key '" + it.key() + "'");
}

template <typename T>
void get(const json& obj, const std::string& where, const std::string& key, T& out,
         std::vector<std::string>& errs) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const std::exception&) {
    errs.push_back(where + "." + key + ": wrong type");
  }
}

inline void get_ms(const json& obj, const std::string& where, const std::string& key, SimTime& out,
                   std::vector<std::string>& errs) {
  double v = static_cast<double>(out) / 1000.0;
  get(obj, where, key, v, errs);
  out = static_cast<SimTime>(v * 1000.0);
}

inline void get_seconds(const json& obj, const std::string& where, const std::string& key,
                        SimTime& out, std::vector<std::string>& errs) {
  double v = to_seconds(out);
  get(obj, where, key, v, errs);
  out = static_cast<SimTime>(v * 1e6);
}

}  // namespace detail

// Parses and fully validates a scenario document. Unknown keys are
// rejected; every complaint carries the dotted path it refers to.
inline LoadResult parse_scenario(const json& doc) {
  using detail::get;
  using detail::get_ms;
  using detail::get_seconds;
  using detail::reject_unknown;

  LoadResult out;
  auto& s = out.scenario;
  auto& errs = out.errors;

  if (!doc.is_object()) {
    errs.push_back("document: not a JSON object");
    return out;
  }
  reject_unknown(doc, "document",
                 {"version", "name", "placements", "channel", "error", "protocol", "mac_params",
                  "timing", "turn_plan", "beacons", "faults", "link_blocks", "seed", "payload",
                  "cache_capacity_bytes"},
                 errs);

  int version = 1;
  get(doc, "document", "version", version, errs);
  if (version != 1) errs.push_back("version: unsupported schema version");
  get(doc, "document", "name", s.name, errs);
  get(doc, "document", "seed", s.seed, errs);
  get(doc, "document", "cache_capacity_bytes", s.cache_capacity_bytes, errs);

  if (doc.contains("placements")) {
    if (!doc["placements"].is_array()) {
      errs.push_back("placements: must be an array");
    } else {
      int i = 0;
      for (const auto& p : doc["placements"]) {
        std::string where = "placements[" + std::to_string(i) + "]";
        reject_unknown(p, where, {"id", "x", "y", "gateway"}, errs);
        radio::NodePlacement np;
        np.id = i;
        get(p, where, "id", np.id, errs);
        get(p, where, "x", np.x, errs);
        get(p, where, "y", np.y, errs);
        get(p, where, "gateway", np.gateway, errs);
        s.placements.push_back(np);
        ++i;
      }
    }
  } else {
    errs.push_back("placements: required");
  }

  if (doc.contains("channel")) {
    const auto& c = doc["channel"];
    reject_unknown(c, "channel",
                   {"path_loss_exponent", "reference_loss_db", "sensitivity_dbm",
                    "shadowing_sigma_db"},
                   errs);
    get(c, "channel", "path_loss_exponent", s.channel.path_loss_exponent, errs);
    get(c, "channel", "reference_loss_db", s.channel.reference_loss_db, errs);
    get(c, "channel", "sensitivity_dbm", s.channel.sensitivity_dbm, errs);
    get(c, "channel", "shadowing_sigma_db", s.channel.shadowing_sigma_db, errs);
  }

  if (doc.contains("error")) {
    const auto& e = doc["error"];
    reject_unknown(e, "error", {"data", "ack"}, errs);
    get(e, "error", "data", s.errors.data_error_prob, errs);
    get(e, "error", "ack", s.errors.ack_error_prob, errs);
  }

  if (doc.contains("protocol")) {
    const auto& p = doc["protocol"];
    reject_unknown(p, "protocol",
                   {"t_p_s", "k_s", "n_pr", "n_pd", "t_d_s", "windows", "max_children",
                    "max_payload", "routing_weights", "rssi_min_dbm", "rssi_max_dbm", "topology",
                    "mac", "renew_all_on_assoc"},
                   errs);
    get_seconds(p, "protocol", "t_p_s", s.protocol.t_p, errs);
    get(p, "protocol", "k_s", s.protocol.k_s, errs);
    get(p, "protocol", "n_pr", s.protocol.n_pr, errs);
    get(p, "protocol", "n_pd", s.protocol.n_pd, errs);
    get_seconds(p, "protocol", "t_d_s", s.protocol.t_d, errs);
    get(p, "protocol", "windows", s.protocol.windows, errs);
    get(p, "protocol", "max_children", s.protocol.max_children, errs);
    get(p, "protocol", "max_payload", s.protocol.max_payload, errs);
    if (p.contains("routing_weights")) {
      auto w = p["routing_weights"];
      if (!w.is_array() || w.size() != 4) {
        errs.push_back("protocol.routing_weights: need exactly four numbers");
      } else {
        s.protocol.routing_weights = {w[0].get<double>(), w[1].get<double>(), w[2].get<double>(),
                                      w[3].get<double>()};
      }
    }
    get(p, "protocol", "rssi_min_dbm", s.protocol.rssi_min_dbm, errs);
    get(p, "protocol", "rssi_max_dbm", s.protocol.rssi_max_dbm, errs);
    if (p.contains("topology")) {
      std::string t = p["topology"].get<std::string>();
      if (t == "single_hop")
        s.protocol.topology = TopologyMode::SingleHop;
      else if (t == "multi_hop")
        s.protocol.topology = TopologyMode::MultiHop;
      else
        errs.push_back("protocol.topology: expected 'single_hop' or 'multi_hop'");
    }
    if (p.contains("mac")) {
      std::string m = p["mac"].get<std::string>();
      if (m == "nullmac")
        s.protocol.mac = MacModel::NullMac;
      else if (m == "xmac")
        s.protocol.mac = MacModel::XMac;
      else
        errs.push_back("protocol.mac: expected 'nullmac' or 'xmac'");
    }
    get(p, "protocol", "renew_all_on_assoc", s.protocol.renew_all_on_assoc, errs);
  }

  if (doc.contains("mac_params")) {
    const auto& mp = doc["mac_params"];
    reject_unknown(mp, "mac_params", {"csma", "xmac"}, errs);
    if (mp.contains("csma")) {
      const auto& c = mp["csma"];
      reject_unknown(c, "mac_params.csma",
                     {"mac_min_be", "mac_max_be", "mac_max_csma_backoffs", "unit_backoff_us",
                      "turnaround_us"},
                     errs);
      get(c, "mac_params.csma", "mac_min_be", s.csma.mac_min_be, errs);
      get(c, "mac_params.csma", "mac_max_be", s.csma.mac_max_be, errs);
      get(c, "mac_params.csma", "mac_max_csma_backoffs", s.csma.mac_max_csma_backoffs, errs);
      get(c, "mac_params.csma", "unit_backoff_us", s.csma.unit_backoff, errs);
      get(c, "mac_params.csma", "turnaround_us", s.csma.turnaround, errs);
    }
    if (mp.contains("xmac")) {
      const auto& x = mp["xmac"];
      reject_unknown(x, "mac_params.xmac",
                     {"wake_interval_ms", "sample_duration_ms", "strobe_max_ms"}, errs);
      get_ms(x, "mac_params.xmac", "wake_interval_ms", s.xmac.wake_interval, errs);
      get_ms(x, "mac_params.xmac", "sample_duration_ms", s.xmac.sample_duration, errs);
      get_ms(x, "mac_params.xmac", "strobe_max_ms", s.xmac.strobe_max, errs);
    }
  }

  if (doc.contains("timing")) {
    const auto& t = doc["timing"];
    reject_unknown(t, "timing",
                   {"bitrate_bps", "beacon_guard_ms", "beacon_grace_ms", "assoc_turn_ms",
                    "sta_assoc_turn_ms", "discovery_jitter_ms", "response_start_ms",
                    "response_subslot_ms", "select_after_ms", "window_duration_ms", "ack_tail_ms",
                    "e2e_gap_ms", "slot_jitter_ms", "retry_pacing_min_ms", "retry_pacing_max_ms",
                    "interframe_gap_ms", "phase_gap_ms", "cpu_event_cost_ms", "clock_drift_ppm"},
                   errs);
    get(t, "timing", "bitrate_bps", s.timing.bitrate_bps, errs);
    get_ms(t, "timing", "beacon_guard_ms", s.timing.beacon_guard, errs);
    get_ms(t, "timing", "beacon_grace_ms", s.timing.beacon_grace, errs);
    get_ms(t, "timing", "assoc_turn_ms", s.timing.assoc_turn, errs);
    get_ms(t, "timing", "sta_assoc_turn_ms", s.timing.sta_assoc_turn, errs);
    get_ms(t, "timing", "discovery_jitter_ms", s.timing.discovery_jitter, errs);
    get_ms(t, "timing", "response_start_ms", s.timing.response_start, errs);
    get_ms(t, "timing", "response_subslot_ms", s.timing.response_subslot, errs);
    get_ms(t, "timing", "select_after_ms", s.timing.select_after, errs);
    get_ms(t, "timing", "window_duration_ms", s.timing.window_duration, errs);
    get_ms(t, "timing", "ack_tail_ms", s.timing.ack_tail, errs);
    get_ms(t, "timing", "e2e_gap_ms", s.timing.e2e_gap, errs);
    get_ms(t, "timing", "slot_jitter_ms", s.timing.slot_jitter, errs);
    get_ms(t, "timing", "retry_pacing_min_ms", s.timing.retry_pacing_min, errs);
    get_ms(t, "timing", "retry_pacing_max_ms", s.timing.retry_pacing_max, errs);
    get_ms(t, "timing", "interframe_gap_ms", s.timing.interframe_gap, errs);
    get_ms(t, "timing", "phase_gap_ms", s.timing.phase_gap, errs);
    get_ms(t, "timing", "cpu_event_cost_ms", s.timing.cpu_event_cost, errs);
    get(t, "timing", "clock_drift_ppm", s.timing.clock_drift_ppm, errs);
  }

  if (doc.contains("turn_plan")) {
    const auto& tp = doc["turn_plan"];
    reject_unknown(tp, "turn_plan", {"turns", "thresholds_dbm"}, errs);
    get(tp, "turn_plan", "turns", s.assoc_turns, errs);
    if (tp.contains("thresholds_dbm")) {
      try {
        s.turn_plan.thresholds_dbm = tp["thresholds_dbm"].get<std::vector<double>>();
      } catch (const std::exception&) {
        errs.push_back("turn_plan.thresholds_dbm: wrong type");
      }
    }
  }

  if (doc.contains("beacons")) {
    const auto& b = doc["beacons"];
    reject_unknown(b, "beacons", {"count", "association", "statistics"}, errs);
    get(b, "beacons", "count", s.beacons.count, errs);
    if (b.contains("association")) {
      try {
        auto v = b["association"].get<std::vector<int>>();
        s.beacons.association = std::set<int>(v.begin(), v.end());
      } catch (const std::exception&) {
        errs.push_back("beacons.association: wrong type");
      }
    }
    if (b.contains("statistics")) {
      try {
        auto v = b["statistics"].get<std::vector<int>>();
        s.beacons.statistics = std::set<int>(v.begin(), v.end());
      } catch (const std::exception&) {
        errs.push_back("beacons.statistics: wrong type");
      }
    }
  }

  if (doc.contains("faults")) {
    int i = 0;
    for (const auto& f : doc["faults"]) {
      std::string where = "faults[" + std::to_string(i++) + "]";
      reject_unknown(f, where, {"node", "after_beacon"}, errs);
      sim::Fault fault;
      get(f, where, "node", fault.node, errs);
      get(f, where, "after_beacon", fault.after_beacon, errs);
      s.faults.push_back(fault);
    }
  }

  if (doc.contains("link_blocks")) {
    int i = 0;
    for (const auto& lb : doc["link_blocks"]) {
      std::string where = "link_blocks[" + std::to_string(i++) + "]";
      reject_unknown(lb, where, {"tx", "rx", "beacon", "window"}, errs);
      sim::LinkBlock block;
      get(lb, where, "tx", block.tx_node, errs);
      get(lb, where, "rx", block.rx_node, errs);
      get(lb, where, "beacon", block.beacon, errs);
      get(lb, where, "window", block.window, errs);
      s.link_blocks.push_back(block);
    }
  }

  if (doc.contains("payload")) {
    const auto& p = doc["payload"];
    reject_unknown(p, "payload", {"application_bytes", "statistics_bytes"}, errs);
    get(p, "payload", "application_bytes", s.app_payload_bytes, errs);
    get(p, "payload", "statistics_bytes", s.stats_payload_bytes, errs);
  }

  // a non-zero n_pr generates the association cadence when the plan only
  // names the first beacon
  if (s.protocol.n_pr > 0 && s.beacons.association.size() <= 1) {
    s.beacons.association.clear();
    for (int b = 1; b <= s.beacons.count; b += s.protocol.n_pr) s.beacons.association.insert(b);
  }

  if (errs.empty())
    for (const auto& e : s.validate()) errs.push_back(e);
  return out;
}

inline LoadResult load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    LoadResult r;
    r.errors.push_back(path + ": cannot open file");
    return r;
  }
  json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    LoadResult r;
    r.errors.push_back(path + ": JSON parse error: " + e.what());
    return r;
  }
  return parse_scenario(doc);
}

// Applies `--set key=value` style overrides (dotted paths) onto a raw
// scenario document before parsing.
inline std::optional<std::string> apply_override(json& doc, const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos) return "override '" + spec + "' is not key=value";
  std::string path = spec.substr(0, eq);
  std::string value = spec.substr(eq + 1);
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const std::exception&) {
    parsed = value;  // plain string
  }
  std::string pointer = "/" + path;
  for (auto& ch : pointer)
    if (ch == '.') ch = '/';
  try {
    doc[json::json_pointer(pointer)] = parsed;
  } catch (const std::exception& e) {
    return "override '" + spec + "': " + e.what();
  }
  return std::nullopt;
}

// Serializes a scenario back into the schema parse_scenario() accepts.
inline json scenario_to_json(const sim::Scenario& s) {
  json doc;
  doc["version"] = 1;
  doc["name"] = s.name;
  doc["seed"] = s.seed;
  doc["placements"] = json::array();
  for (const auto& p : s.placements) {
    json jp{{"id", p.id}, {"x", p.x}, {"y", p.y}};
    if (p.gateway) jp["gateway"] = true;
    doc["placements"].push_back(jp);
  }
  doc["channel"] = {{"path_loss_exponent", s.channel.path_loss_exponent},
                    {"reference_loss_db", s.channel.reference_loss_db},
                    {"sensitivity_dbm", s.channel.sensitivity_dbm},
                    {"shadowing_sigma_db", s.channel.shadowing_sigma_db}};
  doc["error"] = {{"data", s.errors.data_error_prob}, {"ack", s.errors.ack_error_prob}};
  doc["protocol"] = {
      {"t_p_s", to_seconds(s.protocol.t_p)},
      {"k_s", s.protocol.k_s},
      {"n_pr", s.protocol.n_pr},
      {"n_pd", s.protocol.n_pd},
      {"t_d_s", to_seconds(s.protocol.t_d)},
      {"windows", s.protocol.windows},
      {"max_children", s.protocol.max_children},
      {"max_payload", s.protocol.max_payload},
      {"routing_weights",
       {s.protocol.routing_weights.a1, s.protocol.routing_weights.a2, s.protocol.routing_weights.a3,
        s.protocol.routing_weights.a4}},
      {"rssi_min_dbm", s.protocol.rssi_min_dbm},
      {"rssi_max_dbm", s.protocol.rssi_max_dbm},
      {"topology", s.protocol.topology == TopologyMode::SingleHop ? "single_hop" : "multi_hop"},
      {"mac", s.protocol.mac == MacModel::NullMac ? "nullmac" : "xmac"},
      {"renew_all_on_assoc", s.protocol.renew_all_on_assoc}};
  doc["mac_params"] = {{"csma",
                        {{"mac_min_be", s.csma.mac_min_be},
                         {"mac_max_be", s.csma.mac_max_be},
                         {"mac_max_csma_backoffs", s.csma.mac_max_csma_backoffs},
                         {"unit_backoff_us", s.csma.unit_backoff},
                         {"turnaround_us", s.csma.turnaround}}},
                       {"xmac",
                        {{"wake_interval_ms", s.xmac.wake_interval / 1000.0},
                         {"sample_duration_ms", s.xmac.sample_duration / 1000.0},
                         {"strobe_max_ms", s.xmac.strobe_max / 1000.0}}}};
  doc["timing"] = {{"bitrate_bps", s.timing.bitrate_bps},
                   {"beacon_guard_ms", s.timing.beacon_guard / 1000.0},
                   {"beacon_grace_ms", s.timing.beacon_grace / 1000.0},
                   {"assoc_turn_ms", s.timing.assoc_turn / 1000.0},
                   {"sta_assoc_turn_ms", s.timing.sta_assoc_turn / 1000.0},
                   {"discovery_jitter_ms", s.timing.discovery_jitter / 1000.0},
                   {"response_start_ms", s.timing.response_start / 1000.0},
                   {"response_subslot_ms", s.timing.response_subslot / 1000.0},
                   {"select_after_ms", s.timing.select_after / 1000.0},
                   {"window_duration_ms", s.timing.window_duration / 1000.0},
                   {"ack_tail_ms", s.timing.ack_tail / 1000.0},
                   {"e2e_gap_ms", s.timing.e2e_gap / 1000.0},
                   {"slot_jitter_ms", s.timing.slot_jitter / 1000.0},
                   {"retry_pacing_min_ms", s.timing.retry_pacing_min / 1000.0},
                   {"retry_pacing_max_ms", s.timing.retry_pacing_max / 1000.0},
                   {"interframe_gap_ms", s.timing.interframe_gap / 1000.0},
                   {"phase_gap_ms", s.timing.phase_gap / 1000.0},
                   {"cpu_event_cost_ms", s.timing.cpu_event_cost / 1000.0},
                   {"clock_drift_ppm", s.timing.clock_drift_ppm}};
  doc["turn_plan"] = json{{"turns", s.assoc_turns}};
  if (!s.turn_plan.thresholds_dbm.empty())
    doc["turn_plan"]["thresholds_dbm"] = s.turn_plan.thresholds_dbm;
  doc["beacons"] = {{"count", s.beacons.count},
                    {"association", std::vector<int>(s.beacons.association.begin(),
                                                     s.beacons.association.end())},
                    {"statistics", std::vector<int>(s.beacons.statistics.begin(),
                                                    s.beacons.statistics.end())}};
  if (!s.faults.empty()) {
    doc["faults"] = json::array();
    for (const auto& f : s.faults)
      doc["faults"].push_back({{"node", f.node}, {"after_beacon", f.after_beacon}});
  }
  if (!s.link_blocks.empty()) {
    doc["link_blocks"] = json::array();
    for (const auto& lb : s.link_blocks)
      doc["link_blocks"].push_back(
          {{"tx", lb.tx_node}, {"rx", lb.rx_node}, {"beacon", lb.beacon}, {"window", lb.window}});
  }
  doc["payload"] = {{"application_bytes", s.app_payload_bytes},
                    {"statistics_bytes", s.stats_payload_bytes}};
  doc["cache_capacity_bytes"] = s.cache_capacity_bytes;
  return doc;
}

}  // namespace hare::io
