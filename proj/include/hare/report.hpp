#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hare/metrics.hpp"
#include "hare/scenario_io.hpp"
#include "hare/sim_engine.hpp"

namespace hare::report {

// ---------------------------------------------------------------------------
// Experiment grid: 2 topologies x 2 MACs x 4 error configurations
// ---------------------------------------------------------------------------

struct GridCell {
  TopologyMode topology = TopologyMode::MultiHop;
  MacModel mac = MacModel::XMac;
  radio::ErrorConfig errors;
  std::string error_label;

  std::string name() const {
    std::string t = topology == TopologyMode::SingleHop ? "single" : "multi";
    std::string m = mac == MacModel::NullMac ? "nullmac" : "xmac";
    return t + "_" + m + "_" + error_label;
  }
};

inline std::vector<GridCell> full_grid() {
  struct ErrRow {
    radio::ErrorConfig cfg;
    const char* label;
  };
  const ErrRow errors[] = {
      {{0.00, 0.00}, "e0_0"},
      {{0.10, 0.05}, "e10_5"},
      {{0.20, 0.10}, "e20_10"},
      {{0.30, 0.15}, "e30_15"},
  };
  std::vector<GridCell> cells;
  for (auto topo : {TopologyMode::SingleHop, TopologyMode::MultiHop})
    for (auto mac : {MacModel::NullMac, MacModel::XMac})
      for (const auto& er : errors) cells.push_back({topo, mac, er.cfg, er.label});
  return cells;
}

inline sim::Scenario apply_cell(sim::Scenario base, const GridCell& cell, std::uint64_t seed) {
  base.protocol.topology = cell.topology;
  base.protocol.mac = cell.mac;
  base.errors = cell.errors;
  base.seed = seed;
  return base;
}

// ---------------------------------------------------------------------------
// Batch execution
// ---------------------------------------------------------------------------

struct CellStats {
  GridCell cell;
  std::vector<metrics::MetricsReport> runs;  // one per seed, in seed order

  std::vector<double> pdr_mean() const { return moment(0); }
  std::vector<double> pdr_std() const { return moment(1); }

  double mean_sta_energy() const {
    double s = 0;
    for (const auto& r : runs) s += r.mean_sta_energy_j;
    return runs.empty() ? 0.0 : s / runs.size();
  }

  double mean_tx_per_packet() const {
    double s = 0;
    int n = 0;
    for (const auto& r : runs)
      if (!std::isnan(r.tx_per_packet)) {
        s += r.tx_per_packet;
        ++n;
      }
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : s / n;
  }

  // 95% confidence half-width for pdr[k] across seeds
  double pdr_ci_halfwidth(int k) const {
    if (runs.size() < 2) return 0.0;
    auto mean = pdr_mean();
    double var = 0;
    for (const auto& r : runs) var += (r.pdr[k] - mean[k]) * (r.pdr[k] - mean[k]);
    var /= (runs.size() - 1);
    return 1.96 * std::sqrt(var / runs.size());
  }

 private:
  std::vector<double> moment(int which) const {
    if (runs.empty()) return {};
    std::size_t w = runs[0].pdr.size();
    std::vector<double> mean(w, 0.0);
    for (const auto& r : runs)
      for (std::size_t k = 0; k < w; ++k) mean[k] += r.pdr[k];
    for (auto& v : mean) v /= runs.size();
    if (which == 0) return mean;
    std::vector<double> sd(w, 0.0);
    for (const auto& r : runs)
      for (std::size_t k = 0; k < w; ++k) sd[k] += (r.pdr[k] - mean[k]) * (r.pdr[k] - mean[k]);
    for (auto& v : sd) v = runs.size() > 1 ? std::sqrt(v / (runs.size() - 1)) : 0.0;
    return sd;
  }
};

// Runs every (cell, seed) world on a small pool; each world is fully
// isolated, so the only shared state is the task counter.
inline std::vector<CellStats> run_grid(const sim::Scenario& base, const std::vector<GridCell>& cells,
                                       int seeds, int jobs,
                                       std::vector<std::string>* failures = nullptr) {
  struct Task {
    int cell;
    int seed;
  };
  std::vector<Task> tasks;
  for (int c = 0; c < static_cast<int>(cells.size()); ++c)
    for (int s = 0; s < seeds; ++s) tasks.push_back({c, s});

  std::vector<CellStats> out(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    out[c].cell = cells[c];
    out[c].runs.resize(seeds);
  }

  std::atomic<std::size_t> next{0};
  std::mutex fail_mu;
  auto worker = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const auto& t = tasks[i];
      try {
        auto scn = apply_cell(base, cells[t.cell], base.seed + t.seed);
        sim::World world(scn);
        auto res = world.run();
        out[t.cell].runs[t.seed] = metrics::compute_metrics(res, scn);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(fail_mu);
        if (failures)
          failures->push_back(cells[t.cell].name() + " seed " + std::to_string(t.seed) + ": " +
                              e.what());
      }
    }
  };
  int n = std::max(1, jobs);
  std::vector<std::thread> pool;
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return out;
}

// ---------------------------------------------------------------------------
// CSV artifacts
// ---------------------------------------------------------------------------

inline void write_pdr_csv(std::ostream& os, const std::vector<CellStats>& cells) {
  os << "cell,topology,mac,error,window,pdr_mean,pdr_std,ci95_halfwidth\n";
  for (const auto& c : cells) {
    auto mean = c.pdr_mean();
    auto sd = c.pdr_std();
    for (std::size_t k = 0; k < mean.size(); ++k) {
      os << c.cell.name() << ','
         << (c.cell.topology == TopologyMode::SingleHop ? "single" : "multi") << ','
         << (c.cell.mac == MacModel::NullMac ? "nullmac" : "xmac") << ',' << c.cell.error_label
         << ',' << (k + 1) << ',' << mean[k] << ',' << sd[k] << ','
         << c.pdr_ci_halfwidth(static_cast<int>(k)) << '\n';
    }
  }
}

inline void write_summary_csv(std::ostream& os, const std::vector<CellStats>& cells) {
  os << "cell,topology,mac,error,runs,pdr_final_mean,mean_sta_energy_j,mean_sta_radio_j,"
        "tx_per_packet,energy_per_bit_mj,assoc_success\n";
  for (const auto& c : cells) {
    double radio = 0, epb = 0, assoc = 0;
    int n = 0;
    for (const auto& r : c.runs) {
      radio += r.mean_sta_radio_j;
      if (!std::isnan(r.energy_per_bit_mj)) epb += r.energy_per_bit_mj;
      assoc += r.association_success_rate;
      ++n;
    }
    auto mean = c.pdr_mean();
    os << c.cell.name() << ','
       << (c.cell.topology == TopologyMode::SingleHop ? "single" : "multi") << ','
       << (c.cell.mac == MacModel::NullMac ? "nullmac" : "xmac") << ',' << c.cell.error_label
       << ',' << c.runs.size() << ',' << (mean.empty() ? 0.0 : mean.back()) << ','
       << c.mean_sta_energy() << ',' << (n ? radio / n : 0) << ',' << c.mean_tx_per_packet() << ','
       << (n ? epb / n : 0) << ',' << (n ? assoc / n : 0) << '\n';
  }
}

// Per-run artifacts in the Table-style layout: one row per node with the
// time-in-state columns, the energy split, and battery projections.
inline void write_energy_csv(std::ostream& os, const metrics::MetricsReport& m) {
  os << "node,t_cpu_s,t_lpm_s,t_rx_s,t_tx_s,t_sl_s,e_up_j,e_radio_j,e_total_j,"
        "lifetime_days_tp3min,lifetime_days_tp1h,lifetime_days_tp4h\n";
  for (const auto& ne : m.node_energy) {
    os << ne.node << ',' << to_seconds(ne.ledger.t_cpu) << ',' << to_seconds(ne.ledger.t_lpm)
       << ',' << to_seconds(ne.ledger.t_rx) << ',' << to_seconds(ne.ledger.t_tx_total()) << ','
       << to_seconds(ne.ledger.t_sl) << ',' << ne.breakdown.e_up_j << ',' << ne.breakdown.e_radio_j
       << ',' << ne.breakdown.e_total_j << ',' << ne.lifetime_days_3min << ','
       << ne.lifetime_days_1h << ',' << ne.lifetime_days_4h << '\n';
  }
}

inline void write_links_csv(std::ostream& os, const metrics::MetricsReport& m) {
  os << "sta_node,parent_node,count\n";
  for (const auto& [pair, count] : m.links)
    os << pair.first << ',' << pair.second << ',' << count << '\n';
}

inline void write_power_csv(std::ostream& os, const trace::Trace& tr) {
  os << "time_us,node,level,level_dbm,reason\n";
  for (const auto& r : tr.records())
    if (r.ev == trace::Ev::PowerLevel)
      os << r.t << ',' << r.node << ',' << r.a << ',' << radio::TxPowerLevel{static_cast<int>(r.a)}.dbm()
         << ',' << r.s << '\n';
}

inline void write_routing_csv(std::ostream& os, const trace::Trace& tr) {
  os << "beacon,sta_host,parent_host,ring,sta_node\n";
  for (const auto& r : tr.records())
    if (r.ev == trace::Ev::RouteDump)
      os << r.a << ',' << r.b << ',' << r.c << ',' << r.d << ',' << r.e << '\n';
}

inline nlohmann::json metrics_to_json(const metrics::MetricsReport& m) {
  nlohmann::json j;
  j["pdr"] = m.pdr;
  j["tx_per_packet"] = m.tx_per_packet;
  j["association_success_rate"] = m.association_success_rate;
  j["mean_sta_energy_j"] = m.mean_sta_energy_j;
  j["mean_sta_radio_j"] = m.mean_sta_radio_j;
  j["mean_sta_up_j"] = m.mean_sta_up_j;
  j["energy_per_bit_mj"] = m.energy_per_bit_mj;
  j["delivered_app_payloads"] = m.delivered_app_payloads;
  j["max_clock_skew_us"] = m.max_clock_skew_us;
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& ne : m.node_energy)
    nodes.push_back({{"node", ne.node},
                     {"e_total_j", ne.breakdown.e_total_j},
                     {"e_radio_j", ne.breakdown.e_radio_j},
                     {"e_up_j", ne.breakdown.e_up_j},
                     {"lifetime_days_tp3min", ne.lifetime_days_3min},
                     {"lifetime_days_tp1h", ne.lifetime_days_1h},
                     {"lifetime_days_tp4h", ne.lifetime_days_4h}});
  j["nodes"] = nodes;
  return j;
}

// ---------------------------------------------------------------------------
// SVG charts
// ---------------------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<double> y;
};

// Minimal line chart (PDR vs window count and friends).
inline std::string line_chart_svg(const std::string& title, const std::vector<Series>& series,
                                  double y_min = 0.0, double y_max = 1.0) {
  const int w = 640, h = 400, ml = 60, mr = 160, mt = 40, mb = 40;
  const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::size_t max_n = 1;
  for (const auto& s : series) max_n = std::max(max_n, s.y.size());
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  os << "<text x='" << w / 2 << "' y='20' text-anchor='middle' font-size='15'>" << title
     << "</text>\n";
  auto X = [&](double i) { return ml + i * (w - ml - mr) / std::max<std::size_t>(1, max_n - 1); };
  auto Y = [&](double v) { return h - mb - (v - y_min) / (y_max - y_min) * (h - mt - mb); };
  os << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
     << "' stroke='black'/>\n";
  os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
     << "' stroke='black'/>\n";
  for (int g = 0; g <= 4; ++g) {
    double v = y_min + (y_max - y_min) * g / 4.0;
    os << "<text x='" << ml - 8 << "' y='" << Y(v) + 4 << "' text-anchor='end' font-size='11'>"
       << std::fixed << std::setprecision(2) << v << "</text>\n";
  }
  for (std::size_t i = 0; i < max_n; ++i)
    os << "<text x='" << X(static_cast<double>(i)) << "' y='" << h - mb + 16
       << "' text-anchor='middle' font-size='11'>" << (i + 1) << "</text>\n";
  int ci = 0;
  for (const auto& s : series) {
    const char* color = palette[ci % 10];
    os << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
    for (std::size_t i = 0; i < s.y.size(); ++i)
      os << X(static_cast<double>(i)) << ',' << Y(std::min(y_max, std::max(y_min, s.y[i]))) << ' ';
    os << "'/>\n";
    os << "<text x='" << w - mr + 10 << "' y='" << mt + 14 * ci + 10 << "' font-size='11' fill='"
       << color << "'>" << s.label << "</text>\n";
    ++ci;
  }
  os << "</svg>\n";
  return os.str();
}

struct Bar {
  std::string label;
  double value = 0.0;
};

inline std::string bar_chart_svg(const std::string& title, const std::vector<Bar>& bars,
                                 const std::string& unit) {
  const int w = 720, h = 420, ml = 70, mt = 40, mb = 120;
  double vmax = 1e-12;
  for (const auto& b : bars) vmax = std::max(vmax, b.value);
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  os << "<text x='" << w / 2 << "' y='20' text-anchor='middle' font-size='15'>" << title << " ("
     << unit << ")</text>\n";
  double bw = static_cast<double>(w - ml - 20) / std::max<std::size_t>(1, bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    double bh = bars[i].value / vmax * (h - mt - mb);
    double x = ml + i * bw;
    os << "<rect x='" << x + 3 << "' y='" << h - mb - bh << "' width='" << bw - 6 << "' height='"
       << bh << "' fill='#4477aa'/>\n";
    os << "<text x='" << x + bw / 2 << "' y='" << h - mb - bh - 4
       << "' text-anchor='middle' font-size='10'>" << std::fixed << std::setprecision(2)
       << bars[i].value << "</text>\n";
    os << "<g transform='translate(" << x + bw / 2 << "," << h - mb + 10 << ") rotate(45)'>"
       << "<text font-size='10'>" << bars[i].label << "</text></g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Directory layout for runs and grids
// ---------------------------------------------------------------------------

inline void write_run_artifacts(const std::filesystem::path& dir, const sim::RunResult& res,
                                const metrics::MetricsReport& m, bool with_trace) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "metrics.json");
    f << metrics_to_json(m).dump(2) << '\n';
  }
  {
    std::ofstream f(dir / "energy.csv");
    write_energy_csv(f, m);
  }
  {
    std::ofstream f(dir / "routing.csv");
    write_routing_csv(f, res.trace);
  }
  {
    std::ofstream f(dir / "power.csv");
    write_power_csv(f, res.trace);
  }
  {
    std::ofstream f(dir / "links.csv");
    write_links_csv(f, m);
  }
  if (with_trace) {
    std::ofstream f(dir / "trace.csv");
    res.trace.write_csv(f);
  }
}

inline void write_grid_artifacts(const std::filesystem::path& dir,
                                 const std::vector<CellStats>& cells) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "summary.csv");
    write_summary_csv(f, cells);
  }
  {
    std::ofstream f(dir / "pdr.csv");
    write_pdr_csv(f, cells);
  }
  for (auto mac : {MacModel::NullMac, MacModel::XMac}) {
    std::vector<Series> series;
    for (const auto& c : cells)
      if (c.cell.mac == mac) series.push_back({c.cell.name(), c.pdr_mean()});
    if (series.empty()) continue;
    std::string name = mac == MacModel::NullMac ? "pdr_nullmac.svg" : "pdr_xmac.svg";
    std::ofstream f(dir / name);
    f << line_chart_svg("Packet delivery ratio vs transmission windows", series, 0.5, 1.0);
  }
  {
    std::vector<Bar> bars;
    for (const auto& c : cells) bars.push_back({c.cell.name(), c.mean_sta_energy()});
    std::ofstream f(dir / "energy.svg");
    f << bar_chart_svg("Mean station energy per run", bars, "J");
  }
  {
    std::vector<Bar> bars;
    for (const auto& c : cells) {
      double v = c.mean_tx_per_packet();
      bars.push_back({c.cell.name(), std::isnan(v) ? 0.0 : v});
    }
    std::ofstream f(dir / "tx_per_packet.svg");
    f << bar_chart_svg("Transmissions per delivered packet", bars, "ratio");
  }
}

}  // namespace hare::report
