// Command-line front end: validate scenario files, run single simulations,
// sweep the topology/MAC/error grid, and rebuild reports from stored runs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hare/metrics.hpp"
#include "hare/report.hpp"
#include "hare/scenario_io.hpp"
#include "hare/sim_engine.hpp"

namespace fs = std::filesystem;
using namespace hare;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

fs::path default_out_root() {
  if (const char* env = std::getenv("HARE_OUT_ROOT")) return fs::path(env);
  return fs::path("out");
}

// Loads a scenario with --set overrides already applied to the document.
io::LoadResult load_with_overrides(const std::string& path,
                                   const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) {
    io::LoadResult r;
    r.errors.push_back(path + ": cannot open file");
    return r;
  }
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    io::LoadResult r;
    r.errors.push_back(path + ": JSON parse error: " + e.what());
    return r;
  }
  for (const auto& o : overrides) {
    if (auto err = io::apply_override(doc, o)) {
      io::LoadResult r;
      r.errors.push_back(*err);
      return r;
    }
  }
  return io::parse_scenario(doc);
}

int report_errors(const io::LoadResult& lr) {
  for (const auto& e : lr.errors) std::cerr << "error: " << e << "\n";
  return kExitValidation;
}

int cmd_validate(const std::string& path, const std::vector<std::string>& overrides) {
  auto lr = load_with_overrides(path, overrides);
  if (!lr.ok()) return report_errors(lr);
  std::cout << "ok: " << lr.scenario.name << " (" << lr.scenario.placements.size() - 1
            << " stations, " << lr.scenario.beacons.count << " beacons)\n";
  return kExitOk;
}

int cmd_run(const std::string& path, const std::vector<std::string>& overrides,
            std::uint64_t seed_override, bool has_seed, const std::string& out,
            bool with_trace) {
  auto lr = load_with_overrides(path, overrides);
  if (!lr.ok()) return report_errors(lr);
  auto scn = lr.scenario;
  if (has_seed) scn.seed = seed_override;
  try {
    sim::World world(scn);
    auto res = world.run();
    auto m = metrics::compute_metrics(res, scn);
    fs::path dir = out.empty() ? default_out_root() / scn.name / ("seed_" + std::to_string(scn.seed))
                               : fs::path(out);
    report::write_run_artifacts(dir, res, m, with_trace);
    std::cout << "run complete: " << res.events_processed << " events, "
              << res.trace.size() << " trace records\n";
    std::cout << "  pdr:";
    for (double v : m.pdr) std::cout << ' ' << v;
    std::cout << "\n  mean station energy: " << m.mean_sta_energy_j << " J\n";
    std::cout << "  artifacts: " << dir.string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_grid(const std::string& path, const std::vector<std::string>& overrides, int seeds,
             int jobs, const std::string& out) {
  auto lr = load_with_overrides(path, overrides);
  if (!lr.ok()) return report_errors(lr);
  const auto& scn = lr.scenario;
  try {
    auto cells = report::full_grid();
    std::vector<std::string> failures;
    auto stats = report::run_grid(scn, cells, seeds, jobs, &failures);
    for (const auto& f : failures) std::cerr << "cell failure: " << f << "\n";

    fs::path dir = out.empty() ? default_out_root() / (scn.name + "_grid") : fs::path(out);
    report::write_grid_artifacts(dir, stats);
    for (const auto& cell : stats) {
      fs::path cd = dir / cell.cell.name();
      fs::create_directories(cd);
      for (std::size_t s = 0; s < cell.runs.size(); ++s) {
        std::ofstream f(cd / ("metrics_seed_" + std::to_string(s) + ".json"));
        f << report::metrics_to_json(cell.runs[s]).dump(2) << '\n';
      }
    }
    std::cout << "grid complete: " << cells.size() << " cells x " << seeds << " seeds\n";
    for (const auto& cell : stats) {
      auto mean = cell.pdr_mean();
      std::cout << "  " << cell.cell.name() << ": pdr[w]=" << (mean.empty() ? 0.0 : mean.back())
                << " energy=" << cell.mean_sta_energy() << " J\n";
    }
    std::cout << "  artifacts: " << dir.string() << "\n";
    return failures.empty() ? kExitOk : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_report(const std::string& dir_str) {
  fs::path dir(dir_str);
  if (!fs::is_directory(dir)) {
    std::cerr << "error: " << dir_str << " is not a directory\n";
    return kExitValidation;
  }
  // rebuild cell statistics from the stored per-seed metrics
  std::vector<report::CellStats> cells;
  auto grid = report::full_grid();
  for (const auto& cell : grid) {
    fs::path cd = dir / cell.name();
    if (!fs::is_directory(cd)) continue;
    report::CellStats stats;
    stats.cell = cell;
    for (int s = 0;; ++s) {
      fs::path mf = cd / ("metrics_seed_" + std::to_string(s) + ".json");
      if (!fs::exists(mf)) break;
      std::ifstream in(mf);
      nlohmann::json j;
      in >> j;
      metrics::MetricsReport m;
      m.pdr = j.value("pdr", std::vector<double>{});
      m.tx_per_packet = j.value("tx_per_packet", 0.0);
      m.association_success_rate = j.value("association_success_rate", 1.0);
      m.mean_sta_energy_j = j.value("mean_sta_energy_j", 0.0);
      m.mean_sta_radio_j = j.value("mean_sta_radio_j", 0.0);
      m.mean_sta_up_j = j.value("mean_sta_up_j", 0.0);
      m.energy_per_bit_mj = j.value("energy_per_bit_mj", 0.0);
      stats.runs.push_back(std::move(m));
    }
    if (!stats.runs.empty()) cells.push_back(std::move(stats));
  }
  if (cells.empty()) {
    std::cerr << "error: no per-seed metrics found under " << dir_str << "\n";
    return kExitValidation;
  }
  report::write_grid_artifacts(dir, cells);
  std::cout << "report rebuilt for " << cells.size() << " cells: " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulator for a beaconed TDMA LPWAN stack"};
  app.require_subcommand(1);

  std::string scenario_path, out_dir, report_dir;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  int seeds = 30, jobs = static_cast<int>(std::thread::hardware_concurrency());
  bool with_trace = false;

  auto* validate = app.add_subcommand("validate", "Parse and validate a scenario file");
  validate->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  validate->add_option("--set", overrides, "Override a scalar key (dotted path, key=value)");

  auto* run = app.add_subcommand("run", "Run one scenario and write its artifacts");
  run->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  auto* seed_opt = run->add_option("--seed", seed, "Seed override");
  run->add_option("--out", out_dir, "Output directory (default $HARE_OUT_ROOT/<name>/seed_<n>)");
  run->add_flag("--trace", with_trace, "Also write the full event trace CSV");
  run->add_option("--set", overrides, "Override a scalar key (dotted path, key=value)");

  auto* grid = app.add_subcommand(
      "grid", "Sweep the 2 topologies x 2 MACs x 4 error configurations grid");
  grid->add_option("scenario", scenario_path, "Scenario template JSON file")->required();
  grid->add_option("--seeds", seeds, "Seeds per cell (default 30)");
  grid->add_option("--jobs", jobs, "Worker threads");
  grid->add_option("--out", out_dir, "Output directory");
  grid->add_option("--set", overrides, "Override a scalar key (dotted path, key=value)");

  auto* rep = app.add_subcommand("report", "Rebuild summary and charts from a grid directory");
  rep->add_option("dir", report_dir, "Grid output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (validate->parsed()) return cmd_validate(scenario_path, overrides);
  if (run->parsed())
    return cmd_run(scenario_path, overrides, seed, seed_opt->count() > 0, out_dir, with_trace);
  if (grid->parsed()) return cmd_grid(scenario_path, overrides, seeds, jobs, out_dir);
  if (rep->parsed()) return cmd_report(report_dir);
  return kExitValidation;
}
