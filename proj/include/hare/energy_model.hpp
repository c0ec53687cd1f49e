#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include "hare/radio_medium.hpp"
#include "hare/units.hpp"

namespace hare::energy {

// Current draw per operational state. Defaults are the published figures
// for the CC1200-class radio and Cortex-M3 microprocessor this stack was
// validated on; the transmit current spans 39-61 mA across power levels.
struct CurrentProfile {
  double i_cpu_ma = 13.0;
  double i_lpm_ma = 0.0004;  // 0.4 uA
  double i_rx_ma = 19.0;
  double i_sl_ma = 0.00012;  // 0.12 uA
  double i_tx_min_ma = 39.0;  // at -16 dBm
  double i_tx_max_ma = 61.0;  // at +14 dBm
  double v_dd = 3.3;
};

// Transmit current at a given output power: linear between the two
// published endpoints, which is the minimal assumption the data admits.
inline double tx_current_ma(double power_dbm, const CurrentProfile& p = {}) {
  if (power_dbm < radio::TxPowerLevel::kMinDbm - 1e-9 ||
      power_dbm > radio::TxPowerLevel::kMaxDbm + 1e-9)
    throw std::domain_error("tx power outside transceiver range");
  double span = radio::TxPowerLevel::kMaxDbm - radio::TxPowerLevel::kMinDbm;
  double frac = (power_dbm - radio::TxPowerLevel::kMinDbm) / span;
  return p.i_tx_min_ma + frac * (p.i_tx_max_ma - p.i_tx_min_ma);
}

// Time-in-state accumulators for one node. Two independent partitions are
// tracked: microprocessor {CPU, LPM} and radio {RX, TX-by-level, SL}.
struct EnergyLedger {
  SimTime t_cpu = 0;
  SimTime t_lpm = 0;
  SimTime t_rx = 0;
  SimTime t_sl = 0;
  std::array<SimTime, radio::TxPowerLevel::kMaxIndex + 1> t_tx{};

  SimTime t_tx_total() const {
    SimTime s = 0;
    for (auto v : t_tx) s += v;
    return s;
  }
  SimTime elapsed_cpu() const { return t_cpu + t_lpm; }
  SimTime elapsed_radio() const { return t_rx + t_tx_total() + t_sl; }

  // Both partitions must cover the same elapsed span (1 us slack covers
  // integer rounding at run end).
  bool partitions_consistent(SimTime elapsed, SimTime tol = 1) const {
    return std::llabs(elapsed_cpu() - elapsed) <= tol &&
           std::llabs(elapsed_radio() - elapsed) <= tol;
  }
};

struct EnergyBreakdown {
  double e_up_j = 0.0;     // microprocessor
  double e_radio_j = 0.0;  // radio module
  double e_total_j = 0.0;
};

inline EnergyBreakdown energy_total(const EnergyLedger& led, const CurrentProfile& p = {}) {
  double up = p.v_dd * (to_seconds(led.t_cpu) * p.i_cpu_ma + to_seconds(led.t_lpm) * p.i_lpm_ma) / 1000.0;
  double radio = p.v_dd * (to_seconds(led.t_rx) * p.i_rx_ma + to_seconds(led.t_sl) * p.i_sl_ma) / 1000.0;
  for (int lvl = 0; lvl <= radio::TxPowerLevel::kMaxIndex; ++lvl) {
    double dbm = radio::TxPowerLevel{lvl}.dbm();
    radio += p.v_dd * to_seconds(led.t_tx[lvl]) * tx_current_ma(dbm, p) / 1000.0;
  }
  return {up, radio, up + radio};
}

// Days an ideal battery lasts when one period costs `energy_per_period_j`.
// Extrapolating to a longer period assumes processor and radio sleep
// through the added idle time, so the extra span costs only the residual
// sleep currents.
inline double battery_lifetime_days(double energy_per_period_j, SimTime period,
                                    double battery_mah, const CurrentProfile& p = {}) {
  if (energy_per_period_j <= 0.0) return std::numeric_limits<double>::infinity();
  double capacity_j = battery_mah / 1000.0 * p.v_dd * 3600.0;
  double periods = capacity_j / energy_per_period_j;
  return periods * to_seconds(period) / 86400.0;
}

// Re-projects a measured period cost onto a different beacon period: the
// active-phase cost stays, the idle tail is billed at sleep currents.
inline double extrapolate_period_energy_j(double measured_energy_j, SimTime measured_period,
                                          SimTime target_period, const CurrentProfile& p = {}) {
  if (target_period < measured_period)
    throw std::domain_error("target period shorter than measured period");
  double sleep_power_w = p.v_dd * (p.i_lpm_ma + p.i_sl_ma) / 1000.0;
  double extra_s = to_seconds(target_period - measured_period);
  return measured_energy_j + sleep_power_w * extra_s;
}

inline double energy_per_bit_mj(double total_energy_j, std::int64_t delivered_payload_bits) {
  if (delivered_payload_bits <= 0) return std::numeric_limits<double>::quiet_NaN();
  return total_energy_j * 1000.0 / static_cast<double>(delivered_payload_bits);
}

}  // namespace hare::energy
