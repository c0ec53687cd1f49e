#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hare {

// Simulated time is kept in integer microseconds so that event ordering is
// exact and runs replay bit-identically.
using SimTime = std::int64_t;

constexpr SimTime us(std::int64_t v) { return v; }
constexpr SimTime ms(std::int64_t v) { return v * 1000; }
constexpr SimTime sec(std::int64_t v) { return v * 1'000'000; }
constexpr SimTime minutes(std::int64_t v) { return v * 60'000'000; }
constexpr SimTime hours(std::int64_t v) { return v * 3'600'000'000LL; }

constexpr double to_seconds(SimTime t) { return static_cast<double>(t) / 1e6; }

// Internal invariant check. Protocol contract violations surface as
// exceptions so tests can pin them.
inline void check(bool cond, const std::string& what) {
  if (!cond) throw std::logic_error("invariant violated: " + what);
}

}  // namespace hare
