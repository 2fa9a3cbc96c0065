#pragma once

#include <cmath>
#include <compare>
#include <cstdint>

namespace canhil {

/// Simulation clock value in bus bit times. Tick 0 is scenario start.
struct SimTime {
  std::uint64_t ticks = 0;

  constexpr auto operator<=>(const SimTime&) const = default;

  constexpr SimTime operator+(std::uint64_t dt) const { return {ticks + dt}; }
  constexpr SimTime& operator+=(std::uint64_t dt) {
    ticks += dt;
    return *this;
  }
  constexpr std::uint64_t operator-(SimTime other) const {
    return ticks - other.ticks;
  }
};

/// Nominal bus bitrate; converts between bit ticks and wall units.
struct Bitrate {
  std::uint32_t bits_per_second = 500'000;

  constexpr auto operator<=>(const Bitrate&) const = default;

  double bit_time_us() const { return 1e6 / bits_per_second; }
  double to_us(std::uint64_t ticks) const {
    return static_cast<double>(ticks) * 1e6 / bits_per_second;
  }
  double to_us(SimTime t) const { return to_us(t.ticks); }

  // Smallest tick count whose duration is >= `us`.
  std::uint64_t ticks_ceil(double us) const {
    if (us <= 0.0) return 0;
    const double exact = us * bits_per_second / 1e6;
    const double rounded = std::round(exact);
    if (std::abs(exact - rounded) < 1e-9) return static_cast<std::uint64_t>(rounded);
    return static_cast<std::uint64_t>(std::ceil(exact));
  }
};

inline constexpr Bitrate kDefaultBitrate{500'000};

}  // namespace canhil
