#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace canhil {

/// Traffic classes shared by ground-truth labelling and the IDS output.
enum class TrafficClass : std::uint8_t { Benign = 0, DoS = 1, Fuzzing = 2, Spoof = 3 };

inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::array<TrafficClass, kNumClasses> kAllClasses{
    TrafficClass::Benign, TrafficClass::DoS, TrafficClass::Fuzzing, TrafficClass::Spoof};

constexpr std::size_t index_of(TrafficClass c) { return static_cast<std::size_t>(c); }

constexpr std::string_view to_string(TrafficClass c) {
  switch (c) {
    case TrafficClass::Benign: return "Benign";
    case TrafficClass::DoS: return "DoS";
    case TrafficClass::Fuzzing: return "Fuzzing";
    case TrafficClass::Spoof: return "Spoof";
  }
  return "?";
}

// Accepts the canonical names plus the short forms used in trace files.
std::optional<TrafficClass> parse_traffic_class(std::string_view text);

}  // namespace canhil
