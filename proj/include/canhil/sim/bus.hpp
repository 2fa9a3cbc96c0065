#pragma once

#include <span>

#include "canhil/can/frame.hpp"

namespace canhil::sim {

using can::BitLevel;

/// What a node's transmit line is doing in a bit time.
enum class DriveLevel : std::uint8_t { Idle, Dominant, Recessive };

/// Wired-AND resolution: dominant if any driver is dominant; idle counts as recessive.
BitLevel resolve_bus(std::span<const DriveLevel> drivers);

/// Per-node transmit levels plus the resolved bus level.
struct BusWire {
  std::vector<DriveLevel> drivers;
  BitLevel level = BitLevel::Recessive;

  void drive(std::size_t node, DriveLevel level_in);
  void release_all();
};

}  // namespace canhil::sim
