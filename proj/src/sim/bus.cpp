#include "canhil/sim/bus.hpp"

#include <algorithm>

namespace canhil::sim {

BitLevel resolve_bus(std::span<const DriveLevel> drivers) {
  const bool any_dominant = std::any_of(drivers.begin(), drivers.end(),
                                        [](DriveLevel d) { return d == DriveLevel::Dominant; });
  return any_dominant ? BitLevel::Dominant : BitLevel::Recessive;
}

void BusWire::drive(std::size_t node, DriveLevel level_in) {
  if (node >= drivers.size()) drivers.resize(node + 1, DriveLevel::Idle);
  drivers[node] = level_in;
  level = resolve_bus(drivers);
}

void BusWire::release_all() {
  std::fill(drivers.begin(), drivers.end(), DriveLevel::Idle);
  level = BitLevel::Recessive;
}

}  // namespace canhil::sim
