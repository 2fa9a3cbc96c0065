#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "canhil/can/frame.hpp"
#include "canhil/labels.hpp"
#include "canhil/time.hpp"

namespace canhil::monitor {

/// One completed frame as seen on the bus.
struct BusLogRecord {
  SimTime sof;
  SimTime end;  // SOF + frame bits (through intermission)
  can::CanFrame frame;
  std::uint32_t source = 0;  // port index
  std::string source_name;
  TrafficClass truth = TrafficClass::Benign;
  std::optional<TrafficClass> verdict;
  std::uint32_t bus_errors = 0;  // error frames seen since the previous record

  friend bool operator==(const BusLogRecord&, const BusLogRecord&) = default;
};

using BusLog = std::vector<BusLogRecord>;

/// Writes `log` in the replay CSV format (see attack/replay.hpp).
void export_csv(std::span<const BusLogRecord> log, Bitrate bitrate, std::ostream& out);
std::string export_csv(std::span<const BusLogRecord> log, Bitrate bitrate);

}  // namespace canhil::monitor
