#include "canhil/monitor/bus_log.hpp"

#include <sstream>

#include "canhil/attack/replay.hpp"

namespace canhil::monitor {

void export_csv(std::span<const BusLogRecord> log, Bitrate bitrate, std::ostream& out) {
  std::vector<attack::ReplayRecord> records;
  records.reserve(log.size());
  for (const auto& r : log) {
    const __int128 ns = static_cast<__int128>(r.sof.ticks) * 1'000'000'000 / bitrate.bits_per_second;
    records.push_back({static_cast<std::int64_t>(ns), r.frame, r.truth});
    records.back().frame.timestamp.reset();
  }
  attack::write_replay(records, out);
}

std::string export_csv(std::span<const BusLogRecord> log, Bitrate bitrate) {
  std::ostringstream ss;
  export_csv(log, bitrate, ss);
  return ss.str();
}

}  // namespace canhil::monitor
