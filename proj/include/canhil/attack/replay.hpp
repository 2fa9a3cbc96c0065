#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "canhil/can/frame.hpp"
#include "canhil/labels.hpp"

namespace canhil::attack {

// Replay CSV, one frame per line:
//
//   timestamp,can_id_hex,dlc,b0,...,b{dlc-1},flag[,attack_type]
//
// `flag` is R (benign) or T (injected). The attack type of a T row comes
// from the optional trailing column, else from a `# attack_type: <name>`
// header line; T with neither is a parse error. Other `#` lines are comments.

struct ReplayRecord {
  std::int64_t timestamp_ns = 0;  // fixed point; dataset stamps carry 6 decimals
  can::CanFrame frame;
  TrafficClass label = TrafficClass::Benign;

  double seconds() const { return static_cast<double>(timestamp_ns) * 1e-9; }

  friend bool operator==(const ReplayRecord&, const ReplayRecord&) = default;
};

struct ReplayTrace {
  std::vector<ReplayRecord> records;
  std::string source;

  std::array<std::size_t, kNumClasses> histogram() const;
  bool empty() const { return records.empty(); }
};

/// Throws ParseError (with line number) or EmptyTrace.
ReplayTrace parse_replay(std::istream& in, std::string source_name = "<stream>");
ReplayTrace load_replay(const std::filesystem::path& path);

inline constexpr const char* kReplayHeader = "# canhil replay v1: timestamp,can_id_hex,dlc,data...,flag,attack_type";

/// Writes records with the sidecar attack-type column on every T row.
void write_replay(std::span<const ReplayRecord> records, std::ostream& out);

/// Seconds with 6 decimals, or 9 when the value is not a whole microsecond.
std::string format_timestamp(std::int64_t ns);
/// Exact decimal parse of "<seconds>[.<fraction>]"; nullopt on bad syntax.
std::optional<std::int64_t> parse_timestamp_ns(std::string_view text);

}  // namespace canhil::attack
