#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "canhil/can/frame.hpp"
#include "canhil/time.hpp"

namespace canhil::monitor {

inline constexpr std::size_t kDefaultCaptureSamples = 1'000'000;

enum class SignalKind {
  Line,  // bus-style: default level except where spans are written
  Held,  // register-style: keeps its last value
};

struct SignalDef {
  std::string name;
  int width = 1;
  SignalKind kind = SignalKind::Held;
  std::uint32_t initial = 0;
};

/// Dense per-bit-time samples of the declared signals.
struct SignalTrace {
  Bitrate bitrate;
  SimTime start;
  std::uint64_t ticks = 0;
  std::vector<SignalDef> signals;
  std::vector<std::vector<std::uint32_t>> samples;  // [signal][tick - start]

  std::size_t index_of(std::string_view name) const;
};

/// Capture buffer for one window. Throws CaptureOverflow when
/// signals x ticks exceeds `capacity`.
class SignalRecorder {
 public:
  SignalRecorder(std::vector<SignalDef> signals, SimTime start, std::uint64_t ticks, Bitrate bitrate,
                 std::size_t capacity = kDefaultCaptureSamples);

  SimTime start() const { return trace_.start; }
  SimTime end() const { return trace_.start + trace_.ticks; }
  const std::vector<SignalDef>& signals() const { return trace_.signals; }
  std::size_t find(std::string_view name) const;  // npos if absent

  /// Held signal: value from `at` onwards. Times before the window set the
  /// initial value.
  void set(std::size_t signal, SimTime at, std::uint32_t value);
  /// Line signal: explicit levels starting at `at`.
  void write_bits(std::size_t signal, SimTime at, std::span<const can::BitLevel> bits);

  SignalTrace finish();

 private:
  struct Change {
    std::uint64_t offset;
    std::uint32_t value;
  };
  SignalTrace trace_;
  std::vector<std::vector<Change>> changes_;
};

/// Value-change dump with one time unit per bit time; timestamps are
/// absolute simulation ticks. Throws EmptyTrace for an empty capture.
void export_vcd(const SignalTrace& trace, std::ostream& out);
std::string export_vcd(const SignalTrace& trace);

/// "2 us", "1 us", "8 us", "1000 ns", ...
std::string vcd_timescale(Bitrate bitrate);

}  // namespace canhil::monitor
