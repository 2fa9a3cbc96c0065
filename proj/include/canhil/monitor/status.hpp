#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "canhil/ecu/ecu.hpp"
#include "canhil/labels.hpp"
#include "canhil/time.hpp"

namespace canhil::monitor {

inline constexpr double kDefaultPollPeriodUs = 300'000.0;

struct NodeStatus {
  std::string node;
  std::uint32_t life_counter = 0;  // the ECU's own counter
  std::optional<std::uint32_t> bus_life;  // last counter seen on the bus
  std::uint32_t life_delta = 0;  // bus-observed increments since the previous poll
  std::map<std::string, bool, std::less<>> actuators;
  std::uint32_t error_count = 0;

  friend bool operator==(const NodeStatus&, const NodeStatus&) = default;
};

struct StatusSnapshot {
  std::uint64_t sequence = 0;
  SimTime at;
  std::vector<NodeStatus> nodes;
  std::array<std::uint64_t, kNumClasses> verdicts{};  // IDS verdicts since the previous poll
  std::vector<std::string> anomalies;
};

enum class CompareOp { Eq, Ne, Lt, Le, Gt, Ge };
std::optional<CompareOp> parse_compare_op(std::string_view text);

/// User condition evaluated on every snapshot; raises `message` when true.
/// `field` is life_delta, life_counter, error_count or an actuator name.
struct StatusCheck {
  std::string node;  // "*" for every node
  std::string field;
  CompareOp op = CompareOp::Eq;
  double value = 0.0;
  std::string message;
};

/// Periodic status polling with the built-in life-signal and IDS checks.
class StatusMonitor {
 public:
  /// Throws ValidationError when the period is not positive.
  explicit StatusMonitor(double period_us = kDefaultPollPeriodUs);

  double period_us() const { return period_us_; }
  void add_check(StatusCheck check);
  void set_life_period(const std::string& node, std::uint16_t life_id, double period_us);

  /// Feed from the bus: life frames update the observed counters.
  void observe_frame(const can::CanFrame& frame);
  void observe_verdict(TrafficClass cls);

  StatusSnapshot poll(SimTime now, std::span<const ecu::Ecu* const> ecus);
  void reset_node(const std::string& node);

 private:
  struct LifeTrack {
    std::string node;
    double period_us = 0.0;
    std::optional<std::uint32_t> seen;
    std::optional<std::uint32_t> at_last_poll;
    std::uint32_t delta_since_poll = 0;
  };

  double period_us_;
  std::vector<StatusCheck> checks_;
  std::map<std::uint16_t, LifeTrack> life_by_id_;
  std::array<std::uint64_t, kNumClasses> verdicts_{};
  std::uint64_t sequence_ = 0;
  bool first_poll_ = true;
};

}  // namespace canhil::monitor
