#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "canhil/can/frame.hpp"
#include "canhil/ecu/behavior.hpp"
#include "canhil/time.hpp"

namespace canhil::ecu {

inline constexpr std::uint64_t kDefaultLifePeriodUs = 50'000;
inline constexpr double kDefaultRxProcessingUs = 50.0;

struct EcuConfig {
  std::string name;
  std::uint32_t index = 0;  // position in the roster; selects the LIFE id
  Role role = Role::Custom;
  std::map<std::string, std::uint16_t, std::less<>> tx_map;
  std::map<std::string, std::uint64_t, std::less<>> task_periods_us;
  // Delay between frame reception and its effects.
  double rx_processing_us = kDefaultRxProcessingUs;
  BehaviorTable behavior;
};

/// Fills tx_map and task periods from the role's behaviour table where the
/// caller left them unset.
EcuConfig make_config(std::string name, std::uint32_t index, Role role,
                      const MessageCatalog& catalog = default_catalog());

struct EcuState {
  std::uint32_t life_counter = 0;
  std::map<std::string, bool, std::less<>> actuators;
  std::map<std::string, int, std::less<>> sensors;
  std::deque<can::CanFrame> rx_queue;
  std::uint32_t error_count = 0;

  friend bool operator==(const EcuState&, const EcuState&) = default;
};

struct ActuatorChange {
  std::string actuator;
  bool value = false;
};

struct EcuOutput {
  std::vector<can::CanFrame> frames;
  std::vector<ActuatorChange> changes;
};

class Ecu {
 public:
  /// Throws ValidationError if the behaviour table references messages
  /// missing from the catalog or not owned through tx_map.
  Ecu(EcuConfig config, MessageCatalog catalog = default_catalog());

  const EcuConfig& config() const { return config_; }
  const EcuState& state() const { return state_; }
  const std::string& name() const { return config_.name; }

  /// Runs one invocation of a periodic task.
  EcuOutput step_task(std::string_view task, SimTime now);
  can::CanFrame emit_life_signal(SimTime now);

  void deliver(const can::CanFrame& frame);
  /// Applies the rx rules to everything delivered so far.
  EcuOutput process_rx();

  /// Throws UnknownSensor.
  EcuOutput set_sensor(std::string_view sensor, int value);
  EcuOutput set_sensor(std::string_view sensor, std::string_view symbolic);
  int sensor(std::string_view name) const;
  bool actuator(std::string_view name) const;

  void note_error() { ++state_.error_count; }

  /// Back to the freshly-configured state; the only way to clear latches.
  void reset();
  /// Replaces the program (behaviour table) and resets.
  void program(BehaviorTable behavior);

  std::uint16_t life_id() const;
  bool owns(std::uint16_t id) const;
  bool listens_to(std::uint16_t id) const;
  std::vector<std::string> task_names() const;
  std::uint64_t task_period_us(std::string_view task) const;

 private:
  void rebuild();
  can::CanFrame functional_frame(std::string_view message, const PayloadSpec& payload) const;
  void apply(const RxRule& rule, EcuOutput& out);

  EcuConfig config_;
  MessageCatalog catalog_;
  EcuState state_;
  std::map<std::uint16_t, std::vector<std::size_t>> rx_index_;  // id -> rx rule indices
};

}  // namespace canhil::ecu
