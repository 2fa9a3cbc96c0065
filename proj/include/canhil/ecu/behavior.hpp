#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace canhil::ecu {

enum class Role { EngineBrake, AirbagLight, Sensors, Lights, IdsNode, Custom };

std::string_view to_string(Role role);
std::optional<Role> parse_role(std::string_view text);

// Functional message identifiers. Safety messages outrank life signals.
inline constexpr std::uint16_t kCollisionId = 0x050;
inline constexpr std::uint16_t kBrakeId = 0x0A0;
inline constexpr std::uint16_t kLightId = 0x120;
inline constexpr std::uint16_t kLifeBaseId = 0x300;
inline constexpr const char* kLifeMessage = "LIFE";
inline constexpr const char* kLifeTask = "life";

/// Message name -> CAN id for the functional messages.
using MessageCatalog = std::map<std::string, std::uint16_t, std::less<>>;
MessageCatalog default_catalog();

enum class RxCondition { Any, Zero, NonZero, Equals };

/// On receiving `message` whose first payload byte satisfies the
/// condition, drive the listed actuators.
struct RxRule {
  std::string message;
  RxCondition condition = RxCondition::Any;
  std::uint8_t value = 0;
  std::vector<std::pair<std::string, bool>> set;
};

enum class PayloadSource { SensorValue, SensorInverted, Constant };

struct PayloadSpec {
  PayloadSource source = PayloadSource::Constant;
  std::string sensor;
  std::uint8_t constant = 0;
};

/// Emitted immediately when `sensor` changes value.
struct SensorRule {
  std::string sensor;
  std::string message;
  PayloadSpec payload;
};

struct PeriodicRule {
  std::string task;
  std::uint64_t period_us = 0;
  std::string message;
  PayloadSpec payload;
};

struct SensorDecl {
  std::string name;
  int initial = 0;
  // Symbolic values accepted by set_sensor, e.g. "low" -> 0.
  std::map<std::string, int, std::less<>> named_values;
};

/// Declarative ECU program. Loading one of these stands in for flashing
/// application code onto a node.
struct BehaviorTable {
  std::vector<SensorDecl> sensors;
  std::map<std::string, bool, std::less<>> actuators;  // name -> reset value
  std::set<std::string, std::less<>> latching;         // once true, only reset clears
  std::vector<RxRule> rx;
  std::vector<SensorRule> on_sensor;
  std::vector<PeriodicRule> periodic;
  std::vector<std::string> tx;  // functional messages this program sends

  const SensorDecl* find_sensor(std::string_view name) const;
};

BehaviorTable default_behavior(Role role);

}  // namespace canhil::ecu
