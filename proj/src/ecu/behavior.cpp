#include "canhil/ecu/behavior.hpp"

#include <algorithm>

namespace canhil::ecu {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::EngineBrake: return "EngineBrake";
    case Role::AirbagLight: return "AirbagLight";
    case Role::Sensors: return "Sensors";
    case Role::Lights: return "Lights";
    case Role::IdsNode: return "IdsNode";
    case Role::Custom: return "Custom";
  }
  return "Custom";
}

std::optional<Role> parse_role(std::string_view text) {
  for (Role r : {Role::EngineBrake, Role::AirbagLight, Role::Sensors, Role::Lights,
                 Role::IdsNode, Role::Custom}) {
    if (text == to_string(r)) return r;
  }
  return std::nullopt;
}

MessageCatalog default_catalog() {
  return {{"COLLISION", kCollisionId}, {"BRAKE", kBrakeId}, {"LIGHT", kLightId}};
}

const SensorDecl* BehaviorTable::find_sensor(std::string_view name) const {
  auto it = std::find_if(sensors.begin(), sensors.end(),
                         [&](const SensorDecl& s) { return s.name == name; });
  return it == sensors.end() ? nullptr : &*it;
}

BehaviorTable default_behavior(Role role) {
  BehaviorTable t;
  const auto value_of = [](const char* sensor) {
    return PayloadSpec{PayloadSource::SensorValue, sensor, 0};
  };
  switch (role) {
    case Role::EngineBrake:
      t.actuators = {{"engine_enabled", true}, {"tcu_enabled", true}, {"braking_active", false}};
      t.rx = {
          {"COLLISION", RxCondition::NonZero, 0, {{"engine_enabled", false}, {"tcu_enabled", false}}},
          {"BRAKE", RxCondition::NonZero, 0, {{"braking_active", true}}},
          {"BRAKE", RxCondition::Zero, 0, {{"braking_active", false}}},
      };
      break;
    case Role::AirbagLight:
      t.sensors = {{"ambient_light", 1, {{"low", 0}, {"high", 1}}}};
      t.actuators = {{"airbag_deployed", false}};
      t.latching = {"airbag_deployed"};
      t.rx = {{"COLLISION", RxCondition::NonZero, 0, {{"airbag_deployed", true}}}};
      // Dark ambient light requests the lights on.
      t.on_sensor = {{"ambient_light", "LIGHT",
                      {PayloadSource::SensorInverted, "ambient_light", 0}}};
      t.periodic = {{"light_status", 50'000, "LIGHT",
                     {PayloadSource::SensorInverted, "ambient_light", 0}}};
      t.tx = {"LIGHT"};
      break;
    case Role::Sensors:
      t.sensors = {{"collision", 0, {{"off", 0}, {"on", 1}}},
                   {"brake_pedal", 0, {{"released", 0}, {"pressed", 1}}}};
      t.on_sensor = {{"collision", "COLLISION", value_of("collision")},
                     {"brake_pedal", "BRAKE", value_of("brake_pedal")}};
      t.periodic = {{"collision_status", 20'000, "COLLISION", value_of("collision")},
                    {"brake_status", 20'000, "BRAKE", value_of("brake_pedal")}};
      t.tx = {"COLLISION", "BRAKE"};
      break;
    case Role::Lights:
      t.actuators = {{"headlights", false}, {"tail_lights", false}, {"brake_lights", false}};
      t.rx = {
          {"LIGHT", RxCondition::NonZero, 0, {{"headlights", true}, {"tail_lights", true}}},
          {"LIGHT", RxCondition::Zero, 0, {{"headlights", false}, {"tail_lights", false}}},
          {"BRAKE", RxCondition::NonZero, 0, {{"brake_lights", true}}},
          {"BRAKE", RxCondition::Zero, 0, {{"brake_lights", false}}},
      };
      break;
    case Role::IdsNode:
    case Role::Custom:
      break;
  }
  return t;
}

}  // namespace canhil::ecu
