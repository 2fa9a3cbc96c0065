#pragma once

#include <filesystem>
#include <json.hpp>
#include <string_view>

#include "canhil/attack/attack.hpp"
#include "canhil/ecu/ecu.hpp"
#include "canhil/ids/classify.hpp"
#include "canhil/monitor/bus_log.hpp"
#include "canhil/monitor/metrics.hpp"
#include "canhil/monitor/status.hpp"
#include "canhil/sim/engine.hpp"

namespace canhil::service {

using Json = nlohmann::json;

/// Throws ValidationError naming `what` when `j` is not an object.
const Json& require_object(const Json& j, std::string_view what);

/// CAN id from a number or a "0x..." string.
std::uint16_t parse_can_id(const Json& j, std::string_view what);
std::string hex_id(std::uint16_t id);
std::vector<std::uint8_t> parse_bytes(const Json& j, std::string_view what);

// Documents -> library types. All throw ValidationError with the offending
// key in the message.
ecu::BehaviorTable parse_behavior(const Json& j);
Json to_json(const ecu::BehaviorTable& table);
ecu::EcuConfig parse_node(const Json& j, const ecu::MessageCatalog& catalog);
/// A "replay" path is resolved against `base`.
attack::AttackProfile parse_attack(const Json& j, const std::filesystem::path& base = {});
monitor::StatusCheck parse_check(const Json& j);

// Stream records. Times are virtual: ticks plus microseconds.
Json to_json(const monitor::BusLogRecord& r, Bitrate bitrate);
Json to_json(const monitor::StatusSnapshot& s, Bitrate bitrate);
Json to_json(const sim::VerdictRecord& v, Bitrate bitrate);
Json to_json(const sim::ActuationRecord& a, Bitrate bitrate);
Json to_json(const monitor::MetricsReport& report);

}  // namespace canhil::service
