#include "canhil/service/json_io.hpp"

#include <cmath>
#include <cstdio>

#include "canhil/attack/replay.hpp"
#include "canhil/error.hpp"

namespace canhil::service {
namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::ValidationError, what); }

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    invalid(std::string("bad value for '") + key + "'");
  }
}

std::string get_string(const Json& j, const char* key, std::string_view what) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) invalid(std::string(what) + ": '" + key + "' must be a string");
  return it->get<std::string>();
}

const char* condition_name(ecu::RxCondition c) {
  switch (c) {
    case ecu::RxCondition::Any: return "any";
    case ecu::RxCondition::Zero: return "zero";
    case ecu::RxCondition::NonZero: return "nonzero";
    case ecu::RxCondition::Equals: return "equals";
  }
  return "any";
}

ecu::RxCondition parse_condition(const std::string& s) {
  for (auto c : {ecu::RxCondition::Any, ecu::RxCondition::Zero, ecu::RxCondition::NonZero,
                 ecu::RxCondition::Equals}) {
    if (s == condition_name(c)) return c;
  }
  invalid("rx condition '" + s + "' (any|zero|nonzero|equals)");
}

const char* source_name(ecu::PayloadSource s) {
  switch (s) {
    case ecu::PayloadSource::SensorValue: return "sensor";
    case ecu::PayloadSource::SensorInverted: return "inverted";
    case ecu::PayloadSource::Constant: return "constant";
  }
  return "constant";
}

ecu::PayloadSpec parse_payload(const Json& j) {
  require_object(j, "payload");
  ecu::PayloadSpec p;
  const std::string src = get_or<std::string>(j, "source", "constant");
  if (src == "sensor") {
    p.source = ecu::PayloadSource::SensorValue;
  } else if (src == "inverted") {
    p.source = ecu::PayloadSource::SensorInverted;
  } else if (src == "constant") {
    p.source = ecu::PayloadSource::Constant;
  } else {
    invalid("payload source '" + src + "' (sensor|inverted|constant)");
  }
  p.sensor = get_or<std::string>(j, "sensor", "");
  const int v = get_or<int>(j, "value", 0);
  if (v < 0 || v > 255) invalid("payload value out of byte range");
  p.constant = static_cast<std::uint8_t>(v);
  return p;
}

Json payload_json(const ecu::PayloadSpec& p) {
  Json j{{"source", source_name(p.source)}};
  if (p.source == ecu::PayloadSource::Constant) {
    j["value"] = p.constant;
  } else {
    j["sensor"] = p.sensor;
  }
  return j;
}

double positive_or(const Json& j, const char* key, double fallback) {
  const double v = get_or<double>(j, key, fallback);
  if (!(v > 0) || !std::isfinite(v)) invalid(std::string("'") + key + "' must be > 0");
  return v;
}

Json time_json(SimTime t, Bitrate br) { return {{"ticks", t.ticks}, {"us", br.to_us(t)}}; }

Json frame_json(const can::CanFrame& f) {
  Json data = Json::array();
  for (auto b : f.payload()) data.push_back(b);
  return {{"id", hex_id(f.id)}, {"rtr", f.rtr}, {"dlc", f.dlc}, {"data", data}};
}

}  // namespace

const Json& require_object(const Json& j, std::string_view what) {
  if (!j.is_object()) invalid(std::string(what) + " must be an object");
  return j;
}

std::uint16_t parse_can_id(const Json& j, std::string_view what) {
  long long v = -1;
  if (j.is_number_integer()) {
    v = j.get<long long>();
  } else if (j.is_string()) {
    const std::string s = j.get<std::string>();
    try {
      std::size_t used = 0;
      v = std::stoll(s, &used, 0);
      if (used != s.size()) v = -1;
    } catch (const std::exception&) {
      v = -1;
    }
  }
  if (v < 0 || v > can::kMaxStandardId) invalid(std::string(what) + ": not an 11-bit CAN id");
  return static_cast<std::uint16_t>(v);
}

std::string hex_id(std::uint16_t id) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "0x%03X", id);
  return buf;
}

std::vector<std::uint8_t> parse_bytes(const Json& j, std::string_view what) {
  if (!j.is_array()) invalid(std::string(what) + " must be an array of bytes");
  std::vector<std::uint8_t> out;
  for (const auto& b : j) {
    if (!b.is_number_integer() || b.get<long long>() < 0 || b.get<long long>() > 255) {
      invalid(std::string(what) + ": byte out of range");
    }
    out.push_back(static_cast<std::uint8_t>(b.get<int>()));
  }
  if (out.size() > can::kMaxDlc) invalid(std::string(what) + ": more than 8 bytes");
  return out;
}

ecu::BehaviorTable parse_behavior(const Json& j) {
  if (j.is_string()) {
    auto role = ecu::parse_role(j.get<std::string>());
    if (!role) invalid("unknown role '" + j.get<std::string>() + "'");
    return ecu::default_behavior(*role);
  }
  require_object(j, "behavior");
  ecu::BehaviorTable t;
  if (j.contains("role")) t = parse_behavior(j.at("role"));

  if (j.contains("sensors")) {
    t.sensors.clear();
    for (const auto& s : j.at("sensors")) {
      require_object(s, "sensor");
      ecu::SensorDecl d;
      d.name = get_string(s, "name", "sensor");
      d.initial = get_or<int>(s, "initial", 0);
      if (s.contains("values")) {
        for (const auto& [k, v] : require_object(s.at("values"), "values").items()) {
          if (!v.is_number_integer()) invalid("sensor value '" + k + "' must be an integer");
          d.named_values.emplace(k, v.get<int>());
        }
      }
      t.sensors.push_back(std::move(d));
    }
  }
  if (j.contains("actuators")) {
    t.actuators.clear();
    for (const auto& [k, v] : require_object(j.at("actuators"), "actuators").items()) {
      if (!v.is_boolean()) invalid("actuator '" + k + "' reset value must be a boolean");
      t.actuators.emplace(k, v.get<bool>());
    }
  }
  if (j.contains("latching")) t.latching = j.at("latching").get<std::set<std::string, std::less<>>>();
  if (j.contains("rx")) {
    t.rx.clear();
    for (const auto& r : j.at("rx")) {
      require_object(r, "rx rule");
      ecu::RxRule rule;
      rule.message = get_string(r, "message", "rx rule");
      rule.condition = parse_condition(get_or<std::string>(r, "when", "any"));
      rule.value = static_cast<std::uint8_t>(get_or<int>(r, "value", 0));
      if (r.contains("set")) {
        for (const auto& [k, v] : require_object(r.at("set"), "set").items()) {
          if (!v.is_boolean()) invalid("rx rule set value for '" + k + "' must be a boolean");
          rule.set.emplace_back(k, v.get<bool>());
        }
      }
      t.rx.push_back(std::move(rule));
    }
  }
  if (j.contains("on_sensor")) {
    t.on_sensor.clear();
    for (const auto& r : j.at("on_sensor")) {
      require_object(r, "on_sensor rule");
      t.on_sensor.push_back({get_string(r, "sensor", "on_sensor rule"), get_string(r, "message", "on_sensor rule"),
                             parse_payload(r.value("payload", Json::object()))});
    }
  }
  if (j.contains("periodic")) {
    t.periodic.clear();
    for (const auto& r : j.at("periodic")) {
      require_object(r, "periodic rule");
      t.periodic.push_back({get_string(r, "task", "periodic rule"),
                            static_cast<std::uint64_t>(positive_or(r, "period_us", 0.0)),
                            get_string(r, "message", "periodic rule"),
                            parse_payload(r.value("payload", Json::object()))});
    }
  }
  if (j.contains("tx")) t.tx = j.at("tx").get<std::vector<std::string>>();
  return t;
}

Json to_json(const ecu::BehaviorTable& t) {
  Json sensors = Json::array();
  for (const auto& s : t.sensors) {
    Json values = Json::object();
    for (const auto& [k, v] : s.named_values) values[k] = v;
    sensors.push_back({{"name", s.name}, {"initial", s.initial}, {"values", values}});
  }
  Json actuators = Json::object();
  for (const auto& [k, v] : t.actuators) actuators[k] = v;
  Json rx = Json::array();
  for (const auto& r : t.rx) {
    Json set = Json::object();
    for (const auto& [k, v] : r.set) set[k] = v;
    Json rule{{"message", r.message}, {"when", condition_name(r.condition)}, {"set", set}};
    if (r.condition == ecu::RxCondition::Equals) rule["value"] = r.value;
    rx.push_back(std::move(rule));
  }
  Json on_sensor = Json::array();
  for (const auto& r : t.on_sensor) {
    on_sensor.push_back({{"sensor", r.sensor}, {"message", r.message}, {"payload", payload_json(r.payload)}});
  }
  Json periodic = Json::array();
  for (const auto& r : t.periodic) {
    periodic.push_back({{"task", r.task},
                        {"period_us", r.period_us},
                        {"message", r.message},
                        {"payload", payload_json(r.payload)}});
  }
  return {{"sensors", sensors},   {"actuators", actuators}, {"latching", t.latching}, {"rx", rx},
          {"on_sensor", on_sensor}, {"periodic", periodic},  {"tx", t.tx}};
}

ecu::EcuConfig parse_node(const Json& j, const ecu::MessageCatalog& catalog) {
  require_object(j, "node");
  const std::string name = get_string(j, "name", "node");
  const auto index = get_or<long long>(j, "index", -1);
  if (index < 0 || index > 0xFF) invalid(name + ": 'index' must be in 0..255");
  ecu::Role role = ecu::Role::Custom;
  if (j.contains("role")) {
    auto r = ecu::parse_role(get_string(j, "role", name));
    if (!r) invalid(name + ": unknown role '" + j.at("role").get<std::string>() + "'");
    role = *r;
  }
  ecu::EcuConfig c = ecu::make_config(name, static_cast<std::uint32_t>(index), role, catalog);
  if (j.contains("behavior")) {
    c.behavior = parse_behavior(j.at("behavior"));
    c.tx_map.clear();
  }
  if (j.contains("tx_map")) {
    for (const auto& [msg, id] : require_object(j.at("tx_map"), "tx_map").items()) {
      c.tx_map[msg] = parse_can_id(id, name + ".tx_map." + msg);
    }
  }
  if (j.contains("task_periods_us")) {
    for (const auto& [task, period] : require_object(j.at("task_periods_us"), "task_periods_us").items()) {
      if (!period.is_number() || !(period.get<double>() > 0)) invalid(name + ": period of '" + task + "' must be > 0");
      c.task_periods_us[task] = period.get<std::uint64_t>();
    }
  }
  c.rx_processing_us = get_or<double>(j, "rx_processing_us", c.rx_processing_us);
  if (c.rx_processing_us < 0) invalid(name + ": rx_processing_us must be >= 0");
  return c;
}

attack::AttackProfile parse_attack(const Json& j, const std::filesystem::path& base) {
  require_object(j, "attack");
  attack::AttackProfile p;
  const std::string kind = get_string(j, "kind", "attack");
  auto k = attack::parse_attack_kind(kind);
  if (!k) invalid("unknown attack kind '" + kind + "'");
  p.kind = *k;
  if (j.contains("dos_id")) p.dos_id = parse_can_id(j.at("dos_id"), "dos_id");
  if (j.contains("dos_payload")) p.dos_payload = parse_bytes(j.at("dos_payload"), "dos_payload");
  if (j.contains("fuzz")) {
    const Json& f = require_object(j.at("fuzz"), "fuzz");
    p.fuzz.rate_per_s = get_or<double>(f, "rate_per_s", p.fuzz.rate_per_s);
    if (f.contains("id_min")) p.fuzz.id_min = parse_can_id(f.at("id_min"), "fuzz.id_min");
    if (f.contains("id_max")) p.fuzz.id_max = parse_can_id(f.at("id_max"), "fuzz.id_max");
    p.fuzz.dlc = static_cast<std::uint8_t>(get_or<int>(f, "dlc", p.fuzz.dlc));
    p.fuzz.random_dlc = get_or<bool>(f, "random_dlc", p.fuzz.random_dlc);
  }
  if (j.contains("spoof")) {
    const Json& s = require_object(j.at("spoof"), "spoof");
    if (s.contains("id")) p.spoof.id = parse_can_id(s.at("id"), "spoof.id");
    if (s.contains("payload")) p.spoof.payload = parse_bytes(s.at("payload"), "spoof.payload");
    p.spoof.period_us = get_or<double>(s, "period_us", p.spoof.period_us);
    p.spoof.count = get_or<std::uint64_t>(s, "count", p.spoof.count);
  }
  if (j.contains("replay")) {
    std::filesystem::path path = get_string(j, "replay", "attack");
    if (path.is_relative()) path = base / path;
    if (!std::filesystem::exists(path)) invalid("replay file not found: " + path.string());
    p.replay = std::make_shared<const attack::ReplayTrace>(attack::load_replay(path));
  }
  p.time_scale = get_or<double>(j, "time_scale", p.time_scale);
  p.seed_stream = get_or<std::string>(j, "seed_stream", p.seed_stream);
  p.duration_us = get_or<double>(j, "duration_us", p.duration_us);
  try {
    attack::validate(p);
  } catch (const Error& e) {
    invalid(std::string("attack: ") + e.what());
  }
  return p;
}

monitor::StatusCheck parse_check(const Json& j) {
  require_object(j, "check");
  monitor::StatusCheck c;
  c.node = get_or<std::string>(j, "node", "*");
  c.field = get_string(j, "field", "check");
  const std::string op = get_or<std::string>(j, "op", "==");
  auto parsed = monitor::parse_compare_op(op);
  if (!parsed) invalid("check: unknown operator '" + op + "'");
  c.op = *parsed;
  const Json& v = j.contains("value") ? j.at("value") : Json(0);
  if (v.is_boolean()) {
    c.value = v.get<bool>() ? 1.0 : 0.0;
  } else if (v.is_number()) {
    c.value = v.get<double>();
  } else {
    invalid("check: 'value' must be a number or boolean");
  }
  c.message = get_or<std::string>(j, "message", c.node + "." + c.field + " " + op);
  return c;
}

Json to_json(const monitor::BusLogRecord& r, Bitrate br) {
  Json j{{"sof", time_json(r.sof, br)},
         {"end", time_json(r.end, br)},
         {"frame", frame_json(r.frame)},
         {"source", r.source_name},
         {"truth", to_string(r.truth)},
         {"bus_errors", r.bus_errors}};
  j["verdict"] = r.verdict ? Json(to_string(*r.verdict)) : Json(nullptr);
  return j;
}

Json to_json(const monitor::StatusSnapshot& s, Bitrate br) {
  Json nodes = Json::array();
  for (const auto& n : s.nodes) {
    Json actuators = Json::object();
    for (const auto& [k, v] : n.actuators) actuators[k] = v;
    nodes.push_back({{"node", n.node},
                     {"life_counter", n.life_counter},
                     {"bus_life", n.bus_life ? Json(*n.bus_life) : Json(nullptr)},
                     {"life_delta", n.life_delta},
                     {"actuators", actuators},
                     {"error_count", n.error_count}});
  }
  Json verdicts = Json::object();
  for (TrafficClass c : kAllClasses) verdicts[std::string(to_string(c))] = s.verdicts[index_of(c)];
  return {{"sequence", s.sequence}, {"at", time_json(s.at, br)}, {"nodes", nodes},
          {"verdicts", verdicts},   {"anomalies", s.anomalies}};
}

Json to_json(const sim::VerdictRecord& v, Bitrate br) {
  Json probs = Json::array();
  for (double p : v.verdict.probabilities) probs.push_back(p);
  return {{"class", to_string(v.verdict.cls)},
          {"truth", to_string(v.truth)},
          {"strategy", ids::to_string(v.verdict.strategy)},
          {"frame_index", v.verdict.frame_index},
          {"probabilities", probs},
          {"sof", time_json(v.verdict.latency.sof, br)},
          {"verdict_time", time_json(v.verdict.latency.verdict_time, br)},
          {"latency_us", v.verdict.latency.elapsed_us}};
}

Json to_json(const sim::ActuationRecord& a, Bitrate br) {
  return {{"at", time_json(a.at, br)}, {"node", a.node}, {"actuator", a.actuator}, {"value", a.value}};
}

Json to_json(const monitor::MetricsReport& r) {
  Json confusion = Json::array();
  for (int i = 0; i < 4; ++i) {
    Json row = Json::array();
    for (int k = 0; k < 4; ++k) row.push_back(r.confusion(i, k));
    confusion.push_back(row);
  }
  // NaN has no JSON spelling; undefined precision/recall is null.
  auto num = [](double x) { return std::isnan(x) ? Json(nullptr) : Json(x); };
  Json classes = Json::object();
  for (TrafficClass c : kAllClasses) {
    const auto& m = r.per_class[index_of(c)];
    classes[std::string(to_string(c))] = {
        {"precision", num(m.precision)}, {"recall", num(m.recall)}, {"f1", num(m.f1)}, {"support", m.support}};
  }
  return {{"confusion", confusion},
          {"total", r.total},
          {"correct", r.correct},
          {"misclassified", r.misclassified},
          {"false_positives", r.false_positives},
          {"accuracy", num(r.accuracy)},
          {"classes", classes}};
}

}  // namespace canhil::service
