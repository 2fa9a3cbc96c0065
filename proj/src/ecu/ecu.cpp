#include "canhil/ecu/ecu.hpp"

#include <algorithm>

#include "canhil/error.hpp"

namespace canhil::ecu {
namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::ValidationError, what); }

bool matches(const RxRule& rule, const can::CanFrame& frame) {
  const auto payload = frame.payload();
  const std::uint8_t first = payload.empty() ? 0 : payload[0];
  switch (rule.condition) {
    case RxCondition::Any: return true;
    case RxCondition::Zero: return !payload.empty() && first == 0;
    case RxCondition::NonZero: return !payload.empty() && first != 0;
    case RxCondition::Equals: return !payload.empty() && first == rule.value;
  }
  return false;
}

}  // namespace

EcuConfig make_config(std::string name, std::uint32_t index, Role role,
                      const MessageCatalog& catalog) {
  EcuConfig c;
  c.name = std::move(name);
  c.index = index;
  c.role = role;
  c.behavior = default_behavior(role);
  for (const auto& msg : c.behavior.tx) {
    auto it = catalog.find(msg);
    if (it != catalog.end()) c.tx_map.emplace(msg, it->second);
  }
  return c;
}

Ecu::Ecu(EcuConfig config, MessageCatalog catalog)
    : config_(std::move(config)), catalog_(std::move(catalog)) {
  rebuild();
  reset();
}

void Ecu::rebuild() {
  auto& tx = config_.tx_map;
  if (!tx.contains(kLifeMessage)) {
    tx.emplace(kLifeMessage, static_cast<std::uint16_t>(kLifeBaseId + config_.index));
  }
  for (const auto& msg : config_.behavior.tx) {
    if (tx.contains(msg)) continue;
    auto it = catalog_.find(msg);
    if (it == catalog_.end()) invalid(config_.name + ": unknown message '" + msg + "'");
    tx.emplace(msg, it->second);
  }
  for (const auto& [msg, id] : tx) {
    if (id > can::kMaxStandardId) invalid(config_.name + ": tx id out of range for " + msg);
  }

  auto require_tx = [&](const std::string& msg) {
    if (!tx.contains(msg)) {
      invalid(config_.name + ": message '" + msg + "' is not in the node's tx_map");
    }
  };
  auto require_sensor = [&](const PayloadSpec& p) {
    if (p.source != PayloadSource::Constant && !config_.behavior.find_sensor(p.sensor)) {
      invalid(config_.name + ": payload refers to unknown sensor '" + p.sensor + "'");
    }
  };
  for (const auto& r : config_.behavior.on_sensor) {
    require_tx(r.message);
    require_sensor(r.payload);
    if (!config_.behavior.find_sensor(r.sensor)) {
      invalid(config_.name + ": rule on unknown sensor '" + r.sensor + "'");
    }
  }
  for (const auto& r : config_.behavior.periodic) {
    require_tx(r.message);
    require_sensor(r.payload);
    if (r.period_us == 0 && !config_.task_periods_us.contains(r.task)) {
      invalid(config_.name + ": task '" + r.task + "' has no period");
    }
    config_.task_periods_us.try_emplace(r.task, r.period_us);
  }
  config_.task_periods_us.try_emplace(kLifeTask, kDefaultLifePeriodUs);
  for (const auto& [task, period] : config_.task_periods_us) {
    if (period == 0) invalid(config_.name + ": task '" + task + "' period must be > 0");
  }

  rx_index_.clear();
  for (std::size_t i = 0; i < config_.behavior.rx.size(); ++i) {
    const RxRule& rule = config_.behavior.rx[i];
    auto it = catalog_.find(rule.message);
    if (it == catalog_.end()) invalid(config_.name + ": rx rule on unknown message '" + rule.message + "'");
    for (const auto& [act, value] : rule.set) {
      if (!config_.behavior.actuators.contains(act)) {
        invalid(config_.name + ": rx rule drives undeclared actuator '" + act + "'");
      }
    }
    rx_index_[it->second].push_back(i);
  }
}

void Ecu::reset() {
  state_ = EcuState{};
  for (const auto& [name, initial] : config_.behavior.actuators) state_.actuators[name] = initial;
  for (const auto& s : config_.behavior.sensors) state_.sensors[s.name] = s.initial;
}

void Ecu::program(BehaviorTable behavior) {
  config_.behavior = std::move(behavior);
  // Periods and ids owned by the previous program no longer apply.
  std::erase_if(config_.task_periods_us, [](const auto& kv) { return kv.first != kLifeTask; });
  std::erase_if(config_.tx_map, [](const auto& kv) { return kv.first != kLifeMessage; });
  rebuild();
  reset();
}

std::uint16_t Ecu::life_id() const { return config_.tx_map.at(kLifeMessage); }

bool Ecu::owns(std::uint16_t id) const {
  return std::any_of(config_.tx_map.begin(), config_.tx_map.end(),
                     [id](const auto& kv) { return kv.second == id; });
}

bool Ecu::listens_to(std::uint16_t id) const { return rx_index_.contains(id); }

std::vector<std::string> Ecu::task_names() const {
  std::vector<std::string> names;
  for (const auto& [task, period] : config_.task_periods_us) names.push_back(task);
  return names;
}

std::uint64_t Ecu::task_period_us(std::string_view task) const {
  auto it = config_.task_periods_us.find(task);
  if (it == config_.task_periods_us.end()) {
    throw Error(ErrorCode::ValidationError, config_.name + ": no task '" + std::string(task) + "'");
  }
  return it->second;
}

can::CanFrame Ecu::functional_frame(std::string_view message, const PayloadSpec& payload) const {
  std::uint8_t byte = payload.constant;
  if (payload.source != PayloadSource::Constant) {
    const int v = state_.sensors.at(payload.sensor);
    const int mapped = payload.source == PayloadSource::SensorValue ? v : (v == 0 ? 1 : 0);
    byte = static_cast<std::uint8_t>(std::clamp(mapped, 0, 255));
  }
  return can::CanFrame::make(config_.tx_map.find(message)->second, {byte});
}

can::CanFrame Ecu::emit_life_signal(SimTime) {
  const std::uint32_t c = state_.life_counter++;
  return can::CanFrame::make(life_id(), {static_cast<std::uint8_t>(c >> 24),
                                         static_cast<std::uint8_t>(c >> 16),
                                         static_cast<std::uint8_t>(c >> 8),
                                         static_cast<std::uint8_t>(c)});
}

EcuOutput Ecu::step_task(std::string_view task, SimTime now) {
  EcuOutput out;
  if (task == kLifeTask) {
    out.frames.push_back(emit_life_signal(now));
    return out;
  }
  for (const auto& rule : config_.behavior.periodic) {
    if (rule.task == task) out.frames.push_back(functional_frame(rule.message, rule.payload));
  }
  return out;
}

void Ecu::deliver(const can::CanFrame& frame) {
  if (listens_to(frame.id)) state_.rx_queue.push_back(frame);
}

void Ecu::apply(const RxRule& rule, EcuOutput& out) {
  for (const auto& [act, value] : rule.set) {
    bool& current = state_.actuators[act];
    if (current == value) continue;
    if (current && config_.behavior.latching.contains(act)) continue;
    current = value;
    out.changes.push_back({act, value});
  }
}

EcuOutput Ecu::process_rx() {
  EcuOutput out;
  while (!state_.rx_queue.empty()) {
    const can::CanFrame frame = state_.rx_queue.front();
    state_.rx_queue.pop_front();
    auto it = rx_index_.find(frame.id);
    if (it == rx_index_.end()) continue;
    for (std::size_t i : it->second) {
      const RxRule& rule = config_.behavior.rx[i];
      if (matches(rule, frame)) apply(rule, out);
    }
  }
  return out;
}

EcuOutput Ecu::set_sensor(std::string_view sensor, int value) {
  auto it = state_.sensors.find(sensor);
  if (it == state_.sensors.end()) {
    throw Error(ErrorCode::UnknownSensor,
                config_.name + " has no sensor '" + std::string(sensor) + "'");
  }
  EcuOutput out;
  if (it->second == value) return out;
  it->second = value;
  for (const auto& rule : config_.behavior.on_sensor) {
    if (rule.sensor == sensor) out.frames.push_back(functional_frame(rule.message, rule.payload));
  }
  return out;
}

EcuOutput Ecu::set_sensor(std::string_view sensor, std::string_view symbolic) {
  const SensorDecl* decl = config_.behavior.find_sensor(sensor);
  if (!decl) {
    throw Error(ErrorCode::UnknownSensor,
                config_.name + " has no sensor '" + std::string(sensor) + "'");
  }
  if (auto it = decl->named_values.find(symbolic); it != decl->named_values.end()) {
    return set_sensor(sensor, it->second);
  }
  if (symbolic == "true") return set_sensor(sensor, 1);
  if (symbolic == "false") return set_sensor(sensor, 0);
  throw Error(ErrorCode::ValidationError, "sensor '" + std::string(sensor) +
                                              "' has no value named '" + std::string(symbolic) + "'");
}

int Ecu::sensor(std::string_view name) const {
  auto it = state_.sensors.find(name);
  if (it == state_.sensors.end()) {
    throw Error(ErrorCode::UnknownSensor, config_.name + " has no sensor '" + std::string(name) + "'");
  }
  return it->second;
}

bool Ecu::actuator(std::string_view name) const {
  auto it = state_.actuators.find(name);
  if (it == state_.actuators.end()) {
    throw Error(ErrorCode::ValidationError,
                config_.name + " has no actuator '" + std::string(name) + "'");
  }
  return it->second;
}

}  // namespace canhil::ecu
