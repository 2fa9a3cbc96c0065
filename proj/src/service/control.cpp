#include "canhil/service/control.hpp"

#include <algorithm>
#include <chrono>

#include "canhil/monitor/signals.hpp"
#include "canhil/pipeline/corpus.hpp"

namespace canhil::service {
namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::ValidationError, what); }

Json error_response(const Json& id, std::string_view code, const std::string& message) {
  return {{"id", id}, {"ok", false}, {"error", {{"code", code}, {"message", message}}}};
}

bool known_op(const std::string& op) {
  return std::any_of(std::begin(kOps), std::end(kOps), [&](const char* k) { return op == k; });
}

ScenarioConfig default_scenario() {
  ScenarioConfig c;
  c.name = "testbed";
  c.stop_us = 3600e6;
  c.nodes = pipeline::testbed_roster();
  return c;
}

}  // namespace

// ---- Outbox -------------------------------------------------------------------

bool Outbox::push_record(std::string line) {
  {
    std::lock_guard lock(mu_);
    if (closed_) return false;
    if (lines_.size() >= capacity_) return false;
    lines_.push_back(std::move(line));
  }
  cv_.notify_one();
  return true;
}

void Outbox::push_response(std::string line) {
  {
    std::lock_guard lock(mu_);
    if (closed_) return;
    lines_.push_back(std::move(line));
  }
  cv_.notify_one();
}

void Outbox::close(std::string error_line) {
  {
    std::lock_guard lock(mu_);
    if (closed_) return;
    if (!error_line.empty()) lines_.push_back(std::move(error_line));
    closed_ = true;
  }
  cv_.notify_all();
}

std::optional<std::string> Outbox::pop(int timeout_ms) {
  std::unique_lock lock(mu_);
  auto ready = [&] { return !lines_.empty() || closed_; };
  if (timeout_ms < 0) {
    cv_.wait(lock, ready);
  } else if (!cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms), ready)) {
    return std::string();
  }
  if (lines_.empty()) return std::nullopt;
  std::string line = std::move(lines_.front());
  lines_.pop_front();
  return line;
}

bool Outbox::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

std::size_t Outbox::size() const {
  std::lock_guard lock(mu_);
  return lines_.size();
}

// ---- sessions -----------------------------------------------------------------

ControlService::ControlService(ServiceOptions options) : options_(std::move(options)) {
  scenario_ = default_scenario();
  rebuild_engine();
}

ControlService::~ControlService() { stop_runner(); }

std::shared_ptr<Session> ControlService::open_session() {
  auto s = std::make_shared<Session>();
  s->outbox = std::make_shared<Outbox>(options_.outbox_capacity);
  s->authenticated = options_.token.empty();
  std::lock_guard lock(sessions_mu_);
  s->id = next_session_++;
  std::erase_if(sessions_, [](const auto& w) { return w.expired(); });
  sessions_.push_back(s);
  return s;
}

void ControlService::close_session(const std::shared_ptr<Session>& session) {
  session->outbox->close();
  std::lock_guard lock(sessions_mu_);
  std::erase_if(sessions_, [&](const auto& w) {
    auto p = w.lock();
    return !p || p == session;
  });
}

std::shared_ptr<Session> ControlService::find_session(std::uint64_t id) const {
  std::lock_guard lock(sessions_mu_);
  for (const auto& w : sessions_) {
    if (auto p = w.lock(); p && p->id == id) return p;
  }
  return nullptr;
}

void ControlService::add_stream(Session& session, const std::string& stream) {
  if (std::none_of(std::begin(kStreams), std::end(kStreams), [&](const char* k) { return stream == k; })) {
    invalid("unknown stream '" + stream + "'");
  }
  std::lock_guard lock(sessions_mu_);
  session.streams.insert(stream);
}

bool ControlService::check_token(std::string_view token) const {
  if (options_.token.empty()) return true;
  // Length-independent comparison.
  unsigned diff = token.size() == options_.token.size() ? 0u : 1u;
  for (std::size_t i = 0; i < options_.token.size(); ++i) {
    diff |= static_cast<unsigned char>(options_.token[i]) ^
            static_cast<unsigned char>(i < token.size() ? token[i] : 0);
  }
  return diff == 0;
}

// ---- commands -----------------------------------------------------------------

Json ControlService::handle_command(const Json& command) {
  Session local;
  local.authenticated = true;
  return handle_command(command, local);
}

std::string ControlService::handle_line(const std::string& line, Session& session) {
  Json cmd;
  try {
    cmd = Json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    return error_response(nullptr, "ValidationError", std::string("malformed command: ") + e.what()).dump();
  }
  return handle_command(cmd, session).dump();
}

Json ControlService::handle_command(const Json& command, Session& session) {
  const Json id = command.is_object() ? command.value("id", Json(nullptr)) : Json(nullptr);
  if (!command.is_object() || !command.contains("op") || !command.at("op").is_string()) {
    return error_response(id, "ValidationError", "command needs a string 'op'");
  }
  if (!session.authenticated) {
    const std::string token = command.value("token", "");
    if (token.empty() || !check_token(token)) return error_response(id, "AuthFailed", "missing or wrong token");
    session.authenticated = true;
  }
  const std::string op = command.at("op").get<std::string>();
  if (!known_op(op)) return error_response(id, "UnknownOp", "unknown op '" + op + "'");
  const Json args = command.value("args", Json::object());
  if (!args.is_object()) return error_response(id, "ValidationError", "'args' must be an object");

  try {
    if (op == "pause") {
      stop_runner();
      std::lock_guard lock(engine_mu_);
      return {{"id", id}, {"ok", true}, {"result", engine_state()}};
    }
    if (running_ && (op == "run" || op == "step" || op == "load_scenario" || op == "sys_ctrl")) {
      return error_response(id, "EngineBusy", "engine is running; pause first");
    }
    std::unique_lock lock(engine_mu_, std::defer_lock);
    if (!lock.try_lock_for(std::chrono::milliseconds(options_.busy_wait_ms))) {
      return error_response(id, "EngineBusy", "engine is executing a step");
    }
    Json result = dispatch(op, args, &session);
    return {{"id", id}, {"ok", true}, {"result", std::move(result)}};
  } catch (const Error& e) {
    return error_response(id, to_string(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_response(id, "ValidationError", e.what());
  }
}

Json ControlService::dispatch(const std::string& op, const Json& args, Session* session) {
  if (op == "load_scenario") return do_load(args);
  if (op == "sys_ctrl") return do_sys_ctrl(args);
  if (op == "att_ctrl") return do_att_ctrl(args);
  if (op == "prog_node") return do_prog_node(args);
  if (op == "reset_node") return do_reset_node(args);
  if (op == "debug_config") return do_capture(args, false);
  if (op == "run") return do_run(args);
  if (op == "step") return do_step(args);
  if (op == "monitor") {
    if (args.contains("poll_period_us")) invalid("poll period is set with sys_ctrl");
    for (const auto& c : args.value("checks", Json::array())) {
      auto check = parse_check(c);
      engine().status_monitor().add_check(check);
      scenario_->monitor.checks.push_back(std::move(check));
    }
    Json r = subscribe(session, "monitor");
    const auto& log = engine().status_log();
    r["latest"] = log.empty() ? Json(nullptr) : to_json(log.back(), engine().bitrate());
    return r;
  }
  if (op == "bus_log") {
    Json r = subscribe(session, "bus_log");
    const auto& log = engine().bus_log();
    const std::size_t tail = std::min<std::size_t>(args.value("tail", std::size_t{0}), log.size());
    Json records = Json::array();
    for (std::size_t i = log.size() - tail; i < log.size(); ++i) records.push_back(to_json(log[i], engine().bitrate()));
    r["records"] = std::move(records);
    return r;
  }
  if (op == "signal_capture" || op == "user_capture") {
    Json r = subscribe(session, "signal_capture");
    if (op == "user_capture" || args.contains("duration_us")) r["capture"] = do_capture(args, op == "user_capture");
    return r;
  }
  throw Error(ErrorCode::UnknownOp, "unknown op '" + op + "'");
}

Json ControlService::subscribe(Session* session, const std::string& stream) {
  if (session == nullptr || session->id == 0) return {{"subscription", nullptr}};
  add_stream(*session, stream);
  return {{"subscription", stream}, {"session", session->id}};
}

Json ControlService::do_load(const Json& args) {
  ScenarioConfig config;
  if (args.contains("path")) {
    std::filesystem::path path = args.at("path").get<std::string>();
    if (path.is_relative()) path = options_.base_dir / path;
    config = load_scenario(path);
  } else if (args.contains("scenario")) {
    config = parse_scenario(args.at("scenario"), options_.base_dir);
  } else {
    invalid("load_scenario needs 'path' or 'scenario'");
  }
  scenario_ = std::move(config);
  rebuild_engine();
  return engine_state();
}

Json ControlService::do_sys_ctrl(const Json& args) {
  bool rebuild = false;
  ScenarioConfig next = *scenario_;
  if (args.contains("bitrate")) {
    next.bitrate.bits_per_second = args.at("bitrate").get<std::uint32_t>();
    rebuild = true;
  }
  if (args.contains("seed")) {
    next.seed = args.at("seed").get<std::uint64_t>();
    rebuild = true;
  }
  if (args.contains("poll_period_us")) {
    next.monitor.poll_period_us = args.at("poll_period_us").get<double>();
    rebuild = true;
  }
  if (args.contains("stop_us")) next.stop_us = args.at("stop_us").get<double>();
  if (args.contains("nodes")) {
    // Per-node clock settings: task periods and rx processing delay.
    for (const auto& [name, cfg] : require_object(args.at("nodes"), "nodes").items()) {
      auto it = std::find_if(next.nodes.begin(), next.nodes.end(), [&](const auto& n) { return n.name == name; });
      if (it == next.nodes.end()) throw Error(ErrorCode::UnknownNode, "unknown node '" + name + "'");
      for (const auto& [task, period] : cfg.value("task_periods_us", Json::object()).items()) {
        if (!(period.get<double>() > 0)) invalid(name + ": period of '" + task + "' must be > 0");
        it->task_periods_us[task] = period.get<std::uint64_t>();
      }
      it->rx_processing_us = cfg.value("rx_processing_us", it->rx_processing_us);
    }
    rebuild = true;
  }
  if (rebuild) {
    validate(next);
    scenario_ = std::move(next);
    rebuild_engine();
  } else {
    scenario_->stop_us = next.stop_us;
  }
  if (args.contains("sensor")) {
    const Json& s = require_object(args.at("sensor"), "sensor");
    const std::string node = s.at("node").get<std::string>();
    const std::string sensor = s.at("sensor").get<std::string>();
    const Json& v = s.at("value");
    if (v.is_string()) {
      engine().set_sensor(node, sensor, v.get<std::string>());
    } else if (v.is_boolean()) {
      engine().set_sensor(node, sensor, v.get<bool>() ? 1 : 0);
    } else {
      engine().set_sensor(node, sensor, v.get<int>());
    }
  }
  Json r = engine_state();
  r["settings"] = {{"bitrate", scenario_->bitrate.bits_per_second},
                   {"seed", scenario_->seed},
                   {"poll_period_us", scenario_->monitor.poll_period_us},
                   {"stop_us", scenario_->stop_us}};
  return r;
}

Json ControlService::do_att_ctrl(const Json& args) {
  const std::string action = args.value("action", args.contains("kind") || args.contains("attack") ? "start" : "list");
  auto& e = engine();
  if (action == "start") {
    const Json& doc = args.contains("attack") ? args.at("attack") : args;
    Json profile = doc;
    if (profile.is_object()) profile.erase("action");
    const attack::AttackHandle h = e.start_attack(parse_attack(profile, options_.base_dir));
    return {{"handle", h}, {"kind", attack::to_string(e.attacks().profile(h).kind)}};
  }
  if (action == "stop") {
    e.stop_attack(args.at("handle").get<attack::AttackHandle>());
  } else if (action == "stop_all") {
    for (auto h : e.attacks().handles()) e.stop_attack(h);
  } else if (action != "list") {
    invalid("att_ctrl action must be start, stop, stop_all or list");
  }
  Json active = Json::array();
  for (auto h : e.attacks().handles()) {
    active.push_back({{"handle", h}, {"kind", attack::to_string(e.attacks().profile(h).kind)}});
  }
  return {{"active", active}};
}

Json ControlService::do_prog_node(const Json& args) {
  const std::string node = args.at("node").get<std::string>();
  if (!args.contains("behavior")) invalid("prog_node needs 'behavior'");
  ecu::BehaviorTable table = parse_behavior(args.at("behavior"));
  engine().program_node(node, table);
  auto it = std::find_if(scenario_->nodes.begin(), scenario_->nodes.end(), [&](const auto& n) { return n.name == node; });
  if (it != scenario_->nodes.end()) it->behavior = table;
  return {{"node", node}, {"behavior", to_json(table)}};
}

Json ControlService::do_reset_node(const Json& args) {
  const std::string node = args.value("node", "*");
  if (node == "*" || node == "all") {
    engine().reset_all();
  } else {
    engine().reset_node(node);
  }
  return engine_state();
}

Json ControlService::do_capture(const Json& args, bool user) {
  auto& e = engine();
  std::vector<std::string> names;
  if (args.contains("signals")) {
    names = args.at("signals").get<std::vector<std::string>>();
  } else if (user) {
    invalid("user_capture needs 'signals'");
  } else {
    // The pre-defined set: bus level and every port's driver.
    for (const auto& d : e.signal_registry()) {
      if (d.kind == monitor::SignalKind::Line) names.push_back(d.name);
    }
  }
  const double duration = args.value("duration_us", 10'000.0);
  if (!(duration > 0)) invalid("duration_us must be > 0");
  const double start_us = args.value("start_us", e.bitrate().to_us(e.now()));
  const SimTime start{e.bitrate().ticks_ceil(start_us)};
  const std::uint64_t ticks = e.bitrate().ticks_ceil(duration);
  e.start_capture(names, start, ticks);
  return {{"signals", names}, {"start_us", e.bitrate().to_us(start)}, {"ticks", ticks}};
}

Json ControlService::do_run(const Json& args) {
  auto& e = engine();
  const Bitrate br = e.bitrate();
  std::optional<SimTime> until;
  if (args.contains("until_us")) until = SimTime{br.ticks_ceil(args.at("until_us").get<double>())};
  if (args.contains("for_us")) until = e.now() + br.ticks_ceil(args.at("for_us").get<double>());
  if (until) {
    if (*until < e.now()) invalid("cannot run backwards");
    e.run_until(*until);
    flush_captures();
    return engine_state();
  }
  // Open-ended: a background runner advances one poll period at a time.
  realtime_ = args.value("realtime", false);
  if (runner_.joinable()) runner_.join();  // finished on its own
  running_ = true;
  runner_ = std::thread([this] {
    while (running_) {
      double slice_us = 0.0;
      {
        std::lock_guard lock(engine_mu_);
        auto& eng = *engine_;
        const SimTime stop{eng.bitrate().ticks_ceil(scenario_->stop_us)};
        if (eng.now() >= stop) break;
        slice_us = scenario_->monitor.poll_period_us;
        const SimTime next = std::min(stop, eng.now() + eng.bitrate().ticks_ceil(slice_us));
        try {
          eng.run_until(next);
        } catch (const Error& err) {
          publish("monitor", {{"type", "error"}, {"code", to_string(err.code())}, {"message", err.what()}});
          break;
        }
        flush_captures();
      }
      if (realtime_) {
        std::this_thread::sleep_for(std::chrono::microseconds(static_cast<long>(slice_us)));
      } else {
        std::this_thread::yield();
      }
    }
    running_ = false;
  });
  Json r = engine_state();
  r["running"] = true;
  return r;
}

Json ControlService::do_step(const Json& args) {
  auto& e = engine();
  const std::size_t count = args.value("count", std::size_t{1});
  for (std::size_t i = 0; i < count; ++i) e.step();
  flush_captures();
  return engine_state();
}

void ControlService::wait_idle() {
  if (runner_.joinable()) runner_.join();
}

void ControlService::stop_runner() {
  running_ = false;
  if (runner_.joinable()) runner_.join();
}

// ---- engine -------------------------------------------------------------------

sim::Engine& ControlService::engine() {
  if (!engine_) invalid("no scenario loaded");
  return *engine_;
}

void ControlService::rebuild_engine() {
  engine_ = build_engine(*scenario_);
  attach_streams();
}

void ControlService::attach_streams() {
  const Bitrate br = engine_->bitrate();
  engine_->on_frame = [this, br](const monitor::BusLogRecord& r) { publish("bus_log", to_json(r, br)); };
  engine_->on_status = [this, br](const monitor::StatusSnapshot& s) {
    Json j = to_json(s, br);
    j["type"] = "status";
    publish("monitor", j);
  };
  engine_->on_verdict = [this, br](const sim::VerdictRecord& v) {
    Json j = to_json(v, br);
    j["type"] = "verdict";
    publish("monitor", j);
  };
  engine_->on_actuation = [this, br](const sim::ActuationRecord& a) {
    Json j = to_json(a, br);
    j["type"] = "actuation";
    publish("monitor", j);
  };
}

void ControlService::publish(const std::string& stream, const Json& record) {
  std::lock_guard lock(sessions_mu_);
  std::string line;
  for (const auto& w : sessions_) {
    auto s = w.lock();
    if (!s || !s->streams.contains(stream) || s->outbox->closed()) continue;
    if (line.empty()) line = Json{{"stream", stream}, {"record", record}}.dump();
    if (!s->outbox->push_record(line)) {
      s->outbox->close(Json{{"stream", stream},
                            {"error", {{"code", "IoError"}, {"message", "subscriber too slow; disconnected"}}}}
                           .dump());
    }
  }
}

void ControlService::flush_captures() {
  for (const auto& trace : engine_->take_captures()) {
    Json names = Json::array();
    for (const auto& d : trace.signals) names.push_back(d.name);
    publish("signal_capture", {{"start_us", trace.bitrate.to_us(trace.start)},
                               {"ticks", trace.ticks},
                               {"signals", names},
                               {"vcd", monitor::export_vcd(trace)}});
  }
}

Json ControlService::engine_state() const {
  const auto& e = *engine_;
  Json nodes = Json::array();
  for (std::size_t i = 0; i < e.node_count(); ++i) {
    const auto& n = e.node(i);
    Json actuators = Json::object();
    for (const auto& [k, v] : n.state().actuators) actuators[k] = v;
    Json sensors = Json::object();
    for (const auto& [k, v] : n.state().sensors) sensors[k] = v;
    nodes.push_back({{"name", n.name()},
                     {"index", n.config().index},
                     {"role", ecu::to_string(n.config().role)},
                     {"life_id", hex_id(n.life_id())},
                     {"life_counter", n.state().life_counter},
                     {"actuators", actuators},
                     {"sensors", sensors}});
  }
  Json signals = Json::array();
  for (const auto& d : e.signal_registry()) signals.push_back(d.name);
  Json attacks = Json::array();
  for (auto h : e.attacks().handles()) {
    attacks.push_back({{"handle", h}, {"kind", attack::to_string(e.attacks().profile(h).kind)}});
  }
  const auto& st = e.stats();
  return {{"scenario", scenario_->name},
          {"now_us", e.bitrate().to_us(e.now())},
          {"now_ticks", e.now().ticks},
          {"frames", st.frames},
          {"nodes", nodes},
          {"signals", signals},
          {"attacks", attacks},
          {"ids", e.ids_enabled()},
          {"running", running_.load()}};
}

}  // namespace canhil::service
