#include "canhil/service/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "canhil/ids/model_io.hpp"
#include "canhil/monitor/signals.hpp"

namespace canhil::service {
namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::ValidationError, what); }

constexpr std::pair<StepOp, const char*> kStepNames[] = {
    {StepOp::SetSensor, "set_sensor"},   {StepOp::StartAttack, "start_attack"},
    {StepOp::StopAttack, "stop_attack"}, {StepOp::ResetNode, "reset_node"},
    {StepOp::Capture, "capture"},        {StepOp::Expect, "expect"},
};

ids::Strategy parse_strategy_name(const std::string& s) {
  if (s == "ecu") return ids::Strategy::EcuCoupled;
  if (s == "controller") return ids::Strategy::ControllerCoupled;
  if (auto p = ids::parse_strategy(s)) return *p;
  invalid("unknown IDS strategy '" + s + "' (ecu|controller)");
}

double time_field(const Json& j, const char* key, double fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number() || it->get<double>() < 0) invalid(std::string("'") + key + "' must be a number >= 0");
  return it->get<double>();
}

Expectation parse_expectation(const Json& s) {
  Expectation e;
  e.within_us = time_field(s, "within_us", 0.0);
  e.absent = s.value("absent", false);
  int kinds = 0;
  if (s.contains("actuation")) {
    const Json& a = require_object(s.at("actuation"), "actuation");
    e.kind = Expectation::Kind::Actuation;
    e.node = a.value("node", "");
    e.actuator = a.value("actuator", "");
    e.value = a.value("value", true);
    ++kinds;
  }
  if (s.contains("anomaly")) {
    e.kind = Expectation::Kind::Anomaly;
    e.text = s.at("anomaly").get<std::string>();
    ++kinds;
  }
  if (s.contains("verdict")) {
    e.kind = Expectation::Kind::Verdict;
    auto c = parse_traffic_class(s.at("verdict").get<std::string>());
    if (!c) invalid("unknown verdict class");
    e.verdict = *c;
    ++kinds;
  }
  if (kinds != 1) invalid("expect needs exactly one of actuation, anomaly, verdict");
  return e;
}

ScriptStep parse_step(const Json& s, const std::map<std::string, attack::AttackProfile>& attacks,
                      const std::filesystem::path& base) {
  require_object(s, "script step");
  ScriptStep step;
  step.at_us = time_field(s, "at_us", 0.0);
  const std::string op = s.value("op", "");
  auto it = std::find_if(std::begin(kStepNames), std::end(kStepNames), [&](const auto& p) { return op == p.second; });
  if (it == std::end(kStepNames)) invalid("unknown op '" + op + "'");
  step.op = it->first;
  switch (step.op) {
    case StepOp::SetSensor: {
      step.node = s.value("node", "");
      step.sensor = s.value("sensor", "");
      const Json& v = s.contains("value") ? s.at("value") : Json(nullptr);
      if (v.is_number_integer()) {
        step.value = v.get<int>();
      } else if (v.is_boolean()) {
        step.value = v.get<bool>() ? 1 : 0;
      } else if (v.is_string()) {
        step.symbolic = v.get<std::string>();
      } else {
        invalid("set_sensor needs an integer, boolean or symbolic value");
      }
      break;
    }
    case StepOp::StartAttack: {
      step.label = s.value("label", "");
      const Json& a = s.contains("attack") ? s.at("attack") : Json(nullptr);
      if (a.is_string()) {
        auto found = attacks.find(a.get<std::string>());
        if (found == attacks.end()) invalid("unknown attack '" + a.get<std::string>() + "'");
        step.attack = found->second;
        if (step.label.empty()) step.label = found->first;
      } else {
        step.attack = parse_attack(a, base);
      }
      if (step.label.empty()) invalid("start_attack needs a label");
      break;
    }
    case StepOp::StopAttack:
      step.label = s.value("label", "");
      break;
    case StepOp::ResetNode:
      step.node = s.value("node", "*");
      break;
    case StepOp::Capture:
      step.signals = s.value("signals", std::vector<std::string>{});
      step.duration_us = time_field(s, "duration_us", 0.0);
      if (step.signals.empty() || !(step.duration_us > 0)) invalid("capture needs signals and duration_us > 0");
      break;
    case StepOp::Expect:
      step.expect = parse_expectation(s);
      break;
  }
  return step;
}

std::string describe(const ScriptStep& s) {
  const Expectation& e = s.expect;
  std::ostringstream os;
  os << (e.absent ? "no " : "");
  switch (e.kind) {
    case Expectation::Kind::Actuation: os << e.node << "." << e.actuator << "=" << (e.value ? "1" : "0"); break;
    case Expectation::Kind::Anomaly: os << "anomaly '" << e.text << "'"; break;
    case Expectation::Kind::Verdict: os << "verdict " << to_string(e.verdict); break;
  }
  os << " within " << e.within_us << " us of " << s.at_us << " us";
  return os.str();
}

ExpectationResult check(std::size_t index, const ScriptStep& step, const sim::Engine& engine) {
  const Expectation& e = step.expect;
  const Bitrate br = engine.bitrate();
  const SimTime from{br.ticks_ceil(step.at_us)};
  const SimTime to = from + br.ticks_ceil(e.within_us);
  auto inside = [&](SimTime t) { return t >= from && t <= to; };

  std::optional<SimTime> hit;
  switch (e.kind) {
    case Expectation::Kind::Actuation:
      for (const auto& a : engine.actuations()) {
        if (inside(a.at) && a.node == e.node && a.actuator == e.actuator && a.value == e.value) {
          hit = a.at;
          break;
        }
      }
      break;
    case Expectation::Kind::Anomaly:
      for (const auto& s : engine.status_log()) {
        if (!inside(s.at)) continue;
        if (std::any_of(s.anomalies.begin(), s.anomalies.end(),
                        [&](const std::string& a) { return a.find(e.text) != std::string::npos; })) {
          hit = s.at;
          break;
        }
      }
      break;
    case Expectation::Kind::Verdict:
      for (const auto& v : engine.verdicts()) {
        if (inside(v.verdict.latency.verdict_time) && v.verdict.cls == e.verdict) {
          hit = v.verdict.latency.verdict_time;
          break;
        }
      }
      break;
  }
  ExpectationResult r;
  r.step = index;
  r.description = describe(step);
  r.passed = e.absent ? !hit : hit.has_value();
  if (hit) {
    std::ostringstream os;
    os << "seen at " << br.to_us(*hit) << " us (+" << br.to_us(*hit - from) << " us)";
    r.detail = os.str();
  } else {
    r.detail = "not seen";
  }
  return r;
}

template <typename T>
std::string ndjson(const std::vector<T>& items, Bitrate br) {
  std::string out;
  for (const auto& item : items) {
    out += to_json(item, br).dump();
    out += '\n';
  }
  return out;
}

double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return 0.0;
  const auto i = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1) + 0.5);
  return v[std::min(i, v.size() - 1)];
}

}  // namespace

std::string_view to_string(StepOp op) {
  for (const auto& [k, name] : kStepNames) {
    if (k == op) return name;
  }
  return "?";
}

ScenarioConfig parse_scenario(const Json& doc, const std::filesystem::path& base_dir) {
  require_object(doc, "scenario");
  ScenarioConfig c;
  c.base_dir = base_dir;
  if (!doc.contains("format_version")) invalid("scenario: missing format_version");
  c.format_version = doc.at("format_version").get<int>();
  if (c.format_version != kScenarioFormatVersion) {
    invalid("scenario: unsupported format_version " + std::to_string(c.format_version));
  }
  c.name = doc.value("name", "scenario");
  c.bitrate.bits_per_second = doc.value("bitrate", kDefaultBitrate.bits_per_second);
  c.seed = doc.value("seed", std::uint64_t{0});
  c.stop_us = time_field(doc, "stop_us", c.stop_us);

  if (doc.contains("messages")) {
    for (const auto& [name, id] : require_object(doc.at("messages"), "messages").items()) {
      c.catalog[name] = parse_can_id(id, "messages." + name);
    }
  }
  if (!doc.contains("nodes") || !doc.at("nodes").is_array()) invalid("scenario: 'nodes' must be an array");
  for (const auto& n : doc.at("nodes")) c.nodes.push_back(parse_node(n, c.catalog));

  if (doc.contains("ids")) {
    const Json& j = require_object(doc.at("ids"), "ids");
    if (j.contains("model")) c.ids.model = j.at("model").get<std::string>();
    if (j.contains("strategies")) {
      c.ids.strategies.clear();
      for (const auto& s : j.at("strategies")) c.ids.strategies.push_back(parse_strategy_name(s.get<std::string>()));
    }
    c.ids.profile = j.value("profile", c.ids.profile);
  }
  if (doc.contains("monitor")) {
    const Json& j = require_object(doc.at("monitor"), "monitor");
    c.monitor.poll_period_us = j.value("poll_period_us", c.monitor.poll_period_us);
    for (const auto& chk : j.value("checks", Json::array())) c.monitor.checks.push_back(parse_check(chk));
  }

  std::map<std::string, attack::AttackProfile> attacks;
  if (doc.contains("attacks")) {
    for (const auto& [label, a] : require_object(doc.at("attacks"), "attacks").items()) {
      attacks.emplace(label, parse_attack(a, base_dir));
    }
  }
  const Json script = doc.value("script", Json::array());
  if (!script.is_array()) invalid("scenario: 'script' must be an array");
  for (std::size_t i = 0; i < script.size(); ++i) {
    try {
      c.script.push_back(parse_step(script[i], attacks, base_dir));
    } catch (const ScriptError&) {
      throw;
    } catch (const Error& e) {
      throw ScriptError(i, e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ScriptError(i, e.what());
    }
  }
  validate(c);
  return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) invalid("scenario file not found: " + path.string());
  Json doc;
  try {
    doc = Json::parse(ids::read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    invalid(path.string() + ": " + e.what());
  }
  try {
    return parse_scenario(doc, path.parent_path());
  } catch (const ScriptError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    invalid(path.string() + ": " + e.what());
  }
}

void validate(const ScenarioConfig& c) {
  if (c.bitrate.bits_per_second == 0) invalid("bitrate must be > 0");
  if (!(c.stop_us > 0)) invalid("stop_us must be > 0");
  if (!(c.monitor.poll_period_us > 0)) invalid("monitor.poll_period_us must be > 0");
  if (c.nodes.empty()) invalid("scenario has no nodes");

  std::set<std::uint32_t> indices;
  for (const auto& n : c.nodes) {
    if (!indices.insert(n.index).second) invalid("duplicate node index " + std::to_string(n.index));
  }
  // Builds the ECUs: catches duplicate names, foreign tx ids and bad tables.
  const sim::Engine probe(sim::EngineConfig{c.bitrate, c.seed, c.monitor.poll_period_us}, c.nodes, c.catalog);

  if (!c.ids.model.empty()) {
    const auto path = c.ids.model.is_relative() ? c.base_dir / c.ids.model : c.ids.model;
    if (!std::filesystem::exists(path)) invalid("IDS model not found: " + path.string());
    if (c.ids.strategies.empty()) invalid("ids.strategies is empty");
    if (c.ids.profile != ids::kPaperArtix7) invalid("unknown calibration profile '" + c.ids.profile + "'");
  }

  std::set<std::string> labels;
  for (std::size_t i = 0; i < c.script.size(); ++i) {
    const ScriptStep& s = c.script[i];
    try {
      if (s.at_us > c.stop_us) invalid("step time is after stop_us");
      switch (s.op) {
        case StepOp::SetSensor: {
          const auto& e = probe.node(probe.node_index(s.node));
          const auto* decl = e.config().behavior.find_sensor(s.sensor);
          if (!decl) throw Error(ErrorCode::UnknownSensor, s.node + " has no sensor '" + s.sensor + "'");
          if (!s.value && !decl->named_values.contains(s.symbolic)) {
            invalid("sensor " + s.sensor + " has no value '" + s.symbolic + "'");
          }
          break;
        }
        case StepOp::StartAttack:
          if (!labels.insert(s.label).second) invalid("attack label '" + s.label + "' used twice");
          break;
        case StepOp::StopAttack:
          if (!labels.contains(s.label)) invalid("stop_attack before start_attack '" + s.label + "'");
          break;
        case StepOp::ResetNode:
          if (s.node != "*") (void)probe.node_index(s.node);
          break;
        case StepOp::Capture: {
          const auto registry = probe.signal_registry();
          for (const auto& sig : s.signals) {
            if (std::none_of(registry.begin(), registry.end(), [&](const auto& d) { return d.name == sig; })) {
              invalid("unknown signal '" + sig + "'");
            }
          }
          if (s.at_us + s.duration_us > c.stop_us) invalid("capture runs past stop_us");
          break;
        }
        case StepOp::Expect:
          if (s.expect.kind == Expectation::Kind::Actuation) {
            const auto& e = probe.node(probe.node_index(s.expect.node));
            if (!e.config().behavior.actuators.contains(s.expect.actuator)) {
              invalid(s.expect.node + " has no actuator '" + s.expect.actuator + "'");
            }
          }
          if (s.expect.kind == Expectation::Kind::Verdict && c.ids.model.empty()) {
            invalid("verdict expectation without an IDS model");
          }
          break;
      }
    } catch (const ScriptError&) {
      throw;
    } catch (const Error& e) {
      throw ScriptError(i, e.what());
    }
  }
}

std::unique_ptr<sim::Engine> build_engine(const ScenarioConfig& c) {
  sim::EngineConfig cfg;
  cfg.bitrate = c.bitrate;
  cfg.seed = c.seed;
  cfg.poll_period_us = c.monitor.poll_period_us;
  auto engine = std::make_unique<sim::Engine>(cfg, c.nodes, c.catalog);
  for (const auto& chk : c.monitor.checks) engine->status_monitor().add_check(chk);
  if (!c.ids.model.empty()) {
    const auto path = c.ids.model.is_relative() ? c.base_dir / c.ids.model : c.ids.model;
    auto model = std::make_shared<const ids::QuantMlpModel>(ids::load_quant_model(path));
    const ids::CalibrationProfile cal = ids::paper_artix7();
    std::vector<ids::CostProfile> strategies;
    for (auto s : c.ids.strategies) strategies.push_back(cal.get(s));
    engine->set_ids(std::move(model), std::move(strategies));
  }
  return engine;
}

bool ReportBundle::passed() const {
  return std::all_of(expectations.begin(), expectations.end(), [](const auto& e) { return e.passed; });
}

ReportBundle run_scenario(const ScenarioConfig& c) {
  auto engine = build_engine(c);
  const Bitrate br = c.bitrate;
  auto handles = std::make_shared<std::map<std::string, attack::AttackHandle>>();

  for (std::size_t i = 0; i < c.script.size(); ++i) {
    const ScriptStep& step = c.script[i];
    if (step.op == StepOp::Expect) continue;
    engine->schedule_action(SimTime{br.ticks_ceil(step.at_us)}, [i, &step, handles](sim::Engine& e) {
      try {
        switch (step.op) {
          case StepOp::SetSensor:
            if (step.value) {
              e.set_sensor(step.node, step.sensor, *step.value);
            } else {
              e.set_sensor(step.node, step.sensor, step.symbolic);
            }
            break;
          case StepOp::StartAttack:
            (*handles)[step.label] = e.start_attack(step.attack);
            break;
          case StepOp::StopAttack: {
            const attack::AttackHandle h = handles->at(step.label);
            // Attacks with a duration may have stopped on their own.
            if (e.attacks().active(h)) e.stop_attack(h);
            break;
          }
          case StepOp::ResetNode:
            if (step.node == "*") {
              e.reset_all();
            } else {
              e.reset_node(step.node);
            }
            break;
          case StepOp::Capture:
            e.start_capture(step.signals, e.now(), e.bitrate().ticks_ceil(step.duration_us));
            break;
          case StepOp::Expect:
            break;
        }
      } catch (const Error& err) {
        throw ScriptError(i, err.what());
      }
    });
  }
  engine->run_until(SimTime{br.ticks_ceil(c.stop_us)});

  ReportBundle bundle;
  bundle.stats = engine->stats();
  for (std::size_t i = 0; i < c.script.size(); ++i) {
    if (c.script[i].op == StepOp::Expect) bundle.expectations.push_back(check(i, c.script[i], *engine));
  }

  bundle.files["bus.csv"] = monitor::export_csv(engine->bus_log(), br);
  bundle.files["status.ndjson"] = ndjson(engine->status_log(), br);
  bundle.files["actuations.ndjson"] = ndjson(engine->actuations(), br);
  const auto captures = engine->take_captures();
  for (std::size_t k = 0; k < captures.size(); ++k) {
    bundle.files["capture-" + std::to_string(k) + ".vcd"] = monitor::export_vcd(captures[k]);
  }

  const auto& verdicts = engine->verdicts();
  if (engine->ids_enabled()) {
    monitor::MetricsAccumulator acc;
    const ids::Strategy first = engine->ids_strategies().front().strategy;
    for (const auto& v : verdicts) {
      if (v.verdict.strategy == first) acc.add(v.truth, v.verdict.cls);
    }
    bundle.files["metrics.json"] = to_json(acc.report()).dump(2) + "\n";
    bundle.files["latency.json"] = latency_summary(verdicts, engine->ids_strategies()).dump(2) + "\n";
  }

  Json expectations = Json::array();
  for (const auto& r : bundle.expectations) {
    expectations.push_back({{"step", r.step}, {"expect", r.description}, {"passed", r.passed}, {"detail", r.detail}});
  }
  bundle.files["expectations.json"] = expectations.dump(2) + "\n";

  const auto& st = bundle.stats;
  const Json summary{{"scenario", c.name},
                     {"seed", c.seed},
                     {"bitrate", br.bits_per_second},
                     {"stop_us", c.stop_us},
                     {"frames", st.frames},
                     {"errors", st.errors},
                     {"arbitration_losses", st.arbitration_losses},
                     {"tx_overflows", st.tx_overflows},
                     {"events", st.events},
                     {"passed", bundle.passed()}};
  bundle.files["summary.json"] = summary.dump(2) + "\n";
  return bundle;
}

Json latency_summary(const std::vector<sim::VerdictRecord>& verdicts, const std::vector<ids::CostProfile>& strategies) {
  Json out = Json::object();
  std::map<ids::Strategy, double> mean_e2e;
  for (const auto& profile : strategies) {
    std::vector<double> lat;
    for (const auto& v : verdicts) {
      if (v.verdict.strategy == profile.strategy) lat.push_back(v.verdict.latency.elapsed_us);
    }
    std::sort(lat.begin(), lat.end());
    double sum = 0.0;
    for (double x : lat) sum += x;
    const double budget = ids::line_rate_budget_us(profile.frame_receive_us);
    const double mean = lat.empty() ? 0.0 : sum / static_cast<double>(lat.size());
    mean_e2e[profile.strategy] = profile.end_to_end_us();
    out["strategies"][std::string(ids::to_string(profile.strategy))] = {
        {"count", lat.size()},
        {"configured_end_to_end_us", profile.end_to_end_us()},
        {"processing_us", profile.processing_us()},
        {"min_us", lat.empty() ? 0.0 : lat.front()},
        {"mean_us", mean},
        {"p50_us", quantile_sorted(lat, 0.5)},
        {"p99_us", quantile_sorted(lat, 0.99)},
        {"max_us", lat.empty() ? 0.0 : lat.back()},
        {"line_rate_budget_us", budget},
        {"within_budget", profile.end_to_end_us() < budget},
    };
  }
  if (mean_e2e.size() == 2) {
    out["ratio_ecu_over_controller"] =
        mean_e2e[ids::Strategy::EcuCoupled] / mean_e2e[ids::Strategy::ControllerCoupled];
  }
  return out;
}

void write_bundle(const ReportBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : bundle.files) ids::write_text_file(dir / name, text);
}

}  // namespace canhil::service
