#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "canhil/error.hpp"
#include "canhil/service/json_io.hpp"

namespace canhil::service {

inline constexpr int kScenarioFormatVersion = 1;

struct IdsSettings {
  std::filesystem::path model;  // empty: no IDS
  std::vector<ids::Strategy> strategies{ids::Strategy::ControllerCoupled};
  std::string profile = ids::kPaperArtix7;
};

struct MonitorSettings {
  double poll_period_us = monitor::kDefaultPollPeriodUs;
  std::vector<monitor::StatusCheck> checks;
};

enum class StepOp { SetSensor, StartAttack, StopAttack, ResetNode, Capture, Expect };

std::string_view to_string(StepOp op);

/// Something that must (or, with `absent`, must not) happen inside
/// [at_us, at_us + within_us].
struct Expectation {
  enum class Kind { Actuation, Anomaly, Verdict };
  Kind kind = Kind::Actuation;
  std::string node;
  std::string actuator;
  bool value = true;
  std::string text;  // anomaly substring
  TrafficClass verdict = TrafficClass::Benign;
  bool absent = false;
  double within_us = 0.0;
};

struct ScriptStep {
  double at_us = 0.0;
  StepOp op = StepOp::SetSensor;
  std::string node;  // set_sensor, reset_node ("*" for all)
  std::string sensor;
  std::optional<int> value;
  std::string symbolic;
  std::string label;  // attack label for start/stop
  attack::AttackProfile attack;
  std::vector<std::string> signals;  // capture
  double duration_us = 0.0;
  Expectation expect;
};

struct ScenarioConfig {
  int format_version = kScenarioFormatVersion;
  std::string name;
  Bitrate bitrate = kDefaultBitrate;
  std::uint64_t seed = 0;
  double stop_us = 1e6;
  ecu::MessageCatalog catalog = ecu::default_catalog();
  std::vector<ecu::EcuConfig> nodes;
  IdsSettings ids;
  MonitorSettings monitor;
  std::vector<ScriptStep> script;
  std::filesystem::path base_dir;  // relative paths resolve here
};

/// Scenario failures tied to a script step.
class ScriptError : public Error {
 public:
  ScriptError(std::size_t step, const std::string& message)
      : Error(ErrorCode::ScriptError, "step " + std::to_string(step) + ": " + message), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Throws ValidationError, or ScriptError for a bad step.
ScenarioConfig parse_scenario(const Json& doc, const std::filesystem::path& base_dir = {});
/// Throws ValidationError (with the path) when the file is missing or bad.
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Roster and reference checks: unique node names and indices, CAN ids
/// owned by one node, model file present, script steps that make sense.
void validate(const ScenarioConfig& config);

/// Engine built from the scenario, IDS and monitor checks installed.
std::unique_ptr<sim::Engine> build_engine(const ScenarioConfig& config);

struct ExpectationResult {
  std::size_t step = 0;
  std::string description;
  bool passed = false;
  std::string detail;
};

/// File name -> contents. Everything is in virtual time, so a rerun with
/// the same seed gives identical bytes.
struct ReportBundle {
  std::map<std::string, std::string> files;
  std::vector<ExpectationResult> expectations;
  sim::RunStats stats;

  bool passed() const;
};

/// Runs the script to stop_us and collects the report. Throws ScriptError
/// when a step fails to apply.
ReportBundle run_scenario(const ScenarioConfig& config);

void write_bundle(const ReportBundle& bundle, const std::filesystem::path& dir);

/// Latency summary per strategy, as written to latency.json.
Json latency_summary(const std::vector<sim::VerdictRecord>& verdicts, const std::vector<ids::CostProfile>& strategies);

}  // namespace canhil::service
