#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "canhil/attack/attack.hpp"
#include "canhil/ecu/ecu.hpp"
#include "canhil/ids/classify.hpp"
#include "canhil/monitor/bus_log.hpp"
#include "canhil/monitor/signals.hpp"
#include "canhil/monitor/status.hpp"
#include "canhil/sim/bus.hpp"
#include "canhil/sim/event_queue.hpp"

namespace canhil::sim {

inline constexpr std::size_t kDefaultTxQueueCapacity = 8;
inline constexpr std::size_t kAttackQueueCapacity = 4096;

struct EngineConfig {
  Bitrate bitrate = kDefaultBitrate;
  std::uint64_t seed = 0;
  double poll_period_us = monitor::kDefaultPollPeriodUs;
  std::size_t tx_queue_capacity = kDefaultTxQueueCapacity;
};

struct RunStats {
  std::uint64_t frames = 0;       // completed on the bus
  std::uint64_t errors = 0;       // bit and decode errors
  std::uint64_t events = 0;       // events executed
  std::uint64_t arbitration_losses = 0;
  std::uint64_t tx_overflows = 0;  // frames dropped by full transmit queues
  SimTime now;
};

struct ActuationRecord {
  SimTime at;
  std::string node;
  std::string actuator;
  bool value = false;
};

/// One verdict per strategy; the class is shared, the timing differs.
struct VerdictRecord {
  ids::IdsVerdict verdict;
  TrafficClass truth = TrafficClass::Benign;
};

/// Deterministic CAN network: ECU ports, one attacker port, the wired-AND
/// bus, an optional IDS observer and the status monitor.
///
/// Ports 0..n-1 are the ECUs in roster order; port n is the attacker.
class Engine {
 public:
  /// Throws ValidationError for an invalid roster (duplicate names or CAN
  /// ids owned by more than one node).
  Engine(EngineConfig config, std::vector<ecu::EcuConfig> roster,
         ecu::MessageCatalog catalog = ecu::default_catalog());

  const EngineConfig& config() const { return config_; }
  Bitrate bitrate() const { return config_.bitrate; }
  SimTime now() const { return queue_.now(); }

  // ECUs
  std::size_t node_count() const { return ecus_.size(); }
  const ecu::Ecu& node(std::size_t index) const { return ecus_.at(index); }
  /// Throws UnknownNode.
  std::size_t node_index(std::string_view name) const;
  std::vector<const ecu::Ecu*> nodes() const;
  std::uint32_t attacker_port() const { return static_cast<std::uint32_t>(ecus_.size()); }

  /// Throws UnknownNode / UnknownSensor.
  void set_sensor(std::string_view node, std::string_view sensor, int value);
  void set_sensor(std::string_view node, std::string_view sensor, std::string_view symbolic);
  /// Throws UnknownNode. Clears state, queues and pending work; tasks restart now.
  void reset_node(std::string_view node);
  void reset_all();
  /// Throws UnknownNode or ValidationError.
  void program_node(std::string_view node, ecu::BehaviorTable behavior);

  // Attacks
  attack::AttackHandle start_attack(const attack::AttackProfile& profile);
  void stop_attack(attack::AttackHandle handle);
  const attack::AttackInjector& attacks() const { return injector_; }

  // IDS
  void set_ids(std::shared_ptr<const ids::QuantMlpModel> model, std::vector<ids::CostProfile> strategies);
  bool ids_enabled() const { return classifier_.loaded(); }
  const std::vector<ids::CostProfile>& ids_strategies() const { return strategies_; }
  const std::vector<VerdictRecord>& verdicts() const { return verdicts_; }

  // Monitoring
  monitor::StatusMonitor& status_monitor() { return monitor_; }
  const std::vector<monitor::StatusSnapshot>& status_log() const { return status_log_; }
  const monitor::BusLog& bus_log() const { return log_; }
  const std::vector<ActuationRecord>& actuations() const { return actuations_; }

  /// Capturable signals: "bus", "tx.<port name>", "<node>.<actuator>",
  /// "<node>.life" and "ids.verdict".
  std::vector<monitor::SignalDef> signal_registry() const;
  /// Starts a capture window at `start` (>= now). Throws ValidationError for
  /// unknown signals and CaptureOverflow when the window is too large.
  void start_capture(const std::vector<std::string>& names, SimTime start, std::uint64_t ticks,
                     std::size_t capacity = monitor::kDefaultCaptureSamples);
  bool capture_active() const { return recorder_ != nullptr; }
  /// Finished captures, oldest first.
  std::vector<monitor::SignalTrace> take_captures();

  /// Runs `action` at `at` in the stimulus slot, before same-tick arbitration.
  void schedule_action(SimTime at, std::function<void(Engine&)> action);

  // Live observers, called from inside the event loop.
  std::function<void(const monitor::BusLogRecord&)> on_frame;
  std::function<void(const VerdictRecord&)> on_verdict;
  std::function<void(const monitor::StatusSnapshot&)> on_status;
  std::function<void(const ActuationRecord&)> on_actuation;

  /// Executes every event with time <= t and leaves the clock at t.
  RunStats run_until(SimTime t);
  /// Executes all events of the next occupied tick.
  RunStats step();
  const RunStats& stats() const { return stats_; }
  bool bus_idle() const { return !busy_; }

 private:
  struct TxEntry {
    can::CanFrame frame;
    TrafficClass label = TrafficClass::Benign;
    attack::AttackHandle attack = 0;
  };
  struct Port {
    std::string name;
    std::vector<TxEntry> queue;  // ECUs: lowest id first; attacker: FIFO
    bool attacker = false;
  };
  struct Contender {
    std::uint32_t port;
    TxEntry entry;
    can::FrameBitstream bits;
    bool from_flood = false;
  };
  struct InFlight {
    Contender winner;
    std::vector<std::uint32_t> also_sent;  // identical frames that finished together
    SimTime sof;
    std::vector<can::BitLevel> wire;
  };

  void dispatch(const Event& ev);
  void schedule(SimTime at, EventKind kind, Priority prio, std::uint32_t target, std::uint64_t payload);
  void request_arbitration();
  void arbitrate();
  void finish_frame();
  void enqueue(std::uint32_t port, TxEntry entry);
  void publish_verdict(std::size_t index);
  void validate_roster() const;
  void apply_output(std::size_t node, const ecu::EcuOutput& out);
  void start_tasks(std::size_t node);
  void run_task(std::size_t node, std::uint64_t payload);
  void on_attack_tick(attack::AttackHandle handle);
  void observe_ids(monitor::BusLogRecord& rec);
  void capture_write(std::string_view signal, std::uint32_t value);
  void close_capture_if_done();

  EngineConfig config_;
  ecu::MessageCatalog catalog_;
  std::vector<ecu::Ecu> ecus_;
  std::vector<std::uint32_t> generation_;
  std::vector<std::deque<can::CanFrame>> rx_pending_;
  std::vector<Port> ports_;
  EventQueue queue_;
  BusWire wire_;
  attack::AttackInjector injector_;

  bool busy_ = false;
  bool arbitration_scheduled_ = false;
  std::optional<InFlight> in_flight_;
  std::uint32_t errors_since_record_ = 0;

  ids::Classifier classifier_;
  std::vector<ids::CostProfile> strategies_;
  std::vector<VerdictRecord> verdicts_;

  monitor::StatusMonitor monitor_;
  std::vector<monitor::StatusSnapshot> status_log_;
  monitor::BusLog log_;
  std::vector<ActuationRecord> actuations_;

  std::unique_ptr<monitor::SignalRecorder> recorder_;
  std::vector<monitor::SignalTrace> captures_;

  std::map<std::uint64_t, std::function<void(Engine&)>> actions_;
  std::uint64_t next_action_ = 0;

  RunStats stats_;
};

}  // namespace canhil::sim
