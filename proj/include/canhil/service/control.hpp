#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "canhil/service/scenario.hpp"

namespace canhil::service {

inline constexpr std::size_t kDefaultOutboxCapacity = 4096;

// Command names: testbed control verbs plus run control.
inline constexpr const char* kOps[] = {"sys_ctrl",     "att_ctrl",       "prog_node",    "reset_node", "debug_config",
                                       "monitor",      "bus_log",        "signal_capture", "user_capture",
                                       "load_scenario", "run",           "pause",        "step"};

inline constexpr const char* kStreams[] = {"monitor", "bus_log", "signal_capture"};

/// Outgoing lines of one client. Bounded: a subscriber that falls
/// `capacity` records behind is closed with an error instead of blocking
/// the engine.
class Outbox {
 public:
  explicit Outbox(std::size_t capacity = kDefaultOutboxCapacity) : capacity_(capacity) {}

  /// Stream record; false (and the outbox closes) when full.
  bool push_record(std::string line);
  /// Responses are never dropped.
  void push_response(std::string line);
  /// Closes after queuing a final error line.
  void close(std::string error_line = {});

  /// Next line, or nullopt once closed and drained. Waits up to `timeout_ms`
  /// (forever when negative); an empty string means the wait timed out.
  std::optional<std::string> pop(int timeout_ms = -1);

  bool closed() const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> lines_;
  std::size_t capacity_;
  bool closed_ = false;
};

/// One client connection: authentication state, its outbox and the
/// streams it subscribed to.
struct Session {
  std::uint64_t id = 0;
  bool authenticated = false;
  std::shared_ptr<Outbox> outbox = std::make_shared<Outbox>();
  std::set<std::string> streams;
};

struct ServiceOptions {
  std::string token;  // empty: no authentication
  std::size_t outbox_capacity = kDefaultOutboxCapacity;
  std::filesystem::path base_dir = ".";  // resolves relative scenario paths
  int busy_wait_ms = 200;                // EngineBusy after this long
};

/// The control plane. Commands from any number of sessions serialise on
/// one engine; stream records fan out to subscribed sessions.
///
/// Command: {"id": any, "op": name, "args": {...}, "token": optional}
/// Response: {"id": same, "ok": true, "result": {...}} or
///           {"id": same, "ok": false, "error": {"code": "...", "message": "..."}}
/// Stream record: {"stream": name, "record": {...}}
class ControlService {
 public:
  explicit ControlService(ServiceOptions options = {});
  ~ControlService();

  ControlService(const ControlService&) = delete;
  ControlService& operator=(const ControlService&) = delete;

  std::shared_ptr<Session> open_session();
  void close_session(const std::shared_ptr<Session>& session);
  std::shared_ptr<Session> find_session(std::uint64_t id) const;

  /// Local (in-process) call: no token needed, no stream subscription.
  Json handle_command(const Json& command);
  /// Network call on behalf of `session`.
  Json handle_command(const Json& command, Session& session);
  /// One NDJSON line in, one response line out (without the newline).
  std::string handle_line(const std::string& line, Session& session);

  /// Adds `stream` to the session's subscriptions. Throws ValidationError
  /// for unknown stream names.
  void add_stream(Session& session, const std::string& stream);

  bool check_token(std::string_view token) const;
  const ServiceOptions& options() const { return options_; }

  /// Blocks until a background run stops.
  void wait_idle();

 private:
  Json dispatch(const std::string& op, const Json& args, Session* session);
  Json do_load(const Json& args);
  Json do_sys_ctrl(const Json& args);
  Json do_att_ctrl(const Json& args);
  Json do_prog_node(const Json& args);
  Json do_reset_node(const Json& args);
  Json do_capture(const Json& args, bool user);
  Json do_run(const Json& args);
  Json do_step(const Json& args);
  Json subscribe(Session* session, const std::string& stream);
  Json engine_state() const;

  void rebuild_engine();
  void attach_streams();
  void publish(const std::string& stream, const Json& record);
  void flush_captures();
  void stop_runner();
  sim::Engine& engine();

  ServiceOptions options_;
  std::timed_mutex engine_mu_;
  std::optional<ScenarioConfig> scenario_;
  std::unique_ptr<sim::Engine> engine_;

  mutable std::mutex sessions_mu_;
  std::vector<std::weak_ptr<Session>> sessions_;
  std::uint64_t next_session_ = 1;

  std::thread runner_;
  std::atomic<bool> running_{false};
  bool realtime_ = false;
};

}  // namespace canhil::service
