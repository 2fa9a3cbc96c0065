#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "canhil/service/control.hpp"
#include "canhil/service/server.hpp"
#include "oracles.hpp"

// After Eigen: resolv.h defines a macro named _res.
#include <httplib.h>

using namespace canhil;
using namespace canhil::service;

namespace {

std::filesystem::path scenario_path(const std::string& name) {
  return oracle::source_dir() / "scenarios" / (name + ".json");
}

Json base_doc() {
  return Json::parse(R"({
    "format_version": 1, "name": "t", "seed": 1, "stop_us": 200000,
    "nodes": [{"name": "ECU1", "index": 1, "role": "EngineBrake"},
              {"name": "ECU2", "index": 2, "role": "AirbagLight"},
              {"name": "ECU3", "index": 3, "role": "Sensors"},
              {"name": "ECU4", "index": 4, "role": "Lights"}],
    "script": []})");
}

std::string error_code(const Json& response) {
  if (response.value("ok", true)) return "";
  return response.at("error").value("code", "");
}

ErrorCode validation_code(const Json& doc) {
  try {
    validate(parse_scenario(doc, oracle::source_dir() / "scenarios"));
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;  // "no error"
}

// Minimal line-oriented TCP client.
class LineClient {
 public:
  explicit LineClient(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_port = htons(static_cast<std::uint16_t>(port));
    ::inet_pton(AF_INET, "127.0.0.1", &a.sin_addr);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&a), sizeof a) != 0) fd_ = -1;
    timeval tv{5, 0};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  }
  ~LineClient() {
    if (fd_ >= 0) ::close(fd_);
  }
  bool ok() const { return fd_ >= 0; }
  void send(const Json& j) {
    const std::string s = j.dump() + "\n";
    ::send(fd_, s.data(), s.size(), MSG_NOSIGNAL);
  }
  std::optional<Json> next() {
    while (true) {
      const auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        Json j = Json::parse(buf_.substr(0, nl));
        buf_.erase(0, nl + 1);
        return j;
      }
      char chunk[4096];
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n <= 0) return std::nullopt;
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }
  // Next line that is a response (not a stream record).
  std::optional<Json> response() {
    while (auto j = next()) {
      if (!j->contains("stream")) return j;
    }
    return std::nullopt;
  }

 private:
  int fd_ = -1;
  std::string buf_;
};

}  // namespace

// ---- scenarios ----------------------------------------------------------------

TEST(Scenario, TestbedScenariosPass) {
  for (const char* name : {"collision", "light", "brake"}) {
    const auto bundle = run_scenario(load_scenario(scenario_path(name)));
    EXPECT_TRUE(bundle.passed()) << name;
    for (const auto& r : bundle.expectations) EXPECT_TRUE(r.passed) << name << ": " << r.description << " " << r.detail;
    for (const char* file : {"bus.csv", "status.ndjson", "actuations.ndjson", "latency.json", "metrics.json",
                             "expectations.json", "summary.json"}) {
      EXPECT_TRUE(bundle.files.contains(file)) << name << " " << file;
    }
  }
}

TEST(Scenario, SameSeedSameBytes) {
  const auto cfg = load_scenario(scenario_path("light"));
  const auto a = run_scenario(cfg);
  const auto b = run_scenario(cfg);
  EXPECT_EQ(a.files, b.files);
  auto other = cfg;
  other.seed = 99;
  EXPECT_NE(run_scenario(other).files.at("bus.csv"), a.files.at("bus.csv"));
}

TEST(Scenario, LatencySummaryMatchesProfiles) {
  const auto bundle = run_scenario(load_scenario(scenario_path("collision")));
  const Json lat = Json::parse(bundle.files.at("latency.json"));
  ASSERT_TRUE(lat.contains("strategies"));
  const Json& s = lat.at("strategies");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(s.at("EcuCoupled").at("configured_end_to_end_us").get<double>(), 5056.0);
  EXPECT_DOUBLE_EQ(s.at("ControllerCoupled").at("configured_end_to_end_us").get<double>(), 794.0);
  EXPECT_FALSE(s.at("EcuCoupled").at("within_budget").get<bool>());
  EXPECT_TRUE(s.at("ControllerCoupled").at("within_budget").get<bool>());
  EXPECT_GT(s.at("EcuCoupled").at("count").get<int>(), 0);
  EXPECT_GE(lat.at("ratio_ecu_over_controller").get<double>(), 6.3);
}

TEST(Scenario, ValidationErrors) {
  EXPECT_EQ(validation_code(base_doc()), ErrorCode::IoError);  // valid

  Json d = base_doc();
  d.erase("format_version");
  EXPECT_EQ(validation_code(d), ErrorCode::ValidationError);

  d = base_doc();
  d["nodes"].push_back({{"name", "ECU5"}, {"index", 5}, {"role", "Sensors"}});  // second COLLISION sender
  EXPECT_EQ(validation_code(d), ErrorCode::ValidationError);

  d = base_doc();
  d["nodes"][1]["index"] = 1;
  EXPECT_EQ(validation_code(d), ErrorCode::ValidationError);

  d = base_doc();
  d["ids"] = {{"model", "no-such-model.json"}};
  EXPECT_EQ(validation_code(d), ErrorCode::ValidationError);

  d = base_doc();
  d["script"] = {{{"at_us", 10}, {"op", "set_sensor"}, {"node", "ECU3"}, {"sensor", "warp"}, {"value", 1}}};
  EXPECT_EQ(validation_code(d), ErrorCode::ScriptError);

  d = base_doc();
  d["script"] = {{{"at_us", 10}, {"op", "stop_attack"}, {"label", "x"}}};
  EXPECT_EQ(validation_code(d), ErrorCode::ScriptError);

  d = base_doc();
  d["script"] = {{{"at_us", 10}, {"op", "expect"}, {"verdict", "DoS"}, {"within_us", 10}}};
  EXPECT_EQ(validation_code(d), ErrorCode::ScriptError);

  d = base_doc();
  d["script"] = {{{"at_us", 10}, {"op", "fly"}}};
  EXPECT_NE(validation_code(d), ErrorCode::IoError);

  try {
    load_scenario("/nonexistent/dir/x.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ValidationError);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/x.json"), std::string::npos);
  }
}

TEST(Scenario, FailedExpectationIsReported) {
  Json d = base_doc();
  d["script"] = {{{"at_us", 10000}, {"op", "expect"}, {"within_us", 5000},
                  {"actuation", {{"node", "ECU2"}, {"actuator", "airbag_deployed"}, {"value", true}}}}};
  const auto bundle = run_scenario(parse_scenario(d));
  ASSERT_EQ(bundle.expectations.size(), 1u);
  EXPECT_FALSE(bundle.passed());
}

// ---- control service ----------------------------------------------------------

TEST(Control, CommandsAndErrors) {
  ControlService svc;
  Json r = svc.handle_command({{"id", 1}, {"op", "sys_ctl"}});
  EXPECT_EQ(error_code(r), "UnknownOp");
  EXPECT_EQ(r.at("id"), 1);
  EXPECT_EQ(error_code(svc.handle_command({{"op", 5}})), "ValidationError");
  EXPECT_EQ(error_code(svc.handle_command({{"op", "reset_node"}, {"args", {{"node", "ECU9"}}}})), "UnknownNode");
  EXPECT_EQ(error_code(svc.handle_command({{"op", "sys_ctrl"},
                                           {"args", {{"sensor", {{"node", "ECU3"}, {"sensor", "x"}, {"value", 1}}}}}})),
            "UnknownSensor");
  EXPECT_EQ(error_code(svc.handle_command({{"op", "att_ctrl"}, {"args", {{"action", "stop"}, {"handle", 77}}}})),
            "UnknownHandle");
  EXPECT_EQ(error_code(svc.handle_command({{"op", "user_capture"}, {"args", {{"signals", {"nope"}}}}})),
            "ValidationError");

  r = svc.handle_command({{"op", "run"}, {"args", {{"for_us", 100000}}}});
  ASSERT_TRUE(r.at("ok").get<bool>()) << r.dump();
  EXPECT_DOUBLE_EQ(r.at("result").at("now_us").get<double>(), 100000.0);
  EXPECT_GT(r.at("result").at("frames").get<int>(), 0);
  EXPECT_EQ(error_code(svc.handle_command({{"op", "run"}, {"args", {{"until_us", 10}}}})), "ValidationError");
}

TEST(Control, ProgramNodeThenCollision) {
  ControlService svc;
  Json r = svc.handle_command({{"op", "prog_node"}, {"args", {{"node", "ECU4"}, {"behavior", "AirbagLight"}}}});
  // ECU2 already sends LIGHT; a second owner is refused.
  EXPECT_FALSE(r.at("ok").get<bool>());
  r = svc.handle_command({{"op", "prog_node"},
                          {"args", {{"node", "ECU4"},
                                    {"behavior", {{"actuators", {{"airbag_deployed", false}}},
                                                  {"rx", {{{"message", "COLLISION"}, {"when", "nonzero"},
                                                           {"set", {{"airbag_deployed", true}}}}}}}}}}});
  ASSERT_TRUE(r.at("ok").get<bool>()) << r.dump();
  svc.handle_command({{"op", "sys_ctrl"}, {"args", {{"sensor", {{"node", "ECU3"}, {"sensor", "collision"}, {"value", "on"}}}}}});
  r = svc.handle_command({{"op", "run"}, {"args", {{"for_us", 20000}}}});
  const Json& nodes = r.at("result").at("nodes");
  EXPECT_TRUE(nodes[3].at("actuators").at("airbag_deployed").get<bool>());
}

TEST(Control, StreamsFloodAndVerdicts) {
  ServiceOptions opt;
  opt.base_dir = oracle::source_dir() / "scenarios";
  ControlService svc(opt);
  ASSERT_TRUE(svc.handle_command({{"op", "load_scenario"}, {"args", {{"path", "collision.json"}}}}).at("ok").get<bool>());
  auto session = svc.open_session();
  svc.handle_command({{"op", "bus_log"}}, *session);
  svc.handle_command({{"op", "monitor"}}, *session);
  Json r = svc.handle_command({{"op", "att_ctrl"}, {"args", {{"kind", "DosFlood"}}}}, *session);
  ASSERT_TRUE(r.at("ok").get<bool>()) << r.dump();
  EXPECT_EQ(r.at("result").at("handle"), 1);
  svc.handle_command({{"op", "run"}, {"args", {{"for_us", 20000}}}}, *session);
  std::size_t floods = 0, verdicts = 0;
  while (auto line = session->outbox->pop(0)) {
    if (line->empty()) break;
    const Json j = Json::parse(*line);
    if (!j.contains("stream")) continue;
    if (j.at("stream") == "bus_log" && j.at("record").at("frame").at("id") == "0x000") ++floods;
    if (j.at("stream") == "monitor" && j.at("record").value("type", "") == "verdict") {
      ++verdicts;
    }
  }
  EXPECT_GT(floods, 50u);
  EXPECT_GT(verdicts, 0u);
  svc.close_session(session);
}

TEST(Control, SlowSubscriberIsDisconnected) {
  ServiceOptions opt;
  opt.outbox_capacity = 16;
  ControlService svc(opt);
  auto slow = svc.open_session();
  svc.handle_command({{"op", "bus_log"}}, *slow);
  const Json r = svc.handle_command({{"op", "run"}, {"args", {{"for_us", 200000}}}});
  EXPECT_TRUE(r.at("ok").get<bool>());  // the engine is not held up
  EXPECT_TRUE(slow->outbox->closed());
  std::string last;
  while (auto line = slow->outbox->pop(0)) {
    if (line->empty()) break;
    last = *line;
  }
  EXPECT_EQ(Json::parse(last).at("error").at("code"), "IoError");
}

TEST(Control, AuthAndBusy) {
  ServiceOptions opt;
  opt.token = "s3cret";
  opt.busy_wait_ms = 20;
  ControlService svc(opt);
  auto s = svc.open_session();
  EXPECT_EQ(error_code(svc.handle_command({{"op", "pause"}}, *s)), "AuthFailed");
  EXPECT_EQ(error_code(svc.handle_command({{"op", "pause"}, {"token", "nope"}}, *s)), "AuthFailed");
  EXPECT_TRUE(svc.handle_command({{"op", "pause"}, {"token", "s3cret"}}, *s).at("ok").get<bool>());
  EXPECT_TRUE(svc.check_token("s3cret"));
  EXPECT_FALSE(svc.check_token("s3cret!"));

  Json r = svc.handle_command({{"op", "run"}}, *s);  // open-ended background run
  ASSERT_TRUE(r.at("ok").get<bool>()) << r.dump();
  EXPECT_EQ(error_code(svc.handle_command({{"op", "step"}}, *s)), "EngineBusy");
  EXPECT_EQ(error_code(svc.handle_command({{"op", "load_scenario"}, {"args", {{"path", "x"}}}}, *s)), "EngineBusy");
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  r = svc.handle_command({{"op", "pause"}}, *s);
  EXPECT_TRUE(r.at("ok").get<bool>());
  EXPECT_FALSE(r.at("result").at("running").get<bool>());
  EXPECT_GT(r.at("result").at("now_us").get<double>(), 0.0);
  EXPECT_TRUE(svc.handle_command({{"op", "step"}, {"args", {{"count", 3}}}}, *s).at("ok").get<bool>());
}

TEST(Control, CaptureIsPublishedAsVcd) {
  ControlService svc;
  auto s = svc.open_session();
  Json r = svc.handle_command({{"op", "debug_config"}, {"args", {{"duration_us", 2000}}}}, *s);
  ASSERT_TRUE(r.at("ok").get<bool>()) << r.dump();
  svc.handle_command({{"op", "signal_capture"}}, *s);
  svc.handle_command({{"op", "run"}, {"args", {{"for_us", 5000}}}}, *s);
  bool got = false;
  while (auto line = s->outbox->pop(0)) {
    if (line->empty()) break;
    const Json j = Json::parse(*line);
    if (j.value("stream", "") == "signal_capture") {
      const auto changes = oracle::parse_vcd(j.at("record").at("vcd").get<std::string>());
      EXPECT_FALSE(changes.empty());
      got = true;
    }
  }
  EXPECT_TRUE(got);
}

// ---- transports ---------------------------------------------------------------

TEST(Transport, NdjsonOverTcp) {
  ServiceOptions opt;
  opt.token = "tok";
  ControlService svc(opt);
  NdjsonServer server(svc);
  server.start("127.0.0.1", 0);
  ASSERT_GT(server.port(), 0);
  {
    LineClient c(server.port());
    ASSERT_TRUE(c.ok());
    c.send({{"id", "a"}, {"op", "monitor"}});
    auto r = c.response();
    ASSERT_TRUE(r);
    EXPECT_EQ(error_code(*r), "AuthFailed");
    c.send({{"id", "b"}, {"op", "monitor"}, {"token", "tok"}});
    r = c.response();
    ASSERT_TRUE(r);
    EXPECT_EQ(r->at("id"), "b");
    EXPECT_TRUE(r->at("ok").get<bool>());
    c.send({{"id", "c"}, {"op", "run"}, {"args", {{"for_us", 650000}}}});
    std::size_t status = 0;
    bool responded = false;
    while (auto j = c.next()) {
      if (j->contains("stream") && j->at("record").value("type", "") == "status") ++status;
      if (j->value("id", "") == "c") {
        responded = true;
        break;
      }
    }
    EXPECT_TRUE(responded);
    EXPECT_EQ(status, 2u);  // polls at 300 and 600 ms
  }
  server.stop();
}

TEST(Transport, HttpAndEventStream) {
  ServiceOptions opt;
  opt.token = "tok";
  ControlService svc(opt);
  HttpGateway gw(svc);
  gw.start("127.0.0.1", 0);
  httplib::Client cli("127.0.0.1", gw.port());
  cli.set_read_timeout(5, 0);

  auto res = cli.Post("/api/command", R"({"op":"pause"})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 401);
  httplib::Headers auth{{"Authorization", "Bearer tok"}};
  res = cli.Post("/api/command", auth, R"({"op":"bus_log","args":{"tail":0}})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_TRUE(Json::parse(res->body).at("ok").get<bool>());
  res = cli.Get("/api/stream?streams=monitor&token=wrong");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 401);

  // Server-sent events: the first event names the session.
  std::string events;
  std::atomic<bool> done{false};
  std::thread reader([&] {
    httplib::Client sse("127.0.0.1", gw.port());
    sse.set_read_timeout(5, 0);
    sse.Get("/api/stream?streams=monitor&token=tok", [&](const char* data, std::size_t n) {
      events.append(data, n);
      return !done.load() && events.find("\"status\"") == std::string::npos;
    });
  });
  for (int i = 0; i < 100 && events.find("session") == std::string::npos; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  res = cli.Post("/api/command", auth, R"({"op":"run","args":{"for_us":310000}})", "application/json");
  ASSERT_TRUE(res);
  reader.join();
  done = true;
  EXPECT_EQ(events.rfind("data: {\"session\":", 0), 0u) << events.substr(0, 80);
  EXPECT_NE(events.find("\"type\":\"status\""), std::string::npos);
  gw.stop();
}

// The console's session, driven over HTTP: status refresh every poll, a DoS
// flatlines the life signals and draws DoS verdicts, stopping it recovers.
TEST(Transport, ConsoleSessionFlow) {
  ServiceOptions opt;
  opt.base_dir = oracle::source_dir() / "scenarios";
  ControlService svc(opt);
  HttpGateway gw(svc);
  gw.start("127.0.0.1", 0);

  std::mutex mu;
  std::vector<Json> events;
  std::string pending;
  std::atomic<bool> done{false};
  std::thread reader([&] {
    httplib::Client sse("127.0.0.1", gw.port());
    sse.set_read_timeout(10, 0);
    sse.Get("/api/stream?streams=monitor", [&](const char* data, std::size_t n) {
      pending.append(data, n);
      std::size_t end;
      while ((end = pending.find("\n\n")) != std::string::npos) {
        const std::string ev = pending.substr(0, end);
        pending.erase(0, end + 2);
        if (ev.rfind("data: ", 0) == 0) {
          std::lock_guard lock(mu);
          events.push_back(Json::parse(ev.substr(6)));
        }
      }
      return !done.load();
    });
  });
  auto session_id = [&]() -> std::optional<std::uint64_t> {
    std::lock_guard lock(mu);
    if (events.empty()) return std::nullopt;
    return events.front().at("session").get<std::uint64_t>();
  };
  for (int i = 0; i < 250 && !session_id(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  ASSERT_TRUE(session_id());

  httplib::Client cli("127.0.0.1", gw.port());
  cli.set_read_timeout(10, 0);
  auto post = [&](Json cmd) {
    cmd["session"] = *session_id();
    auto res = cli.Post("/api/command", cmd.dump(), "application/json");
    EXPECT_TRUE(res && res->status == 200);
    return res ? Json::parse(res->body) : Json();
  };
  ASSERT_TRUE(post({{"op", "load_scenario"}, {"args", {{"path", "collision.json"}}}}).at("ok").get<bool>());
  post({{"op", "run"}, {"args", {{"until_us", 650'000}}}});
  const Json started = post({{"op", "att_ctrl"}, {"args", {{"action", "start"}, {"kind", "DosFlood"}}}});
  ASSERT_TRUE(started.at("ok").get<bool>());
  post({{"op", "run"}, {"args", {{"until_us", 1'250'000}}}});
  post({{"op", "att_ctrl"}, {"args", {{"action", "stop"}, {"handle", started.at("result").at("handle")}}}});
  post({{"op", "run"}, {"args", {{"until_us", 1'850'000}}}});

  // Wait for the last status (poll at 1.8 s) to arrive.
  auto statuses = [&] {
    std::vector<Json> out;
    std::lock_guard lock(mu);
    for (const auto& e : events) {
      if (e.value("stream", "") == "monitor" && e.at("record").value("type", "") == "status") out.push_back(e.at("record"));
    }
    return out;
  };
  for (int i = 0; i < 250 && statuses().size() < 6; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  done = true;
  reader.join();
  gw.stop();

  const auto s = statuses();
  ASSERT_EQ(s.size(), 6u);  // one per 300 ms poll up to 1.8 s
  auto min_delta = [](const Json& st) {
    std::uint64_t m = UINT64_MAX;
    for (const auto& n : st.at("nodes")) m = std::min(m, n.at("life_delta").get<std::uint64_t>());
    return m;
  };
  EXPECT_GT(min_delta(s[1]), 0u);   // 300..600 ms, healthy
  EXPECT_EQ(min_delta(s[3]), 0u);   // 900..1200 ms, flooded
  EXPECT_GT(s[3].at("verdicts").at("DoS").get<int>(), 0);
  bool lost = false;
  for (const auto& a : s[3].at("anomalies")) lost |= a.get<std::string>().rfind("life signal lost", 0) == 0;
  EXPECT_TRUE(lost);
  EXPECT_GT(min_delta(s[5]), 0u);   // 1500..1800 ms, recovered
  EXPECT_EQ(s[5].at("verdicts").at("DoS").get<int>(), 0);
}
