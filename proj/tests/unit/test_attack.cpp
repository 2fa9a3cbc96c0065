#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "canhil/error.hpp"
#include "canhil/sim/engine.hpp"

using namespace canhil;
using attack::AttackKind;
using attack::AttackProfile;
using can::CanFrame;

namespace {

std::vector<ecu::EcuConfig> testbed() {
  return {ecu::make_config("ECU1", 1, ecu::Role::EngineBrake), ecu::make_config("ECU2", 2, ecu::Role::AirbagLight),
          ecu::make_config("ECU3", 3, ecu::Role::Sensors), ecu::make_config("ECU4", 4, ecu::Role::Lights)};
}

SimTime at_us(double us) { return SimTime{kDefaultBitrate.ticks_ceil(us)}; }

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

attack::ReplayTrace parse(const std::string& text) {
  std::istringstream in(text);
  return attack::parse_replay(in);
}

std::vector<monitor::BusLogRecord> from_port(const sim::Engine& e, std::uint32_t port) {
  std::vector<monitor::BusLogRecord> out;
  for (const auto& r : e.bus_log()) {
    if (r.source == port) out.push_back(r);
  }
  return out;
}

}  // namespace

TEST(Replay, ParsesDatasetLine) {
  const auto t = parse("1478198376.389427,0316,8,05,21,68,09,21,21,00,6f,R\n");
  ASSERT_EQ(t.records.size(), 1u);
  const auto& r = t.records[0];
  EXPECT_EQ(r.label, TrafficClass::Benign);
  EXPECT_EQ(r.frame, CanFrame::make(0x316, {0x05, 0x21, 0x68, 0x09, 0x21, 0x21, 0x00, 0x6f}));
  EXPECT_EQ(r.timestamp_ns, 1478198376389427000);
}

TEST(Replay, AttackTypeFromColumnOrHeader) {
  auto t = parse("0.000100,0000,8,00,00,00,00,00,00,00,00,T,DoS\n");
  EXPECT_EQ(t.records[0].label, TrafficClass::DoS);
  t = parse("# attack_type: Fuzzing\n0.5,05f0,2,01,02,T\n");
  EXPECT_EQ(t.records[0].label, TrafficClass::Fuzzing);
  EXPECT_EQ(code_of([] { parse("0.5,05f0,2,01,02,T\n"); }), ErrorCode::ParseError);
}

TEST(Replay, RejectsMalformedLines) {
  EXPECT_EQ(code_of([] { parse("1.0,0316,8,05,21,68,09,21,21,00,R\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse("1.0,0916,1,05,R\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse("1.0,0116,1,05,X\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse("2.0,0116,0,R\n1.0,0116,0,R\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse("# only a comment\n"); }), ErrorCode::EmptyTrace);
  try {
    parse("1.0,0116,0,R\nbogus\n");
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(Replay, WriteParseRoundTrip) {
  std::mt19937_64 rng(4);
  std::vector<attack::ReplayRecord> recs;
  std::int64_t t = 1'000'000'000;
  for (int i = 0; i < 500; ++i) {
    attack::ReplayRecord r;
    t += static_cast<std::int64_t>(rng() % 5000) * 1000 + (i % 7 == 0 ? 1 : 0);
    r.timestamp_ns = t;
    r.frame.id = static_cast<std::uint16_t>(rng() % 0x800);
    r.frame.dlc = static_cast<std::uint8_t>(rng() % 9);
    for (int k = 0; k < r.frame.dlc; ++k) r.frame.data[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(rng());
    r.label = kAllClasses[rng() % 4];
    recs.push_back(r);
  }
  std::ostringstream out;
  attack::write_replay(recs, out);
  EXPECT_EQ(parse(out.str()).records, recs);
}

TEST(Replay, LargeFileRowTotals) {
  // Label counts of a 180,000-message reference test split.
  const std::array<std::size_t, 4> totals{103176, 23693, 28089, 25042};
  const auto path = std::filesystem::temp_directory_path() / "canhil_180k.csv";
  {
    std::ofstream out(path);
    std::mt19937_64 rng(2);
    std::array<std::size_t, 4> left = totals;
    std::size_t remaining = 180'000;
    std::int64_t us = 1478198376000000;
    while (remaining > 0) {
      std::size_t pick = rng() % remaining, c = 0;
      while (pick >= left[c]) pick -= left[c++];
      --left[c];
      --remaining;
      us += 200 + static_cast<std::int64_t>(rng() % 400);
      char line[128];
      std::snprintf(line, sizeof line, "%lld.%06lld,%04x,8,00,11,22,33,44,55,66,77,%s\n",
                    static_cast<long long>(us / 1'000'000), static_cast<long long>(us % 1'000'000),
                    static_cast<unsigned>(rng() % 0x800), c == 0 ? "R" : (c == 1 ? "T,DoS" : (c == 2 ? "T,Fuzzy" : "T,RPM")));
      out << line;
    }
  }
  const auto trace = attack::load_replay(path);
  std::filesystem::remove(path);
  EXPECT_EQ(trace.records.size(), 180'000u);
  const auto h = trace.histogram();
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(h[c], totals[c]) << c;
}

TEST(Attack, ProfilesAreValidated) {
  attack::AttackInjector inj;
  AttackProfile p;
  p.kind = AttackKind::Fuzz;
  p.fuzz.rate_per_s = 0;
  EXPECT_EQ(code_of([&] { inj.start(p, {}, kDefaultBitrate); }), ErrorCode::InvalidProfile);
  p.kind = AttackKind::Spoof;
  p.spoof.id = 0x900;
  EXPECT_EQ(code_of([&] { inj.start(p, {}, kDefaultBitrate); }), ErrorCode::InvalidProfile);
  p.kind = AttackKind::Replay;
  EXPECT_EQ(code_of([&] { inj.start(p, {}, kDefaultBitrate); }), ErrorCode::InvalidProfile);
  AttackProfile dos;
  inj.start(dos, {}, kDefaultBitrate);
  EXPECT_EQ(code_of([&] { inj.start(dos, {}, kDefaultBitrate); }), ErrorCode::ConflictingAttack);
}

TEST(Attack, FloodStarvesEveryoneElse) {
  sim::Engine e({}, testbed());
  e.run_until(at_us(50'000));
  AttackProfile dos;
  dos.duration_us = 100'000;
  e.start_attack(dos);
  const SimTime start = e.now();
  e.run_until(at_us(300'000));
  std::size_t others = 0, floods = 0;
  for (const auto& r : e.bus_log()) {
    if (r.sof <= start || r.sof >= start + kDefaultBitrate.ticks_ceil(100'000)) continue;
    if (r.source == e.attacker_port()) {
      ++floods;
      EXPECT_EQ(r.truth, TrafficClass::DoS);
    } else {
      ++others;
    }
  }
  EXPECT_EQ(others, 0u);
  EXPECT_GT(floods, 100'000u / 300);
}

TEST(Attack, FuzzIsSeeded) {
  auto run = [](std::uint64_t seed) {
    sim::Engine e({.seed = seed}, testbed());
    AttackProfile fuzz;
    fuzz.kind = AttackKind::Fuzz;
    fuzz.fuzz.rate_per_s = 100;
    e.start_attack(fuzz);
    e.run_until(at_us(200'000));
    std::vector<CanFrame> frames;
    for (const auto& r : from_port(e, e.attacker_port())) frames.push_back(r.frame);
    return frames;
  };
  const auto a = run(5);
  EXPECT_EQ(a.size(), 20u);
  EXPECT_EQ(a, run(5));
  EXPECT_NE(a, run(6));
}

TEST(Attack, SpoofReleasesBrakeWhilePedalHeld) {
  sim::Engine e({}, testbed());
  e.run_until(at_us(10'000));
  e.set_sensor("ECU3", "brake_pedal", "pressed");
  e.run_until(at_us(30'000));
  ASSERT_TRUE(e.node(e.node_index("ECU1")).actuator("braking_active"));
  AttackProfile spoof;
  spoof.kind = AttackKind::Spoof;
  spoof.spoof = {ecu::kBrakeId, {0}, 500.0, 0};
  e.start_attack(spoof);
  e.run_until(at_us(40'000));
  EXPECT_FALSE(e.node(e.node_index("ECU1")).actuator("braking_active"));
  EXPECT_EQ(e.node(e.node_index("ECU3")).sensor("brake_pedal"), 1);
}

TEST(Attack, StopImmediatelyAndTwice) {
  sim::Engine e({}, testbed());
  e.run_until(at_us(1'000));
  AttackProfile dos;
  const auto h = e.start_attack(dos);
  e.stop_attack(h);
  e.run_until(at_us(50'000));
  EXPECT_LE(from_port(e, e.attacker_port()).size(), 1u);
  EXPECT_EQ(code_of([&] { e.stop_attack(h); }), ErrorCode::UnknownHandle);
}

TEST(Attack, LifeSignalsResumeRightAfterStop) {
  sim::Engine e({}, testbed());
  e.run_until(at_us(10'000));
  AttackProfile dos;
  const auto h = e.start_attack(dos);
  e.run_until(at_us(120'000));
  e.stop_attack(h);
  const SimTime stopped = e.now();
  e.run_until(at_us(130'000));
  // The flood frame on the wire finishes; then the starved nodes contend.
  // Queued sensor frames (lower ids) win first, then one life frame per node.
  const std::uint64_t slot = can::worst_case_frame_bits(8);
  std::size_t life_soon = 0;
  std::optional<SimTime> first_after;
  for (const auto& r : e.bus_log()) {
    if (r.sof > stopped && !first_after) first_after = r.sof;
    if (r.sof >= stopped && r.sof <= stopped + 8 * slot && r.frame.id >= ecu::kLifeBaseId) ++life_soon;
    if (r.sof > stopped + slot) EXPECT_NE(r.source, e.attacker_port());
  }
  ASSERT_TRUE(first_after);
  EXPECT_LE(*first_after, stopped + slot);
  EXPECT_EQ(life_soon, 4u);
}

TEST(Attack, ReplayPreservesTimingAndLabels) {
  auto trace = std::make_shared<attack::ReplayTrace>();
  std::int64_t t = 5'000'000'000;
  for (int i = 0; i < 50; ++i) {
    t += 1'000'000;  // 1 ms apart: uncongested
    trace->records.push_back({t, CanFrame::make(static_cast<std::uint16_t>(0x400 + i), {std::uint8_t(i)}),
                              i % 5 == 0 ? TrafficClass::Spoof : TrafficClass::Benign});
  }
  std::vector<ecu::EcuConfig> none;
  sim::Engine e({}, none);
  AttackProfile p;
  p.kind = AttackKind::Replay;
  p.replay = trace;
  e.start_attack(p);
  e.run_until(at_us(100'000));
  const auto log = e.bus_log();
  ASSERT_EQ(log.size(), trace->records.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_EQ(log[i].frame, trace->records[i].frame);
    EXPECT_EQ(log[i].truth, trace->records[i].label);
    if (i > 0) EXPECT_EQ(log[i].sof - log[i - 1].sof, kDefaultBitrate.ticks_ceil(1000.0));
  }
}

TEST(Attack, TagKnownAttacks) {
  EXPECT_TRUE(attack::tag_known_attacks({}).empty());
  sim::Engine e({}, testbed());
  e.run_until(at_us(20'000));
  AttackProfile dos;
  dos.duration_us = 50'000;
  e.start_attack(dos);
  e.run_until(at_us(150'000));
  const auto tagged = attack::tag_known_attacks(e.bus_log());
  std::size_t flood = 0;
  for (const auto& t : tagged) {
    const bool is_dos = t.record.truth == TrafficClass::DoS;
    EXPECT_EQ(t.tag == attack::KnownTag::DoS, is_dos) << t.record.sof.ticks;
    flood += is_dos;
  }
  EXPECT_GT(flood, 100u);

  std::vector<monitor::BusLogRecord> pure;
  for (const auto& t : tagged) {
    if (t.record.truth == TrafficClass::DoS) pure.push_back(t.record);
  }
  for (const auto& t : attack::tag_known_attacks(pure)) EXPECT_EQ(t.tag, attack::KnownTag::DoS);
}
