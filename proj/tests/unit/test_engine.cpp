#include <gtest/gtest.h>

#include "canhil/error.hpp"
#include "canhil/sim/engine.hpp"

using namespace canhil;

namespace {

std::vector<ecu::EcuConfig> table2_roster() {
  return {ecu::make_config("ECU1", 1, ecu::Role::EngineBrake),
          ecu::make_config("ECU2", 2, ecu::Role::AirbagLight),
          ecu::make_config("ECU3", 3, ecu::Role::Sensors),
          ecu::make_config("ECU4", 4, ecu::Role::Lights)};
}

SimTime at_us(double us) { return SimTime{kDefaultBitrate.ticks_ceil(us)}; }

}  // namespace

TEST(Engine, FreshRunUntilZeroHasNoFrames) {
  sim::Engine e({}, table2_roster());
  EXPECT_EQ(e.run_until(SimTime{0}).frames, 0u);
}

TEST(Engine, BusIsExclusive) {
  sim::Engine e({}, table2_roster());
  e.run_until(at_us(200'000));
  const auto& log = e.bus_log();
  ASSERT_GT(log.size(), 10u);
  for (std::size_t i = 1; i < log.size(); ++i) {
    EXPECT_GE(log[i].sof, log[i - 1].end);
    EXPECT_EQ(log[i].end - log[i].sof, can::frame_bits(log[i].frame));
  }
}

TEST(Engine, LoserSendsRightAfterWinnerIntermission) {
  sim::Engine e({}, table2_roster());
  e.run_until(at_us(1000));
  const auto& log = e.bus_log();
  ASSERT_GE(log.size(), 2u);
  EXPECT_EQ(log[0].sof, SimTime{0});
  EXPECT_EQ(log[1].sof, log[0].end);
  EXPECT_LT(log[0].frame.id, log[1].frame.id);
}

TEST(Engine, LifeCountersAreGapFreeOnQuietBus) {
  sim::Engine e({}, table2_roster());
  e.run_until(at_us(1'000'000));
  std::map<std::uint16_t, std::uint32_t> next;
  for (const auto& r : e.bus_log()) {
    if (r.frame.id < ecu::kLifeBaseId) continue;
    const auto p = r.frame.payload();
    const std::uint32_t v = (p[0] << 24) | (p[1] << 16) | (p[2] << 8) | p[3];
    EXPECT_EQ(v, next[r.frame.id]++);
  }
  ASSERT_FALSE(e.status_log().empty());
  for (const auto& n : e.status_log().front().nodes) EXPECT_EQ(n.life_delta, 6u);
  EXPECT_TRUE(e.status_log().front().anomalies.empty());
}

TEST(Engine, CollisionDeploysAirbag) {
  sim::Engine e({}, table2_roster());
  e.run_until(at_us(10'000));
  e.set_sensor("ECU3", "collision", "on");
  const SimTime t0 = e.now();
  e.run_until(t0 + 5000);
  EXPECT_TRUE(e.node(e.node_index("ECU2")).actuator("airbag_deployed"));
  EXPECT_FALSE(e.node(e.node_index("ECU1")).actuator("engine_enabled"));
  ASSERT_FALSE(e.actuations().empty());
  EXPECT_LT(kDefaultBitrate.to_us(e.actuations().front().at - t0), 10'000.0);
}

TEST(Engine, FloodStarvesOtherNodes) {
  sim::Engine e({}, table2_roster());
  e.run_until(at_us(10'000));
  attack::AttackProfile p;
  p.kind = attack::AttackKind::DosFlood;
  p.duration_us = 100'000;
  e.start_attack(p);
  const SimTime start = e.now();
  e.run_until(at_us(400'000));
  std::size_t during = 0;
  for (const auto& r : e.bus_log()) {
    // Allow the frame already on the bus when the flood started.
    if (r.sof > start && r.sof < start + kDefaultBitrate.ticks_ceil(100'000) && r.source != e.attacker_port()) {
      ++during;
    }
  }
  EXPECT_EQ(during, 0u);
}

TEST(Engine, DeterministicLogs) {
  auto run = [] {
    sim::Engine e({.seed = 9}, table2_roster());
    attack::AttackProfile p;
    p.kind = attack::AttackKind::Fuzz;
    p.fuzz.rate_per_s = 2000;
    e.start_attack(p);
    e.run_until(at_us(300'000));
    return e.bus_log();
  };
  EXPECT_EQ(run(), run());
}

TEST(Engine, ResetRestartsLifeCounter) {
  sim::Engine e({}, table2_roster());
  e.run_until(at_us(120'000));
  e.reset_node("ECU2");
  EXPECT_EQ(e.node(e.node_index("ECU2")).state().life_counter, 0u);
  EXPECT_THROW(e.reset_node("ECU9"), Error);
}

TEST(Engine, DuplicateTxIdsRejected) {
  auto roster = table2_roster();
  roster.push_back(ecu::make_config("ECU5", 5, ecu::Role::Sensors));
  EXPECT_THROW(sim::Engine({}, roster), Error);
}
