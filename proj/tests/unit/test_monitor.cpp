#include <gtest/gtest.h>

#include <boost/rational.hpp>
#include <sstream>

#include "canhil/error.hpp"
#include "canhil/monitor/metrics.hpp"
#include "canhil/sim/engine.hpp"
#include "oracles.hpp"

using namespace canhil;
using monitor::ConfusionMatrix;

namespace {

std::vector<ecu::EcuConfig> testbed() {
  return {ecu::make_config("ECU1", 1, ecu::Role::EngineBrake), ecu::make_config("ECU2", 2, ecu::Role::AirbagLight),
          ecu::make_config("ECU3", 3, ecu::Role::Sensors), ecu::make_config("ECU4", 4, ecu::Role::Lights)};
}

SimTime at_us(double us) { return SimTime{kDefaultBitrate.ticks_ceil(us)}; }

ConfusionMatrix reference_matrix() {
  ConfusionMatrix m;
  m << 103169, 5, 2, 0,  //
      3, 23690, 0, 0,    //
      23, 0, 28065, 1,   //
      0, 0, 0, 25042;
  return m;
}

// Exact ratio, as percent, to compare against two-decimal figures.
double pct(std::uint64_t num, std::uint64_t den) {
  const boost::rational<std::uint64_t> r(num, den);
  return 100.0 * boost::rational_cast<double>(r);
}

// Change list implied by dense samples, for parse-back comparison.
std::vector<oracle::VcdChange> expected_changes(const monitor::SignalTrace& t) {
  std::vector<oracle::VcdChange> out;
  for (std::size_t s = 0; s < t.signals.size(); ++s) out.push_back({t.start.ticks, t.signals[s].name, t.samples[s][0]});
  for (std::uint64_t k = 1; k < t.ticks; ++k) {
    for (std::size_t s = 0; s < t.signals.size(); ++s) {
      if (t.samples[s][k] != t.samples[s][k - 1]) out.push_back({t.start.ticks + k, t.signals[s].name, t.samples[s][k]});
    }
  }
  return out;
}

}  // namespace

TEST(Metrics, ReferenceMatrix) {
  const auto r = monitor::compute_metrics(reference_matrix());
  EXPECT_EQ(r.total, 180'000u);
  EXPECT_EQ(r.misclassified, 34u);
  EXPECT_EQ(r.false_positives, 7u);
  EXPECT_NEAR(100 * r.accuracy, 99.98, 0.01);
  EXPECT_DOUBLE_EQ(r.accuracy, 179966.0 / 180000.0);
  const auto& dos = r.per_class[index_of(TrafficClass::DoS)];
  const auto& fuzz = r.per_class[index_of(TrafficClass::Fuzzing)];
  const auto& spoof = r.per_class[index_of(TrafficClass::Spoof)];
  EXPECT_NEAR(100 * dos.recall, 99.98, 0.01);
  EXPECT_NEAR(100 * fuzz.recall, 99.91, 0.01);
  EXPECT_NEAR(100 * spoof.recall, 100.00, 0.01);
  EXPECT_DOUBLE_EQ(100 * fuzz.recall, pct(28065, 28089));
  EXPECT_DOUBLE_EQ(100 * dos.recall, pct(23690, 23693));
  EXPECT_NEAR(100 * fuzz.precision, 99.99, 0.01);
  EXPECT_NEAR(100 * fuzz.f1, 99.95, 0.01);
  EXPECT_NEAR(100 * dos.f1, 99.98, 0.01);
  // The column sum gives 23690 / 23695.
  EXPECT_DOUBLE_EQ(100 * dos.precision, pct(23690, 23695));
}

TEST(Metrics, SelfConsistency) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 200; ++k) {
    ConfusionMatrix m;
    for (int i = 0; i < 16; ++i) m.data()[i] = rng() % 50;
    const auto r = monitor::compute_metrics(m);
    EXPECT_EQ(r.total, m.sum());
    if (r.total) EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(m.trace()) / static_cast<double>(m.sum()));
    for (int c = 0; c < 4; ++c) {
      EXPECT_EQ(r.per_class[static_cast<std::size_t>(c)].support, m.row(c).sum());
      if (m.row(c).sum()) {
        EXPECT_DOUBLE_EQ(r.per_class[static_cast<std::size_t>(c)].recall,
                         static_cast<double>(m(c, c)) / static_cast<double>(m.row(c).sum()));
      }
    }
  }
}

TEST(Metrics, PerfectAndAllBenign) {
  std::vector<std::pair<TrafficClass, TrafficClass>> pairs;
  for (auto c : kAllClasses) pairs.push_back({c, c});
  auto r = monitor::compute_metrics(pairs);
  EXPECT_EQ(r.confusion, ConfusionMatrix::Identity());
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  for (const auto& m : r.per_class) {
    EXPECT_DOUBLE_EQ(m.precision, 1.0);
    EXPECT_DOUBLE_EQ(m.recall, 1.0);
  }
  pairs.assign(10, {TrafficClass::Benign, TrafficClass::Benign});
  r = monitor::compute_metrics(pairs);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.confusion.bottomRows(3).sum(), 0u);
  EXPECT_TRUE(std::isnan(r.per_class[1].recall));
}

TEST(Status, ZeroPeriodRejected) {
  EXPECT_THROW(monitor::StatusMonitor(0.0), Error);
  EXPECT_THROW(monitor::StatusMonitor(-5.0), Error);
}

TEST(Status, FloodStopsLifeDeltaAndFlags) {
  sim::Engine e({}, testbed());
  e.run_until(at_us(310'000));
  attack::AttackProfile dos;
  e.start_attack(dos);
  e.run_until(at_us(900'000));
  const auto& log = e.status_log();
  ASSERT_GE(log.size(), 3u);
  EXPECT_TRUE(log[0].anomalies.empty());
  const auto& under = log[2];  // covers 600..900 ms, all flood
  for (const auto& n : under.nodes) EXPECT_EQ(n.life_delta, 0u);
  int lost = 0;
  for (const auto& a : under.anomalies) lost += a.rfind("life signal lost", 0) == 0;
  EXPECT_EQ(lost, 4);
}

TEST(Status, UserChecks) {
  monitor::StatusMonitor mon(100'000);
  mon.add_check({"*", "braking_active", monitor::CompareOp::Eq, 1, "brake on"});
  mon.add_check({"ECU1", "error_count", monitor::CompareOp::Gt, 5, ""});
  ecu::Ecu a(ecu::make_config("ECU1", 1, ecu::Role::EngineBrake));
  a.deliver(can::CanFrame::make(ecu::kBrakeId, {1}));
  a.process_rx();
  const ecu::Ecu* nodes[] = {&a};
  const auto snap = mon.poll(SimTime{10}, nodes);
  ASSERT_EQ(snap.anomalies.size(), 1u);
  EXPECT_EQ(snap.anomalies[0], "brake on: ECU1");
  EXPECT_EQ(snap.sequence, 0u);
  EXPECT_EQ(mon.poll(SimTime{20}, nodes).sequence, 1u);
  mon.observe_verdict(TrafficClass::DoS);
  mon.observe_verdict(TrafficClass::DoS);
  const auto s3 = mon.poll(SimTime{30}, nodes);
  EXPECT_EQ(s3.verdicts[1], 2u);
  EXPECT_EQ(s3.anomalies.back(), "IDS threat: DoS x2");
}

TEST(Vcd, QuietBusHasNoChanges) {
  monitor::SignalRecorder rec({{"bus", 1, monitor::SignalKind::Line, 1}}, SimTime{100}, 50, kDefaultBitrate);
  const auto trace = rec.finish();
  const auto changes = oracle::parse_vcd(monitor::export_vcd(trace));
  ASSERT_EQ(changes.size(), 1u);
  EXPECT_EQ(changes[0], (oracle::VcdChange{100, "bus", 1}));
  EXPECT_EQ(monitor::vcd_timescale(kDefaultBitrate), "2 us");
  EXPECT_EQ(monitor::vcd_timescale({1'000'000}), "1 us");
  EXPECT_EQ(monitor::vcd_timescale({125'000}), "8 us");
}

TEST(Vcd, CapturedFrameStartsWithDominantSof) {
  sim::Engine e({}, testbed());
  e.run_until(at_us(10'000));
  // The first life round is over; capture a collision frame from idle.
  e.start_capture({"bus", "tx.ECU3", "ECU2.airbag_deployed", "ECU1.life"}, e.now(), 2'000);
  e.set_sensor("ECU3", "collision", "on");
  e.run_until(at_us(20'000));
  const auto captures = e.take_captures();
  ASSERT_EQ(captures.size(), 1u);
  const auto& trace = captures[0];
  const std::string vcd = monitor::export_vcd(trace);
  const auto changes = oracle::parse_vcd(vcd);
  EXPECT_EQ(changes, expected_changes(trace));

  const auto collision = std::find_if(e.bus_log().begin(), e.bus_log().end(), [&](const auto& r) {
    return r.frame.id == ecu::kCollisionId && r.sof >= trace.start;
  });
  ASSERT_NE(collision, e.bus_log().end());
  // Recessive up to SOF, dominant at SOF.
  const auto bus = trace.index_of("bus");
  const std::uint64_t sof = collision->sof - trace.start;
  if (sof > 0) EXPECT_EQ(trace.samples[bus][sof - 1], 1u);
  EXPECT_EQ(trace.samples[bus][sof], 0u);
  EXPECT_EQ(changes[trace.index_of("bus")].value, sof == 0 ? 0u : 1u);

  // The sampled bus equals the frame's wire image.
  const auto wire = can::encode_frame(collision->frame).bits;
  ASSERT_LE(collision->sof - trace.start + wire.size(), trace.ticks);
  for (std::size_t k = 0; k < wire.size(); ++k) {
    if (k == can::encode_frame(collision->frame).ack_slot) continue;  // receivers drive ACK
    EXPECT_EQ(trace.samples[bus][collision->sof - trace.start + k], static_cast<std::uint32_t>(wire[k])) << k;
  }
  bool airbag_rose = false;
  for (const auto& c : changes) airbag_rose |= c.name == "ECU2.airbag_deployed" && c.value == 1;
  EXPECT_TRUE(airbag_rose);
}

TEST(Vcd, OverflowAndEmpty) {
  EXPECT_THROW(monitor::SignalRecorder({{"bus"}}, SimTime{}, 2'000'000, kDefaultBitrate, 1'000'000), Error);
  monitor::SignalTrace empty;
  EXPECT_THROW(monitor::export_vcd(empty), Error);
}

TEST(BusCsv, RoundTripAndLabels) {
  sim::Engine e({.seed = 3}, testbed());
  attack::AttackProfile fuzz;
  fuzz.kind = attack::AttackKind::Fuzz;
  fuzz.fuzz.rate_per_s = 500;
  e.start_attack(fuzz);
  e.run_until(at_us(200'000));
  const auto& log = e.bus_log();
  const std::string csv = monitor::export_csv(log, kDefaultBitrate);
  std::istringstream in(csv);
  const auto trace = attack::parse_replay(in);
  ASSERT_EQ(trace.records.size(), log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_EQ(trace.records[i].frame, log[i].frame);
    EXPECT_EQ(trace.records[i].label, log[i].truth);
    EXPECT_EQ(trace.records[i].timestamp_ns, static_cast<std::int64_t>(log[i].sof.ticks) * 2000);
  }
  // Re-exporting the parsed trace reproduces the file.
  std::ostringstream again;
  attack::write_replay(trace.records, again);
  EXPECT_EQ(again.str(), csv);

  const std::string empty = monitor::export_csv({}, kDefaultBitrate);
  EXPECT_EQ(empty, std::string(attack::kReplayHeader) + "\n");
}
