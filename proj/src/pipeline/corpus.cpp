#include "canhil/pipeline/corpus.hpp"

#include <algorithm>
#include <array>

#include "canhil/attack/attack.hpp"
#include "canhil/ids/classify.hpp"
#include "canhil/sim/engine.hpp"
#include "canhil/sim/random.hpp"

namespace canhil::pipeline {
namespace {

struct Background {
  const char* node;
  std::uint32_t index;
  std::uint16_t fast_id;
  std::uint16_t slow_id;
};

constexpr std::array<Background, 4> kBackground{{
    {"BG5", 5, 0x1A0, 0x1A4},
    {"BG6", 6, 0x220, 0x224},
    {"BG7", 7, 0x2A0, 0x2A4},
    {"BG8", 8, 0x316, 0x329},
}};

constexpr double kSensorStepUs = 10'000.0;
// Background values stay clear of 0x00 and 0xFF.
constexpr int kWalkLow = 16;
constexpr int kWalkHigh = 239;

std::string message_name(std::uint16_t id) {
  static constexpr char kDigits[] = "0123456789ABCDEF";
  std::string s = "BG_000";
  s[3] = kDigits[(id >> 8) & 0xF];
  s[4] = kDigits[(id >> 4) & 0xF];
  s[5] = kDigits[id & 0xF];
  return s;
}

struct Stimuli {
  sim::Rng rng;
  bool hold_brake = false;
  bool hold_light = false;
};

// Random walk over the background sensors plus occasional functional
// stimuli, rescheduling itself every step.
void drive_sensors(sim::Engine& engine, std::shared_ptr<Stimuli> st) {
  sim::Rng* rng = &st->rng;
  for (const auto& bg : kBackground) {
    const std::size_t i = engine.node_index(bg.node);
    for (const char* sensor : {"value", "aux"}) {
      int next = engine.node(i).sensor(sensor) + static_cast<int>(rng->below(21)) - 10;
      if (next < kWalkLow) next = 2 * kWalkLow - next;
      if (next > kWalkHigh) next = 2 * kWalkHigh - next;
      engine.set_sensor(bg.node, sensor, next);
    }
  }
  if (rng->below(100) < 4 && !st->hold_brake) engine.set_sensor("ECU3", "brake_pedal", static_cast<int>(rng->below(2)));
  if (rng->below(100) < 2 && !st->hold_light) engine.set_sensor("ECU2", "ambient_light", static_cast<int>(rng->below(2)));
  if (rng->below(1000) < 5) engine.set_sensor("ECU3", "collision", static_cast<int>(rng->below(2)));
  engine.schedule_action(engine.now() + engine.bitrate().ticks_ceil(kSensorStepUs),
                         [st](sim::Engine& e) { drive_sensors(e, st); });
}

attack::AttackProfile episode(std::size_t n, sim::Rng& rng) {
  attack::AttackProfile p;
  p.seed_stream = "corpus-episode-" + std::to_string(n);
  switch (n % 3) {
    case 0:
      p.kind = attack::AttackKind::DosFlood;
      p.duration_us = rng.uniform(100'000, 300'000);
      break;
    case 1:
      p.kind = attack::AttackKind::Fuzz;
      p.fuzz.rate_per_s = rng.uniform(300, 1500);
      p.fuzz.random_dlc = rng.below(2) == 1;
      p.duration_us = rng.uniform(300'000, 800'000);
      break;
    default: {
      p.kind = attack::AttackKind::Spoof;
      static constexpr std::array<std::pair<std::uint16_t, std::uint8_t>, 3> kTargets{{
          {ecu::kBrakeId, 0x00}, {ecu::kLightId, 0x01}, {0x316, 0xFF}}};
      const auto& t = kTargets[rng.below(kTargets.size())];
      p.spoof.id = t.first;
      p.spoof.payload = {t.second};
      p.spoof.period_us = rng.uniform(300, 800);
      p.duration_us = rng.uniform(300'000, 800'000);
      break;
    }
  }
  return p;
}

}  // namespace

std::vector<ecu::EcuConfig> testbed_roster() {
  return {ecu::make_config("ECU1", 1, ecu::Role::EngineBrake),
          ecu::make_config("ECU2", 2, ecu::Role::AirbagLight),
          ecu::make_config("ECU3", 3, ecu::Role::Sensors),
          ecu::make_config("ECU4", 4, ecu::Role::Lights)};
}

CorpusNetwork corpus_network() {
  CorpusNetwork net;
  net.catalog = ecu::default_catalog();
  net.roster = testbed_roster();
  for (const auto& bg : kBackground) {
    const std::string fast = message_name(bg.fast_id);
    const std::string slow = message_name(bg.slow_id);
    net.catalog.emplace(fast, bg.fast_id);
    net.catalog.emplace(slow, bg.slow_id);

    ecu::EcuConfig c;
    c.name = bg.node;
    c.index = bg.index;
    c.role = ecu::Role::Custom;
    c.behavior.sensors = {{"value", 128, {}}, {"aux", 64, {}}};
    c.behavior.periodic = {
        {"fast", 10'000, fast, {ecu::PayloadSource::SensorValue, "value", 0}},
        {"slow", 20'000, slow, {ecu::PayloadSource::SensorValue, "aux", 0}},
    };
    c.behavior.tx = {fast, slow};
    c.tx_map = {{fast, bg.fast_id}, {slow, bg.slow_id}};
    net.roster.push_back(std::move(c));
  }
  return net;
}

monitor::BusLog generate_corpus(const CorpusOptions& options) {
  CorpusNetwork net = corpus_network();
  sim::EngineConfig cfg;
  cfg.bitrate = options.bitrate;
  cfg.seed = options.seed;
  sim::Engine engine(cfg, std::move(net.roster), std::move(net.catalog));

  auto stimuli = std::make_shared<Stimuli>(Stimuli{sim::Rng(sim::derive_seed(options.seed, "corpus-stimuli"))});
  engine.schedule_action(SimTime{}, [stimuli](sim::Engine& e) { drive_sensors(e, stimuli); });

  sim::Rng episodes(sim::derive_seed(options.seed, "corpus-episodes"));
  const Bitrate br = options.bitrate;
  std::size_t n = 0;
  while (engine.bus_log().size() < options.messages) {
    engine.run_until(engine.now() + br.ticks_ceil(episodes.uniform(200'000, 600'000)));
    if (engine.bus_log().size() >= options.messages) break;
    const attack::AttackProfile p = episode(n++, episodes);
    // A spoof carries the opposite of what the owner currently reports.
    if (p.kind == attack::AttackKind::Spoof && p.spoof.id == ecu::kBrakeId) {
      engine.set_sensor("ECU3", "brake_pedal", 1);
      stimuli->hold_brake = true;
    } else if (p.kind == attack::AttackKind::Spoof && p.spoof.id == ecu::kLightId) {
      engine.set_sensor("ECU2", "ambient_light", 1);
      stimuli->hold_light = true;
    }
    engine.start_attack(p);
    engine.run_until(engine.now() + br.ticks_ceil(p.duration_us) + 1);
    stimuli->hold_brake = stimuli->hold_light = false;
  }
  monitor::BusLog log = engine.bus_log();
  log.resize(std::min(log.size(), options.messages));
  return log;
}

std::vector<ids::LabeledWindow> windows_of(std::span<const monitor::BusLogRecord> log) {
  std::vector<ids::LabeledWindow> out;
  ids::FeatureWindow window;
  for (const auto& r : log) {
    window.push(r.frame);
    if (window.full()) out.push_back({window.features(), r.truth});
  }
  return out;
}

WindowSplit split_windows(std::span<const ids::LabeledWindow> windows, double holdout, std::uint64_t seed,
                          std::size_t block) {
  WindowSplit split;
  sim::Rng rng(sim::derive_seed(seed, "holdout"));
  for (std::size_t start = 0; start < windows.size(); start += block) {
    const std::size_t stop = std::min(windows.size(), start + block);
    auto& dest = rng.uniform() < holdout ? split.test : split.train;
    dest.insert(dest.end(), windows.begin() + static_cast<std::ptrdiff_t>(start),
                windows.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return split;
}

double false_positive_rate(const monitor::MetricsReport& report) {
  const auto& c = report.confusion;
  const std::uint64_t benign = c.row(0).sum();
  if (benign == 0) return 0.0;
  return static_cast<double>(benign - c(0, 0)) / static_cast<double>(benign);
}

PipelineResult run_pipeline(const PipelineOptions& options) {
  const monitor::BusLog log = generate_corpus(options.corpus);
  const auto windows = windows_of(log);
  const WindowSplit split = split_windows(windows, options.holdout, options.corpus.seed);

  PipelineResult result;
  result.train_windows = split.train.size();
  result.test_windows = split.test.size();
  result.mlp = ids::train_reference(split.train, options.train);

  std::vector<ids::WindowFeatures> calibration;
  const std::size_t stride = std::max<std::size_t>(1, split.train.size() / std::max<std::size_t>(1, options.calibration_windows));
  for (std::size_t i = 0; i < split.train.size(); i += stride) calibration.push_back(split.train[i].features);
  result.quant = ids::quantise_model(result.mlp, calibration, options.clip_quantile);

  monitor::MetricsAccumulator fl;
  for (const auto& w : split.test) fl.add(w.label, ids::predict(result.mlp, w.features));
  result.float_test = fl.report();
  result.quant_test = ids::evaluate(result.quant.model, split.test);
  return result;
}

}  // namespace canhil::pipeline
