#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "canhil/ecu/ecu.hpp"
#include "canhil/ids/mlp.hpp"
#include "canhil/ids/quant_mlp.hpp"
#include "canhil/monitor/bus_log.hpp"
#include "canhil/monitor/metrics.hpp"
#include "canhil/time.hpp"

namespace canhil::pipeline {

/// Roster used for corpus generation: the four functional ECUs of the
/// testbed plus background nodes that give the benign traffic some variety.
struct CorpusNetwork {
  std::vector<ecu::EcuConfig> roster;
  ecu::MessageCatalog catalog;
};
CorpusNetwork corpus_network();

/// The four functional ECUs only.
std::vector<ecu::EcuConfig> testbed_roster();

struct CorpusOptions {
  std::uint64_t seed = 1;
  std::size_t messages = 20'000;
  Bitrate bitrate = kDefaultBitrate;
};

/// Simulated labelled bus traffic: benign operation with DoS, fuzzing and
/// spoofing episodes. Deterministic for a given seed.
monitor::BusLog generate_corpus(const CorpusOptions& options);

/// Sliding windows over the log, labelled by their newest frame.
std::vector<ids::LabeledWindow> windows_of(std::span<const monitor::BusLogRecord> log);

struct WindowSplit {
  std::vector<ids::LabeledWindow> train;
  std::vector<ids::LabeledWindow> test;
};

/// Contiguous blocks of `block` windows go to the test set with
/// probability `holdout`; the choice is drawn from `seed`.
WindowSplit split_windows(std::span<const ids::LabeledWindow> windows, double holdout, std::uint64_t seed,
                          std::size_t block = 256);

struct PipelineOptions {
  CorpusOptions corpus;
  ids::TrainOptions train;
  double holdout = 0.3;
  std::size_t calibration_windows = 2'000;
  double clip_quantile = 1.0;
};

struct PipelineResult {
  ids::FloatMlp mlp;
  ids::QuantisationResult quant;
  monitor::MetricsReport float_test;
  monitor::MetricsReport quant_test;
  std::size_t train_windows = 0;
  std::size_t test_windows = 0;
};

/// Benign windows predicted as an attack, over all benign windows.
double false_positive_rate(const monitor::MetricsReport& report);

/// simulate -> label -> train -> quantise -> evaluate on held-out windows.
PipelineResult run_pipeline(const PipelineOptions& options);

}  // namespace canhil::pipeline
