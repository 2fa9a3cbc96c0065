#pragma once

#include <vector>

#include "canhil/attack/replay.hpp"
#include "canhil/ids/classify.hpp"
#include "canhil/monitor/metrics.hpp"

namespace canhil::pipeline {

/// Places trace records on a bus timeline: a frame starts at its timestamp,
/// or when the previous one has finished if they would overlap.
std::vector<ids::ObservedFrame> bus_timeline(const attack::ReplayTrace& trace, Bitrate bitrate);

struct StrategyRun {
  ids::CostProfile profile;
  std::vector<ids::IdsVerdict> verdicts;
  std::vector<double> latencies_us;  // sorted
};

struct ReplayEvaluation {
  monitor::MetricsReport metrics;  // windows labelled by their newest frame
  std::vector<StrategyRun> runs;
};

/// Classifies the trace once per strategy. Throws ModelNotLoaded for a
/// null model and EmptyTrace for an empty trace.
ReplayEvaluation evaluate_replay(const attack::ReplayTrace& trace, const ids::QuantMlpModel* model,
                                 const std::vector<ids::CostProfile>& strategies, Bitrate bitrate = kDefaultBitrate);

}  // namespace canhil::pipeline
