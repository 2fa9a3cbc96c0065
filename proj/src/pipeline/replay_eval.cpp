#include "canhil/pipeline/replay_eval.hpp"

#include <algorithm>

#include "canhil/error.hpp"

namespace canhil::pipeline {

std::vector<ids::ObservedFrame> bus_timeline(const attack::ReplayTrace& trace, Bitrate bitrate) {
  std::vector<ids::ObservedFrame> out;
  out.reserve(trace.records.size());
  SimTime free{};
  for (const auto& r : trace.records) {
    const auto ns = std::max<std::int64_t>(0, r.timestamp_ns);
    // Integer ticks; exact for whole-microsecond stamps at integral rates.
    const auto stamp = static_cast<std::uint64_t>(
        (static_cast<__int128>(ns) * bitrate.bits_per_second + 999'999'999) / 1'000'000'000);
    const SimTime sof{std::max(stamp, free.ticks)};
    const SimTime end = sof + can::frame_bits(r.frame);
    out.push_back({r.frame, sof, end, r.label});
    free = end;
  }
  return out;
}

ReplayEvaluation evaluate_replay(const attack::ReplayTrace& trace, const ids::QuantMlpModel* model,
                                 const std::vector<ids::CostProfile>& strategies, Bitrate bitrate) {
  if (model == nullptr) throw Error(ErrorCode::ModelNotLoaded, "no IDS model");
  if (trace.empty()) throw Error(ErrorCode::EmptyTrace, "trace has no records");
  const auto frames = bus_timeline(trace, bitrate);

  ReplayEvaluation out;
  for (const auto& profile : strategies) {
    StrategyRun run{profile, ids::classify(model, profile, frames, bitrate), {}};
    for (const auto& v : run.verdicts) run.latencies_us.push_back(v.latency.elapsed_us);
    std::sort(run.latencies_us.begin(), run.latencies_us.end());
    out.runs.push_back(std::move(run));
  }
  monitor::MetricsAccumulator acc;
  if (!out.runs.empty()) {
    for (const auto& v : out.runs.front().verdicts) acc.add(frames[v.frame_index].truth, v.cls);
  } else {
    for (const auto& v : ids::classify(model, ids::CostProfile{}, frames, bitrate)) {
      acc.add(frames[v.frame_index].truth, v.cls);
    }
  }
  out.metrics = acc.report();
  return out;
}

}  // namespace canhil::pipeline
