#include "canhil/monitor/signals.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "canhil/error.hpp"

namespace canhil::monitor {
namespace {

std::string vcd_id(std::size_t index) {
  constexpr int kFirst = 33, kRange = 94;  // printable '!'..'~'
  std::string id;
  do {
    id.push_back(static_cast<char>(kFirst + index % kRange));
    index /= kRange;
  } while (index > 0);
  return id;
}

std::string vcd_name(std::string name) {
  std::replace_if(name.begin(), name.end(), [](char c) { return c == ' ' || c == '\t'; }, '_');
  return name;
}

void write_value(std::ostream& out, const SignalDef& def, std::uint32_t value, const std::string& id) {
  if (def.width == 1) {
    out << (value ? '1' : '0') << id << '\n';
    return;
  }
  std::string bits;
  for (int b = def.width - 1; b >= 0; --b) bits.push_back(((value >> b) & 1u) ? '1' : '0');
  const auto first_one = bits.find('1');
  bits = first_one == std::string::npos ? "0" : bits.substr(first_one);
  out << 'b' << bits << ' ' << id << '\n';
}

}  // namespace

std::size_t SignalTrace::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < signals.size(); ++i) {
    if (signals[i].name == name) return i;
  }
  return static_cast<std::size_t>(-1);
}

SignalRecorder::SignalRecorder(std::vector<SignalDef> signals, SimTime start, std::uint64_t ticks,
                               Bitrate bitrate, std::size_t capacity) {
  if (signals.empty() || ticks == 0) {
    throw Error(ErrorCode::ValidationError, "capture needs at least one signal and a non-empty window");
  }
  if (ticks > capacity / signals.size()) {
    throw Error(ErrorCode::CaptureOverflow,
                std::to_string(signals.size()) + " signals x " + std::to_string(ticks) +
                    " ticks exceeds the capture buffer of " + std::to_string(capacity) + " samples");
  }
  trace_.bitrate = bitrate;
  trace_.start = start;
  trace_.ticks = ticks;
  trace_.signals = std::move(signals);
  trace_.samples.reserve(trace_.signals.size());
  for (const auto& s : trace_.signals) trace_.samples.emplace_back(ticks, s.initial);
  changes_.resize(trace_.signals.size());
}

std::size_t SignalRecorder::find(std::string_view name) const { return trace_.index_of(name); }

void SignalRecorder::set(std::size_t signal, SimTime at, std::uint32_t value) {
  if (signal >= changes_.size() || at >= end()) return;
  const std::uint64_t offset = at < trace_.start ? 0 : at - trace_.start;
  auto& list = changes_[signal];
  while (!list.empty() && list.back().offset >= offset) list.pop_back();
  list.push_back({offset, value});
}

void SignalRecorder::write_bits(std::size_t signal, SimTime at, std::span<const can::BitLevel> bits) {
  if (signal >= trace_.samples.size()) return;
  auto& samples = trace_.samples[signal];
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const SimTime t = at + i;
    if (t < trace_.start) continue;
    if (t >= end()) break;
    samples[t - trace_.start] = static_cast<std::uint32_t>(bits[i]);
  }
}

SignalTrace SignalRecorder::finish() {
  for (std::size_t s = 0; s < trace_.signals.size(); ++s) {
    if (trace_.signals[s].kind != SignalKind::Held) continue;
    auto& samples = trace_.samples[s];
    const auto& list = changes_[s];
    for (std::size_t c = 0; c < list.size(); ++c) {
      const std::uint64_t stop = c + 1 < list.size() ? list[c + 1].offset : trace_.ticks;
      std::fill(samples.begin() + static_cast<std::ptrdiff_t>(list[c].offset),
                samples.begin() + static_cast<std::ptrdiff_t>(stop), list[c].value);
    }
  }
  return trace_;
}

std::string vcd_timescale(Bitrate bitrate) {
  const double ns = 1e9 / bitrate.bits_per_second;
  const double rounded = std::round(ns);
  std::ostringstream ss;
  if (std::abs(ns - rounded) < 1e-9) {
    const auto whole = static_cast<std::uint64_t>(rounded);
    if (whole % 1000 == 0) {
      ss << whole / 1000 << " us";
    } else {
      ss << whole << " ns";
    }
  } else {
    ss << static_cast<std::uint64_t>(std::round(ns * 1000)) << " ps";
  }
  return ss.str();
}

void export_vcd(const SignalTrace& trace, std::ostream& out) {
  if (trace.ticks == 0 || trace.signals.empty()) {
    throw Error(ErrorCode::EmptyTrace, "nothing captured");
  }
  out << "$version canhil signal capture $end\n";
  out << "$timescale " << vcd_timescale(trace.bitrate) << " $end\n";
  out << "$scope module canhil $end\n";
  std::vector<std::string> ids;
  for (std::size_t s = 0; s < trace.signals.size(); ++s) {
    ids.push_back(vcd_id(s));
    const auto& def = trace.signals[s];
    out << "$var " << (def.kind == SignalKind::Line ? "wire" : "reg") << ' ' << def.width << ' '
        << ids.back() << ' ' << vcd_name(def.name) << " $end\n";
  }
  out << "$upscope $end\n$enddefinitions $end\n";
  out << '#' << trace.start.ticks << "\n$dumpvars\n";
  for (std::size_t s = 0; s < trace.signals.size(); ++s) {
    write_value(out, trace.signals[s], trace.samples[s][0], ids[s]);
  }
  out << "$end\n";
  for (std::uint64_t t = 1; t < trace.ticks; ++t) {
    bool stamped = false;
    for (std::size_t s = 0; s < trace.signals.size(); ++s) {
      const std::uint32_t v = trace.samples[s][t];
      if (v == trace.samples[s][t - 1]) continue;
      if (!stamped) {
        out << '#' << (trace.start.ticks + t) << '\n';
        stamped = true;
      }
      write_value(out, trace.signals[s], v, ids[s]);
    }
  }
  out << '#' << (trace.start.ticks + trace.ticks) << '\n';
}

std::string export_vcd(const SignalTrace& trace) {
  std::ostringstream ss;
  export_vcd(trace, ss);
  return ss.str();
}

}  // namespace canhil::monitor
