#include "canhil/attack/replay.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "canhil/error.hpp"

namespace canhil::attack {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
std::optional<T> parse_int(std::string_view text, int base) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value, base);
  if (ec != std::errc{} || ptr != end || text.empty()) return std::nullopt;
  return value;
}

[[noreturn]] void parse_error(const std::string& source, std::size_t line, const std::string& what) {
  throw Error(ErrorCode::ParseError, source + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

std::optional<std::int64_t> parse_timestamp_ns(std::string_view text) {
  text = trim(text);
  const std::size_t dot = text.find('.');
  const std::string_view whole = text.substr(0, dot);
  auto secs = parse_int<std::int64_t>(whole, 10);
  if (!secs || *secs < 0) return std::nullopt;
  std::int64_t frac_ns = 0;
  if (dot != std::string_view::npos) {
    std::string_view frac = text.substr(dot + 1);
    if (frac.empty() || frac.size() > 9) return std::nullopt;
    auto digits = parse_int<std::int64_t>(frac, 10);
    if (!digits) return std::nullopt;
    frac_ns = *digits;
    for (std::size_t i = frac.size(); i < 9; ++i) frac_ns *= 10;
  }
  return *secs * 1'000'000'000 + frac_ns;
}

std::string format_timestamp(std::int64_t ns) {
  char buf[48];
  const std::int64_t secs = ns / 1'000'000'000;
  const std::int64_t frac = ns % 1'000'000'000;
  if (frac % 1000 == 0) {
    std::snprintf(buf, sizeof buf, "%lld.%06lld", static_cast<long long>(secs),
                  static_cast<long long>(frac / 1000));
  } else {
    std::snprintf(buf, sizeof buf, "%lld.%09lld", static_cast<long long>(secs),
                  static_cast<long long>(frac));
  }
  return buf;
}

std::array<std::size_t, kNumClasses> ReplayTrace::histogram() const {
  std::array<std::size_t, kNumClasses> h{};
  for (const auto& r : records) ++h[index_of(r.label)];
  return h;
}

ReplayTrace parse_replay(std::istream& in, std::string source_name) {
  ReplayTrace trace;
  trace.source = std::move(source_name);
  std::optional<TrafficClass> file_attack_type;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view text = trim(line);
    if (text.empty()) continue;
    if (text.front() == '#') {
      constexpr std::string_view kKey = "attack_type:";
      const std::size_t at = text.find(kKey);
      if (at != std::string_view::npos) {
        const auto name = trim(text.substr(at + kKey.size()));
        file_attack_type = parse_traffic_class(name);
        if (!file_attack_type) parse_error(trace.source, line_no, "unknown attack type '" + std::string(name) + "'");
      }
      continue;
    }
    const auto fields = split(text);
    if (fields.size() < 4) parse_error(trace.source, line_no, "too few fields");

    ReplayRecord rec;
    auto ts = parse_timestamp_ns(fields[0]);
    if (!ts) parse_error(trace.source, line_no, "bad timestamp '" + std::string(fields[0]) + "'");
    rec.timestamp_ns = *ts;
    auto id = parse_int<std::uint32_t>(fields[1], 16);
    if (!id || *id > can::kMaxStandardId) parse_error(trace.source, line_no, "bad CAN id '" + std::string(fields[1]) + "'");
    auto dlc = parse_int<std::uint32_t>(fields[2], 10);
    if (!dlc || *dlc > can::kMaxDlc) parse_error(trace.source, line_no, "bad dlc '" + std::string(fields[2]) + "'");

    const std::size_t expected = 3 + *dlc + 1;
    if (fields.size() != expected && fields.size() != expected + 1) {
      parse_error(trace.source, line_no,
                  "dlc " + std::to_string(*dlc) + " needs " + std::to_string(*dlc) +
                      " data bytes and a flag, got " + std::to_string(fields.size()) + " fields");
    }
    rec.frame.id = static_cast<std::uint16_t>(*id);
    rec.frame.dlc = static_cast<std::uint8_t>(*dlc);
    for (std::uint32_t i = 0; i < *dlc; ++i) {
      auto byte = parse_int<std::uint32_t>(fields[3 + i], 16);
      if (!byte || *byte > 0xFF || fields[3 + i].size() > 2) {
        parse_error(trace.source, line_no, "bad data byte '" + std::string(fields[3 + i]) + "'");
      }
      rec.frame.data[i] = static_cast<std::uint8_t>(*byte);
    }
    const std::string_view flag = fields[3 + *dlc];
    if (flag == "R") {
      rec.label = TrafficClass::Benign;
    } else if (flag == "T") {
      std::optional<TrafficClass> type = file_attack_type;
      if (fields.size() == expected + 1) type = parse_traffic_class(fields.back());
      if (!type || *type == TrafficClass::Benign) {
        parse_error(trace.source, line_no, "injected row without an attack type");
      }
      rec.label = *type;
    } else {
      parse_error(trace.source, line_no, "flag must be R or T, got '" + std::string(flag) + "'");
    }
    if (!trace.records.empty() && rec.timestamp_ns < trace.records.back().timestamp_ns) {
      parse_error(trace.source, line_no, "timestamp goes backwards");
    }
    trace.records.push_back(rec);
  }
  if (trace.records.empty()) throw Error(ErrorCode::EmptyTrace, trace.source + ": no records");
  return trace;
}

ReplayTrace load_replay(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_replay(in, path.string());
}

void write_replay(std::span<const ReplayRecord> records, std::ostream& out) {
  out << kReplayHeader << '\n';
  char byte[4];
  for (const auto& r : records) {
    char id[8];
    std::snprintf(id, sizeof id, "%04X", r.frame.id);
    out << format_timestamp(r.timestamp_ns) << ',' << id << ',' << unsigned{r.frame.dlc};
    for (std::uint8_t b : r.frame.payload()) {
      std::snprintf(byte, sizeof byte, "%02x", b);
      out << ',' << byte;
    }
    if (r.label == TrafficClass::Benign) {
      out << ",R\n";
    } else {
      out << ",T," << to_string(r.label) << '\n';
    }
  }
}

}  // namespace canhil::attack
