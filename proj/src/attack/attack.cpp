#include "canhil/attack/attack.hpp"

#include <algorithm>

#include "canhil/error.hpp"

namespace canhil::attack {
namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::InvalidProfile, what); }

std::uint64_t replay_offset_ticks(const ReplayTrace& trace, std::size_t i, double scale,
                                  Bitrate bitrate) {
  const std::int64_t delta_ns = trace.records[i].timestamp_ns - trace.records.front().timestamp_ns;
  if (scale == 1.0) {
    const __int128 num = static_cast<__int128>(delta_ns) * bitrate.bits_per_second;
    return static_cast<std::uint64_t>((num + 500'000'000) / 1'000'000'000);
  }
  return bitrate.ticks_ceil(static_cast<double>(delta_ns) * 1e-3 * scale);
}

}  // namespace

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::DosFlood: return "DosFlood";
    case AttackKind::Fuzz: return "Fuzz";
    case AttackKind::Spoof: return "Spoof";
    case AttackKind::Replay: return "Replay";
  }
  return "?";
}

std::optional<AttackKind> parse_attack_kind(std::string_view text) {
  for (AttackKind k : {AttackKind::DosFlood, AttackKind::Fuzz, AttackKind::Spoof, AttackKind::Replay}) {
    if (text == to_string(k)) return k;
  }
  if (text == "DoS" || text == "dos") return AttackKind::DosFlood;
  return std::nullopt;
}

TrafficClass label_of(AttackKind kind) {
  switch (kind) {
    case AttackKind::DosFlood: return TrafficClass::DoS;
    case AttackKind::Fuzz: return TrafficClass::Fuzzing;
    case AttackKind::Spoof: return TrafficClass::Spoof;
    case AttackKind::Replay: return TrafficClass::Benign;  // per record
  }
  return TrafficClass::Benign;
}

void validate(const AttackProfile& p) {
  if (p.duration_us < 0) invalid("duration must be >= 0");
  switch (p.kind) {
    case AttackKind::DosFlood:
      if (p.dos_id > can::kMaxStandardId) invalid("dos_id exceeds 11 bits");
      if (p.dos_payload.size() > can::kMaxDlc) invalid("dos payload longer than 8 bytes");
      break;
    case AttackKind::Fuzz:
      if (!(p.fuzz.rate_per_s > 0)) invalid("fuzz rate must be > 0");
      if (p.fuzz.id_min > p.fuzz.id_max || p.fuzz.id_max > can::kMaxStandardId) {
        invalid("fuzz id range is empty or exceeds 11 bits");
      }
      if (p.fuzz.dlc > can::kMaxDlc) invalid("fuzz dlc above 8");
      break;
    case AttackKind::Spoof:
      if (p.spoof.id > can::kMaxStandardId) invalid("spoof id exceeds 11 bits");
      if (p.spoof.payload.size() > can::kMaxDlc) invalid("spoof payload longer than 8 bytes");
      if (!(p.spoof.period_us > 0)) invalid("spoof period must be > 0");
      break;
    case AttackKind::Replay:
      if (!p.replay || p.replay->empty()) invalid("replay needs a non-empty trace");
      if (!(p.time_scale > 0)) invalid("time_scale must be > 0");
      break;
  }
}

AttackHandle AttackInjector::start(const AttackProfile& profile, SimTime now, Bitrate bitrate) {
  validate(profile);
  if (active_of(profile.kind)) {
    throw Error(ErrorCode::ConflictingAttack,
                "an attack of kind " + std::string(to_string(profile.kind)) + " is already active");
  }
  Active a;
  a.profile = profile;
  a.rng.reseed(sim::derive_seed(master_seed_, profile.seed_stream + ":" +
                                                  std::string(to_string(profile.kind))));
  a.started = now;
  a.next = now;
  if (profile.duration_us > 0) a.until = now + bitrate.ticks_ceil(profile.duration_us);
  const AttackHandle h = next_handle_++;
  attacks_.emplace(h, std::move(a));
  return h;
}

void AttackInjector::stop(AttackHandle handle) {
  if (attacks_.erase(handle) == 0) {
    throw Error(ErrorCode::UnknownHandle, "no active attack with handle " + std::to_string(handle));
  }
}

void AttackInjector::stop_all() { attacks_.clear(); }

std::optional<AttackHandle> AttackInjector::active_of(AttackKind kind) const {
  for (const auto& [h, a] : attacks_) {
    if (a.profile.kind == kind) return h;
  }
  return std::nullopt;
}

std::vector<AttackHandle> AttackInjector::handles() const {
  std::vector<AttackHandle> out;
  for (const auto& [h, a] : attacks_) out.push_back(h);
  return out;
}

const AttackProfile& AttackInjector::profile(AttackHandle handle) const {
  auto it = attacks_.find(handle);
  if (it == attacks_.end()) {
    throw Error(ErrorCode::UnknownHandle, "no active attack with handle " + std::to_string(handle));
  }
  return it->second.profile;
}

std::optional<SimTime> AttackInjector::first_tick(AttackHandle handle) const {
  auto it = attacks_.find(handle);
  if (it == attacks_.end()) return std::nullopt;
  if (it->second.profile.kind == AttackKind::DosFlood) return it->second.until;
  return it->second.next;
}

AttackInjector::Tick AttackInjector::on_tick(AttackHandle handle, SimTime now, Bitrate bitrate) {
  Tick tick;
  auto it = attacks_.find(handle);
  if (it == attacks_.end()) return tick;
  Active& a = it->second;
  if (a.until && now >= *a.until) {
    attacks_.erase(it);
    return tick;
  }
  const AttackProfile& p = a.profile;
  bool finished = false;
  switch (p.kind) {
    case AttackKind::DosFlood:
      // Flood frames are pulled through flood_frame(); ticks only expire it.
      return tick;
    case AttackKind::Fuzz: {
      if (now < a.next) break;
      InjectedFrame inj;
      inj.label = TrafficClass::Fuzzing;
      const auto span = static_cast<std::uint64_t>(p.fuzz.id_max - p.fuzz.id_min) + 1;
      inj.frame.id = static_cast<std::uint16_t>(p.fuzz.id_min + a.rng.below(span));
      inj.frame.dlc = p.fuzz.random_dlc ? static_cast<std::uint8_t>(a.rng.below(9)) : p.fuzz.dlc;
      for (std::uint8_t i = 0; i < inj.frame.dlc; ++i) {
        inj.frame.data[i] = static_cast<std::uint8_t>(a.rng.below(256));
      }
      tick.frames.push_back(inj);
      ++a.emitted;
      a.next = a.started + bitrate.ticks_ceil(static_cast<double>(a.emitted) * 1e6 / p.fuzz.rate_per_s);
      break;
    }
    case AttackKind::Spoof: {
      if (now < a.next) break;
      tick.frames.push_back({can::CanFrame::make(p.spoof.id, p.spoof.payload), TrafficClass::Spoof});
      ++a.emitted;
      finished = p.spoof.count != 0 && a.emitted >= p.spoof.count;
      a.next = a.started + bitrate.ticks_ceil(static_cast<double>(a.emitted) * p.spoof.period_us);
      break;
    }
    case AttackKind::Replay: {
      const ReplayTrace& trace = *p.replay;
      while (a.cursor < trace.records.size() &&
             a.started + replay_offset_ticks(trace, a.cursor, p.time_scale, bitrate) <= now) {
        const ReplayRecord& r = trace.records[a.cursor++];
        tick.frames.push_back({r.frame, r.label});
      }
      finished = a.cursor >= trace.records.size();
      if (!finished) a.next = a.started + replay_offset_ticks(trace, a.cursor, p.time_scale, bitrate);
      break;
    }
  }
  if (finished) {
    attacks_.erase(it);
    return tick;
  }
  tick.next = a.next;
  if (a.until && *tick.next > *a.until) tick.next = a.until;
  return tick;
}

std::optional<InjectedFrame> AttackInjector::flood_frame(SimTime now) {
  expire(now);
  auto h = active_of(AttackKind::DosFlood);
  if (!h) return std::nullopt;
  const AttackProfile& p = attacks_.at(*h).profile;
  return InjectedFrame{can::CanFrame::make(p.dos_id, p.dos_payload), TrafficClass::DoS};
}

void AttackInjector::expire(SimTime now) {
  std::erase_if(attacks_, [now](const auto& kv) { return kv.second.until && now >= *kv.second.until; });
}

std::vector<TaggedRecord> tag_known_attacks(std::span<const monitor::BusLogRecord> log,
                                            std::uint16_t dos_id) {
  std::vector<TaggedRecord> out;
  out.reserve(log.size());
  std::optional<std::size_t> prev;  // previous record with dos_id
  for (std::size_t i = 0; i < log.size(); ++i) {
    out.push_back({log[i], KnownTag::Unknown});
    if (log[i].frame.id != dos_id) continue;
    if (prev) {
      const std::uint64_t gap = log[i].sof - log[*prev].sof;
      const std::uint64_t threshold = 2ull * can::frame_bits(log[i].frame);
      if (gap < threshold) {
        out[*prev].tag = KnownTag::DoS;
        out[i].tag = KnownTag::DoS;
      }
    }
    prev = i;
  }
  return out;
}

}  // namespace canhil::attack
