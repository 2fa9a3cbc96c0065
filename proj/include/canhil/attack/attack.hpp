#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "canhil/attack/replay.hpp"
#include "canhil/monitor/bus_log.hpp"
#include "canhil/sim/random.hpp"
#include "canhil/time.hpp"

namespace canhil::attack {

enum class AttackKind { DosFlood, Fuzz, Spoof, Replay };

std::string_view to_string(AttackKind kind);
std::optional<AttackKind> parse_attack_kind(std::string_view text);
TrafficClass label_of(AttackKind kind);

struct FuzzSettings {
  double rate_per_s = 1000.0;
  std::uint16_t id_min = 0x000;
  std::uint16_t id_max = can::kMaxStandardId;
  std::uint8_t dlc = 8;
  bool random_dlc = false;
};

struct SpoofSettings {
  std::uint16_t id = 0;
  std::vector<std::uint8_t> payload;
  double period_us = 1000.0;
  std::uint64_t count = 0;  // 0: until stopped
};

struct AttackProfile {
  AttackKind kind = AttackKind::DosFlood;
  std::uint16_t dos_id = 0x000;
  std::vector<std::uint8_t> dos_payload = std::vector<std::uint8_t>(8, 0);
  FuzzSettings fuzz;
  SpoofSettings spoof;
  std::shared_ptr<const ReplayTrace> replay;
  double time_scale = 1.0;
  std::string seed_stream = "attack";
  double duration_us = 0.0;  // 0: until stopped
};

/// Throws InvalidProfile.
void validate(const AttackProfile& profile);

using AttackHandle = std::uint64_t;

struct InjectedFrame {
  can::CanFrame frame;
  TrafficClass label = TrafficClass::Benign;
};

/// Attack state machine for the dedicated attacker port. The engine asks
/// it what to put on the bus and when to wake it up next; it owns no clock.
class AttackInjector {
 public:
  explicit AttackInjector(std::uint64_t master_seed = 0) : master_seed_(master_seed) {}

  void set_master_seed(std::uint64_t seed) { master_seed_ = seed; }

  /// Throws ConflictingAttack or InvalidProfile.
  AttackHandle start(const AttackProfile& profile, SimTime now, Bitrate bitrate);
  /// Throws UnknownHandle.
  void stop(AttackHandle handle);
  void stop_all();

  bool active(AttackHandle handle) const { return attacks_.contains(handle); }
  std::optional<AttackHandle> active_of(AttackKind kind) const;
  std::vector<AttackHandle> handles() const;
  const AttackProfile& profile(AttackHandle handle) const;

  /// Frames due at `now` for timed attacks (fuzz, spoof, replay) and the
  /// next wake-up time, if any. Expired attacks stop themselves.
  struct Tick {
    std::vector<InjectedFrame> frames;
    std::optional<SimTime> next;
  };
  Tick on_tick(AttackHandle handle, SimTime now, Bitrate bitrate);

  /// The flood frame to keep pending, while a DoS is active.
  std::optional<InjectedFrame> flood_frame(SimTime now);

  /// Earliest time the attack wants its first tick.
  std::optional<SimTime> first_tick(AttackHandle handle) const;

 private:
  struct Active {
    AttackProfile profile;
    sim::Rng rng;
    SimTime started;
    std::optional<SimTime> until;
    std::size_t cursor = 0;  // replay record / spoof count
    std::uint64_t emitted = 0;
    SimTime next;
  };

  void expire(SimTime now);

  std::uint64_t master_seed_;
  AttackHandle next_handle_ = 1;
  std::map<AttackHandle, Active> attacks_;
};

/// Heuristic label attached by tag_known_attacks.
enum class KnownTag { Unknown, DoS };

struct TaggedRecord {
  monitor::BusLogRecord record;
  KnownTag tag = KnownTag::Unknown;
};

/// Tags flooding: a record is DoS when its id equals `dos_id` and it
/// starts within twice its frame time (in bit times, so at any bitrate) of
/// a neighbouring record with that id.
std::vector<TaggedRecord> tag_known_attacks(std::span<const monitor::BusLogRecord> log,
                                            std::uint16_t dos_id = 0x000);

}  // namespace canhil::attack
