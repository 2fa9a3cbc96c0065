#pragma once

#include <cstdint>
#include <optional>
#include <queue>
#include <vector>

#include "canhil/time.hpp"

namespace canhil::sim {

enum class EventKind : std::uint8_t {
  BitBoundary,
  FrameQueued,
  TaskTimer,
  AttackTick,
  MonitorPoll,
  ProcessingDone,
};

/// Same-tick ordering class; lower runs first.
enum class Priority : std::uint8_t {
  FrameEnd = 0,
  Processing = 1,
  Stimulus = 2,
  Arbitration = 3,
  Monitor = 4,
};

inline constexpr std::uint32_t kNoNode = 0xFFFFFFFFu;

struct Event {
  SimTime at;
  EventKind kind = EventKind::BitBoundary;
  Priority priority = Priority::Stimulus;
  std::uint32_t target = kNoNode;
  // Kind-specific: task index, attack handle, pending-work slot, ...
  std::uint64_t payload = 0;
  std::uint64_t seq = 0;  // assigned by the queue
};

/// Stable min-queue ordered by (at, priority, insertion sequence).
class EventQueue {
 public:
  /// Throws PastEvent when `ev.at` precedes `now()`.
  void schedule(Event ev);

  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  std::optional<SimTime> next_time() const;

  /// Removes the next event and advances `now()` to its time.
  Event pop();

  SimTime now() const { return now_; }
  void advance_to(SimTime t);
  void clear();
  std::uint64_t scheduled_total() const { return next_seq_; }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.at != b.at) return a.at > b.at;
      if (a.priority != b.priority) return a.priority > b.priority;
      return a.seq > b.seq;
    }
  };

  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  SimTime now_{};
  std::uint64_t next_seq_ = 0;
};

}  // namespace canhil::sim
