#include "canhil/sim/event_queue.hpp"

#include "canhil/error.hpp"

namespace canhil::sim {

void EventQueue::schedule(Event ev) {
  if (ev.at < now_) {
    throw Error(ErrorCode::PastEvent, "event at tick " + std::to_string(ev.at.ticks) +
                                          " precedes now " + std::to_string(now_.ticks));
  }
  ev.seq = next_seq_++;
  heap_.push(ev);
}

std::optional<SimTime> EventQueue::next_time() const {
  if (heap_.empty()) return std::nullopt;
  return heap_.top().at;
}

Event EventQueue::pop() {
  Event ev = heap_.top();
  heap_.pop();
  now_ = ev.at;
  return ev;
}

void EventQueue::advance_to(SimTime t) {
  if (t > now_) now_ = t;
}

void EventQueue::clear() {
  heap_ = {};
}

}  // namespace canhil::sim
