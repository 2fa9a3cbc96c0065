#include "canhil/monitor/status.hpp"

#include <cmath>

#include "canhil/error.hpp"

namespace canhil::monitor {

std::optional<CompareOp> parse_compare_op(std::string_view text) {
  if (text == "==") return CompareOp::Eq;
  if (text == "!=") return CompareOp::Ne;
  if (text == "<") return CompareOp::Lt;
  if (text == "<=") return CompareOp::Le;
  if (text == ">") return CompareOp::Gt;
  if (text == ">=") return CompareOp::Ge;
  return std::nullopt;
}

namespace {

bool compare(double lhs, CompareOp op, double rhs) {
  switch (op) {
    case CompareOp::Eq: return lhs == rhs;
    case CompareOp::Ne: return lhs != rhs;
    case CompareOp::Lt: return lhs < rhs;
    case CompareOp::Le: return lhs <= rhs;
    case CompareOp::Gt: return lhs > rhs;
    case CompareOp::Ge: return lhs >= rhs;
  }
  return false;
}

std::optional<double> field_of(const NodeStatus& s, std::string_view field) {
  if (field == "life_delta") return s.life_delta;
  if (field == "life_counter") return s.life_counter;
  if (field == "error_count") return s.error_count;
  if (auto it = s.actuators.find(field); it != s.actuators.end()) return it->second ? 1.0 : 0.0;
  return std::nullopt;
}

}  // namespace

StatusMonitor::StatusMonitor(double period_us) : period_us_(period_us) {
  if (!(period_us > 0.0)) throw Error(ErrorCode::ValidationError, "poll period must be > 0");
}

void StatusMonitor::add_check(StatusCheck check) { checks_.push_back(std::move(check)); }

void StatusMonitor::set_life_period(const std::string& node, std::uint16_t life_id, double period_us) {
  LifeTrack& t = life_by_id_[life_id];
  t.node = node;
  t.period_us = period_us;
}

void StatusMonitor::observe_frame(const can::CanFrame& frame) {
  auto it = life_by_id_.find(frame.id);
  if (it == life_by_id_.end() || frame.dlc < 4) return;
  const auto p = frame.payload();
  it->second.seen = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                    (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
  ++it->second.delta_since_poll;
}

void StatusMonitor::observe_verdict(TrafficClass cls) { ++verdicts_[index_of(cls)]; }

void StatusMonitor::reset_node(const std::string& node) {
  for (auto& [id, t] : life_by_id_) {
    if (t.node == node) t.seen.reset();
  }
}

StatusSnapshot StatusMonitor::poll(SimTime now, std::span<const ecu::Ecu* const> ecus) {
  StatusSnapshot snap;
  snap.sequence = sequence_++;
  snap.at = now;
  snap.verdicts = verdicts_;
  verdicts_.fill(0);

  for (const ecu::Ecu* e : ecus) {
    NodeStatus s;
    s.node = e->name();
    s.life_counter = e->state().life_counter;
    s.actuators = e->state().actuators;
    s.error_count = e->state().error_count;
    auto it = life_by_id_.find(e->life_id());
    if (it != life_by_id_.end()) {
      LifeTrack& t = it->second;
      s.bus_life = t.seen;
      s.life_delta = t.delta_since_poll;
      t.delta_since_poll = 0;
      const double expected = period_us_ / t.period_us;
      if (expected >= 1.0) {
        if (s.life_delta == 0) {
          snap.anomalies.push_back("life signal lost: " + s.node);
        } else if (std::abs(s.life_delta - expected) > 1.0) {
          snap.anomalies.push_back("life rate deviation: " + s.node + " delta " +
                                   std::to_string(s.life_delta));
        }
      }
    }
    for (const StatusCheck& c : checks_) {
      if (c.node != "*" && c.node != s.node) continue;
      auto v = field_of(s, c.field);
      if (v && compare(*v, c.op, c.value)) {
        snap.anomalies.push_back(c.message.empty() ? "check failed: " + s.node + "." + c.field
                                                   : c.message + ": " + s.node);
      }
    }
    snap.nodes.push_back(std::move(s));
  }
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    if (snap.verdicts[c] > 0) {
      snap.anomalies.push_back("IDS threat: " + std::string(to_string(static_cast<TrafficClass>(c))) +
                               " x" + std::to_string(snap.verdicts[c]));
    }
  }
  first_poll_ = false;
  return snap;
}

}  // namespace canhil::monitor
