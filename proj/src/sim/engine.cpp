#include "canhil/sim/engine.hpp"

#include <algorithm>
#include <set>

#include "canhil/error.hpp"

namespace canhil::sim {
namespace {

constexpr std::uint64_t kGenerationShift = 32;
constexpr std::uint64_t kTaskMask = 0xFFFFFFFFull;

std::uint64_t arbitration_key(const can::CanFrame& f) {
  return (static_cast<std::uint64_t>(f.id) << 1) | (f.rtr ? 1u : 0u);
}

std::string hex_id(std::uint16_t id) {
  static constexpr char kDigits[] = "0123456789ABCDEF";
  std::string s = "0x000";
  s[2] = kDigits[(id >> 8) & 0xF];
  s[3] = kDigits[(id >> 4) & 0xF];
  s[4] = kDigits[id & 0xF];
  return s;
}

}  // namespace

Engine::Engine(EngineConfig config, std::vector<ecu::EcuConfig> roster, ecu::MessageCatalog catalog)
    : config_(config),
      catalog_(std::move(catalog)),
      injector_(config.seed),
      monitor_(config.poll_period_us) {
  if (config_.bitrate.bits_per_second == 0) throw Error(ErrorCode::ValidationError, "bitrate must be > 0");
  if (config_.tx_queue_capacity == 0) throw Error(ErrorCode::ValidationError, "tx queue capacity must be > 0");
  for (auto& cfg : roster) ecus_.emplace_back(std::move(cfg), catalog_);
  validate_roster();

  generation_.assign(ecus_.size(), 0);
  rx_pending_.resize(ecus_.size());
  for (const auto& e : ecus_) ports_.push_back({"tx." + e.name(), {}, false});
  ports_.push_back({"tx.attacker", {}, true});
  wire_.drivers.assign(ports_.size(), DriveLevel::Idle);

  for (std::size_t i = 0; i < ecus_.size(); ++i) {
    monitor_.set_life_period(ecus_[i].name(), ecus_[i].life_id(),
                             static_cast<double>(ecus_[i].task_period_us(ecu::kLifeTask)));
    start_tasks(i);
  }
  schedule(SimTime{} + config_.bitrate.ticks_ceil(config_.poll_period_us), EventKind::MonitorPoll,
           Priority::Monitor, kNoNode, 0);
}

void Engine::validate_roster() const {
  std::set<std::string, std::less<>> names;
  std::map<std::uint16_t, std::string> owners;
  for (const auto& e : ecus_) {
    if (!names.insert(e.name()).second) {
      throw Error(ErrorCode::ValidationError, "duplicate node name '" + e.name() + "'");
    }
    for (const auto& [msg, id] : e.config().tx_map) {
      auto [it, fresh] = owners.emplace(id, e.name());
      if (!fresh) {
        throw Error(ErrorCode::ValidationError,
                    "CAN id " + hex_id(id) +
                        " is transmitted by both " + it->second + " and " + e.name());
      }
    }
  }
}

std::size_t Engine::node_index(std::string_view name) const {
  for (std::size_t i = 0; i < ecus_.size(); ++i) {
    if (ecus_[i].name() == name) return i;
  }
  throw Error(ErrorCode::UnknownNode, "no node named '" + std::string(name) + "'");
}

std::vector<const ecu::Ecu*> Engine::nodes() const {
  std::vector<const ecu::Ecu*> out;
  for (const auto& e : ecus_) out.push_back(&e);
  return out;
}

void Engine::schedule(SimTime at, EventKind kind, Priority prio, std::uint32_t target,
                      std::uint64_t payload) {
  Event ev;
  ev.at = at;
  ev.kind = kind;
  ev.priority = prio;
  ev.target = target;
  ev.payload = payload;
  queue_.schedule(ev);
}

// ---- ECU side -------------------------------------------------------------

void Engine::start_tasks(std::size_t node) {
  const auto names = ecus_[node].task_names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::uint64_t payload = (static_cast<std::uint64_t>(generation_[node]) << kGenerationShift) | k;
    schedule(now(), EventKind::TaskTimer, Priority::Stimulus, static_cast<std::uint32_t>(node), payload);
  }
}

void Engine::run_task(std::size_t node, std::uint64_t payload) {
  if ((payload >> kGenerationShift) != generation_[node]) return;
  const auto names = ecus_[node].task_names();
  const std::size_t k = payload & kTaskMask;
  if (k >= names.size()) return;
  ecu::Ecu& e = ecus_[node];
  apply_output(node, e.step_task(names[k], now()));
  if (names[k] == ecu::kLifeTask) {
    capture_write(e.name() + ".life", e.state().life_counter);
  }
  schedule(now() + config_.bitrate.ticks_ceil(static_cast<double>(e.task_period_us(names[k]))),
           EventKind::TaskTimer, Priority::Stimulus, static_cast<std::uint32_t>(node), payload);
}

void Engine::apply_output(std::size_t node, const ecu::EcuOutput& out) {
  for (const auto& f : out.frames) enqueue(static_cast<std::uint32_t>(node), {f, TrafficClass::Benign, 0});
  for (const auto& c : out.changes) {
    ActuationRecord rec{now(), ecus_[node].name(), c.actuator, c.value};
    capture_write(rec.node + "." + rec.actuator, c.value ? 1u : 0u);
    actuations_.push_back(rec);
    if (on_actuation) on_actuation(actuations_.back());
  }
}

void Engine::set_sensor(std::string_view node, std::string_view sensor, int value) {
  const std::size_t i = node_index(node);
  apply_output(i, ecus_[i].set_sensor(sensor, value));
}

void Engine::set_sensor(std::string_view node, std::string_view sensor, std::string_view symbolic) {
  const std::size_t i = node_index(node);
  apply_output(i, ecus_[i].set_sensor(sensor, symbolic));
}

void Engine::reset_node(std::string_view node) {
  const std::size_t i = node_index(node);
  ecus_[i].reset();
  ++generation_[i];
  rx_pending_[i].clear();
  ports_[i].queue.clear();
  monitor_.reset_node(ecus_[i].name());
  for (const auto& [act, value] : ecus_[i].state().actuators) {
    capture_write(ecus_[i].name() + "." + act, value ? 1u : 0u);
  }
  capture_write(ecus_[i].name() + ".life", 0);
  start_tasks(i);
}

void Engine::reset_all() {
  for (const auto& e : nodes()) reset_node(e->name());
}

void Engine::program_node(std::string_view node, ecu::BehaviorTable behavior) {
  const std::size_t i = node_index(node);
  ecu::Ecu candidate = ecus_[i];
  candidate.program(std::move(behavior));
  std::swap(ecus_[i], candidate);
  try {
    validate_roster();
  } catch (...) {
    std::swap(ecus_[i], candidate);
    throw;
  }
  monitor_.set_life_period(ecus_[i].name(), ecus_[i].life_id(),
                           static_cast<double>(ecus_[i].task_period_us(ecu::kLifeTask)));
  reset_node(node);
}

// ---- transmit queues and arbitration ----------------------------------------

void Engine::enqueue(std::uint32_t port, TxEntry entry) {
  Port& p = ports_[port];
  entry.frame.timestamp.reset();
  if (p.attacker) {
    if (p.queue.size() >= kAttackQueueCapacity) {
      ++stats_.tx_overflows;
      return;
    }
    p.queue.push_back(std::move(entry));
  } else {
    // One mailbox per identifier: a newer frame replaces a pending one.
    auto same = std::find_if(p.queue.begin(), p.queue.end(), [&](const TxEntry& e) {
      return arbitration_key(e.frame) == arbitration_key(entry.frame);
    });
    if (same != p.queue.end()) {
      *same = std::move(entry);
    } else if (p.queue.size() >= config_.tx_queue_capacity) {
      ++stats_.tx_overflows;
      return;
    } else {
      auto pos = std::upper_bound(p.queue.begin(), p.queue.end(), entry, [](const TxEntry& a, const TxEntry& b) {
        return arbitration_key(a.frame) < arbitration_key(b.frame);
      });
      p.queue.insert(pos, std::move(entry));
    }
  }
  request_arbitration();
}

void Engine::request_arbitration() {
  if (busy_ || arbitration_scheduled_) return;
  const bool pending = std::any_of(ports_.begin(), ports_.end(), [](const Port& p) { return !p.queue.empty(); }) ||
                       injector_.active_of(attack::AttackKind::DosFlood).has_value();
  if (!pending) return;
  arbitration_scheduled_ = true;
  schedule(now(), EventKind::BitBoundary, Priority::Arbitration, kNoNode, 0);
}

void Engine::arbitrate() {
  arbitration_scheduled_ = false;
  if (busy_) return;

  std::vector<Contender> contenders;
  for (std::uint32_t port = 0; port < ports_.size(); ++port) {
    Port& p = ports_[port];
    if (p.attacker) {
      if (auto flood = injector_.flood_frame(now())) {
        contenders.push_back({port, {flood->frame, flood->label, 0}, {}, true});
        continue;
      }
    }
    if (!p.queue.empty()) contenders.push_back({port, p.queue.front(), {}, false});
  }
  if (contenders.empty()) return;
  for (auto& c : contenders) c.bits = can::encode_frame(c.entry.frame);

  // Bit-by-bit contention on the wired-AND bus. A node that sends recessive
  // and reads dominant stops transmitting: inside the arbitration field that
  // is a lost arbitration, after it a bit error.
  std::vector<std::size_t> active(contenders.size());
  for (std::size_t i = 0; i < active.size(); ++i) active[i] = i;
  for (std::size_t bit = 0; active.size() > 1; ++bit) {
    wire_.release_all();
    bool any_left = false;
    for (std::size_t a : active) {
      const auto& bits = contenders[a].bits.bits;
      if (bit < bits.size()) {
        wire_.drive(contenders[a].port, bits[bit] == can::BitLevel::Dominant ? DriveLevel::Dominant
                                                                             : DriveLevel::Recessive);
        any_left = true;
      }
    }
    if (!any_left) break;  // identical frames: they finish together
    std::vector<std::size_t> still;
    for (std::size_t a : active) {
      const Contender& c = contenders[a];
      const bool sent_recessive = bit < c.bits.bits.size() && c.bits.bits[bit] == can::BitLevel::Recessive;
      if (sent_recessive && wire_.level == can::BitLevel::Dominant) {
        if (bit < c.bits.arbitration_end) {
          ++stats_.arbitration_losses;
        } else {
          ++stats_.errors;
          ++errors_since_record_;
          if (c.port < ecus_.size()) ecus_[c.port].note_error();
        }
        if (recorder_) {
          const std::size_t idx = recorder_->find(ports_[c.port].name);
          if (idx != static_cast<std::size_t>(-1)) {
            recorder_->write_bits(idx, now(), std::span(c.bits.bits).first(bit + 1));
          }
        }
      } else {
        still.push_back(a);
      }
    }
    active = std::move(still);
  }
  wire_.release_all();

  InFlight f;
  f.winner = contenders[active.front()];
  f.sof = now();
  for (std::size_t k = 1; k < active.size(); ++k) f.also_sent.push_back(contenders[active[k]].port);
  f.wire = f.winner.bits.bits;
  if (ecus_.size() > (f.winner.port < ecus_.size() ? 1u : 0u)) {
    f.wire[f.winner.bits.ack_slot] = can::BitLevel::Dominant;
  }

  // The frame leaves its queue once it owns the bus.
  auto pop_front = [&](std::uint32_t port) {
    if (!ports_[port].queue.empty()) ports_[port].queue.erase(ports_[port].queue.begin());
  };
  if (!f.winner.from_flood) pop_front(f.winner.port);
  for (std::uint32_t port : f.also_sent) pop_front(port);

  if (recorder_) {
    const std::size_t bus = recorder_->find("bus");
    if (bus != static_cast<std::size_t>(-1)) recorder_->write_bits(bus, f.sof, f.wire);
    const std::size_t tx = recorder_->find(ports_[f.winner.port].name);
    if (tx != static_cast<std::size_t>(-1)) recorder_->write_bits(tx, f.sof, f.winner.bits.bits);
  }

  busy_ = true;
  const SimTime end = f.sof + f.wire.size();
  in_flight_ = std::move(f);
  schedule(end, EventKind::BitBoundary, Priority::FrameEnd, kNoNode, 0);
}

void Engine::finish_frame() {
  if (!in_flight_) return;
  InFlight f = std::move(*in_flight_);
  in_flight_.reset();
  busy_ = false;

  can::CanFrame received;
  bool ok = true;
  try {
    received = can::decode_frame(f.wire);
  } catch (const Error&) {
    ok = false;
  }
  if (!ok) {
    // Every receiver rejects the frame.
    for (std::size_t i = 0; i < ecus_.size(); ++i) {
      if (i != f.winner.port) ecus_[i].note_error();
    }
    ++stats_.errors;
    ++errors_since_record_;
    request_arbitration();
    return;
  }

  received.timestamp = f.sof;
  monitor::BusLogRecord rec;
  rec.sof = f.sof;
  rec.end = now();
  rec.frame = received;
  rec.source = f.winner.port;
  rec.source_name = f.winner.port < ecus_.size() ? ecus_[f.winner.port].name() : "attacker";
  rec.truth = f.winner.entry.label;
  rec.bus_errors = errors_since_record_;
  errors_since_record_ = 0;
  ++stats_.frames;

  for (std::size_t i = 0; i < ecus_.size(); ++i) {
    if (i == f.winner.port) continue;
    if (std::find(f.also_sent.begin(), f.also_sent.end(), i) != f.also_sent.end()) continue;
    if (!ecus_[i].listens_to(received.id)) continue;
    rx_pending_[i].push_back(received);
    const std::uint64_t delay = config_.bitrate.ticks_ceil(ecus_[i].config().rx_processing_us);
    schedule(now() + delay, EventKind::ProcessingDone, Priority::Processing, static_cast<std::uint32_t>(i),
             generation_[i]);
  }
  monitor_.observe_frame(received);
  observe_ids(rec);
  log_.push_back(std::move(rec));
  if (on_frame) on_frame(log_.back());
  request_arbitration();
}

// ---- attacks ------------------------------------------------------------------

attack::AttackHandle Engine::start_attack(const attack::AttackProfile& profile) {
  const attack::AttackHandle h = injector_.start(profile, now(), config_.bitrate);
  if (auto first = injector_.first_tick(h)) {
    schedule(std::max(*first, now()), EventKind::AttackTick, Priority::Stimulus, attacker_port(), h);
  }
  request_arbitration();
  return h;
}

void Engine::stop_attack(attack::AttackHandle handle) {
  injector_.stop(handle);
  std::erase_if(ports_[attacker_port()].queue, [handle](const TxEntry& e) { return e.attack == handle; });
}

void Engine::on_attack_tick(attack::AttackHandle handle) {
  if (!injector_.active(handle)) return;
  auto tick = injector_.on_tick(handle, now(), config_.bitrate);
  for (auto& inj : tick.frames) enqueue(attacker_port(), {inj.frame, inj.label, handle});
  if (tick.next) {
    schedule(std::max(*tick.next, now() + 1), EventKind::AttackTick, Priority::Stimulus, attacker_port(),
             handle);
  }
}

// ---- IDS ----------------------------------------------------------------------

void Engine::set_ids(std::shared_ptr<const ids::QuantMlpModel> model, std::vector<ids::CostProfile> strategies) {
  for (const auto& s : strategies) ids::validate(s);
  classifier_.set_model(std::move(model));
  classifier_.reset();
  strategies_ = std::move(strategies);
}

void Engine::observe_ids(monitor::BusLogRecord& rec) {
  if (!classifier_.loaded() || strategies_.empty()) return;
  auto cls = classifier_.push(rec.frame);
  if (!cls) return;
  const ids::ObservedFrame observed{rec.frame, rec.sof, rec.end, rec.truth};
  rec.verdict = cls->cls;
  for (std::size_t s = 0; s < strategies_.size(); ++s) {
    VerdictRecord v;
    v.verdict.cls = cls->cls;
    v.verdict.probabilities = cls->probabilities;
    v.verdict.strategy = strategies_[s].strategy;
    v.verdict.frame_index = log_.size();
    v.verdict.latency = ids::latency_for(observed, strategies_[s], config_.bitrate);
    v.truth = rec.truth;
    const std::size_t index = verdicts_.size();
    verdicts_.push_back(v);
    schedule(v.verdict.latency.verdict_time, EventKind::ProcessingDone, Priority::Processing, kNoNode, index);
  }
}

void Engine::publish_verdict(std::size_t index) {
  const VerdictRecord& v = verdicts_.at(index);
  // Strategies share the class; count each classification once.
  if (v.verdict.strategy == strategies_.front().strategy) {
    monitor_.observe_verdict(v.verdict.cls);
    capture_write("ids.verdict", static_cast<std::uint32_t>(index_of(v.verdict.cls)));
  }
  if (on_verdict) on_verdict(v);
}

// ---- capture ------------------------------------------------------------------

std::vector<monitor::SignalDef> Engine::signal_registry() const {
  using monitor::SignalDef;
  using monitor::SignalKind;
  std::vector<SignalDef> out;
  out.push_back({"bus", 1, SignalKind::Line, 1});
  for (const auto& p : ports_) out.push_back({p.name, 1, SignalKind::Line, 1});
  for (const auto& e : ecus_) {
    out.push_back({e.name() + ".life", 32, SignalKind::Held, 0});
    for (const auto& [act, value] : e.state().actuators) {
      out.push_back({e.name() + "." + act, 1, SignalKind::Held, 0});
    }
  }
  out.push_back({"ids.verdict", 2, SignalKind::Held, 0});
  return out;
}

void Engine::start_capture(const std::vector<std::string>& names, SimTime start, std::uint64_t ticks,
                           std::size_t capacity) {
  if (start < now()) throw Error(ErrorCode::ValidationError, "capture cannot start in the past");
  if (recorder_) throw Error(ErrorCode::ValidationError, "a capture is already in progress");
  const auto registry = signal_registry();
  std::vector<monitor::SignalDef> chosen;
  for (const auto& n : names) {
    auto it = std::find_if(registry.begin(), registry.end(), [&](const auto& d) { return d.name == n; });
    if (it == registry.end()) throw Error(ErrorCode::ValidationError, "unknown signal '" + n + "'");
    if (std::any_of(chosen.begin(), chosen.end(), [&](const auto& d) { return d.name == n; })) continue;
    chosen.push_back(*it);
  }
  if (chosen.empty()) throw Error(ErrorCode::ValidationError, "capture needs at least one signal");
  recorder_ = std::make_unique<monitor::SignalRecorder>(std::move(chosen), start, ticks, config_.bitrate, capacity);

  // Current values of the held signals become the initial values.
  for (const auto& e : ecus_) {
    capture_write(e.name() + ".life", e.state().life_counter);
    for (const auto& [act, value] : e.state().actuators) capture_write(e.name() + "." + act, value ? 1u : 0u);
  }
  if (in_flight_) {
    const std::size_t bus = recorder_->find("bus");
    if (bus != static_cast<std::size_t>(-1)) recorder_->write_bits(bus, in_flight_->sof, in_flight_->wire);
  }
}

void Engine::capture_write(std::string_view signal, std::uint32_t value) {
  if (!recorder_) return;
  const std::size_t idx = recorder_->find(signal);
  if (idx != static_cast<std::size_t>(-1)) recorder_->set(idx, now(), value);
}

void Engine::close_capture_if_done() {
  if (recorder_ && now() >= recorder_->end()) {
    captures_.push_back(recorder_->finish());
    recorder_.reset();
  }
}

std::vector<monitor::SignalTrace> Engine::take_captures() {
  std::vector<monitor::SignalTrace> out;
  out.swap(captures_);
  return out;
}

// ---- event loop ---------------------------------------------------------------

void Engine::schedule_action(SimTime at, std::function<void(Engine&)> action) {
  const std::uint64_t id = next_action_++;
  actions_.emplace(id, std::move(action));
  schedule(at, EventKind::TaskTimer, Priority::Stimulus, kNoNode, id);
}

void Engine::dispatch(const Event& ev) {
  switch (ev.kind) {
    case EventKind::BitBoundary:
      if (ev.priority == Priority::FrameEnd) {
        finish_frame();
      } else {
        arbitrate();
      }
      break;
    case EventKind::FrameQueued:
      request_arbitration();
      break;
    case EventKind::TaskTimer:
      if (ev.target == kNoNode) {
        auto it = actions_.find(ev.payload);
        if (it != actions_.end()) {
          auto action = std::move(it->second);
          actions_.erase(it);
          action(*this);
        }
      } else {
        run_task(ev.target, ev.payload);
      }
      break;
    case EventKind::AttackTick:
      on_attack_tick(ev.payload);
      break;
    case EventKind::MonitorPoll: {
      const auto ptrs = nodes();
      status_log_.push_back(monitor_.poll(now(), ptrs));
      if (on_status) on_status(status_log_.back());
      schedule(now() + config_.bitrate.ticks_ceil(config_.poll_period_us), EventKind::MonitorPoll,
               Priority::Monitor, kNoNode, 0);
      break;
    }
    case EventKind::ProcessingDone:
      if (ev.target == kNoNode) {
        publish_verdict(ev.payload);
      } else if (ev.payload == generation_[ev.target] && !rx_pending_[ev.target].empty()) {
        ecu::Ecu& e = ecus_[ev.target];
        e.deliver(rx_pending_[ev.target].front());
        rx_pending_[ev.target].pop_front();
        apply_output(ev.target, e.process_rx());
      }
      break;
  }
}

RunStats Engine::run_until(SimTime t) {
  while (auto next = queue_.next_time()) {
    if (*next > t) break;
    if (recorder_ && *next >= recorder_->end()) {
      queue_.advance_to(recorder_->end());
      close_capture_if_done();
    }
    const Event ev = queue_.pop();
    dispatch(ev);
    ++stats_.events;
  }
  if (t > queue_.now()) queue_.advance_to(t);
  close_capture_if_done();
  stats_.now = now();
  return stats_;
}

RunStats Engine::step() {
  if (auto next = queue_.next_time()) return run_until(*next);
  stats_.now = now();
  return stats_;
}

}  // namespace canhil::sim
