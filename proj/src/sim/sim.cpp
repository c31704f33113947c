/*
 * Copyright 2026 The tailcopy Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "tailcopy/sim/sim.hpp"

#include <cassert>

namespace tailcopy::sim {

uint64_t Sim::schedule(TimeMs delay_ms, EventFn fn) {
  assert(delay_ms >= 0);
  Event ev{now_ + delay_ms, ++seq_, Pid{}, std::move(fn)};
  queue_.push(std::move(ev));
  return seq_;
}

uint64_t Sim::schedule_on(Pid p, TimeMs delay_ms, EventFn fn) {
  assert(delay_ms >= 0);
  Event ev{now_ + delay_ms, ++seq_, p, std::move(fn)};
  queue_.push(std::move(ev));
  return seq_;
}

Pid Sim::spawn_process(std::string name) {
  Process proc;
  proc.name = std::move(name);
  proc.alive = true;
  processes_.push_back(std::move(proc));
  return Pid{static_cast<uint32_t>(processes_.size() - 1), 0};
}

void Sim::kill_process(Pid p) {
  assert(p.slot < processes_.size());
  Process& proc = processes_[p.slot];
  if (!proc.alive || proc.incarnation != p.incarnation) return;
  proc.alive = false;
  trace("proc", "kill " + proc.name);
}

Pid Sim::restart_process(Pid p) {
  assert(p.slot < processes_.size());
  Process& proc = processes_[p.slot];
  // Restart implies the previous incarnation is gone even if still alive:
  // events bound to it will find the incarnation stale and be dropped.
  proc.incarnation++;
  proc.alive = true;
  trace("proc", "restart " + proc.name);
  return Pid{p.slot, proc.incarnation};
}

bool Sim::alive(Pid p) const {
  if (p.slot >= processes_.size()) return false;
  const Process& proc = processes_[p.slot];
  return proc.alive && proc.incarnation == p.incarnation;
}

const std::string& Sim::process_name(Pid p) const {
  assert(p.slot < processes_.size());
  return processes_[p.slot].name;
}

Sim::LinkId Sim::add_link(TimeMs latency_ms, int64_t bandwidth_bps) {
  assert(bandwidth_bps > 0);
  links_.push_back(Link{latency_ms, bandwidth_bps, true, 0});
  return LinkId{static_cast<uint32_t>(links_.size() - 1)};
}

void Sim::set_link_up(LinkId id, bool up) {
  assert(id.idx < links_.size());
  links_[id.idx].up = up;
}

bool Sim::link_up(LinkId id) const {
  assert(id.idx < links_.size());
  return links_[id.idx].up;
}

TimeMs Sim::link_latency(LinkId id) const {
  assert(id.idx < links_.size());
  return links_[id.idx].latency_ms;
}

void Sim::set_link_latency(LinkId id, TimeMs latency_ms) {
  assert(id.idx < links_.size());
  links_[id.idx].latency_ms = latency_ms;
}

TimeMs Sim::send(LinkId id, Pid target, int64_t payload_bytes,
                 EventFn on_deliver) {
  assert(id.idx < links_.size());
  Link& link = links_[id.idx];
  if (!link.up) return -1;  // dropped before it got on the wire

  // Serialization occupies the link; propagation does not. Messages queue
  // behind each other (FIFO per link) but overlap in flight.
  TimeMs ser_ms = payload_bytes * 8 * 1000 / link.bandwidth_bps;
  TimeMs wire_free = std::max(now_, link.busy_until) + ser_ms;
  link.busy_until = wire_free;
  TimeMs deliver_at = wire_free + link.latency_ms;

  schedule(deliver_at - now_, [this, id, target, fn = std::move(on_deliver)] {
    if (!links_[id.idx].up) return;       // went down mid-flight
    if (target.assigned() && !alive(target)) return;
    fn();
  });
  return deliver_at;
}

void Sim::run_until(TimeMs t) {
  while (!queue_.empty() && !stop_requested_) {
    if (queue_.top().at > t) break;
    step();
  }
  if (now_ < t) now_ = t;
}

bool Sim::step() {
  if (queue_.empty()) return false;
  // priority_queue::top is const; the event is moved out via const_cast,
  // which is safe because pop() follows immediately.
  Event ev = std::move(const_cast<Event&>(queue_.top()));
  queue_.pop();
  assert(ev.at >= now_);
  now_ = ev.at;
  fire(ev);
  return true;
}

void Sim::fire(Event& ev) {
  if (ev.target.assigned() && !alive(ev.target)) return;
  ev.fn();
}

void Sim::trace(const char* category, const std::string& line) {
  if (!trace_sink_) return;
  trace_sink_("t=" + std::to_string(now_) + " " + category + " " + line);
}

}  // namespace tailcopy::sim
