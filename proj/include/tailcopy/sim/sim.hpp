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
#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <string>
#include <vector>

#include "tailcopy/sim/rng.hpp"

namespace tailcopy::sim {

/// Simulated time in milliseconds. The clock never goes backwards and only
/// the event loop advances it.
using TimeMs = int64_t;

/// Handle to a simulated process. A (slot, incarnation) pair: killing a
/// process invalidates the incarnation, restarting bumps it. Events
/// addressed to a stale incarnation are dropped, never queued for later.
struct Pid {
  uint32_t slot = UINT32_MAX;
  uint32_t incarnation = 0;

  bool operator==(const Pid&) const = default;
  bool assigned() const { return slot != UINT32_MAX; }
};

class Sim {
 public:
  using EventFn = std::function<void()>;

  explicit Sim(uint64_t seed) : rng_(seed) {}

  TimeMs now() const { return now_; }
  Rng& rng() { return rng_; }

  // --- events ---------------------------------------------------------

  /// Fire `fn` at now + delay_ms. Events at equal timestamps fire in
  /// scheduling order.
  uint64_t schedule(TimeMs delay_ms, EventFn fn);

  /// Same, but the event belongs to process `p`: it is dropped if `p` is
  /// dead or was restarted before the event fires.
  uint64_t schedule_on(Pid p, TimeMs delay_ms, EventFn fn);

  // --- processes ------------------------------------------------------

  Pid spawn_process(std::string name);
  void kill_process(Pid p);
  /// Returns the fresh incarnation. The caller owns re-creating volatile
  /// state; anything it kept across the call is by definition persistent.
  Pid restart_process(Pid p);
  bool alive(Pid p) const;
  const std::string& process_name(Pid p) const;

  // --- links ----------------------------------------------------------

  struct LinkId {
    uint32_t idx = UINT32_MAX;
    bool assigned() const { return idx != UINT32_MAX; }
  };

  LinkId add_link(TimeMs latency_ms, int64_t bandwidth_bps);
  void set_link_up(LinkId id, bool up);
  bool link_up(LinkId id) const;
  TimeMs link_latency(LinkId id) const;
  /// In-flight messages keep the latency they were sent with.
  void set_link_latency(LinkId id, TimeMs latency_ms);

  /// FIFO delivery at now + latency + serialization time (floor to ms).
  /// Dropped silently if the link is down at send or delivery time, or if
  /// the target process is dead at delivery time.
  /// Returns the delivery time (or -1 when dropped at send time).
  TimeMs send(LinkId id, Pid target, int64_t payload_bytes, EventFn on_deliver);

  // --- run ------------------------------------------------------------

  /// Process events up to and including time t.
  void run_until(TimeMs t);
  /// Process a single event; false when the queue is empty.
  bool step();
  bool queue_empty() const { return queue_.empty(); }
  void request_stop() { stop_requested_ = true; }
  bool stop_requested() const { return stop_requested_; }

  // --- trace ----------------------------------------------------------

  void set_trace_sink(std::function<void(const std::string&)> sink) {
    trace_sink_ = std::move(sink);
  }
  bool tracing() const { return static_cast<bool>(trace_sink_); }
  /// Emits "t=<now> <category> <line>".
  void trace(const char* category, const std::string& line);

  // --- identity helpers ----------------------------------------------

  /// Globally unique, strictly increasing. Used for operation uids and for
  /// writer version epochs (a later-created writer wins version conflicts).
  uint64_t next_uid() { return ++uid_; }

 private:
  struct Event {
    TimeMs at;
    uint64_t seq;
    Pid target;        // unassigned slot means "not bound to a process"
    EventFn fn;
  };
  struct EventAfter {
    bool operator()(const Event& a, const Event& b) const {
      if (a.at != b.at) return a.at > b.at;
      return a.seq > b.seq;
    }
  };

  struct Process {
    std::string name;
    uint32_t incarnation = 0;
    bool alive = false;
  };

  struct Link {
    TimeMs latency_ms = 0;
    int64_t bandwidth_bps = 1;
    bool up = true;
    TimeMs busy_until = 0;
  };

  void fire(Event& ev);

  TimeMs now_ = 0;
  uint64_t seq_ = 0;
  uint64_t uid_ = 0;
  bool stop_requested_ = false;
  Rng rng_;
  std::priority_queue<Event, std::vector<Event>, EventAfter> queue_;
  std::vector<Process> processes_;
  std::vector<Link> links_;
  std::function<void(const std::string&)> trace_sink_;
};

}  // namespace tailcopy::sim
