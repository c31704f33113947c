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

#include <deque>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "tailcopy/hop/transport.hpp"

namespace tailcopy::hop {

struct SchedulerConfig {
  OpConfig op;                           // template for spawned ops
  sim::TimeMs scan_ms = 50;              // liveness scan / admission pump
  sim::TimeMs reschedule_delay_ms = 50;  // failure -> replacement start
  sim::TimeMs balance_ms = 1000;
  double imbalance_factor = 1.5;  // shed above mean * factor
  int max_sheds_per_balance = 2;
  int admissions_per_scan = 4;  // throttles mass-failure storms
  sim::TimeMs announce_ms = 1000;
  sim::TimeMs heartbeat_ms = 100;
};

/// Cluster-local stream scheduler. Keeps one (durable op, cache op) pair
/// per announced file on the cluster's inbound hop, assigns them to the
/// least-loaded live workers, replaces failed instances, sheds load off
/// hot workers, and forwards file announcements down the copy tree.
///
/// All state is volatile: killing the scheduler process drops it, and the
/// ops it spawned keep running as orphans (their own events keep them
/// alive) until a restarted scheduler's replacements duel them out.
class Scheduler {
 public:
  struct Env {
    ClusterRuntime self;
    // Inbound hop; absent on the copy tree's source cluster.
    bool has_upstream = false;
    ClusterRuntime up;
    sim::Sim::LinkId up_link;  // data direction: upstream -> here
    std::vector<sim::Pid>* up_readers = nullptr;  // pool in the upstream
    std::vector<sim::Pid>* writers = nullptr;     // pool in this cluster
    struct Child {
      Scheduler* sched = nullptr;
      sim::Sim::LinkId link;  // control: here -> child
    };
    std::vector<Child> children;
    /// Upstream lengths as observed from a given reader process.
    std::function<file::FileMeta(sim::Pid, const std::string&)> up_lengths;
  };

  Scheduler(sim::Sim& sim, std::string name, SchedulerConfig cfg, Env env);

  void start();
  sim::Pid pid() const { return pid_; }
  bool alive() const { return sim_.alive(pid_); }
  /// Crash: state is lost, spawned ops run on as orphans.
  void kill();
  /// Fresh incarnation with empty state; announcements repopulate it.
  void restart();

  /// Producer notification / parent announcement (idempotent).
  void notify_produced(const std::string& path);

  /// Wires in a downstream cluster that attached after start (mid-run tree
  /// growth). Known files reach it on the next announce tick.
  void add_child(Env::Child child) { env_.children.push_back(child); }

  /// Deliberately start a second instance for one stream (fault hook for
  /// weakly consistent scheduler views); it duels the incumbent.
  void force_duplicate_assignment(const std::string& path, bool cache_op);

  /// Inbound relays trickle while this cluster is a rate-limited leaf.
  void set_rate_limited(bool v);
  /// True when every durable relay reported < one chunk of lag.
  bool all_caught_up() const;

  // --- introspection (tests / autoscaler) ------------------------------
  std::shared_ptr<StreamOp> op_for(const std::string& path, bool cache_op);
  int live_op_count() const;
  int load_of(sim::Pid writer) const;
  const std::set<std::string>& files() const { return files_; }

  struct Stats {
    int64_t assigns = 0;
    int64_t reschedules = 0;
    int64_t sheds = 0;
    int64_t announces = 0;
    int64_t duplicates = 0;
  };
  const Stats& stats() const { return stats_; }

 private:
  struct SlotKey {
    std::string path;
    bool cache_op = false;
    auto operator<=>(const SlotKey&) const = default;
  };
  struct Slot {
    std::shared_ptr<StreamOp> op;
    int epoch = 0;  // bumped per replacement
    bool caught_up = false;
    sim::TimeMs assigned_at = 0;
  };
  struct Pending {
    SlotKey key;
    const char* reason = "start";
  };

  void arm_timers();
  void scan_tick();
  void balance_tick();
  void heartbeat_tick();
  void announce_tick();
  void send_announce(const Env::Child& child, const std::string& path);
  void enqueue(SlotKey key, const char* reason, bool front);
  void pump();
  void start_instance(const SlotKey& key, const char* reason);
  sim::Pid pick_least_loaded(const std::vector<sim::Pid>& pool,
                             sim::Pid exclude) const;
  std::shared_ptr<StreamOp> make_op(const SlotKey& key, sim::Pid reader,
                                    sim::Pid writer, bool duplicate);

  sim::Sim& sim_;
  std::string name_;
  SchedulerConfig cfg_;
  Env env_;
  sim::Pid pid_;
  bool rate_limited_ = false;
  std::set<std::string> files_;
  std::map<SlotKey, Slot> slots_;
  std::vector<std::shared_ptr<StreamOp>> duplicates_;
  std::deque<Pending> queue_;
  int budget_ = 0;  // admissions left in the current scan window
  Stats stats_;
};

}  // namespace tailcopy::hop
