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
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tailcopy/cache/types.hpp"
#include "tailcopy/sim/sim.hpp"

namespace tailcopy::cache {

/// One replicated in-memory cache (a cluster runs two: data and metadata).
///
/// Each replica is a simulated process holding volatile storage. Keys map
/// to a triple of replicas by consistent hashing; writes go to all three,
/// consistent reads need two, relaxed reads ask one. Replicas throttle by
/// request count and bytes per fixed one-second window; over-budget
/// requests are held for one poll interval and then rejected, which is what
/// back-pressure looks like to clients. TTL and capacity GC evict by write
/// time (least-recently-modified), never by read time.
class Instance {
 public:
  struct Config {
    int n_replicas = 3;       // initial replica processes
    int replicas_per_key = 3;
    int read_quorum = 2;
    int vnodes = 16;          // ring points per replica
    int64_t capacity_bytes = 64ll << 20;  // per replica
    double gc_start_fraction = 0.80;
    sim::TimeMs ttl_ms = 60'000;
    sim::TimeMs gc_tick_ms = 500;
    int64_t max_qps = 0;  // per replica per 1 s window; 0 = unlimited
    int64_t max_bps = 0;
    sim::TimeMs rpc_read_ms = 0;   // same-cluster round trip, ms floor
    sim::TimeMs rpc_write_ms = 1;
    sim::TimeMs overload_delay_ms = 50;
    sim::TimeMs op_deadline_ms = 100;  // put / consistent-get completion
    sim::TimeMs migration_ms = 2000;   // reshard unavailability window
  };

  enum class Status {
    kHit,         // value returned
    kMiss,        // authoritative: responding replicas had no value
    kError,       // rejected, dead, migrating, or quorum not reached
  };

  struct GetResult {
    Status status = Status::kError;
    Value value;    // valid when kHit
    int replica = -1;  // serving replica (relaxed reads)
  };

  struct LockReply {
    enum class Status { kAcquired, kHeld, kUnavailable } status =
        Status::kUnavailable;
    LockRecord current;  // valid when kHeld
  };

  struct CheckReply {
    bool ok = false;  // false: cache unavailable, nothing learned
    bool owner = false;
    bool poisoned = false;
  };

  Instance(sim::Sim& sim, std::string name, Config cfg);

  Instance(const Instance&) = delete;
  Instance& operator=(const Instance&) = delete;

  // --- data plane -----------------------------------------------------

  /// Writes to all replicas of the key; cb fires once every replica
  /// answered or the deadline passed. A replica applies the value only if
  /// `version` beats its stored version, but acks either way; `applied`
  /// tells read-modify-write callers their version lost a race.
  void put(Key key, std::string bytes, uint64_t version, sim::Pid client,
           std::function<void(int acked, int applied)> cb);

  /// One-replica read, served by a seeded-random live owner of the key
  /// (skipping `exclude_replica`, which a hedged retry sets to the replica
  /// already asked). May return a stale value. kError fires immediately
  /// when no eligible replica is live; a replica killed mid-flight answers
  /// never — callers hedge on their own timer. Returns the replica chosen
  /// (-1 if none), so the hedge knows whom to avoid.
  int get_relaxed(Key key, sim::Pid client,
                  std::function<void(GetResult)> cb,
                  int exclude_replica = -1);

  /// Quorum read: highest version among the first read_quorum successful
  /// responders. kError if the quorum cannot be met by the deadline.
  void get_consistent(Key key, sim::Pid client,
                      std::function<void(GetResult)> cb);

  /// Batched consistent reads: one RPC per replica touched, per-key quorum
  /// aggregation, one result per input key (order preserved).
  void bulk_get_consistent(std::vector<Key> keys, sim::Pid client,
                           std::function<void(std::vector<GetResult>)> cb);

  // --- locks (metadata instance) --------------------------------------
  // Locks are plain replicated records; every verb is read-modify-write
  // and versions as current+1 (unlike data versions, which carry the
  // writer's epoch: a lock key is shared by many writers, and a late
  // release by an old owner must still supersede a newer op's poison).
  // Verbs are deliberately racy: two winners are possible and tolerated,
  // locks only reduce duplicate work, they are not a correctness fence.

  void lock_acquire(Key key, LockSig sig, sim::Pid client,
                    std::function<void(LockReply)> cb);
  void lock_release(Key key, LockSig sig, sim::Pid client,
                    std::function<void(bool released)> cb);
  void lock_poison(Key key, sim::Pid client,
                   std::function<void(bool poisoned)> cb);
  void lock_seize(Key key, LockSig sig, sim::Pid client,
                  std::function<void(LockReply)> cb);
  void lock_check(Key key, LockSig sig, sim::Pid client,
                  std::function<void(CheckReply)> cb);

  // --- admin (harness hooks) ------------------------------------------

  int spawn_replica();        // joins the ring; starts a migration window
  void remove_replica(int idx);  // leaves the ring; starts a migration
  void kill_replica(int idx);
  void restart_replica(int idx);  // fresh incarnation, empty storage
  bool replica_alive(int idx) const;
  int replica_count() const { return static_cast<int>(replicas_.size()); }
  int64_t occupancy(int idx) const;
  std::vector<int> owners_of(Key key) const;
  bool migrating() const { return migrating_; }

  /// Cumulative requests/bytes offered to one replica (admitted or not).
  /// Load probes take deltas of these between their own ticks.
  struct OfferedLoad {
    int64_t reqs = 0;
    int64_t bytes = 0;
  };
  OfferedLoad offered(int idx) const {
    return {replicas_[idx].offered_reqs, replicas_[idx].offered_bytes};
  }

  /// Direct storage peek, bypassing the RPC model. Tests and invariant
  /// checks only.
  std::optional<Value> peek(int idx, Key key) const;
  /// Direct storage write on one replica. Tests only.
  void poke(int idx, Key key, Value v);

  struct Stats {
    int64_t puts = 0;
    int64_t put_acks = 0;
    int64_t put_zero_ack = 0;
    int64_t relaxed_gets = 0;
    int64_t consistent_gets = 0;  // scalar + per key of bulk
    int64_t hits = 0;
    int64_t misses = 0;
    int64_t errors = 0;
    int64_t rejects = 0;          // replica-side over-budget rejections
    int64_t ttl_evictions = 0;
    int64_t capacity_evictions = 0;
    int64_t migrated_keys = 0;
  };
  const Stats& stats() const { return stats_; }
  const Config& config() const { return cfg_; }
  const std::string& name() const { return name_; }

 private:
  struct Replica {
    sim::Pid pid;
    std::map<uint64_t, Value> store;  // digest -> value, ordered
    int64_t occupied = 0;
    sim::TimeMs window_start = 0;
    int64_t window_qps = 0;
    int64_t window_bps = 0;
    int64_t offered_reqs = 0;
    int64_t offered_bytes = 0;
  };

  struct RingPoint {
    uint64_t point;
    int replica;
    bool operator<(const RingPoint& o) const {
      return point != o.point ? point < o.point : replica < o.replica;
    }
  };

  // Per-replica response to one key's read: ok=false means the request
  // was rejected or the replica was dead.
  struct ReadReply {
    bool ok = false;
    bool found = false;
    Value value;
  };

  void arm_gc(int idx);
  void gc_tick(int idx);
  bool expired(const Value& v) const {
    return cfg_.ttl_ms > 0 && v.written_at + cfg_.ttl_ms <= sim_.now();
  }
  bool apply_put(Replica& r, Key key, const Value& v);
  void drop_key(Replica& r, uint64_t digest);

  /// Charges one request of `qps` calls / `bytes` payload to the replica's
  /// current window. False = over budget (caller must reject).
  bool charge(Replica& r, int64_t qps, int64_t bytes);

  std::vector<RingPoint> build_ring(const std::vector<int>& members) const;
  std::vector<int> owners_on(const std::vector<RingPoint>& ring,
                             uint64_t digest) const;
  void begin_migration();
  void finish_migration();

  void reply(sim::Pid client, sim::TimeMs delay, sim::Sim::EventFn fn);
  ReadReply local_read(Replica& r, Key key);

  // Shared quorum machinery for scalar and bulk consistent reads.
  void run_consistent(std::vector<Key> keys, sim::Pid client,
                      std::function<void(std::vector<GetResult>)> cb);

  sim::Sim& sim_;
  std::string name_;
  Config cfg_;
  std::vector<Replica> replicas_;
  std::vector<int> members_;  // replica indices currently in the ring
  std::vector<RingPoint> ring_;
  std::vector<RingPoint> old_ring_;  // valid while migrating_
  bool migrating_ = false;
  int64_t migration_gen_ = 0;
  Stats stats_;
};

}  // namespace tailcopy::cache
