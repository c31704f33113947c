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
#include "tailcopy/cache/instance.hpp"

#include <algorithm>
#include <cassert>

namespace tailcopy::cache {

Instance::Instance(sim::Sim& sim, std::string name, Config cfg)
    : sim_(sim), name_(std::move(name)), cfg_(cfg) {
  assert(cfg_.read_quorum >= 1 && cfg_.read_quorum <= cfg_.replicas_per_key);
  replicas_.reserve(cfg_.n_replicas);
  for (int i = 0; i < cfg_.n_replicas; i++) {
    Replica r;
    r.pid = sim_.spawn_process(name_ + "/r" + std::to_string(i));
    replicas_.push_back(std::move(r));
    members_.push_back(i);
    arm_gc(i);
  }
  ring_ = build_ring(members_);
}

// --- ring --------------------------------------------------------------

std::vector<Instance::RingPoint> Instance::build_ring(
    const std::vector<int>& members) const {
  std::vector<RingPoint> ring;
  ring.reserve(members.size() * cfg_.vnodes);
  for (int m : members) {
    uint64_t h = common::fnv1a64_u64(static_cast<uint64_t>(m));
    for (int v = 0; v < cfg_.vnodes; v++) {
      ring.push_back({common::fnv1a64_u64(static_cast<uint64_t>(v), h), m});
    }
  }
  std::sort(ring.begin(), ring.end());
  return ring;
}

std::vector<int> Instance::owners_on(const std::vector<RingPoint>& ring,
                                     uint64_t digest) const {
  std::vector<int> owners;
  if (ring.empty()) return owners;
  size_t start = std::lower_bound(ring.begin(), ring.end(),
                                  RingPoint{digest, -1}) -
                 ring.begin();
  for (size_t i = 0; i < ring.size(); i++) {
    int m = ring[(start + i) % ring.size()].replica;
    if (std::find(owners.begin(), owners.end(), m) == owners.end()) {
      owners.push_back(m);
      if (static_cast<int>(owners.size()) == cfg_.replicas_per_key) break;
    }
  }
  return owners;
}

std::vector<int> Instance::owners_of(Key key) const {
  return owners_on(ring_, key.digest);
}

namespace {
bool same_set(std::vector<int> a, std::vector<int> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}
}  // namespace

// --- replica-local storage ---------------------------------------------

bool Instance::apply_put(Replica& r, Key key, const Value& v) {
  auto it = r.store.find(key.digest);
  if (it != r.store.end()) {
    // Strictly newer versions only; a late write from a superseded writer
    // must not roll the key back.
    if (v.version <= it->second.version) return false;
    r.occupied -= static_cast<int64_t>(it->second.bytes.size());
    it->second = v;
    r.occupied += static_cast<int64_t>(v.bytes.size());
    return true;
  }
  r.occupied += static_cast<int64_t>(v.bytes.size());
  r.store.emplace(key.digest, v);
  return true;
}

void Instance::drop_key(Replica& r, uint64_t digest) {
  auto it = r.store.find(digest);
  if (it == r.store.end()) return;
  r.occupied -= static_cast<int64_t>(it->second.bytes.size());
  r.store.erase(it);
}

Instance::ReadReply Instance::local_read(Replica& r, Key key) {
  ReadReply reply;
  reply.ok = true;
  auto it = r.store.find(key.digest);
  if (it == r.store.end() || expired(it->second)) return reply;  // miss
  reply.found = true;
  reply.value = it->second;
  return reply;
}

bool Instance::charge(Replica& r, int64_t qps, int64_t bytes) {
  // Offered load is counted whether or not the budget admits the request:
  // a pegged replica must still look overloaded to the autoscaler.
  r.offered_reqs += qps;
  r.offered_bytes += bytes;
  sim::TimeMs start = sim_.now() - sim_.now() % 1000;
  if (start != r.window_start) {
    r.window_start = start;
    r.window_qps = 0;
    r.window_bps = 0;
  }
  if (cfg_.max_qps > 0 && r.window_qps + qps > cfg_.max_qps) return false;
  if (cfg_.max_bps > 0 && r.window_bps + bytes > cfg_.max_bps) return false;
  r.window_qps += qps;
  r.window_bps += bytes;
  return true;
}

void Instance::reply(sim::Pid client, sim::TimeMs delay, sim::Sim::EventFn fn) {
  if (client.assigned()) {
    sim_.schedule_on(client, delay, std::move(fn));
  } else {
    sim_.schedule(delay, std::move(fn));
  }
}

// --- put ----------------------------------------------------------------

void Instance::put(Key key, std::string bytes, uint64_t version,
                   sim::Pid client, std::function<void(int, int)> cb) {
  stats_.puts++;
  if (migrating_ && !same_set(owners_on(old_ring_, key.digest),
                              owners_on(ring_, key.digest))) {
    stats_.put_zero_ack++;
    reply(client, 0, [cb = std::move(cb)] { cb(0, 0); });
    return;
  }

  struct PutCtx {
    int expected = 0;
    int responded = 0;
    int acked = 0;
    int applied = 0;
    bool done = false;
  };
  auto ctx = std::make_shared<PutCtx>();
  auto shared_cb =
      std::make_shared<std::function<void(int, int)>>(std::move(cb));
  auto finish = [this, ctx, shared_cb] {
    if (ctx->done) return;
    ctx->done = true;
    stats_.put_acks += ctx->acked;
    if (ctx->acked == 0) stats_.put_zero_ack++;
    (*shared_cb)(ctx->acked, ctx->applied);
  };
  auto respond = [ctx, finish](bool ack, bool applied) {
    if (ctx->done) return;
    ctx->responded++;
    if (ack) ctx->acked++;
    if (applied) ctx->applied++;
    if (ctx->responded == ctx->expected) finish();
  };

  std::vector<int> owners = owners_on(ring_, key.digest);
  ctx->expected = static_cast<int>(owners.size());
  for (int idx : owners) {
    Replica& r = replicas_[idx];
    if (!sim_.alive(r.pid)) {
      reply(client, 0, [respond] { respond(false, false); });
      continue;
    }
    sim_.schedule_on(
        r.pid, cfg_.rpc_write_ms,
        [this, idx, key, bytes, version, client, respond] {
          Replica& rep = replicas_[idx];
          if (!charge(rep, 1, static_cast<int64_t>(bytes.size()))) {
            stats_.rejects++;
            reply(client, cfg_.overload_delay_ms,
                  [respond] { respond(false, false); });
            return;
          }
          bool applied = apply_put(rep, key, Value{bytes, version, sim_.now()});
          reply(client, 0, [respond, applied] { respond(true, applied); });
        });
  }
  reply(client, cfg_.op_deadline_ms, finish);
}

// --- relaxed read -------------------------------------------------------

int Instance::get_relaxed(Key key, sim::Pid client,
                          std::function<void(GetResult)> cb,
                          int exclude_replica) {
  stats_.relaxed_gets++;
  auto fail = [this, client, &cb] {
    stats_.errors++;
    reply(client, 0, [cb = std::move(cb)] { cb(GetResult{}); });
  };
  if (migrating_ && !same_set(owners_on(old_ring_, key.digest),
                              owners_on(ring_, key.digest))) {
    fail();
    return -1;
  }
  std::vector<int> owners = owners_on(ring_, key.digest);
  std::vector<int> live;
  for (int idx : owners) {
    if (idx != exclude_replica && sim_.alive(replicas_[idx].pid)) {
      live.push_back(idx);
    }
  }
  if (live.empty()) {
    // Fall back to the excluded replica rather than giving up outright.
    for (int idx : owners) {
      if (sim_.alive(replicas_[idx].pid)) live.push_back(idx);
    }
  }
  if (live.empty()) {
    fail();
    return -1;
  }
  int idx = live[sim_.rng().pick(live.size())];
  sim_.schedule_on(
      replicas_[idx].pid, cfg_.rpc_read_ms,
      [this, idx, key, client, cb = std::move(cb)] {
        Replica& rep = replicas_[idx];
        ReadReply local = local_read(rep, key);
        int64_t sz =
            local.found ? static_cast<int64_t>(local.value.bytes.size()) : 0;
        if (!charge(rep, 1, sz)) {
          stats_.rejects++;
          stats_.errors++;
          reply(client, cfg_.overload_delay_ms,
                [cb = std::move(cb)] { cb(GetResult{}); });
          return;
        }
        GetResult res;
        res.replica = idx;
        if (local.found) {
          res.status = Status::kHit;
          res.value = std::move(local.value);
          stats_.hits++;
        } else {
          res.status = Status::kMiss;
          stats_.misses++;
        }
        reply(client, 0,
              [cb = std::move(cb), res = std::move(res)]() mutable {
                cb(std::move(res));
              });
      });
  return idx;
}

// --- consistent reads ---------------------------------------------------

void Instance::get_consistent(Key key, sim::Pid client,
                              std::function<void(GetResult)> cb) {
  run_consistent({key}, client,
                 [cb = std::move(cb)](std::vector<GetResult> rs) {
                   cb(std::move(rs[0]));
                 });
}

void Instance::bulk_get_consistent(std::vector<Key> keys, sim::Pid client,
                                   std::function<void(std::vector<GetResult>)> cb) {
  assert(!keys.empty());
  run_consistent(std::move(keys), client, std::move(cb));
}

void Instance::run_consistent(std::vector<Key> keys, sim::Pid client,
                              std::function<void(std::vector<GetResult>)> cb) {
  const size_t n = keys.size();
  stats_.consistent_gets += static_cast<int64_t>(n);

  struct KeyState {
    bool resolved = false;
    int successes = 0;
    int responded = 0;
    bool found = false;
    Value best;
  };
  struct Ctx {
    std::vector<GetResult> results;
    std::vector<KeyState> state;
    std::vector<int> expected;  // per key: replies it will ever see
    size_t unresolved = 0;
    bool done = false;
  };
  auto ctx = std::make_shared<Ctx>();
  ctx->results.resize(n);
  ctx->state.resize(n);
  ctx->expected.assign(n, 0);
  ctx->unresolved = n;

  auto shared_cb =
      std::make_shared<std::function<void(std::vector<GetResult>)>>(
          std::move(cb));
  auto finish = [this, ctx, shared_cb] {
    if (ctx->done) return;
    ctx->done = true;
    for (size_t i = 0; i < ctx->state.size(); i++) {
      if (!ctx->state[i].resolved) {
        ctx->results[i] = GetResult{};  // quorum never met
        stats_.errors++;
      }
    }
    (*shared_cb)(std::move(ctx->results));
  };
  auto resolve = [this, ctx, finish](size_t i, GetResult r) {
    if (ctx->done || ctx->state[i].resolved) return;
    ctx->state[i].resolved = true;
    if (r.status == Status::kHit) stats_.hits++;
    else if (r.status == Status::kMiss) stats_.misses++;
    else stats_.errors++;
    ctx->results[i] = std::move(r);
    if (--ctx->unresolved == 0) finish();
  };
  // One reply from one replica for key position i.
  auto on_reply = [this, ctx, resolve](size_t i, ReadReply rep) {
    if (ctx->done) return;
    KeyState& st = ctx->state[i];
    st.responded++;
    if (!st.resolved && rep.ok) {
      st.successes++;
      if (rep.found &&
          (!st.found || rep.value.version > st.best.version)) {
        st.found = true;
        st.best = std::move(rep.value);
      }
      if (st.successes >= cfg_.read_quorum) {
        GetResult r;
        r.status = st.found ? Status::kHit : Status::kMiss;
        if (st.found) r.value = st.best;
        resolve(i, std::move(r));
      }
    }
    if (!st.resolved && st.responded == ctx->expected[i]) {
      resolve(i, GetResult{});  // everyone answered; quorum unreachable
    }
  };

  // Group key positions by replica so each replica sees one batched RPC.
  std::map<int, std::vector<size_t>> by_replica;
  for (size_t i = 0; i < n; i++) {
    if (migrating_ && !same_set(owners_on(old_ring_, keys[i].digest),
                                owners_on(ring_, keys[i].digest))) {
      resolve(i, GetResult{});
      continue;
    }
    for (int idx : owners_on(ring_, keys[i].digest)) {
      by_replica[idx].push_back(i);
      ctx->expected[i]++;
    }
  }
  if (ctx->done) return;
  if (by_replica.empty()) {  // every key was migrating
    finish();
    return;
  }

  for (auto& [idx, positions] : by_replica) {
    Replica& r = replicas_[idx];
    if (!sim_.alive(r.pid)) {
      reply(client, 0, [on_reply, positions] {
        for (size_t i : positions) on_reply(i, ReadReply{});
      });
      continue;
    }
    sim_.schedule_on(
        r.pid, cfg_.rpc_read_ms,
        [this, idx, keys, positions, client, on_reply] {
          Replica& rep = replicas_[idx];
          std::vector<ReadReply> replies;
          replies.reserve(positions.size());
          int64_t bytes = 0;
          for (size_t i : positions) {
            ReadReply one = local_read(rep, keys[i]);
            if (one.found) bytes += static_cast<int64_t>(one.value.bytes.size());
            replies.push_back(std::move(one));
          }
          if (!charge(rep, static_cast<int64_t>(positions.size()), bytes)) {
            stats_.rejects++;
            reply(client, cfg_.overload_delay_ms, [on_reply, positions] {
              for (size_t i : positions) on_reply(i, ReadReply{});
            });
            return;
          }
          reply(client, 0,
                [on_reply, positions, replies = std::move(replies)]() mutable {
                  for (size_t k = 0; k < positions.size(); k++) {
                    on_reply(positions[k], std::move(replies[k]));
                  }
                });
        });
  }
  reply(client, cfg_.op_deadline_ms, finish);
}

// --- locks --------------------------------------------------------------

void Instance::lock_acquire(Key key, LockSig sig, sim::Pid client,
                            std::function<void(LockReply)> cb) {
  get_consistent(key, client, [this, key, sig, client,
                               cb = std::move(cb)](GetResult g) mutable {
    if (g.status == Status::kError) {
      cb(LockReply{LockReply::Status::kUnavailable, {}});
      return;
    }
    if (g.status == Status::kHit) {
      LockRecord rec = decode_lock(g.value.bytes);
      if (!rec.released) {
        if (rec.sig == sig && !rec.poisoned) {
          cb(LockReply{LockReply::Status::kAcquired, rec});
          return;
        }
        // Held by someone else, or our own lock already poisoned: a
        // poisoned lock must never look like a clean acquisition.
        cb(LockReply{LockReply::Status::kHeld, rec});
        return;
      }
    }
    uint64_t version = (g.status == Status::kHit ? g.value.version : 0) + 1;
    LockRecord fresh{sig, false, false, sim_.now()};
    put(key, encode_lock(fresh), version, client,
        [cb = std::move(cb), fresh](int acked, int) {
          if (acked > 0) {
            cb(LockReply{LockReply::Status::kAcquired, fresh});
          } else {
            cb(LockReply{LockReply::Status::kUnavailable, {}});
          }
        });
  });
}

void Instance::lock_release(Key key, LockSig sig, sim::Pid client,
                            std::function<void(bool)> cb) {
  get_consistent(key, client, [this, key, sig, client,
                               cb = std::move(cb)](GetResult g) mutable {
    if (g.status != Status::kHit) {
      cb(false);
      return;
    }
    LockRecord rec = decode_lock(g.value.bytes);
    if (rec.sig != sig || rec.released) {
      cb(false);
      return;
    }
    rec.released = true;
    put(key, encode_lock(rec), g.value.version + 1, client,
        [cb = std::move(cb)](int acked, int) { cb(acked > 0); });
  });
}

void Instance::lock_poison(Key key, sim::Pid client,
                           std::function<void(bool)> cb) {
  get_consistent(key, client, [this, key, client,
                               cb = std::move(cb)](GetResult g) mutable {
    if (g.status != Status::kHit) {
      cb(false);  // nothing to poison
      return;
    }
    LockRecord rec = decode_lock(g.value.bytes);
    if (rec.released) {
      cb(false);
      return;
    }
    if (rec.poisoned) {
      cb(true);
      return;
    }
    rec.poisoned = true;
    put(key, encode_lock(rec), g.value.version + 1, client,
        [cb = std::move(cb)](int acked, int) { cb(acked > 0); });
  });
}

void Instance::lock_seize(Key key, LockSig sig, sim::Pid client,
                          std::function<void(LockReply)> cb) {
  get_consistent(key, client, [this, key, sig, client,
                               cb = std::move(cb)](GetResult g) mutable {
    if (g.status == Status::kError) {
      cb(LockReply{LockReply::Status::kUnavailable, {}});
      return;
    }
    uint64_t version = (g.status == Status::kHit ? g.value.version : 0) + 1;
    LockRecord fresh{sig, false, false, sim_.now()};
    put(key, encode_lock(fresh), version, client,
        [cb = std::move(cb), fresh](int acked, int) {
          if (acked > 0) {
            cb(LockReply{LockReply::Status::kAcquired, fresh});
          } else {
            cb(LockReply{LockReply::Status::kUnavailable, {}});
          }
        });
  });
}

void Instance::lock_check(Key key, LockSig sig, sim::Pid client,
                          std::function<void(CheckReply)> cb) {
  get_consistent(key, client, [sig, cb = std::move(cb)](GetResult g) mutable {
    CheckReply r;
    if (g.status == Status::kError) {
      cb(r);
      return;
    }
    r.ok = true;
    if (g.status == Status::kHit) {
      LockRecord rec = decode_lock(g.value.bytes);
      r.owner = rec.sig == sig && !rec.released;
      r.poisoned = rec.poisoned;
    }
    cb(r);
  });
}

// --- GC -----------------------------------------------------------------

void Instance::arm_gc(int idx) {
  sim_.schedule_on(replicas_[idx].pid, cfg_.gc_tick_ms,
                   [this, idx] { gc_tick(idx); });
}

void Instance::gc_tick(int idx) {
  Replica& r = replicas_[idx];
  for (auto it = r.store.begin(); it != r.store.end();) {
    if (expired(it->second)) {
      r.occupied -= static_cast<int64_t>(it->second.bytes.size());
      it = r.store.erase(it);
      stats_.ttl_evictions++;
    } else {
      ++it;
    }
  }
  const int64_t threshold = static_cast<int64_t>(
      cfg_.gc_start_fraction * static_cast<double>(cfg_.capacity_bytes));
  if (r.occupied > threshold) {
    // Ascending written_at; digest breaks ties so order is total.
    std::vector<std::pair<sim::TimeMs, uint64_t>> order;
    order.reserve(r.store.size());
    for (const auto& [digest, v] : r.store) {
      order.emplace_back(v.written_at, digest);
    }
    std::sort(order.begin(), order.end());
    for (const auto& [at, digest] : order) {
      if (r.occupied <= threshold) break;
      drop_key(r, digest);
      stats_.capacity_evictions++;
    }
  }
  arm_gc(idx);
}

// --- admin --------------------------------------------------------------

int Instance::spawn_replica() {
  int idx = static_cast<int>(replicas_.size());
  Replica r;
  r.pid = sim_.spawn_process(name_ + "/r" + std::to_string(idx));
  replicas_.push_back(std::move(r));
  members_.push_back(idx);
  arm_gc(idx);
  begin_migration();
  return idx;
}

void Instance::remove_replica(int idx) {
  auto it = std::find(members_.begin(), members_.end(), idx);
  if (it == members_.end()) return;
  members_.erase(it);
  begin_migration();
}

void Instance::kill_replica(int idx) {
  Replica& r = replicas_[idx];
  sim_.kill_process(r.pid);
  r.store.clear();  // volatile: contents die with the process
  r.occupied = 0;
}

void Instance::restart_replica(int idx) {
  Replica& r = replicas_[idx];
  r.pid = sim_.restart_process(r.pid);
  r.store.clear();
  r.occupied = 0;
  r.window_start = 0;
  r.window_qps = 0;
  r.window_bps = 0;
  arm_gc(idx);
}

bool Instance::replica_alive(int idx) const {
  return sim_.alive(replicas_[idx].pid);
}

int64_t Instance::occupancy(int idx) const { return replicas_[idx].occupied; }

std::optional<Value> Instance::peek(int idx, Key key) const {
  const Replica& r = replicas_[idx];
  auto it = r.store.find(key.digest);
  if (it == r.store.end()) return std::nullopt;
  return it->second;
}

void Instance::poke(int idx, Key key, Value v) {
  Replica& r = replicas_[idx];
  drop_key(r, key.digest);
  r.occupied += static_cast<int64_t>(v.bytes.size());
  r.store.emplace(key.digest, std::move(v));
}

void Instance::begin_migration() {
  if (migrating_) finish_migration();  // collapse back-to-back reshards
  old_ring_ = ring_;
  ring_ = build_ring(members_);
  migrating_ = true;
  int64_t gen = ++migration_gen_;
  sim_.trace("cache", name_ + " reshard begin members=" +
                          std::to_string(members_.size()));
  sim_.schedule(cfg_.migration_ms, [this, gen] {
    if (gen == migration_gen_ && migrating_) finish_migration();
  });
}

void Instance::finish_migration() {
  migrating_ = false;
  // Move every key to its new owner set: best surviving copy wins, write
  // times are preserved so migration does not refresh TTLs.
  std::map<uint64_t, Value> best;
  for (Replica& r : replicas_) {
    for (const auto& [digest, v] : r.store) {
      auto it = best.find(digest);
      if (it == best.end() || v.version > it->second.version) {
        best[digest] = v;
      }
    }
  }
  for (const auto& [digest, v] : best) {
    std::vector<int> owners = owners_on(ring_, digest);
    for (size_t i = 0; i < replicas_.size(); i++) {
      Replica& r = replicas_[i];
      bool is_owner =
          std::find(owners.begin(), owners.end(), static_cast<int>(i)) !=
          owners.end();
      auto it = r.store.find(digest);
      if (!is_owner) {
        if (it != r.store.end()) drop_key(r, digest);
        continue;
      }
      if (!sim_.alive(r.pid)) continue;
      if (it == r.store.end() || it->second.version < v.version) {
        if (it != r.store.end()) drop_key(r, digest);
        r.occupied += static_cast<int64_t>(v.bytes.size());
        r.store.emplace(digest, v);
        stats_.migrated_keys++;
      }
    }
  }
  sim_.trace("cache", name_ + " reshard done moved=" +
                          std::to_string(stats_.migrated_keys));
}

}  // namespace tailcopy::cache
