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
#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "doctest.h"
#include "tailcopy/hop/scheduler.hpp"

using namespace tailcopy;
using cache::Instance;
using file::FileMeta;
using hop::OpState;
using hop::Scheduler;
using hop::SchedulerConfig;
using log::DurableLog;
using sim::Pid;
using sim::Sim;
using sim::TimeMs;

namespace {

std::string pattern(int64_t at, int64_t len) {
  std::string s;
  s.reserve(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; i++) {
    uint64_t p = static_cast<uint64_t>(at + i);
    s.push_back(static_cast<char>('a' + (p * 1315423911ull) % 26));
  }
  return s;
}

std::optional<cache::Value> peek_any(const Instance& c, cache::Key key) {
  for (int idx : c.owners_of(key)) {
    if (auto v = c.peek(idx, key)) return v;
  }
  return std::nullopt;
}

FileMeta read_meta(const Instance& m, const std::string& path) {
  auto v = peek_any(m, cache::meta_key(path));
  if (!v || v->bytes.size() != file::kFileMetaSize) return {};
  return file::decode_file_meta(v->bytes);
}

struct TestCluster {
  std::unique_ptr<Instance> data, meta;
  std::unique_ptr<DurableLog> durable;
  hop::ClusterRuntime rt;
  std::vector<Pid> readers;  // serve downstream hops
  std::vector<Pid> writers;  // serve the inbound hop
};

TestCluster make_cluster(Sim& sim, int id, const std::string& name,
                         int n_readers, int n_writers) {
  TestCluster c;
  c.data = std::make_unique<Instance>(sim, name + "-data",
                                      Instance::Config{});
  c.meta = std::make_unique<Instance>(sim, name + "-meta",
                                      Instance::Config{});
  c.durable = std::make_unique<DurableLog>(sim);
  c.rt = hop::ClusterRuntime{id, c.data.get(), c.meta.get(),
                             c.durable.get()};
  for (int i = 0; i < n_readers; i++) {
    c.readers.push_back(sim.spawn_process(name + "-r" + std::to_string(i)));
  }
  for (int i = 0; i < n_writers; i++) {
    c.writers.push_back(sim.spawn_process(name + "-w" + std::to_string(i)));
  }
  return c;
}

/// Reader-side length view of a cluster: its published metadata record
/// merged with a direct durable length poll (like the metadata poller).
std::function<FileMeta(Pid, const std::string&)> length_fn(TestCluster& c) {
  return [&c](Pid, const std::string& path) {
    FileMeta m = read_meta(*c.meta, path);
    m.durable_len = std::max(m.durable_len, c.durable->poll_length(path));
    return m;
  };
}

/// Producer living on the tree's source cluster: appends to the durable
/// log, shadow-writes chunks, publishes the metadata record.
struct Producer {
  Sim& sim;
  TestCluster& src;
  std::string path;
  std::string produced;
  DurableLog::Handle handle;
  Pid pid;
  uint64_t meta_version = 0;
  std::unique_ptr<cache::VersionSource> versions;
  std::unique_ptr<file::ChunkAssembler> assembler;

  Producer(Sim& s, TestCluster& c, std::string p)
      : sim(s), src(c), path(std::move(p)) {
    handle = src.durable->open_writer_now(path);
    pid = sim.spawn_process("producer:" + path);
    versions = std::make_unique<cache::VersionSource>(sim.next_uid());
    assembler = std::make_unique<file::ChunkAssembler>(
        sim, *src.data, path, file::ChunkAssembler::Config{}, *versions, pid,
        0, [this](int64_t frontier) { publish(frontier); });
  }

  void publish(int64_t cache_len) {
    std::string bytes = file::encode_file_meta(
        {cache_len, static_cast<int64_t>(produced.size())});
    cache::Key key = cache::meta_key(path);
    for (int idx : src.meta->owners_of(key)) {
      src.meta->poke(idx, key, {bytes, ++meta_version, sim.now()});
    }
  }

  void produce(int64_t n) {
    std::string b = pattern(static_cast<int64_t>(produced.size()), n);
    produced += b;
    src.durable->append(handle, b);
    assembler->feed(b);
    publish(assembler->acked_frontier());
  }
};

Scheduler::Env env_for(TestCluster& self, TestCluster* up,
                       sim::Sim::LinkId up_link,
                       std::vector<Scheduler::Env::Child> children) {
  Scheduler::Env e;
  e.self = self.rt;
  if (up != nullptr) {
    e.has_upstream = true;
    e.up = up->rt;
    e.up_link = up_link;
    e.up_readers = &up->readers;
    e.up_lengths = length_fn(*up);
  }
  e.writers = &self.writers;
  e.children = std::move(children);
  return e;
}

}  // namespace

TEST_CASE("an announcement builds one op pair per hop down the tree") {
  Sim sim(101);
  auto src = make_cluster(sim, 0, "src", 2, 0);
  auto mid = make_cluster(sim, 1, "mid", 2, 2);
  auto leaf = make_cluster(sim, 2, "leaf", 0, 2);
  auto l01 = sim.add_link(2, 1'000'000'000);
  auto l12 = sim.add_link(2, 1'000'000'000);

  Scheduler sched_leaf(sim, "sched-leaf", SchedulerConfig{},
                       env_for(leaf, &mid, l12, {}));
  Scheduler sched_mid(sim, "sched-mid", SchedulerConfig{},
                      env_for(mid, &src, l01, {{&sched_leaf, l12}}));
  Scheduler sched_src(sim, "sched-src", SchedulerConfig{},
                      env_for(src, nullptr, {}, {{&sched_mid, l01}}));
  sched_src.start();
  sched_mid.start();
  sched_leaf.start();

  Producer prod(sim, src, "/s/f");
  sim.schedule(5, [&]() {
    prod.produce(30000);
    sched_src.notify_produced("/s/f");
  });
  sim.schedule(800, [&]() { prod.produce(20000); });

  sim.run_until(4000);
  // 2 hops x (durable + cache) = 4 ops; none on the source cluster.
  CHECK(sched_src.live_op_count() == 0);
  CHECK(sched_mid.live_op_count() == 2);
  CHECK(sched_leaf.live_op_count() == 2);
  CHECK(sched_src.files().count("/s/f") == 1);
  CHECK(sched_leaf.files().count("/s/f") == 1);
  auto d = sched_mid.op_for("/s/f", false);
  auto c = sched_mid.op_for("/s/f", true);
  REQUIRE(d != nullptr);
  REQUIRE(c != nullptr);
  CHECK(d->state() == OpState::kRunning);
  CHECK(c->state() == OpState::kRunning);
  // Bytes made it across both hops through both storages.
  CHECK(mid.durable->read_sync("/s/f", 0, 50000).bytes == prod.produced);
  CHECK(leaf.durable->read_sync("/s/f", 0, 50000).bytes == prod.produced);
  CHECK(read_meta(*leaf.meta, "/s/f").cache_len == 50000);
  auto v = peek_any(*leaf.data, cache::chunk_key("/s/f", 3));
  REQUIRE(v.has_value());
  CHECK(v->bytes == pattern(3 * 4096, 4096));
}

TEST_CASE("repeated announcements are idempotent") {
  Sim sim(103);
  auto src = make_cluster(sim, 0, "src", 2, 0);
  auto mid = make_cluster(sim, 1, "mid", 0, 2);
  auto l01 = sim.add_link(2, 1'000'000'000);

  Scheduler sched_mid(sim, "sched-mid", SchedulerConfig{},
                      env_for(mid, &src, l01, {}));
  Scheduler sched_src(sim, "sched-src", SchedulerConfig{},
                      env_for(src, nullptr, {}, {{&sched_mid, l01}}));
  sched_src.start();
  sched_mid.start();

  Producer prod(sim, src, "/s/f");
  sim.schedule(5, [&]() {
    prod.produce(5000);
    sched_src.notify_produced("/s/f");
    sched_src.notify_produced("/s/f");
  });
  // Several periodic re-announce cycles pass.
  sim.run_until(4500);
  CHECK(sched_mid.live_op_count() == 2);
  CHECK(sched_mid.stats().assigns == 2);
  CHECK(sched_src.stats().announces >= 4);  // initial + periodic
}

TEST_CASE("assignments spread across the writer pool") {
  Sim sim(107);
  auto src = make_cluster(sim, 0, "src", 3, 0);
  auto mid = make_cluster(sim, 1, "mid", 0, 3);
  auto l01 = sim.add_link(2, 1'000'000'000);

  Scheduler sched_mid(sim, "sched-mid", SchedulerConfig{},
                      env_for(mid, &src, l01, {}));
  Scheduler sched_src(sim, "sched-src", SchedulerConfig{},
                      env_for(src, nullptr, {}, {{&sched_mid, l01}}));
  sched_src.start();
  sched_mid.start();

  std::vector<std::unique_ptr<Producer>> prods;
  sim.schedule(5, [&]() {
    for (int i = 0; i < 6; i++) {
      auto p = std::make_unique<Producer>(sim, src,
                                         "/s/f" + std::to_string(i));
      p->produce(3000);
      sched_src.notify_produced(p->path);
      prods.push_back(std::move(p));
    }
  });

  sim.run_until(2000);
  CHECK(sched_mid.live_op_count() == 12);
  int lo = 1 << 30, hi = 0;
  for (Pid w : mid.writers) {
    lo = std::min(lo, sched_mid.load_of(w));
    hi = std::max(hi, sched_mid.load_of(w));
  }
  CHECK(hi - lo <= 1);
  CHECK(hi == 4);
}

TEST_CASE("a dead writer's ops are reassigned within the scan budget") {
  Sim sim(109);
  auto src = make_cluster(sim, 0, "src", 2, 0);
  auto mid = make_cluster(sim, 1, "mid", 0, 2);
  auto l01 = sim.add_link(2, 1'000'000'000);

  std::vector<std::string> trace;
  sim.set_trace_sink([&](const std::string& l) { trace.push_back(l); });

  Scheduler sched_mid(sim, "sched-mid", SchedulerConfig{},
                      env_for(mid, &src, l01, {}));
  Scheduler sched_src(sim, "sched-src", SchedulerConfig{},
                      env_for(src, nullptr, {}, {{&sched_mid, l01}}));
  sched_src.start();
  sched_mid.start();

  std::vector<std::unique_ptr<Producer>> prods;
  sim.schedule(5, [&]() {
    for (int i = 0; i < 4; i++) {
      auto p = std::make_unique<Producer>(sim, src,
                                         "/s/f" + std::to_string(i));
      p->produce(8000);
      sched_src.notify_produced(p->path);
      prods.push_back(std::move(p));
    }
  });
  sim.schedule(900, [&]() {
    for (auto& p : prods) p->produce(6000);
  });

  Pid victim = mid.writers[0];
  int on_victim = 0;
  sim.schedule(500, [&]() {
    on_victim = sched_mid.load_of(victim);
    CHECK(on_victim >= 1);
    sim.kill_process(victim);
  });
  sim.schedule(620, [&]() {
    // Dead worker noticed on the next scan; replacements run already.
    CHECK(sched_mid.load_of(victim) == 0);
    for (int i = 0; i < 4; i++) {
      for (bool kind : {false, true}) {
        auto op = sched_mid.op_for("/s/f" + std::to_string(i), kind);
        REQUIRE(op != nullptr);
        CHECK(op->state() != OpState::kDone);
        CHECK(sim.alive(op->writer()));
      }
    }
  });

  sim.run_until(2500);
  CHECK(sched_mid.stats().reschedules >= on_victim);
  for (auto& p : prods) {
    CHECK(mid.durable->read_sync(p->path, 0, 14000).bytes == p->produced);
  }
  bool resched_logged = false;
  for (const auto& l : trace) {
    if (l.find("reason=reschedule") != std::string::npos) {
      resched_logged = true;
    }
  }
  CHECK(resched_logged);
}

TEST_CASE("admissions are throttled per scan window") {
  Sim sim(113);
  auto src = make_cluster(sim, 0, "src", 2, 0);
  auto mid = make_cluster(sim, 1, "mid", 0, 3);
  auto l01 = sim.add_link(2, 1'000'000'000);

  std::vector<std::string> trace;
  sim.set_trace_sink([&](const std::string& l) { trace.push_back(l); });

  Scheduler sched_mid(sim, "sched-mid", SchedulerConfig{},
                      env_for(mid, &src, l01, {}));
  sched_mid.start();

  std::vector<std::unique_ptr<Producer>> prods;
  sim.schedule(5, [&]() {
    for (int i = 0; i < 10; i++) {
      auto p = std::make_unique<Producer>(sim, src,
                                         "/s/f" + std::to_string(i));
      p->produce(2000);
      sched_mid.notify_produced(p->path);  // parent announcement, direct
      prods.push_back(std::move(p));
    }
  });

  sim.run_until(2000);
  CHECK(sched_mid.live_op_count() == 20);
  // No timestamp admitted more than the per-scan budget.
  std::map<std::string, int> per_t;
  for (const auto& l : trace) {
    if (l.find("event=assign") == std::string::npos) continue;
    per_t[l.substr(0, l.find(' '))]++;
  }
  CHECK(per_t.size() >= 5);  // spread over several scan windows
  for (const auto& [t, n] : per_t) CHECK(n <= 4);
}

TEST_CASE("balance sheds off an overloaded writer, rate limited") {
  Sim sim(127);
  auto src = make_cluster(sim, 0, "src", 2, 0);
  auto mid = make_cluster(sim, 1, "mid", 0, 1);  // one writer at first
  auto l01 = sim.add_link(2, 1'000'000'000);

  Scheduler sched_mid(sim, "sched-mid", SchedulerConfig{},
                      env_for(mid, &src, l01, {}));
  sched_mid.start();

  std::vector<std::unique_ptr<Producer>> prods;
  sim.schedule(5, [&]() {
    for (int i = 0; i < 4; i++) {
      auto p = std::make_unique<Producer>(sim, src,
                                         "/s/f" + std::to_string(i));
      p->produce(3000);
      sched_mid.notify_produced(p->path);
      prods.push_back(std::move(p));
    }
  });
  // All 8 ops pile onto w0; then two fresh writers join the pool.
  sim.schedule(700, [&]() {
    CHECK(sched_mid.load_of(mid.writers[0]) == 8);
    mid.writers.push_back(sim.spawn_process("mid-w1"));
    mid.writers.push_back(sim.spawn_process("mid-w2"));
  });

  TimeMs first_balance = -1;
  sim.schedule(1100, [&]() {
    // One balance tick so far: at most two sheds.
    first_balance = sched_mid.stats().sheds;
    CHECK(sched_mid.stats().sheds <= 2);
    CHECK(sched_mid.stats().sheds >= 1);
  });

  sim.run_until(6000);
  CHECK(sched_mid.stats().sheds >= 2);
  CHECK(sched_mid.live_op_count() == 8);
  // Converged: nobody holds more than 1.5x the mean (mean = 8/3).
  for (Pid w : mid.writers) {
    CHECK(sched_mid.load_of(w) <= 4);
  }
  CHECK(sched_mid.load_of(mid.writers[0]) < 8);
}

TEST_CASE("a forced duplicate assignment duels and one winner remains") {
  Sim sim(131);
  auto src = make_cluster(sim, 0, "src", 2, 0);
  auto mid = make_cluster(sim, 1, "mid", 0, 2);
  auto l01 = sim.add_link(2, 1'000'000'000);

  Scheduler sched_mid(sim, "sched-mid", SchedulerConfig{},
                      env_for(mid, &src, l01, {}));
  sched_mid.start();

  Producer prod(sim, src, "/s/f");
  sim.schedule(5, [&]() {
    prod.produce(20000);
    sched_mid.notify_produced("/s/f");
  });
  std::shared_ptr<hop::StreamOp> incumbent;
  sim.schedule(600, [&]() {
    incumbent = sched_mid.op_for("/s/f", true);
    REQUIRE(incumbent != nullptr);
    CHECK(incumbent->state() == OpState::kRunning);
    sched_mid.force_duplicate_assignment("/s/f", true);
  });
  sim.schedule(900, [&]() { prod.produce(15000); });

  sim.run_until(3000);
  CHECK(sched_mid.stats().duplicates == 1);
  // The younger instance poisons the incumbent and wins the duel.
  CHECK(incumbent->state() == OpState::kDone);
  CHECK(sched_mid.live_op_count() == 2);  // durable + surviving cache op
  CHECK(read_meta(*mid.meta, "/s/f").cache_len == 35000);
  auto v = peek_any(*mid.data, cache::chunk_key("/s/f", 8));
  REQUIRE(v.has_value());
  CHECK(v->bytes == pattern(8 * 4096, 35000 - 8 * 4096));
}

TEST_CASE("scheduler restart: orphans keep streaming, then lose duels") {
  Sim sim(137);
  auto src = make_cluster(sim, 0, "src", 2, 0);
  auto mid = make_cluster(sim, 1, "mid", 0, 2);
  auto l01 = sim.add_link(2, 1'000'000'000);

  std::vector<std::string> trace;
  sim.set_trace_sink([&](const std::string& l) { trace.push_back(l); });

  Scheduler sched_mid(sim, "sched-mid", SchedulerConfig{},
                      env_for(mid, &src, l01, {}));
  Scheduler sched_src(sim, "sched-src", SchedulerConfig{},
                      env_for(src, nullptr, {}, {{&sched_mid, l01}}));
  sched_src.start();
  sched_mid.start();

  Producer prod(sim, src, "/s/f");
  sim.schedule(5, [&]() {
    prod.produce(10000);
    sched_src.notify_produced("/s/f");
  });
  // Continuous production across the crash.
  for (int i = 1; i <= 30; i++) {
    sim.schedule(100 * i, [&]() { prod.produce(2000); });
  }

  std::shared_ptr<hop::StreamOp> old_d, old_c;
  sim.schedule(700, [&]() {
    old_d = sched_mid.op_for("/s/f", false);
    old_c = sched_mid.op_for("/s/f", true);
    REQUIRE(old_d != nullptr);
    REQUIRE(old_c != nullptr);
    sched_mid.kill();
  });
  int64_t len_while_orphaned = 0;
  sim.schedule(1400, [&]() {
    // No scheduler for 700 ms: both ops orphaned but still relaying.
    CHECK(old_d->state() == OpState::kOrphaned);
    CHECK(old_c->state() == OpState::kOrphaned);
    len_while_orphaned = mid.durable->poll_length("/s/f");
    CHECK(len_while_orphaned > 10000);
    sched_mid.restart();
  });

  sim.run_until(5000);
  // The re-announced file got fresh instances; the orphans were duelled
  // out (durable fence, cache poison), not just abandoned.
  CHECK(old_d->state() == OpState::kDone);
  CHECK(old_c->state() == OpState::kDone);
  CHECK(sched_mid.live_op_count() == 2);
  auto nd = sched_mid.op_for("/s/f", false);
  REQUIRE(nd != nullptr);
  CHECK(nd->state() == OpState::kRunning);
  CHECK(nd.get() != old_d.get());
  CHECK(prod.produced.size() == 70000);
  CHECK(mid.durable->read_sync("/s/f", 0, 70000).bytes == prod.produced);
  bool orphan_logged = false, fenced_logged = false, poisoned_logged = false;
  for (const auto& l : trace) {
    if (l.find("event=orphan") != std::string::npos) orphan_logged = true;
    if (l.find("reason=fenced") != std::string::npos) fenced_logged = true;
    if (l.find("reason=poisoned") != std::string::npos) {
      poisoned_logged = true;
    }
  }
  CHECK(orphan_logged);
  CHECK(fenced_logged);
  CHECK(poisoned_logged);
}

TEST_CASE("rate-limited leaf trickles, catches up, and reports it") {
  Sim sim(139);
  auto src = make_cluster(sim, 0, "src", 2, 0);
  auto mid = make_cluster(sim, 1, "mid", 0, 2);
  auto l01 = sim.add_link(2, 1'000'000'000);

  Scheduler sched_mid(sim, "sched-mid", SchedulerConfig{},
                      env_for(mid, &src, l01, {}));
  sched_mid.start();
  sched_mid.set_rate_limited(true);

  Producer prod(sim, src, "/s/f");
  sim.schedule(5, [&]() {
    prod.produce(500 * 1024);  // deep backlog before the leaf joins
    sched_mid.notify_produced("/s/f");
  });
  sim.schedule(400, [&]() {
    auto op = sched_mid.op_for("/s/f", false);
    REQUIRE(op != nullptr);
    CHECK(op->rate_limited());
    CHECK(!sched_mid.all_caught_up());  // still deep in the backlog
  });

  sim.run_until(4000);
  CHECK(sched_mid.all_caught_up());
  CHECK(mid.durable->poll_length("/s/f") == 500 * 1024);
  sched_mid.set_rate_limited(false);
  CHECK(!sched_mid.op_for("/s/f", false)->rate_limited());
}
