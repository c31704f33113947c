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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "doctest.h"
#include "tailcopy/hop/transport.hpp"

using namespace tailcopy;
using cache::Instance;
using file::FileMeta;
using hop::CacheStreamOp;
using hop::ClusterRuntime;
using hop::DurableStreamOp;
using hop::OpConfig;
using hop::OpHooks;
using hop::OpState;
using hop::StreamOp;
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

void seed_chunk(Instance& c, const std::string& path, int64_t seq,
                std::string bytes, uint64_t version) {
  cache::Key key = cache::chunk_key(path, seq);
  for (int idx : c.owners_of(key)) {
    c.poke(idx, key, {bytes, version, 0});
  }
}

void seed_meta(Instance& m, const std::string& path, int64_t cache_len,
               int64_t durable_len, uint64_t version) {
  cache::Key key = cache::meta_key(path);
  std::string bytes = file::encode_file_meta({cache_len, durable_len});
  for (int idx : m.owners_of(key)) {
    m.poke(idx, key, {bytes, version, 0});
  }
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
  ClusterRuntime rt;
};

TestCluster make_cluster(Sim& sim, int id, const std::string& name) {
  TestCluster c;
  c.data = std::make_unique<Instance>(sim, name + "-data",
                                      Instance::Config{});
  c.meta = std::make_unique<Instance>(sim, name + "-meta",
                                      Instance::Config{});
  c.durable = std::make_unique<DurableLog>(sim);
  c.rt = ClusterRuntime{id, c.data.get(), c.meta.get(), c.durable.get()};
  return c;
}

void pump_heartbeats(Sim& sim, std::shared_ptr<StreamOp> op,
                     std::shared_ptr<bool> on, TimeMs period) {
  sim.schedule(period, [&sim, op, on, period]() {
    if (!*on) return;
    op->heartbeat();
    pump_heartbeats(sim, op, on, period);
  });
}

/// Drives bytes into the upstream cluster like a producer's shadow-write
/// path: durable appends plus cache chunk writes, lengths exposed to the
/// op's reader through a shared FileMeta.
struct UpstreamFeed {
  Sim& sim;
  TestCluster& up;
  std::string path;
  std::shared_ptr<FileMeta> view = std::make_shared<FileMeta>();
  std::string produced;
  DurableLog::Handle handle;
  Pid pid;
  std::unique_ptr<cache::VersionSource> versions;
  std::unique_ptr<file::ChunkAssembler> assembler;

  UpstreamFeed(Sim& s, TestCluster& u, std::string p)
      : sim(s), up(u), path(std::move(p)) {
    handle = up.durable->open_writer_now(path);
    pid = sim.spawn_process("up-feed");
    versions = std::make_unique<cache::VersionSource>(1);
    assembler = std::make_unique<file::ChunkAssembler>(
        sim, *up.data, path, file::ChunkAssembler::Config{}, *versions, pid,
        0, [this](int64_t frontier) { view->cache_len = frontier; });
  }

  hop::LengthView length_view() const {
    auto v = view;
    return [v]() { return *v; };
  }

  /// Appends the next `n` pattern bytes to both storages.
  void produce(int64_t n) {
    std::string b = pattern(static_cast<int64_t>(produced.size()), n);
    produced += b;
    up.durable->append(handle, b);
    view->durable_len = static_cast<int64_t>(produced.size());
    assembler->feed(b);
  }

  /// Durable-only production (cache left alone).
  void produce_durable(int64_t n) {
    std::string b = pattern(static_cast<int64_t>(produced.size()), n);
    produced += b;
    up.durable->append(handle, b);
    view->durable_len = static_cast<int64_t>(produced.size());
  }
};

}  // namespace

TEST_CASE("durable stream relays appends in order and publishes length") {
  Sim sim(7);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid reader = sim.spawn_process("r0");
  Pid writer = sim.spawn_process("w0");
  const std::string path = "/stream/f";

  UpstreamFeed feed(sim, up, path);
  bool failed = false, superseded = false;
  OpHooks hooks;
  hooks.on_failed = [&]() { failed = true; };
  hooks.on_superseded = [&]() { superseded = true; };
  auto op = std::make_shared<DurableStreamOp>(
      sim, up.rt, down.rt, link, path, OpConfig{}, hooks, reader, writer,
      feed.length_view());
  op->start();
  auto on = std::make_shared<bool>(true);
  pump_heartbeats(sim, op, on, 100);

  sim.schedule(10, [&]() { feed.produce_durable(3000); });
  sim.schedule(120, [&]() { feed.produce_durable(5000); });
  sim.schedule(400, [&]() { feed.produce_durable(4500); });

  // The downstream file must be a correct prefix at every sampled moment.
  bool prefix_ok = true;
  for (TimeMs t : {100, 200, 300, 500, 700}) {
    sim.schedule(t, [&]() {
      int64_t n = down.durable->poll_length(path);
      auto r = down.durable->read_sync(path, 0, n);
      prefix_ok = prefix_ok && r.ok &&
                  r.bytes == feed.produced.substr(0, static_cast<size_t>(n));
    });
  }

  sim.run_until(1200);
  CHECK(op->state() == OpState::kRunning);
  CHECK(op->relayed_end() == 12500);
  CHECK(down.durable->read_sync(path, 0, 12500).bytes == feed.produced);
  CHECK(read_meta(*down.meta, path).durable_len == 12500);
  CHECK(op->stats().deltas_sent >= 3);
  CHECK(prefix_ok);
  CHECK(!failed);
  CHECK(!superseded);
}

TEST_CASE("durable stream reads the upstream cache first when it can") {
  Sim sim(11);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid reader = sim.spawn_process("r0");
  Pid writer = sim.spawn_process("w0");
  const std::string path = "/stream/f";

  // 3 full chunks + one partial, present in both upstream storages.
  const int64_t total = 3 * 4096 + 712;
  auto h = up.durable->open_writer_now(path);
  up.durable->append(h, pattern(0, total));
  for (int64_t s = 0; s < 3; s++) {
    seed_chunk(*up.data, path, s, pattern(s * 4096, 4096), 100);
  }
  seed_chunk(*up.data, path, 3, pattern(3 * 4096, 712), 100);
  auto view = std::make_shared<FileMeta>(FileMeta{total, total});

  auto op = std::make_shared<DurableStreamOp>(
      sim, up.rt, down.rt, link, path, OpConfig{}, OpHooks{}, reader, writer,
      [view]() { return *view; });
  op->start();
  auto on = std::make_shared<bool>(true);
  pump_heartbeats(sim, op, on, 100);

  sim.run_until(600);
  CHECK(up.durable->stats().reads == 0);  // fully served by the cache
  CHECK(op->relayed_end() == total);
  CHECK(down.durable->read_sync(path, 0, total).bytes == pattern(0, total));
}

TEST_CASE("a new durable instance fences the old one mid-stream") {
  Sim sim(13);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid r0 = sim.spawn_process("r0");
  Pid w0 = sim.spawn_process("w0");
  Pid r1 = sim.spawn_process("r1");
  Pid w1 = sim.spawn_process("w1");
  const std::string path = "/stream/f";

  UpstreamFeed feed(sim, up, path);
  // Continuous production, 500 bytes every 30 ms until t=900.
  for (int i = 0; i < 30; i++) {
    sim.schedule(10 + 30 * i, [&]() { feed.produce_durable(500); });
  }

  bool a_superseded = false;
  TimeMs a_done_at = -1;
  OpHooks ha;
  ha.on_superseded = [&]() {
    a_superseded = true;
    a_done_at = sim.now();
  };
  auto a = std::make_shared<DurableStreamOp>(sim, up.rt, down.rt, link, path,
                                             OpConfig{}, ha, r0, w0,
                                             feed.length_view());
  a->start();
  auto on_a = std::make_shared<bool>(true);
  pump_heartbeats(sim, a, on_a, 100);

  std::shared_ptr<DurableStreamOp> b;
  auto on_b = std::make_shared<bool>(true);
  sim.schedule(450, [&]() {
    b = std::make_shared<DurableStreamOp>(sim, up.rt, down.rt, link, path,
                                          OpConfig{}, OpHooks{}, r1, w1,
                                          feed.length_view());
    b->start();
    pump_heartbeats(sim, b, on_b, 100);
  });

  sim.run_until(2000);
  CHECK(a_superseded);
  CHECK(a->state() == OpState::kDone);
  // The fence lands when B's open completes, ~50 ms after B starts.
  CHECK(a_done_at >= 450);
  CHECK(a_done_at <= 700);
  REQUIRE(b != nullptr);
  CHECK(b->state() == OpState::kRunning);
  CHECK(feed.produced.size() == 15000);
  // Exact equality proves the handover neither lost nor duplicated bytes.
  CHECK(down.durable->read_sync(path, 0, 15000).bytes == feed.produced);
}

TEST_CASE("cache stream mirrors chunks with overlapping reads") {
  Sim sim(17);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid reader = sim.spawn_process("r0");
  Pid writer = sim.spawn_process("w0");
  const std::string path = "/stream/f";

  std::vector<std::string> trace;
  sim.set_trace_sink([&](const std::string& l) { trace.push_back(l); });

  UpstreamFeed feed(sim, up, path);
  sim.schedule(10, [&]() { feed.produce(40 * 1024); });
  sim.schedule(100, [&]() { feed.produce(90 * 1024); });
  sim.schedule(300, [&]() { feed.produce(30 * 1024 + 500); });

  OpConfig cfg;
  cfg.max_delta_bytes = 32 * 1024;  // force several deltas per backlog
  bool failed = false;
  OpHooks hooks;
  hooks.on_failed = [&]() { failed = true; };
  auto op = std::make_shared<CacheStreamOp>(sim, up.rt, down.rt, link, path,
                                            cfg, hooks, reader, writer,
                                            feed.length_view());
  op->start();
  auto on = std::make_shared<bool>(true);
  pump_heartbeats(sim, op, on, 100);

  sim.run_until(2000);
  const int64_t total = 160 * 1024 + 500;
  CHECK(!failed);
  CHECK(op->state() == OpState::kRunning);
  CHECK(!op->lock_free());
  CHECK(op->stats().max_reads_in_flight >= 2);
  CHECK(read_meta(*down.meta, path).cache_len == total);
  for (int64_t s = 0; s * 4096 < total; s++) {
    int64_t fill = std::min<int64_t>(4096, total - s * 4096);
    auto v = peek_any(*down.data, cache::chunk_key(path, s));
    REQUIRE(v.has_value());
    CHECK(v->bytes == pattern(s * 4096, fill));
  }
  bool acquired_logged = false;
  for (const auto& l : trace) {
    if (l.find("event=acquire result=acquired") != std::string::npos) {
      acquired_logged = true;
    }
  }
  CHECK(acquired_logged);
}

TEST_CASE("cache duel: poison observed within two lock checks") {
  Sim sim(19);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid r0 = sim.spawn_process("r0");
  Pid w0 = sim.spawn_process("w0");
  Pid r1 = sim.spawn_process("r1");
  Pid w1 = sim.spawn_process("w1");
  const std::string path = "/stream/f";

  std::vector<std::string> trace;
  sim.set_trace_sink([&](const std::string& l) { trace.push_back(l); });

  UpstreamFeed feed(sim, up, path);
  for (int i = 0; i < 24; i++) {
    sim.schedule(10 + 50 * i, [&]() { feed.produce(6000); });
  }

  bool a_superseded = false;
  TimeMs a_done_at = -1;
  OpHooks ha;
  ha.on_superseded = [&]() {
    a_superseded = true;
    a_done_at = sim.now();
  };
  auto a = std::make_shared<CacheStreamOp>(sim, up.rt, down.rt, link, path,
                                           OpConfig{}, ha, r0, w0,
                                           feed.length_view());
  a->start();
  auto on_a = std::make_shared<bool>(true);
  pump_heartbeats(sim, a, on_a, 100);

  std::shared_ptr<CacheStreamOp> b;
  auto on_b = std::make_shared<bool>(true);
  sim.schedule(600, [&]() {
    b = std::make_shared<CacheStreamOp>(sim, up.rt, down.rt, link, path,
                                        OpConfig{}, OpHooks{}, r1, w1,
                                        feed.length_view());
    b->start();
    pump_heartbeats(sim, b, on_b, 100);
  });

  sim.run_until(2500);
  CHECK(a_superseded);
  CHECK(a->state() == OpState::kDone);
  CHECK(a_done_at >= 600);
  CHECK(a_done_at <= 600 + 2 * 100 + 20);  // two lock-check intervals
  REQUIRE(b != nullptr);
  CHECK(b->state() == OpState::kRunning);
  bool seized_logged = false, poison_logged = false;
  for (const auto& l : trace) {
    if (l.find("event=acquire result=seized") != std::string::npos) {
      seized_logged = true;
    }
    if (l.find("event=poison") != std::string::npos) poison_logged = true;
  }
  CHECK(poison_logged);
  CHECK(seized_logged);
  // Every chunk correct after the handover despite overlapping writers.
  const int64_t total = 24 * 6000;
  CHECK(read_meta(*down.meta, path).cache_len == total);
  for (int64_t s = 0; s * 4096 < total; s++) {
    int64_t fill = std::min<int64_t>(4096, total - s * 4096);
    auto v = peek_any(*down.data, cache::chunk_key(path, s));
    REQUIRE(v.has_value());
    CHECK(v->bytes == pattern(s * 4096, fill));
  }
}

TEST_CASE("orphaned op keeps streaming and is adopted on resume") {
  Sim sim(23);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid reader = sim.spawn_process("r0");
  Pid writer = sim.spawn_process("w0");
  const std::string path = "/stream/f";

  UpstreamFeed feed(sim, up, path);
  for (int i = 0; i < 28; i++) {
    sim.schedule(10 + 50 * i, [&]() { feed.produce_durable(400); });
  }

  auto op = std::make_shared<DurableStreamOp>(
      sim, up.rt, down.rt, link, path, OpConfig{}, OpHooks{}, reader, writer,
      feed.length_view());
  op->start();
  auto on = std::make_shared<bool>(true);
  pump_heartbeats(sim, op, on, 100);
  sim.schedule(500, [&]() { *on = false; });  // scheduler goes silent

  int64_t len_at_900 = -1;
  sim.schedule(900, [&]() {
    CHECK(op->state() == OpState::kOrphaned);
    len_at_900 = down.durable->poll_length(path);
  });
  sim.schedule(1300, [&]() {
    CHECK(down.durable->poll_length(path) > len_at_900);
    *on = true;  // scheduler back
    op->heartbeat();
    pump_heartbeats(sim, op, on, 100);
  });

  sim.run_until(1700);
  CHECK(op->state() == OpState::kRunning);
  CHECK(op->relayed_end() == 28 * 400);
  CHECK(down.durable->read_sync(path, 0, 28 * 400).bytes == feed.produced);
}

TEST_CASE("reader death breaks the stream within three polls") {
  Sim sim(29);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid reader = sim.spawn_process("r0");
  Pid writer = sim.spawn_process("w0");
  const std::string path = "/stream/f";

  std::vector<std::string> trace;
  sim.set_trace_sink([&](const std::string& l) { trace.push_back(l); });

  UpstreamFeed feed(sim, up, path);
  sim.schedule(10, [&]() { feed.produce_durable(8000); });

  bool failed = false;
  TimeMs failed_at = -1;
  OpHooks hooks;
  hooks.on_failed = [&]() {
    failed = true;
    failed_at = sim.now();
  };
  auto op = std::make_shared<DurableStreamOp>(sim, up.rt, down.rt, link, path,
                                              OpConfig{}, hooks, reader,
                                              writer, feed.length_view());
  op->start();
  auto on = std::make_shared<bool>(true);
  pump_heartbeats(sim, op, on, 100);

  sim.schedule(400, [&]() { sim.kill_process(reader); });

  sim.run_until(1000);
  CHECK(failed);
  CHECK(op->state() == OpState::kDone);
  CHECK(failed_at >= 400 + 3 * 50);
  CHECK(failed_at <= 400 + 3 * 50 + 60);
  bool break_logged = false;
  for (const auto& l : trace) {
    if (l.find("reason=stream-break") != std::string::npos) {
      break_logged = true;
    }
  }
  CHECK(break_logged);
  // Whatever landed is still a correct prefix.
  int64_t n = down.durable->poll_length(path);
  CHECK(down.durable->read_sync(path, 0, n).bytes ==
        feed.produced.substr(0, static_cast<size_t>(n)));
}

TEST_CASE("resync jumps when the cache record trails the durable file") {
  Sim sim(31);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid reader = sim.spawn_process("r0");
  Pid writer = sim.spawn_process("w0");
  const std::string path = "/stream/f";

  std::vector<std::string> trace;
  sim.set_trace_sink([&](const std::string& l) { trace.push_back(l); });

  // Downstream durable is at 20580; the cache record is a stale 4096
  // (say the cache was down for a while). chunk_floor(20580) = 20480.
  auto h = down.durable->open_writer_now(path);
  down.durable->append(h, pattern(0, 20580));
  seed_meta(*down.meta, path, 4096, 20580, 5);

  // Upstream has bytes through 24000 in its cache.
  auto view = std::make_shared<FileMeta>(FileMeta{24000, 20580});
  seed_chunk(*up.data, path, 5, pattern(5 * 4096, 24000 - 5 * 4096), 900);

  auto op = std::make_shared<CacheStreamOp>(sim, up.rt, down.rt, link, path,
                                            OpConfig{}, OpHooks{}, reader,
                                            writer, [view]() { return *view; });
  op->start();
  auto on = std::make_shared<bool>(true);
  pump_heartbeats(sim, op, on, 100);

  sim.run_until(600);
  CHECK(op->base() == 20480);
  CHECK(op->state() == OpState::kRunning);
  bool jump_logged = false;
  for (const auto& l : trace) {
    if (l.find("event=resync mode=jump") != std::string::npos &&
        l.find("base=20480") != std::string::npos) {
      jump_logged = true;
    }
  }
  CHECK(jump_logged);
  // The skipped backlog stays durable-only: nothing cached below the base.
  CHECK(!peek_any(*down.data, cache::chunk_key(path, 1)).has_value());
  auto v = peek_any(*down.data, cache::chunk_key(path, 5));
  REQUIRE(v.has_value());
  CHECK(v->bytes == pattern(20480, 3520));
  auto m = read_meta(*down.meta, path);
  CHECK(m.cache_len == 24000);
  CHECK(m.durable_len == 20580);  // merged, not clobbered
}

TEST_CASE("resync continues from the last chunk boundary otherwise") {
  Sim sim(37);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid reader = sim.spawn_process("r0");
  Pid writer = sim.spawn_process("w0");
  const std::string path = "/stream/f";

  std::vector<std::string> trace;
  sim.set_trace_sink([&](const std::string& l) { trace.push_back(l); });

  auto h = down.durable->open_writer_now(path);
  down.durable->append(h, pattern(0, 20580));
  seed_meta(*down.meta, path, 20500, 20580, 5);

  auto view = std::make_shared<FileMeta>(FileMeta{24000, 20580});
  seed_chunk(*up.data, path, 5, pattern(5 * 4096, 3520), 900);

  auto op = std::make_shared<CacheStreamOp>(sim, up.rt, down.rt, link, path,
                                            OpConfig{}, OpHooks{}, reader,
                                            writer, [view]() { return *view; });
  op->start();
  auto on = std::make_shared<bool>(true);
  pump_heartbeats(sim, op, on, 100);

  sim.run_until(600);
  CHECK(op->base() == 20480);
  bool continue_logged = false;
  for (const auto& l : trace) {
    if (l.find("event=resync mode=continue") != std::string::npos) {
      continue_logged = true;
    }
  }
  CHECK(continue_logged);
  // The boundary chunk is rebuilt whole, not patched from 20500.
  auto v = peek_any(*down.data, cache::chunk_key(path, 5));
  REQUIRE(v.has_value());
  CHECK(v->bytes == pattern(20480, 3520));
  CHECK(read_meta(*down.meta, path).cache_len == 24000);
}

TEST_CASE("reads past the real upstream length rewind without failing") {
  Sim sim(41);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid reader = sim.spawn_process("r0");
  Pid writer = sim.spawn_process("w0");
  const std::string path = "/stream/f";

  // Upstream really has 20000 bytes; the advertised cache length lies
  // ahead at 50000 (e.g. a record from a duelling writer that regressed).
  const int64_t real = 20000;
  auto h = up.durable->open_writer_now(path);
  up.durable->append(h, pattern(0, real));
  for (int64_t s = 0; s * 4096 < real; s++) {
    int64_t fill = std::min<int64_t>(4096, real - s * 4096);
    seed_chunk(*up.data, path, s, pattern(s * 4096, fill), 100);
  }
  auto view = std::make_shared<FileMeta>(FileMeta{50000, real});

  bool failed = false;
  OpHooks hooks;
  hooks.on_failed = [&]() { failed = true; };
  auto op = std::make_shared<CacheStreamOp>(sim, up.rt, down.rt, link, path,
                                            OpConfig{}, hooks, reader, writer,
                                            [view]() { return *view; });
  op->start();
  auto on = std::make_shared<bool>(true);
  pump_heartbeats(sim, op, on, 100);

  sim.schedule(500, [&]() {
    // While the lie stands, the mirror floors at the last complete chunk.
    CHECK(op->stats().rewinds >= 1);
    CHECK(read_meta(*down.meta, path).cache_len == 16384);
    // Upstream heals: the record becomes honest again and production
    // resumes through chunk 5.
    const int64_t grown = 6 * 4096;
    up.durable->append(h, pattern(real, grown - real));
    for (int64_t s = 4; s < 6; s++) {
      seed_chunk(*up.data, path, s, pattern(s * 4096, 4096), 200);
    }
    *view = FileMeta{grown, grown};
  });

  sim.run_until(1200);
  CHECK(!failed);
  CHECK(op->state() == OpState::kRunning);
  CHECK(read_meta(*down.meta, path).cache_len == 6 * 4096);
  for (int64_t s = 0; s < 6; s++) {
    auto v = peek_any(*down.data, cache::chunk_key(path, s));
    REQUIRE(v.has_value());
    CHECK(v->bytes == pattern(s * 4096, 4096));
  }
}

TEST_CASE("dead downstream data cache fails the op as a write stall") {
  Sim sim(43);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid reader = sim.spawn_process("r0");
  Pid writer = sim.spawn_process("w0");
  const std::string path = "/stream/f";

  std::vector<std::string> trace;
  sim.set_trace_sink([&](const std::string& l) { trace.push_back(l); });

  UpstreamFeed feed(sim, up, path);
  sim.schedule(10, [&]() { feed.produce(12000); });
  sim.schedule(200, [&]() {
    for (int i = 0; i < down.data->replica_count(); i++) {
      down.data->kill_replica(i);
    }
    feed.produce(6000);
  });

  bool failed = false;
  TimeMs failed_at = -1;
  OpHooks hooks;
  hooks.on_failed = [&]() {
    failed = true;
    failed_at = sim.now();
  };
  auto op = std::make_shared<CacheStreamOp>(sim, up.rt, down.rt, link, path,
                                            OpConfig{}, hooks, reader, writer,
                                            feed.length_view());
  op->start();
  auto on = std::make_shared<bool>(true);
  pump_heartbeats(sim, op, on, 100);

  sim.run_until(1500);
  CHECK(failed);
  CHECK(failed_at >= 200 + 500);
  CHECK(failed_at <= 200 + 500 + 200);
  bool stall_logged = false;
  for (const auto& l : trace) {
    if (l.find("reason=write-stall") != std::string::npos) {
      stall_logged = true;
    }
  }
  CHECK(stall_logged);
}

TEST_CASE("unavailable lock means lock-free streaming") {
  Sim sim(47);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid reader = sim.spawn_process("r0");
  Pid writer = sim.spawn_process("w0");
  const std::string path = "/stream/f";

  for (int i = 0; i < down.meta->replica_count(); i++) {
    down.meta->kill_replica(i);
  }

  const int64_t total = 3 * 4096;
  for (int64_t s = 0; s < 3; s++) {
    seed_chunk(*up.data, path, s, pattern(s * 4096, 4096), 100);
  }
  auto view = std::make_shared<FileMeta>(FileMeta{total, 0});

  auto op = std::make_shared<CacheStreamOp>(sim, up.rt, down.rt, link, path,
                                            OpConfig{}, OpHooks{}, reader,
                                            writer, [view]() { return *view; });
  op->start();
  auto on = std::make_shared<bool>(true);
  pump_heartbeats(sim, op, on, 100);

  sim.run_until(600);
  CHECK(op->lock_free());
  CHECK(op->state() == OpState::kRunning);
  for (int64_t s = 0; s < 3; s++) {
    auto v = peek_any(*down.data, cache::chunk_key(path, s));
    REQUIRE(v.has_value());
    CHECK(v->bytes == pattern(s * 4096, 4096));
  }
}

namespace {

std::vector<std::string> run_duel_scenario(uint64_t seed) {
  Sim sim(seed);
  auto up = make_cluster(sim, 0, "up");
  auto down = make_cluster(sim, 1, "down");
  auto link = sim.add_link(2, 1'000'000'000);
  Pid r0 = sim.spawn_process("r0");
  Pid w0 = sim.spawn_process("w0");
  Pid r1 = sim.spawn_process("r1");
  Pid w1 = sim.spawn_process("w1");
  const std::string path = "/stream/f";

  std::vector<std::string> trace;
  sim.set_trace_sink([&](const std::string& l) { trace.push_back(l); });

  UpstreamFeed feed(sim, up, path);
  for (int i = 0; i < 16; i++) {
    sim.schedule(10 + 40 * i, [&]() { feed.produce(3000); });
  }
  auto a = std::make_shared<CacheStreamOp>(sim, up.rt, down.rt, link, path,
                                           OpConfig{}, OpHooks{}, r0, w0,
                                           feed.length_view());
  a->start();
  auto on_a = std::make_shared<bool>(true);
  pump_heartbeats(sim, a, on_a, 100);
  std::shared_ptr<CacheStreamOp> b;
  auto on_b = std::make_shared<bool>(true);
  sim.schedule(300, [&]() {
    b = std::make_shared<CacheStreamOp>(sim, up.rt, down.rt, link, path,
                                        OpConfig{}, OpHooks{}, r1, w1,
                                        feed.length_view());
    b->start();
    pump_heartbeats(sim, b, on_b, 100);
  });
  sim.run_until(1500);
  return trace;
}

}  // namespace

TEST_CASE("same seed, same op trace") {
  auto t1 = run_duel_scenario(1234);
  auto t2 = run_duel_scenario(1234);
  REQUIRE(t1.size() == t2.size());
  CHECK(t1 == t2);
  // The full duel story must be there: both schedules, the poison, the
  // loser's termination, the winner's seize.
  auto has = [&](const char* needle) {
    for (const auto& l : t1) {
      if (l.find(needle) != std::string::npos) return true;
    }
    return false;
  };
  CHECK(t1.size() >= 8);
  CHECK(has("event=poison"));
  CHECK(has("reason=poisoned"));
  CHECK(has("result=seized"));
}
