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

#include <string>
#include <vector>

#include "doctest.h"

using tailcopy::sim::Pid;
using tailcopy::sim::Sim;
using tailcopy::sim::TimeMs;

TEST_CASE("events fire in timestamp order, ties in insertion order") {
  Sim sim(1);
  std::vector<int> order;
  sim.schedule(5, [&] { order.push_back(3); });
  sim.schedule(1, [&] { order.push_back(1); });
  sim.schedule(5, [&] { order.push_back(4); });  // same t as 3, added later
  sim.schedule(2, [&] { order.push_back(2); });
  sim.run_until(10);
  CHECK(order == std::vector<int>{1, 2, 3, 4});
  CHECK(sim.now() == 10);
}

TEST_CASE("zero-delay events run before anything at t+1") {
  Sim sim(1);
  std::vector<int> order;
  sim.schedule(1, [&] { order.push_back(99); });
  sim.schedule(0, [&] {
    order.push_back(1);
    // Cascading zero-delay work stays at the current timestamp.
    sim.schedule(0, [&] { order.push_back(2); });
  });
  sim.run_until(5);
  CHECK(order == std::vector<int>{1, 2, 99});
}

TEST_CASE("events bound to a killed process are dropped") {
  Sim sim(1);
  Pid p = sim.spawn_process("worker");
  int fired = 0;
  sim.schedule_on(p, 10, [&] { fired++; });
  sim.schedule(5, [&] { sim.kill_process(p); });
  sim.run_until(20);
  CHECK(fired == 0);
  CHECK(!sim.alive(p));
}

TEST_CASE("restart yields a fresh incarnation; stale events stay dead") {
  Sim sim(1);
  Pid p = sim.spawn_process("worker");
  int old_fired = 0;
  int new_fired = 0;
  sim.schedule_on(p, 10, [&] { old_fired++; });
  Pid fresh;
  sim.schedule(2, [&] {
    sim.kill_process(p);
    fresh = sim.restart_process(p);
    sim.schedule_on(fresh, 10, [&] { new_fired++; });
  });
  sim.run_until(50);
  CHECK(old_fired == 0);
  CHECK(new_fired == 1);
  CHECK(!sim.alive(p));
  CHECK(sim.alive(fresh));
  CHECK(fresh.slot == p.slot);
  CHECK(fresh.incarnation == p.incarnation + 1);
}

TEST_CASE("send arrives at latency plus serialization, floored to ms") {
  Sim sim(1);
  // 1 KB over 1 Gbps is 8.192 us of serialization: floors to 0 ms.
  auto link = sim.add_link(/*latency_ms=*/10, /*bandwidth_bps=*/1'000'000'000);
  TimeMs got = -1;
  sim.send(link, Pid{}, 1024, [&] { got = sim.now(); });
  sim.run_until(100);
  CHECK(got == 10);
}

TEST_CASE("serialization delay queues messages FIFO on a busy link") {
  Sim sim(1);
  // 1 MB over 8 Mbps = 1000 ms on the wire.
  auto link = sim.add_link(/*latency_ms=*/5, /*bandwidth_bps=*/8'000'000);
  std::vector<std::pair<int, TimeMs>> got;
  sim.send(link, Pid{}, 1'000'000, [&] { got.push_back({1, sim.now()}); });
  sim.send(link, Pid{}, 1'000'000, [&] { got.push_back({2, sim.now()}); });
  sim.run_until(5000);
  REQUIRE(got.size() == 2);
  CHECK(got[0] == std::pair<int, TimeMs>{1, 1005});
  CHECK(got[1] == std::pair<int, TimeMs>{2, 2005});
}

TEST_CASE("messages are dropped when the link is down at send or delivery") {
  Sim sim(1);
  auto link = sim.add_link(10, 1'000'000'000);
  int delivered = 0;

  SUBCASE("down at send") {
    sim.set_link_up(link, false);
    CHECK(sim.send(link, Pid{}, 10, [&] { delivered++; }) == -1);
    sim.run_until(100);
    CHECK(delivered == 0);
  }
  SUBCASE("down mid-flight") {
    sim.send(link, Pid{}, 10, [&] { delivered++; });
    sim.schedule(5, [&] { sim.set_link_up(link, false); });
    sim.run_until(100);
    CHECK(delivered == 0);
  }
  SUBCASE("down then restored loses nothing new") {
    sim.set_link_up(link, false);
    sim.set_link_up(link, true);
    sim.send(link, Pid{}, 10, [&] { delivered++; });
    sim.run_until(100);
    CHECK(delivered == 1);
  }
}

TEST_CASE("delivery to a dead process is dropped") {
  Sim sim(1);
  auto link = sim.add_link(10, 1'000'000'000);
  Pid p = sim.spawn_process("svc");
  int delivered = 0;
  sim.send(link, p, 10, [&] { delivered++; });
  sim.schedule(5, [&] { sim.kill_process(p); });
  sim.run_until(100);
  CHECK(delivered == 0);
}

TEST_CASE("same seed gives an identical run, different seed diverges") {
  auto run = [](uint64_t seed) {
    Sim sim(seed);
    std::vector<uint64_t> draws;
    for (int i = 0; i < 50; i++) {
      sim.schedule(sim.rng().range(0, 20), [&] {
        draws.push_back(sim.rng().u64() % 1000);
      });
    }
    sim.run_until(100);
    return draws;
  };
  auto a = run(42);
  auto b = run(42);
  auto c = run(43);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("rng pick stays in range and covers the range") {
  tailcopy::sim::Rng rng(7);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 5000; i++) {
    uint64_t v = rng.pick(5);
    REQUIRE(v < 5);
    hits[v]++;
  }
  for (int h : hits) CHECK(h > 500);
  CHECK(rng.pick(0) == 0);
  CHECK(rng.range(3, 3) == 3);
}

TEST_CASE("trace lines carry the current timestamp") {
  Sim sim(1);
  std::vector<std::string> lines;
  sim.set_trace_sink([&](const std::string& l) { lines.push_back(l); });
  sim.schedule(7, [&] { sim.trace("test", "hello"); });
  sim.run_until(10);
  REQUIRE(lines.size() == 1);
  CHECK(lines[0] == "t=7 test hello");
}
