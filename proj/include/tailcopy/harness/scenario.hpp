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
#include <stdexcept>
#include <string>
#include <vector>

#include "tailcopy/hop/scheduler.hpp"
#include "tailcopy/route/copy_tree.hpp"
#include "tailcopy/sim/sim.hpp"

namespace tailcopy::harness {

/// Scenario files are rejected with one of these; the message carries the
/// offending file, line (for parse errors) or field path (for semantic
/// errors), and what was expected.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CacheSpec {
  int replicas = 3;
  int64_t capacity_bytes = 64ll << 20;
  sim::TimeMs ttl_ms = 60'000;
  int64_t max_qps = 0;  // per replica per second; 0 = unlimited
  int64_t max_bps = 0;
};

struct ClusterSpec {
  std::string name;
  int readers = 2;
  int writers = 2;
  CacheSpec data;
  CacheSpec meta;  // ttl defaults to 24 h at parse time
  int64_t durable_max_reads_per_s = 0;
  int64_t durable_max_read_bytes_per_s = 0;
  // A cluster that joins the fleet mid-run: its scheduler starts at this
  // time instead of 0 and, when rate_limited_join is set, it hangs off the
  // tree as a rate-limited leaf until its streams catch up.
  sim::TimeMs joins_at_ms = 0;
  bool rate_limited_join = false;
};

struct EdgeSpec {
  int a = -1;
  int b = -1;
  double cost = 1.0;  // bandwidth cost used by tree construction
  sim::TimeMs latency_ms = 10;
  int64_t bandwidth_bps = 100'000'000;
};

struct StreamSpec {
  std::string name;
  int source = 0;
  std::vector<int> destinations;
  int shards = 1;
  int message_bytes = 400;
  int64_t rate_bps = 64'000;  // payload rate for the whole stream
  sim::TimeMs buffer_ms = 100;
  sim::TimeMs start_ms = 0;
  sim::TimeMs stop_ms = -1;  // -1: stop at scenario duration
};

struct ConsumerSpec {
  int cluster = 0;
  int count = 1;
  int shards_each = 1;
  sim::TimeMs poll_ms = 100;
  int64_t rate_cap_bps = 0;  // passive per-consumer read cap; 0 = none
  sim::TimeMs start_ms = 0;
  sim::TimeMs spawn_every_ms = 0;  // stagger between consecutive starts
  std::vector<std::string> streams;  // empty: every stream present here
};

struct FaultSpec {
  sim::TimeMs at_ms = 0;
  std::string action;
  int cluster = -1;
  std::string instance;  // "data" | "meta"
  int replica = -1;
  std::string pool;  // "readers" | "writers"
  int index = -1;
  int a = -1, b = -1;        // link endpoints
  sim::TimeMs latency_ms = -1;
  std::string stream;
  int shard = -1;
  std::string file;  // "data" | "index"
  std::string kind;  // "cache" | "durable"
  ConsumerSpec spike;  // consumer_spike payload
};

struct AutoscaleSpec {
  bool enabled = false;
  int64_t qps_per_replica = 0;  // 0 disables that signal
  int64_t bps_per_replica = 0;
  sim::TimeMs check_ms = 1000;
  double low_watermark = 0.3;  // of threshold, for scale-down
  sim::TimeMs scale_down_after_ms = 5000;
  int max_replicas = 16;
  // Worker-pool growth: spawn another reader/writer once the per-worker
  // egress/ingress byte rate breaches these. 0 disables.
  int64_t egress_bytes_per_reader = 0;
  int64_t ingress_bytes_per_writer = 0;
};

struct Scenario {
  std::string name;
  uint64_t seed = 1;
  sim::TimeMs duration_ms = 10'000;  // producers run until here at most
  sim::TimeMs drain_ms = 15'000;     // extra time allowed to quiesce
  sim::TimeMs stable_from_ms = -1;   // optional steady-state window
  sim::TimeMs stable_to_ms = -1;
  sim::TimeMs metrics_window_ms = 1000;
  std::vector<ClusterSpec> clusters;
  std::vector<EdgeSpec> edges;
  route::TreeConfig tree;
  hop::SchedulerConfig sched;  // sched.op carries the per-hop knobs
  std::vector<StreamSpec> streams;
  std::vector<ConsumerSpec> consumers;
  std::vector<FaultSpec> faults;
  AutoscaleSpec autoscale;
};

/// Parses and validates. `source_name` anchors error messages (a file
/// name, typically). Parse errors include the line; semantic errors the
/// field path.
Scenario scenario_from_json(const std::string& text,
                            const std::string& source_name);

Scenario load_scenario_file(const std::string& path);

}  // namespace tailcopy::harness
