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
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "tailcopy/file/delayed_read.hpp"
#include "tailcopy/file/poller.hpp"
#include "tailcopy/file/range_read.hpp"
#include "tailcopy/harness/metrics.hpp"
#include "tailcopy/harness/monitor.hpp"
#include "tailcopy/hop/transport.hpp"
#include "tailcopy/sim/sim.hpp"

namespace tailcopy::harness {

/// End consumer of one or more stream shards at a single cluster.
///
/// All reads hang off the consumer's own metadata poll: each cycle it
/// checks every subscribed file for new bytes and issues at most one range
/// read per file, so the poll period is the only sampling delay it adds.
/// Normal reads stop at the cached length; bytes past it are taken from
/// the durable log only once the delayed-read policy decides the cache has
/// been behind for too long. Messages are emitted once both the index
/// record and its data bytes have arrived, and every byte and sequence
/// number goes through the shared monitor.
///
/// Consumers always start from offset zero — a freshly attached reader
/// pulling the whole history is the interesting (and expensive) case.
class Consumer {
 public:
  struct ShardTarget {
    std::string stream;
    int shard = 0;
    std::string data_path;
    std::string index_path;
  };

  struct Config {
    std::string name;  // unique reader id
    sim::TimeMs poll_ms = 100;
    int64_t rate_cap_bps = 0;  // passive cap on read throughput; 0 = none
    sim::TimeMs max_delay_ms = 1000;   // cache-behind tolerance
    int64_t max_read_bytes = 256 << 10;  // per issue, per file
    file::Geometry geom;
    sim::TimeMs hedge_ms = 30;
    sim::TimeMs phase_timeout_ms = 100;
  };

  Consumer(sim::Sim& sim, hop::ClusterRuntime rt, int cluster_id, Config cfg,
           std::vector<ShardTarget> shards, Monitor& monitor,
           Metrics& metrics);

  /// Point the consumer at a different (healthy) cluster after an outage
  /// reroute. In-flight reads against the old cluster still complete.
  void retarget(hop::ClusterRuntime rt, int cluster_id);

  /// Every subscribed file fully read and every parsed message emitted,
  /// judged against the oracle's produced lengths.
  bool caught_up(const Monitor& m) const;

  const std::string& name() const { return cfg_.name; }
  int cluster() const { return cluster_id_; }
  uint64_t emitted() const { return emitted_; }
  int64_t consumed_bytes() const { return consumed_bytes_; }

 private:
  struct Part {  // one file's read cursor
    std::string path;
    int64_t pos = 0;
    bool inflight = false;
    sim::TimeMs retry_at = 0;
    file::DelayedReadPolicy policy;
    explicit Part(sim::TimeMs max_delay) : policy(max_delay) {}
  };
  struct Shard {
    ShardTarget target;
    std::unique_ptr<Part> data;
    std::unique_ptr<Part> index;
    std::string index_tail;  // unparsed record fragment
    std::deque<file::IndexRecord> frames;
  };

  void attach_poller();
  void on_cycle();
  void maybe_read(Shard& s, Part& part);
  void on_read_done(Shard& s, Part& part, int64_t asked,
                    int64_t durable_known, file::RangeReadResult r);
  void pump_emissions(Shard& s);

  sim::Sim& sim_;
  hop::ClusterRuntime rt_;
  int cluster_id_;
  Config cfg_;
  Monitor& monitor_;
  Metrics& metrics_;
  sim::Pid pid_;
  std::unique_ptr<file::MetadataPoller> poller_;
  std::vector<file::MetadataPoller::SubId> subs_;
  std::vector<Shard> shards_;
  sim::TimeMs last_budget_;
  int64_t budget_x8000_ = 0;
  uint64_t emitted_ = 0;
  int64_t consumed_bytes_ = 0;
};

}  // namespace tailcopy::harness
