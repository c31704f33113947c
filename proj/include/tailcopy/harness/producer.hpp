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
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tailcopy/file/writer.hpp"
#include "tailcopy/harness/metrics.hpp"
#include "tailcopy/harness/monitor.hpp"
#include "tailcopy/hop/transport.hpp"
#include "tailcopy/sim/rng.hpp"
#include "tailcopy/sim/sim.hpp"

namespace tailcopy::harness {

/// One stream shard's producer at the source cluster. Messages accrue at a
/// fixed byte rate and are flushed on the buffering interval: payloads are
/// appended to the shard's data file, one fixed-width record per message
/// to its index file — durable append first, then the chunk shadow-write,
/// then the length publication once chunk writes ack. Message payloads are
/// drawn from a private seeded generator so content is independent of
/// event timing, and every byte is registered with the monitor before it
/// is written anywhere.
///
/// While stopped, bytes keep accruing; the first flush after a resume
/// dumps the whole backlog with produce times spread over the gap.
class Producer {
 public:
  struct Config {
    std::string stream;
    int shard = 0;
    std::string data_path;
    std::string index_path;
    int message_bytes = 400;
    int64_t rate_bps = 64'000;  // this shard's slice
    sim::TimeMs buffer_ms = 100;
    sim::TimeMs start_ms = 0;
    sim::TimeMs notify_ms = 1000;  // re-notify cadence for active files
    file::Geometry geom;
    sim::TimeMs retry_ms = 50;
  };

  Producer(sim::Sim& sim, hop::ClusterRuntime source, int cluster_id,
           Config cfg, uint64_t payload_seed, Monitor& monitor,
           Metrics& metrics, std::function<void(const std::string&)> notify);

  void stop() { running_ = false; }
  void resume();
  bool running() const { return running_; }

  int64_t produced_bytes() const { return produced_; }
  uint64_t messages() const { return seq_; }
  /// Append time of the flush that covered byte `offset-1`; -1 when the
  /// offset is not yet durable. Drives hop-arrival lag sampling.
  sim::TimeMs flushed_at(int64_t offset) const;
  /// True once every issued chunk write acked and length records match.
  bool drained() const;
  const std::string& data_path() const { return cfg_.data_path; }
  const std::string& index_path() const { return cfg_.index_path; }

 private:
  void arm();
  void flush_tick();
  void notify_tick();
  void on_data_advance(int64_t frontier);
  void on_index_advance(int64_t frontier);

  sim::Sim& sim_;
  hop::ClusterRuntime src_;
  int cluster_id_;
  Config cfg_;
  Monitor& monitor_;
  Metrics& metrics_;
  std::function<void(const std::string&)> notify_;
  sim::Pid pid_;
  sim::Rng payload_rng_;
  bool running_ = true;
  bool notified_once_ = false;

  log::DurableLog::Handle data_handle_;
  log::DurableLog::Handle index_handle_;
  std::unique_ptr<cache::VersionSource> versions_;
  std::unique_ptr<file::ChunkAssembler> data_chunks_;
  std::unique_ptr<file::ChunkAssembler> index_chunks_;
  std::unique_ptr<file::MetaPublisher> data_meta_;
  std::unique_ptr<file::MetaPublisher> index_meta_;

  sim::TimeMs last_accrual_;
  sim::TimeMs accrued_since_;  // start of the interval the owed bytes cover
  int64_t owed_x8000_ = 0;     // owed payload bytes, scaled by 8000
  uint64_t seq_ = 0;
  int64_t produced_ = 0;        // data file length
  int64_t index_produced_ = 0;  // index file length
  // (data end, append time) per flush, for lag attribution.
  std::vector<std::pair<int64_t, sim::TimeMs>> flush_points_;
  // (data end, flush time) awaiting the acked chunk frontier.
  std::deque<std::pair<int64_t, sim::TimeMs>> latency_pending_;
};

}  // namespace tailcopy::harness
