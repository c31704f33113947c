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
#include <string>

#include "tailcopy/cache/instance.hpp"
#include "tailcopy/file/codec.hpp"
#include "tailcopy/file/geometry.hpp"
#include "tailcopy/file/range_read.hpp"
#include "tailcopy/file/writer.hpp"
#include "tailcopy/log/durable_log.hpp"
#include "tailcopy/sim/sim.hpp"

namespace tailcopy::hop {

/// What one cluster looks like to a stream operation.
struct ClusterRuntime {
  int id = -1;
  cache::Instance* data = nullptr;
  cache::Instance* meta = nullptr;
  log::DurableLog* durable = nullptr;
};

struct OpConfig {
  file::Geometry geom;
  sim::TimeMs reader_poll_ms = 50;
  sim::TimeMs lock_check_ms = 100;
  sim::TimeMs seize_delay_ms = 500;
  sim::TimeMs heartbeat_ms = 100;  // scheduler's expected cadence
  int heartbeat_misses = 3;        // then the op runs orphaned
  int poll_misses = 3;             // reader silence -> stream break
  sim::TimeMs cache_stall_ms = 500;  // no write progress -> op fails
  int64_t max_delta_bytes = 1 << 20;
  int64_t rate_limited_bytes = 64 << 10;  // leaf catch-up trickle per poll
  int max_parallel_deltas = 4;            // cache stream read overlap
  sim::TimeMs hedge_ms = 30;              // forwarded to range reads
  sim::TimeMs phase_timeout_ms = 100;
  sim::TimeMs retry_ms = 50;
};

enum class OpState { kStarting, kRunning, kOrphaned, kDone };
const char* to_string(OpState s);

struct OpHooks {
  /// Stream broke, workers vanished, or the downstream cache stopped
  /// accepting writes: the scheduler should run a replacement.
  std::function<void()> on_failed;
  /// Lost a duel (fenced handle / poisoned or seized lock): a newer
  /// instance owns the stream, nothing to reschedule.
  std::function<void()> on_superseded;
  /// Downstream durable length lag crossed one chunk (durable ops only);
  /// drives rate-limited-leaf promotion.
  std::function<void(bool caught_up)> on_lag_change;
};

/// The reader's view of the upstream file's lengths, refreshed by the
/// metadata poller on the reader's process.
using LengthView = std::function<file::FileMeta()>;

/// Shared mechanics of one hop stream: a reader agent process in the
/// upstream cluster polls lengths and reads bytes; a writer agent process
/// in the downstream cluster applies them. Bytes travel over one ordered
/// link. The writer side owns the op's lifecycle: it watches for reader
/// silence (3 missed polls = stream break) and for scheduler silence
/// (3 missed heartbeats = keep streaming, but orphaned).
class StreamOp : public std::enable_shared_from_this<StreamOp> {
 public:
  StreamOp(sim::Sim& sim, ClusterRuntime up, ClusterRuntime down,
           sim::Sim::LinkId link, std::string path, OpConfig cfg, OpHooks hooks,
           sim::Pid reader, sim::Pid writer, LengthView up_len);
  virtual ~StreamOp() = default;

  virtual void start() = 0;
  /// Scheduler liveness signal; resuming after orphanhood is silent.
  void heartbeat();
  /// Clean stop (shed / shutdown / dead worker). No hooks fire.
  void request_stop(const std::string& reason = "stop");
  /// Rate-limited-leaf mode: small read bursts, no read overlap.
  void set_rate_limited(bool v) { rate_limited_ = v; }
  bool rate_limited() const { return rate_limited_; }

  OpState state() const { return state_; }
  uint64_t uid() const { return uid_; }
  const std::string& path() const { return path_; }
  sim::Pid reader() const { return reader_; }
  sim::Pid writer() const { return writer_; }

  struct Stats {
    int64_t polls = 0;
    int64_t deltas_sent = 0;
    int64_t bytes_sent = 0;
    int64_t control_msgs = 0;
    int max_reads_in_flight = 0;
    int64_t rewinds = 0;  // short upstream answers rewound (cache stream)
  };
  const Stats& stats() const { return stats_; }

 protected:
  static constexpr int64_t kMsgOverhead = 64;  // header bytes per message

  void log(const std::string& line);
  bool running() const {
    return state_ == OpState::kRunning || state_ == OpState::kOrphaned;
  }
  void enter_running();
  void fail(const std::string& reason);
  void supersede(const std::string& reason);
  void finish(const std::string& reason);  // no hooks
  int64_t burst() const {
    return rate_limited_ ? cfg_.rate_limited_bytes : cfg_.max_delta_bytes;
  }
  virtual const char* kind() const = 0;
  virtual void on_message(int64_t offset, std::string bytes) = 0;
  /// Periodic writer-side progress check; return false to keep watching.
  virtual bool write_side_stalled() = 0;
  virtual void on_stop_cleanup() {}  // fail / clean stop, not supersede

  /// Sends one data message (or a control heartbeat when bytes is empty).
  void send_downstream(int64_t offset, std::string bytes);
  void arm_watchdogs();

  sim::Sim& sim_;
  ClusterRuntime up_, down_;
  sim::Sim::LinkId link_;
  std::string path_;
  OpConfig cfg_;
  OpHooks hooks_;
  sim::Pid reader_, writer_;
  LengthView up_len_;
  uint64_t uid_;
  OpState state_ = OpState::kStarting;
  bool rate_limited_ = false;
  sim::TimeMs last_msg_ = 0;
  sim::TimeMs last_heartbeat_ = 0;
  Stats stats_;
};

/// Durable stream: strictly sequential relay into the downstream durable
/// log. Exclusivity via handle epochs: starting a new instance fences the
/// old one mid-append. Reads upstream bytes cache-first (opportunistic)
/// but never beyond the upstream durable length. Publishes the downstream
/// durable length and emits the catch-up signal.
class DurableStreamOp final : public StreamOp {
 public:
  using StreamOp::StreamOp;
  void start() override;
  int64_t relayed_end() const { return have_; }

 private:
  const char* kind() const override { return "durable"; }
  void on_open(log::DurableLog::Handle h);
  void reader_tick();
  void on_message(int64_t offset, std::string bytes) override;
  bool write_side_stalled() override { return false; }

  log::DurableLog::Handle handle_;
  std::unique_ptr<file::MetaPublisher> publisher_;
  int64_t have_ = 0;      // downstream durable length (writer side)
  int64_t sent_end_ = 0;  // reader-side relay position
  bool delta_in_flight_ = false;
  bool caught_up_ = false;
  bool lag_known_ = false;
};

/// Cache stream: mirrors the upstream cache bytes into the downstream
/// data cache through a chunk assembler, advancing the published cache
/// length only over acked chunks. Guarded by a poisonable lock in the
/// downstream metadata cache (best effort: unavailable locks mean
/// lock-free operation). Reads are issued in parallel and re-ordered on
/// the reader side; short answers rewind. On start the stream resyncs:
/// if the recorded cache length is a full chunk behind the downstream
/// durable length it jumps to the durable position's chunk, otherwise it
/// resumes at the last chunk boundary and rebuilds the partial chunk.
class CacheStreamOp final : public StreamOp {
 public:
  CacheStreamOp(sim::Sim& sim, ClusterRuntime up, ClusterRuntime down,
                sim::Sim::LinkId link, std::string path, OpConfig cfg,
                OpHooks hooks, sim::Pid reader, sim::Pid writer,
                LengthView up_len);
  void start() override;
  int64_t base() const { return base_; }
  bool lock_free() const { return lock_free_; }
  const cache::LockSig& signature() const { return sig_; }

 private:
  const char* kind() const override { return "cache"; }
  void resync_and_begin(int64_t down_cache_len);
  void begin_streaming();
  void acquire_lock();
  void lock_check_tick();
  void reader_tick();
  void issue_reads(const file::FileMeta& up);
  void on_read_done(uint64_t gen, int64_t offset, int64_t asked,
                    file::RangeReadResult r);
  void flush_ready();
  void on_message(int64_t offset, std::string bytes) override;
  bool write_side_stalled() override;
  void on_stop_cleanup() override;

  cache::LockSig sig_;
  std::unique_ptr<cache::VersionSource> versions_;
  std::unique_ptr<file::ChunkAssembler> assembler_;
  std::unique_ptr<file::MetaPublisher> publisher_;
  int64_t base_ = 0;
  bool lock_free_ = false;
  bool locked_ = false;
  // Reader-side parallel read reordering.
  uint64_t read_gen_ = 0;
  int reads_in_flight_ = 0;
  int64_t next_read_ = 0;
  int64_t next_send_ = 0;
  struct Ready {
    int64_t asked = 0;
    std::string bytes;
  };
  std::map<int64_t, Ready> ready_;
  // Writer-side stall detection.
  int64_t last_frontier_ = -1;
  sim::TimeMs frontier_since_ = 0;
};

}  // namespace tailcopy::hop
