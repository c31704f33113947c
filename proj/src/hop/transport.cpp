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
#include "tailcopy/hop/transport.hpp"

#include <algorithm>
#include <cassert>
#include <sstream>
#include <utility>

namespace tailcopy::hop {

const char* to_string(OpState s) {
  switch (s) {
    case OpState::kStarting: return "starting";
    case OpState::kRunning: return "running";
    case OpState::kOrphaned: return "orphaned";
    case OpState::kDone: return "done";
  }
  return "?";
}

StreamOp::StreamOp(sim::Sim& sim, ClusterRuntime up, ClusterRuntime down,
                   sim::Sim::LinkId link, std::string path, OpConfig cfg,
                   OpHooks hooks, sim::Pid reader, sim::Pid writer,
                   LengthView up_len)
    : sim_(sim),
      up_(up),
      down_(down),
      link_(link),
      path_(std::move(path)),
      cfg_(cfg),
      hooks_(std::move(hooks)),
      reader_(reader),
      writer_(writer),
      up_len_(std::move(up_len)),
      uid_(sim.next_uid()) {}

void StreamOp::log(const std::string& line) {
  std::ostringstream os;
  os << line << " kind=" << kind() << " id=" << uid_ << " path=" << path_
     << " hop=" << up_.id << ">" << down_.id
     << " reader=" << sim_.process_name(reader_)
     << " writer=" << sim_.process_name(writer_);
  sim_.trace("op", os.str());
}

void StreamOp::heartbeat() {
  if (state_ == OpState::kDone) return;
  last_heartbeat_ = sim_.now();
  if (state_ == OpState::kOrphaned) {
    state_ = OpState::kRunning;
    log("event=adopt");
  }
}

void StreamOp::request_stop(const std::string& reason) {
  if (state_ == OpState::kDone) return;
  finish(reason);
}

void StreamOp::enter_running() {
  state_ = OpState::kRunning;
  last_msg_ = sim_.now();
  last_heartbeat_ = sim_.now();
  arm_watchdogs();
}

void StreamOp::finish(const std::string& reason) {
  on_stop_cleanup();
  state_ = OpState::kDone;
  log("event=terminate reason=" + reason);
}

void StreamOp::fail(const std::string& reason) {
  if (state_ == OpState::kDone) return;
  on_stop_cleanup();
  state_ = OpState::kDone;
  log("event=terminate reason=" + reason);
  if (hooks_.on_failed) hooks_.on_failed();
}

void StreamOp::supersede(const std::string& reason) {
  if (state_ == OpState::kDone) return;
  state_ = OpState::kDone;
  log("event=terminate reason=" + reason);
  if (hooks_.on_superseded) hooks_.on_superseded();
}

void StreamOp::send_downstream(int64_t offset, std::string bytes) {
  if (bytes.empty()) {
    ++stats_.control_msgs;
  } else {
    ++stats_.deltas_sent;
    stats_.bytes_sent += static_cast<int64_t>(bytes.size());
  }
  auto self = shared_from_this();
  int64_t size = static_cast<int64_t>(bytes.size()) + kMsgOverhead;
  sim_.send(link_, writer_, size,
            [self, offset, b = std::move(bytes)]() mutable {
              if (self->state_ == OpState::kDone) return;
              self->last_msg_ = self->sim_.now();
              if (!b.empty()) self->on_message(offset, std::move(b));
            });
}

void StreamOp::arm_watchdogs() {
  auto self = shared_from_this();
  // Stream-break watch: the reader talks every poll even when idle, so
  // silence means a dead reader agent or a dead link.
  sim_.schedule_on(writer_, cfg_.reader_poll_ms, [self]() {
    auto tick = [self](auto&& rec) -> void {
      if (!self->running()) return;
      sim::TimeMs quiet = self->sim_.now() - self->last_msg_;
      if (quiet > self->cfg_.poll_misses * self->cfg_.reader_poll_ms) {
        self->fail("stream-break");
        return;
      }
      if (self->write_side_stalled()) {
        self->fail("write-stall");
        return;
      }
      self->sim_.schedule_on(self->writer_, self->cfg_.reader_poll_ms,
                             [self, rec]() { rec(rec); });
    };
    tick(tick);
  });
  // Orphan watch: missed scheduler heartbeats demote the op but never
  // stop it; a replacement supersedes it explicitly.
  sim_.schedule_on(writer_, cfg_.heartbeat_ms, [self]() {
    auto tick = [self](auto&& rec) -> void {
      if (!self->running()) return;
      sim::TimeMs quiet = self->sim_.now() - self->last_heartbeat_;
      if (self->state_ == OpState::kRunning &&
          quiet > self->cfg_.heartbeat_misses * self->cfg_.heartbeat_ms) {
        self->state_ = OpState::kOrphaned;
        self->log("event=orphan");
      }
      self->sim_.schedule_on(self->writer_, self->cfg_.heartbeat_ms,
                             [self, rec]() { rec(rec); });
    };
    tick(tick);
  });
}

// --- durable stream ---------------------------------------------------

void DurableStreamOp::start() {
  assert(state_ == OpState::kStarting);
  log("event=schedule");
  publisher_ = std::make_unique<file::MetaPublisher>(
      sim_, *down_.meta, path_, writer_, cfg_.retry_ms);
  auto self = std::static_pointer_cast<DurableStreamOp>(shared_from_this());
  down_.durable->open_writer(path_, writer_, [self](log::DurableLog::Handle h) {
    self->on_open(h);
  });
}

void DurableStreamOp::on_open(log::DurableLog::Handle h) {
  if (state_ != OpState::kStarting) return;
  handle_ = std::move(h);
  have_ = down_.durable->poll_length(path_);
  sent_end_ = have_;
  {
    std::ostringstream os;
    os << "event=acquire epoch=" << handle_.epoch << " resume=" << have_;
    log(os.str());
  }
  enter_running();
  publisher_->publish(-1, have_);
  auto self = std::static_pointer_cast<DurableStreamOp>(shared_from_this());
  sim_.schedule_on(reader_, 0, [self]() { self->reader_tick(); });
}

void DurableStreamOp::reader_tick() {
  if (!running()) return;
  ++stats_.polls;
  file::FileMeta up = up_len_();
  int64_t want = up.durable_len;  // never relay beyond our own layer

  bool caught = (want - have_) < cfg_.geom.chunk_size;
  if (!lag_known_ || caught != caught_up_) {
    lag_known_ = true;
    caught_up_ = caught;
    std::ostringstream os;
    os << "event=lag caught_up=" << (caught ? 1 : 0)
       << " lag=" << (want - have_);
    log(os.str());
    if (hooks_.on_lag_change) hooks_.on_lag_change(caught);
  }

  auto self = std::static_pointer_cast<DurableStreamOp>(shared_from_this());
  if (!delta_in_flight_ && want > sent_end_) {
    int64_t len = std::min(want - sent_end_, burst());
    delta_in_flight_ = true;
    file::RangeReadOptions o;
    o.geom = cfg_.geom;
    o.hedge_ms = cfg_.hedge_ms;
    o.phase_timeout_ms = cfg_.phase_timeout_ms;
    int64_t off = sent_end_;
    file::start_range_read(
        sim_, *up_.data, *up_.durable, path_, off, len, up, o, reader_,
        [self, off](file::RangeReadResult r) {
          if (!self->running()) return;
          self->delta_in_flight_ = false;
          if (!r.bytes.empty()) {
            int64_t got = static_cast<int64_t>(r.bytes.size());
            self->send_downstream(off, std::move(r.bytes));
            self->sent_end_ = off + got;
          }
          // Empty: upstream not ready or throttled; the next poll retries.
        });
  }
  send_downstream(0, {});  // liveness, every poll
  sim_.schedule_on(reader_, cfg_.reader_poll_ms,
                   [self]() { self->reader_tick(); });
}

void DurableStreamOp::on_message(int64_t offset, std::string bytes) {
  if (offset != have_) {
    // A delivery was dropped mid-stream; appending here would corrupt.
    fail("gap");
    return;
  }
  auto r = down_.durable->append(handle_, bytes);
  if (!r.ok) {
    supersede("fenced");
    return;
  }
  have_ = r.new_length;
  publisher_->publish(-1, have_);
}

// --- cache stream -----------------------------------------------------

CacheStreamOp::CacheStreamOp(sim::Sim& sim, ClusterRuntime up,
                             ClusterRuntime down, sim::Sim::LinkId link,
                             std::string path, OpConfig cfg, OpHooks hooks,
                             sim::Pid reader, sim::Pid writer,
                             LengthView up_len)
    : StreamOp(sim, up, down, link, std::move(path), cfg, std::move(hooks),
               reader, writer, std::move(up_len)) {
  sig_.owner_id = (static_cast<uint64_t>(static_cast<uint32_t>(writer.slot))
                   << 32) |
                  static_cast<uint32_t>(writer.incarnation);
  sig_.nonce = uid_;
  // Op uids grow over sim time, so a replacement's chunk versions beat
  // the versions of every op it duels with.
  versions_ = std::make_unique<cache::VersionSource>(uid_);
}

void CacheStreamOp::start() {
  assert(state_ == OpState::kStarting);
  log("event=schedule");
  auto self = std::static_pointer_cast<CacheStreamOp>(shared_from_this());
  down_.meta->get_consistent(
      cache::meta_key(path_), writer_,
      [self](cache::Instance::GetResult g) {
        int64_t cl = 0;
        if (g.status == cache::Instance::Status::kHit &&
            g.value.bytes.size() == file::kFileMetaSize) {
          cl = file::decode_file_meta(g.value.bytes).cache_len;
        }
        self->resync_and_begin(cl);
      });
}

void CacheStreamOp::resync_and_begin(int64_t down_cache_len) {
  if (state_ != OpState::kStarting) return;
  int64_t dl = down_.durable->poll_length(path_);
  int64_t floor_dl = file::chunk_floor(cfg_.geom, dl);
  const char* mode;
  if (down_cache_len < floor_dl) {
    // The cache stream is at least a whole chunk behind the durable file:
    // skip the backlog, which stays durable-only, and rebuild from the
    // chunk the durable file is currently filling.
    base_ = floor_dl;
    mode = "jump";
  } else {
    base_ = file::chunk_floor(cfg_.geom, down_cache_len);
    mode = "continue";
  }
  {
    std::ostringstream os;
    os << "event=resync mode=" << mode << " cache_len=" << down_cache_len
       << " durable_len=" << dl << " base=" << base_;
    log(os.str());
  }
  publisher_ = std::make_unique<file::MetaPublisher>(
      sim_, *down_.meta, path_, writer_, cfg_.retry_ms);
  auto self = std::static_pointer_cast<CacheStreamOp>(shared_from_this());
  assembler_ = std::make_unique<file::ChunkAssembler>(
      sim_, *down_.data, path_, file::ChunkAssembler::Config{cfg_.geom,
                                                             cfg_.retry_ms},
      *versions_, writer_, base_, [self](int64_t frontier) {
        if (self->state_ == OpState::kDone) return;
        self->publisher_->publish(frontier, -1);
      });
  next_read_ = next_send_ = base_;
  acquire_lock();
}

void CacheStreamOp::acquire_lock() {
  auto self = std::static_pointer_cast<CacheStreamOp>(shared_from_this());
  cache::Key key = cache::lock_key(path_);
  down_.meta->lock_acquire(key, sig_, writer_, [self, key](
                                                   cache::Instance::LockReply
                                                       r) {
    if (self->state_ == OpState::kDone) return;
    using S = cache::Instance::LockReply::Status;
    switch (r.status) {
      case S::kAcquired:
        self->locked_ = true;
        self->log("event=acquire result=acquired");
        self->begin_streaming();
        break;
      case S::kUnavailable:
        self->lock_free_ = true;
        self->log("event=acquire result=lock-free");
        self->begin_streaming();
        break;
      case S::kHeld: {
        std::ostringstream os;
        os << "event=poison holder=" << r.current.sig.owner_id << ":"
           << r.current.sig.nonce;
        self->log(os.str());
        self->down_.meta->lock_poison(key, self->writer_,
                                      [](bool) {});
        self->sim_.schedule_on(
            self->writer_, self->cfg_.seize_delay_ms, [self, key]() {
              if (self->state_ == OpState::kDone) return;
              self->down_.meta->lock_seize(
                  key, self->sig_, self->writer_,
                  [self](cache::Instance::LockReply sr) {
                    if (self->state_ == OpState::kDone) return;
                    if (sr.status == S::kAcquired) {
                      self->locked_ = true;
                      self->log("event=acquire result=seized");
                    } else {
                      self->lock_free_ = true;
                      self->log("event=acquire result=lock-free");
                    }
                  });
            });
        // Make before break: stream during the handover window; the old
        // owner notices the poison within a lock-check interval.
        self->begin_streaming();
        break;
      }
    }
  });
}

void CacheStreamOp::begin_streaming() {
  if (state_ != OpState::kStarting) return;
  enter_running();
  last_frontier_ = assembler_->acked_frontier();
  frontier_since_ = sim_.now();
  auto self = std::static_pointer_cast<CacheStreamOp>(shared_from_this());
  sim_.schedule_on(writer_, cfg_.lock_check_ms,
                   [self]() { self->lock_check_tick(); });
  sim_.schedule_on(reader_, 0, [self]() { self->reader_tick(); });
}

void CacheStreamOp::lock_check_tick() {
  if (!running()) return;
  auto self = std::static_pointer_cast<CacheStreamOp>(shared_from_this());
  if (locked_) {
    down_.meta->lock_check(
        cache::lock_key(path_), sig_, writer_,
        [self](cache::Instance::CheckReply c) {
          if (!self->running()) return;
          if (!c.ok) return;  // cache unavailable: keep streaming
          if (c.owner && c.poisoned) {
            self->supersede("poisoned");
          } else if (!c.owner) {
            self->supersede("seized");
          }
        });
  }
  sim_.schedule_on(writer_, cfg_.lock_check_ms,
                   [self]() { self->lock_check_tick(); });
}

void CacheStreamOp::reader_tick() {
  if (!running()) return;
  ++stats_.polls;
  issue_reads(up_len_());
  send_downstream(0, {});  // liveness, every poll
  auto self = std::static_pointer_cast<CacheStreamOp>(shared_from_this());
  sim_.schedule_on(reader_, cfg_.reader_poll_ms,
                   [self]() { self->reader_tick(); });
}

void CacheStreamOp::issue_reads(const file::FileMeta& up) {
  int64_t want = up.cache_len;  // never read beyond our own layer
  int max_par = rate_limited_ ? 1 : cfg_.max_parallel_deltas;
  auto self = std::static_pointer_cast<CacheStreamOp>(shared_from_this());
  while (reads_in_flight_ < max_par && next_read_ < want) {
    int64_t ask = std::min(want - next_read_, burst());
    int64_t off = next_read_;
    next_read_ += ask;
    ++reads_in_flight_;
    stats_.max_reads_in_flight =
        std::max(stats_.max_reads_in_flight, reads_in_flight_);
    file::RangeReadOptions o;
    o.geom = cfg_.geom;
    o.hedge_ms = cfg_.hedge_ms;
    o.phase_timeout_ms = cfg_.phase_timeout_ms;
    uint64_t gen = read_gen_;
    file::start_range_read(
        sim_, *up_.data, *up_.durable, path_, off, ask, up, o, reader_,
        [self, gen, off, ask](file::RangeReadResult r) {
          self->on_read_done(gen, off, ask, std::move(r));
        });
  }
}

void CacheStreamOp::on_read_done(uint64_t gen, int64_t offset, int64_t asked,
                                 file::RangeReadResult r) {
  if (!running()) return;
  if (gen != read_gen_) return;  // rewound past this read
  --reads_in_flight_;
  ready_[offset] = Ready{asked, std::move(r.bytes)};
  flush_ready();
}

void CacheStreamOp::flush_ready() {
  // Deltas leave the reader strictly in offset order, so the writer can
  // feed the assembler directly; a short or empty answer invalidates
  // everything optimistically read beyond it.
  while (!ready_.empty() && ready_.begin()->first == next_send_) {
    auto node = ready_.extract(ready_.begin());
    int64_t off = node.key();
    Ready& rd = node.mapped();
    int64_t got = static_cast<int64_t>(rd.bytes.size());
    if (got > 0) send_downstream(off, std::move(rd.bytes));
    next_send_ += got;
    if (got < rd.asked) {
      ++read_gen_;
      reads_in_flight_ = 0;
      ready_.clear();
      next_read_ = next_send_;
      ++stats_.rewinds;
      break;
    }
  }
}

void CacheStreamOp::on_message(int64_t offset, std::string bytes) {
  if (offset != assembler_->fed_end()) {
    fail("gap");
    return;
  }
  assembler_->feed(bytes);
}

bool CacheStreamOp::write_side_stalled() {
  if (!assembler_ || assembler_->idle()) {
    last_frontier_ = assembler_ ? assembler_->acked_frontier() : -1;
    frontier_since_ = sim_.now();
    return false;
  }
  int64_t f = assembler_->acked_frontier();
  if (f != last_frontier_) {
    last_frontier_ = f;
    frontier_since_ = sim_.now();
    return false;
  }
  return sim_.now() - frontier_since_ >= cfg_.cache_stall_ms;
}

void CacheStreamOp::on_stop_cleanup() {
  if (locked_) {
    // Best effort; a successor would seize anyway.
    down_.meta->lock_release(cache::lock_key(path_), sig_, writer_,
                             [](bool) {});
  }
}

}  // namespace tailcopy::hop
