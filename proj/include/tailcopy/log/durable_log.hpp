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
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tailcopy/sim/sim.hpp"

namespace tailcopy::log {

/// Per-cluster persistent append-only file store.
///
/// Files are identified by absolute string paths. Each file has a single
/// writer at a time: open_writer() fences all previously issued handles,
/// so a newer writer automatically supersedes an older one. State lives
/// outside any simulated process and survives kill/restart.
class DurableLog {
 public:
  struct Config {
    sim::TimeMs open_cost_ms = 50;  // locked open is expensive
    sim::TimeMs read_cost_ms = 5;
    // Per-cluster read throttle over fixed 1 s windows; 0 = unlimited.
    int64_t max_reads_per_s = 0;
    int64_t max_read_bytes_per_s = 0;
  };

  struct Handle {
    std::string path;
    uint64_t epoch = 0;
  };

  struct AppendResult {
    bool ok = false;  // false iff the handle was stale
    int64_t new_length = 0;
  };

  struct ReadResult {
    bool ok = false;
    bool throttled = false;
    sim::TimeMs retry_after_ms = 0;  // valid when throttled
    std::string bytes;
  };

  DurableLog(sim::Sim& sim, Config cfg) : sim_(sim), cfg_(cfg) {}
  explicit DurableLog(sim::Sim& sim) : DurableLog(sim, Config{}) {}

  /// Fences every prior handle for `path` and, after open_cost_ms, hands a
  /// fresh handle to `cb`. The callback is dropped (and no fencing happens)
  /// if `owner` dies first: an open takes effect only when it completes.
  void open_writer(const std::string& path, sim::Pid owner,
                   std::function<void(Handle)> cb);

  /// Synchronous open for bootstrap and tests; fences immediately.
  Handle open_writer_now(const std::string& path);

  /// Atomic append+length bump. Stale handles are rejected unmutated.
  AppendResult append(const Handle& h, std::string_view bytes);

  /// Reads min(len, length-offset) bytes at `offset` after read_cost_ms.
  /// Throttled reads fail fast with a retry-after hint instead.
  void read(const std::string& path, int64_t offset, int64_t len,
            sim::Pid owner, std::function<void(ReadResult)> cb);

  /// Core of read(): accounts against the throttle, no simulated delay.
  ReadResult read_sync(const std::string& path, int64_t offset, int64_t len);

  /// Low-frequency length poll; callers keep their own >= 1 s cadence.
  int64_t poll_length(const std::string& path) const;

  bool exists(const std::string& path) const {
    return files_.count(path) != 0;
  }
  bool handle_stale(const Handle& h) const;
  std::vector<std::string> paths() const;

  // Byte-exact on-disk snapshot: one data file per path plus a manifest
  // mapping path -> {file, length}. Used by record/replay.
  void save_snapshot(const std::filesystem::path& dir) const;
  void load_snapshot(const std::filesystem::path& dir);

  struct Stats {
    int64_t appends = 0;
    int64_t bytes_appended = 0;
    int64_t reads = 0;
    int64_t bytes_read = 0;
    int64_t reads_throttled = 0;
  };
  const Stats& stats() const { return stats_; }

 private:
  struct File {
    std::string bytes;
    uint64_t writer_epoch = 0;
  };

  File& file(const std::string& path) { return files_[path]; }
  void roll_throttle_window();

  sim::Sim& sim_;
  Config cfg_;
  std::map<std::string, File> files_;
  sim::TimeMs window_start_ = 0;
  int64_t window_reads_ = 0;
  int64_t window_bytes_ = 0;
  Stats stats_;
};

}  // namespace tailcopy::log
