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
#include <string>

#include "tailcopy/cache/instance.hpp"
#include "tailcopy/file/codec.hpp"
#include "tailcopy/log/durable_log.hpp"
#include "tailcopy/sim/sim.hpp"

namespace tailcopy::file {

/// One background length-poller per process. Every cycle it issues a
/// single consistent bulk read over the metadata records of all watched
/// paths — many operations on a host share one poll — and fans results
/// out to subscribers. The durable length is additionally polled straight
/// from the durable store at a much lower frequency and merged with max(),
/// so lengths keep progressing when the metadata cache is unavailable.
class MetadataPoller {
 public:
  struct Config {
    sim::TimeMs poll_ms = 50;
    sim::TimeMs durable_poll_ms = 1000;
  };

  MetadataPoller(sim::Sim& sim, cache::Instance& meta_cache,
                 log::DurableLog& durable, sim::Pid owner, Config cfg);

  using SubId = uint64_t;
  /// Calls `cb` once per poll cycle with the merged view (idempotent when
  /// nothing changed). The first call comes after the next cycle.
  SubId subscribe(const std::string& path,
                  std::function<void(const FileMeta&)> cb);
  void unsubscribe(SubId id);

  /// Runs once per completed poll cycle, after the per-path fan-out. Hosts
  /// that batch work per poll (consumers) hang their tick here so the poll
  /// itself is the only sampling period they add.
  void set_cycle_hook(std::function<void()> hook) { hook_ = std::move(hook); }

  /// Latest merged view; all-zero until some cycle produced data.
  FileMeta current(const std::string& path) const;
  bool meta_available() const { return meta_ok_; }
  int64_t cycles() const { return cycles_; }

 private:
  struct PathState {
    FileMeta merged;
    int64_t direct_durable_len = 0;
    int refs = 0;
  };

  void arm();
  void cycle();
  void arm_durable();
  void durable_cycle();

  sim::Sim& sim_;
  cache::Instance& meta_cache_;
  log::DurableLog& durable_;
  sim::Pid owner_;
  Config cfg_;
  std::map<std::string, PathState> paths_;
  std::map<SubId, std::pair<std::string, std::function<void(const FileMeta&)>>>
      subs_;
  std::function<void()> hook_;
  SubId next_sub_ = 0;
  bool meta_ok_ = true;
  int64_t cycles_ = 0;
};

}  // namespace tailcopy::file
