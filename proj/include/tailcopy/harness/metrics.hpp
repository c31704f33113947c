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

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tailcopy/sim/sim.hpp"

namespace tailcopy::harness {

/// Exact percentile of integer samples: the value at rank ceil(q*n) of the
/// sorted list (1-based), so p50 of {1,2} is 1 and p100 is the max.
inline int64_t percentile(std::vector<int64_t> sorted_or_not, double q) {
  if (sorted_or_not.empty()) return -1;
  std::sort(sorted_or_not.begin(), sorted_or_not.end());
  size_t n = sorted_or_not.size();
  size_t rank = static_cast<size_t>(q * static_cast<double>(n));
  if (static_cast<double>(rank) < q * static_cast<double>(n)) rank++;
  if (rank < 1) rank = 1;
  if (rank > n) rank = n;
  return sorted_or_not[rank - 1];
}

/// Sample sink for one run. Everything is integers (milliseconds, bytes,
/// counts) so the derived report is bit-stable.
class Metrics {
 public:
  struct Sample {
    sim::TimeMs at;
    int64_t value;
  };

  struct ClusterCounters {
    int64_t consumer_reads = 0;
    int64_t fallback_reads = 0;      // consumer reads that touched durable
    int64_t fallback_bytes = 0;
    int64_t bytes_from_cache = 0;
    int64_t bytes_from_durable = 0;
    int64_t consumed_bytes = 0;      // assembled bytes handed to consumers
    int64_t hedged = 0;
    int64_t escalated = 0;
    int64_t throttled_reads = 0;
    int64_t read_failures = 0;       // durable had the bytes, read made no progress
    int64_t messages_delivered = 0;
  };

  struct WindowLoad {
    int64_t reqs = 0;
    int64_t bytes = 0;
  };

  explicit Metrics(sim::TimeMs window_ms) : window_ms_(window_ms) {}

  sim::TimeMs window_ms() const { return window_ms_; }
  int64_t window_of(sim::TimeMs t) const { return t / window_ms_; }

  // --- consumer side ---------------------------------------------------

  void delivery_delay(int cluster, sim::TimeMs now, sim::TimeMs delay) {
    delay_[cluster].push_back({now, delay});
  }

  void consumer_read(int cluster, sim::TimeMs now, bool fallback,
                     int64_t fallback_bytes, int64_t cache_bytes,
                     int64_t durable_bytes, int hedged, int escalated,
                     bool throttled) {
    ClusterCounters& c = counters_[cluster];
    c.consumer_reads++;
    c.bytes_from_cache += cache_bytes;
    c.bytes_from_durable += durable_bytes;
    c.consumed_bytes += cache_bytes + durable_bytes;
    c.hedged += hedged;
    c.escalated += escalated;
    if (throttled) c.throttled_reads++;
    if (fallback) {
      c.fallback_reads++;
      c.fallback_bytes += fallback_bytes;
      auto& w = fallback_windows_[cluster][window_of(now)];
      w.reqs++;
      w.bytes += fallback_bytes;
    }
  }

  void read_failure(int cluster) { counters_[cluster].read_failures++; }

  void message_delivered(int cluster) {
    counters_[cluster].messages_delivered++;
  }

  // --- producer / hop side ---------------------------------------------

  void write_latency(int cluster, sim::TimeMs latency) {
    write_latency_[cluster].push_back(latency);
  }

  void hop_arrival_lag(int cluster, int64_t lag_ms) {
    hop_lag_[cluster].push_back(lag_ms);
  }

  // --- world samplers ---------------------------------------------------

  void cache_window(int cluster, const std::string& instance, int64_t window,
                    int64_t reqs, int64_t bytes) {
    auto& w = cache_windows_[cluster + (instance == "meta" ? 1000 : 0)];
    w[window] = {reqs, bytes};
  }

  void event(sim::TimeMs at, const std::string& what) {
    events_.push_back({at, what});
  }

  // --- access -----------------------------------------------------------

  std::vector<int64_t> delays_of(int cluster, sim::TimeMs from = -1,
                                 sim::TimeMs to = -1) const {
    std::vector<int64_t> out;
    auto it = delay_.find(cluster);
    if (it == delay_.end()) return out;
    for (const Sample& s : it->second) {
      if (from >= 0 && s.at < from) continue;
      if (to >= 0 && s.at >= to) continue;
      out.push_back(s.value);
    }
    return out;
  }

  std::vector<int64_t> all_delays(sim::TimeMs from = -1,
                                  sim::TimeMs to = -1) const {
    std::vector<int64_t> out;
    for (const auto& [c, v] : delay_) {
      for (const Sample& s : v) {
        if (from >= 0 && s.at < from) continue;
        if (to >= 0 && s.at >= to) continue;
        out.push_back(s.value);
      }
    }
    return out;
  }

  int64_t fallback_reads_in(sim::TimeMs from, sim::TimeMs to) const {
    int64_t n = 0;
    for (const auto& [c, wins] : fallback_windows_) {
      for (const auto& [w, load] : wins) {
        sim::TimeMs t0 = w * window_ms_;
        if (t0 >= from && t0 + window_ms_ <= to) n += load.reqs;
      }
    }
    return n;
  }

  const std::map<int, ClusterCounters>& counters() const { return counters_; }
  const std::map<int, std::map<int64_t, WindowLoad>>& fallback_windows() const {
    return fallback_windows_;
  }
  const std::map<int, std::map<int64_t, WindowLoad>>& cache_windows() const {
    return cache_windows_;
  }
  const std::map<int, std::vector<int64_t>>& write_latencies() const {
    return write_latency_;
  }
  const std::map<int, std::vector<int64_t>>& hop_lags() const {
    return hop_lag_;
  }
  const std::vector<std::pair<sim::TimeMs, std::string>>& events() const {
    return events_;
  }

 private:
  sim::TimeMs window_ms_;
  std::map<int, std::vector<Sample>> delay_;
  std::map<int, ClusterCounters> counters_;
  std::map<int, std::map<int64_t, WindowLoad>> fallback_windows_;
  // key: cluster, or cluster+1000 for the metadata instance
  std::map<int, std::map<int64_t, WindowLoad>> cache_windows_;
  std::map<int, std::vector<int64_t>> write_latency_;
  std::map<int, std::vector<int64_t>> hop_lag_;
  std::vector<std::pair<sim::TimeMs, std::string>> events_;
};

}  // namespace tailcopy::harness
