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
#include <map>
#include <string>
#include <string_view>

#include "tailcopy/sim/sim.hpp"

namespace tailcopy::harness {

/// Ground-truth correctness monitor. Producers register every byte they
/// write; consumers submit every byte range they observe. Any observed
/// byte that differs from the produced byte at the same file position is a
/// safety violation, recorded with the first divergent offset. Message
/// emissions are additionally checked for dense, strictly increasing
/// sequence numbers per (consumer, shard).
class Monitor {
 public:
  struct Violation {
    bool found = false;
    sim::TimeMs at = -1;
    std::string path;
    int64_t offset = -1;  // first divergent byte
    std::string reader;
    std::string detail;
  };

  void record_produced(const std::string& path, std::string_view bytes) {
    produced_[path].append(bytes);
  }

  int64_t produced_len(const std::string& path) const {
    auto it = produced_.find(path);
    return it == produced_.end() ? 0
                                 : static_cast<int64_t>(it->second.size());
  }

  const std::string& produced(const std::string& path) const {
    static const std::string empty;
    auto it = produced_.find(path);
    return it == produced_.end() ? empty : it->second;
  }

  /// Checks one observed range against the produced log. Returns false
  /// (and records the first violation) on divergence.
  bool observe(const std::string& path, int64_t offset, std::string_view bytes,
               sim::TimeMs now, const std::string& reader) {
    observed_reads_++;
    observed_bytes_ += static_cast<int64_t>(bytes.size());
    if (bytes.empty()) return true;
    const std::string& truth = produced_[path];
    if (offset + static_cast<int64_t>(bytes.size()) >
        static_cast<int64_t>(truth.size())) {
      record(now, path, static_cast<int64_t>(truth.size()), reader,
             "observed bytes beyond the produced length");
      return false;
    }
    for (size_t i = 0; i < bytes.size(); i++) {
      if (bytes[i] != truth[static_cast<size_t>(offset) + i]) {
        record(now, path, offset + static_cast<int64_t>(i), reader,
               "observed byte differs from the produced byte");
        return false;
      }
    }
    return true;
  }

  /// One in-order message emission by a consumer; `shard_id` identifies
  /// the stream shard. Sequence numbers must arrive dense from 0.
  void emit(const std::string& reader, const std::string& shard_id,
            uint64_t seq, sim::TimeMs now) {
    emissions_++;
    uint64_t& next = next_seq_[reader + "|" + shard_id];
    if (seq != next) {
      record(now, shard_id, static_cast<int64_t>(seq), reader,
             "message sequence gap: expected " + std::to_string(next) +
                 ", emitted " + std::to_string(seq));
      return;
    }
    next = seq + 1;
  }

  bool ok() const { return !violation_.found; }
  const Violation& first_violation() const { return violation_; }
  int64_t observed_reads() const { return observed_reads_; }
  int64_t observed_bytes() const { return observed_bytes_; }
  int64_t emissions() const { return emissions_; }

 private:
  void record(sim::TimeMs now, const std::string& path, int64_t offset,
              const std::string& reader, const std::string& detail) {
    if (violation_.found) return;  // keep the first one
    violation_ = {true, now, path, offset, reader, detail};
  }

  std::map<std::string, std::string> produced_;
  std::map<std::string, uint64_t> next_seq_;
  Violation violation_;
  int64_t observed_reads_ = 0;
  int64_t observed_bytes_ = 0;
  int64_t emissions_ = 0;
};

}  // namespace tailcopy::harness
