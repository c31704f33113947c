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
#include <string>
#include <vector>

namespace tailcopy::harness::checker {

// Interleaving checker for the write-path protocol, independent of the
// event simulator. It models one file: a single sequential durable
// appender plus several racing cache-fill writers that put chunk values,
// get acks, and publish a readable-prefix length, all against one
// versioned key-value cache that can apply writes late, reorder them
// across chunks, and evict anything at any time. Readers follow the
// production read rule: cache for the published prefix with per-byte
// durable fallback, durable beyond it, stop at the first hole.
//
// Safety: every read returns an exact prefix of the produced bytes.
// Publish precondition: no writer publishes a length beyond what it has
// seen acked (measured against its own put spans from its own base).
// Termination: once nothing is left in flight, a full read returns
// every byte.
//
// The two seeded bugs pick the last writer as the culprit:
//  - kPartialFromPosition: the writer resumes mid-chunk and puts a chunk
//    value missing its head, placed at the chunk start. Reads that trust
//    the cache for that span return wrong bytes.
//  - kEarlyPointer: the writer publishes its issued frontier instead of
//    its acked frontier. The precondition monitor trips; reads stay
//    correct because unapplied chunks miss and fall back to durable.

enum class Mutation { kNone, kPartialFromPosition, kEarlyPointer };

struct ModelConfig {
  int n_chunks = 4;
  int chunk_bytes = 4;
  int cache_writers = 2;
  Mutation mutation = Mutation::kNone;
};

enum class ActKind : uint8_t {
  kDurableAppend,
  kFeed,
  kIssuePut,
  kApplyPut,
  kIssuePublish,
  kApplyPublish,
  kEvict,
  kRead,
};

struct Act {
  ActKind kind;
  int8_t writer = -1;  // kFeed..kApplyPublish
  int16_t arg = -1;    // kApplyPut: pending index; kEvict: chunk
};

struct TrialStats {
  int64_t trials = 0;
  int64_t steps = 0;
  int64_t reads = 0;
  // Trials (not events) that saw each violation class.
  int64_t byte_violation_trials = 0;
  int64_t publish_violation_trials = 0;
  int64_t termination_failures = 0;
  bool clean() const {
    return byte_violation_trials == 0 && publish_violation_trials == 0 &&
           termination_failures == 0;
  }
  // First failing schedule, greedily minimized, plus a readable rendering.
  std::vector<Act> counterexample;
  std::string counterexample_text;
};

/// Runs `trials` random schedules (deterministic in `seed`).
TrialStats run_trials(const ModelConfig& cfg, uint64_t seed, int64_t trials);

struct ExhaustiveStats {
  int64_t states = 0;
  int64_t transitions = 0;
  bool complete = false;  // false: stopped at max_states
  bool ok = false;        // no violation in any visited state
};

/// Walks every reachable interleaving (deduplicated by state) up to
/// `max_states`, checking safety in each state and termination in each
/// terminal state.
ExhaustiveStats run_exhaustive(const ModelConfig& cfg, int64_t max_states);

}  // namespace tailcopy::harness::checker
