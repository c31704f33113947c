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
#include <string>

#include "tailcopy/harness/monitor.hpp"
#include "tailcopy/harness/scenario.hpp"
#include "tailcopy/sim/sim.hpp"

namespace tailcopy::harness {

struct RunOptions {
  int64_t seed = -1;  // >= 0 overrides the scenario's seed
  std::function<void(const std::string&)> trace_sink;
};

struct RunResult {
  bool safety_ok = true;        // every observed byte matched the oracle
  bool termination_ok = false;  // quiesced with everything delivered
  bool accounting_ok = true;    // byte/message conservation checks
  Monitor::Violation violation;
  sim::TimeMs quiesced_at = -1;  // -1: never quiesced
  sim::TimeMs ended_at = 0;

  // Convenience aggregates pulled out of the report.
  int64_t produced_bytes = 0;  // data files only
  int64_t produced_messages = 0;
  int64_t delivered_messages = 0;
  int64_t consumer_reads = 0;
  int64_t fallback_reads = 0;
  int64_t fallback_bytes = 0;
  int64_t read_failures = 0;
  int64_t throttled_reads = 0;
  int64_t delay_p99 = -1;             // whole run, all clusters
  int64_t stable_delay_p99 = -1;      // -1 when no stable window given
  int64_t stable_fallback_reads = -1;
  int autoscale_ups = 0;
  int autoscale_downs = 0;
  int promotions = 0;

  /// Full machine-readable report; byte-identical for equal
  /// (scenario, seed) pairs.
  std::string report_json;

  bool pass() const { return safety_ok && termination_ok && accounting_ok; }
};

/// Builds the fleet the scenario describes, runs it until it quiesces (or
/// the duration + drain deadline passes), and renders verdict + report.
RunResult run_scenario(const Scenario& sc, const RunOptions& opts = {});

}  // namespace tailcopy::harness
