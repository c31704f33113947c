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
#include "tailcopy/harness/checker.hpp"

#include "doctest.h"

using namespace tailcopy::harness::checker;

namespace {

ModelConfig wide() { return {4, 4, 2, Mutation::kNone}; }   // 4x4, 2 writers
ModelConfig deep() { return {2, 2, 4, Mutation::kNone}; }   // 2x2, 4 writers

}  // namespace

TEST_CASE("random schedules are clean on both standard configs") {
  for (ModelConfig cfg : {wide(), deep()}) {
    auto st = run_trials(cfg, 11, 2000);
    INFO(st.counterexample_text);
    CHECK(st.clean());
    CHECK(st.trials == 2000);
    CHECK(st.reads > 0);
  }
}

TEST_CASE("chunk written from a mid-chunk position corrupts reads") {
  for (ModelConfig cfg : {wide(), deep()}) {
    cfg.mutation = Mutation::kPartialFromPosition;
    auto st = run_trials(cfg, 11, 500);
    CHECK(st.byte_violation_trials > 0);
    // The writer's own accounting is consistent, so the publish monitor
    // stays quiet; only the bytes give it away.
    CHECK(st.publish_violation_trials == 0);
    CHECK(!st.counterexample.empty());
    CHECK(st.counterexample_text.find("got") != std::string::npos);
  }
}

TEST_CASE("publishing ahead of acks trips the monitor but not the bytes") {
  for (ModelConfig cfg : {wide(), deep()}) {
    cfg.mutation = Mutation::kEarlyPointer;
    auto st = run_trials(cfg, 11, 500);
    CHECK(st.publish_violation_trials > 0);
    CHECK(st.byte_violation_trials == 0);
    CHECK(st.counterexample_text.find("beyond acked") != std::string::npos);
  }
}

TEST_CASE("exhaustive walk of a tiny config") {
  ModelConfig cfg{1, 2, 2, Mutation::kNone};
  auto ex = run_exhaustive(cfg, 2000000);
  CHECK(ex.ok);
  CHECK(ex.complete);
  CHECK(ex.states > 100);

  cfg.mutation = Mutation::kPartialFromPosition;
  auto bad = run_exhaustive(cfg, 2000000);
  CHECK(!bad.ok);
}

TEST_CASE("minimized counterexamples replay deterministically") {
  ModelConfig cfg = wide();
  cfg.mutation = Mutation::kPartialFromPosition;
  auto a = run_trials(cfg, 3, 200);
  auto b = run_trials(cfg, 3, 200);
  REQUIRE(!a.counterexample.empty());
  CHECK(a.counterexample_text == b.counterexample_text);
  // Greedy minimization should strip it well below a full schedule.
  CHECK(a.counterexample.size() < 30);
}
