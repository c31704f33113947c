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
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tailcopy/harness/checker.hpp"
#include "tailcopy/harness/scenario.hpp"
#include "tailcopy/harness/world.hpp"
#include "tailcopy/route/copy_tree.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitMonitorFailure = 1;
constexpr int kExitConfigError = 2;

constexpr const char* kTraceMagic = "#tailcopy-trace v1";

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw tailcopy::harness::ConfigError(path + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw tailcopy::harness::ConfigError(path + ": cannot write");
  out << data;
}

void print_summary(const tailcopy::harness::RunResult& r) {
  std::cout << "verdict: " << (r.pass() ? "PASS" : "FAIL")
            << " (safety=" << (r.safety_ok ? "ok" : "VIOLATED")
            << " termination=" << (r.termination_ok ? "ok" : "DID NOT QUIESCE")
            << " accounting=" << (r.accounting_ok ? "ok" : "MISMATCH")
            << ")\n";
  if (r.violation.found) {
    std::cout << "first violation: t=" << r.violation.at << " path="
              << r.violation.path << " offset=" << r.violation.offset
              << " reader=" << r.violation.reader << " ("
              << r.violation.detail << ")\n";
  }
  std::cout << "produced: " << r.produced_messages << " messages, "
            << r.produced_bytes << " bytes\n"
            << "delivered: " << r.delivered_messages << " emissions across "
            << r.consumer_reads << " reads\n"
            << "fallback reads: " << r.fallback_reads << " ("
            << r.fallback_bytes << " bytes), read failures: "
            << r.read_failures << ", throttled: " << r.throttled_reads
            << "\n"
            << "delivery delay p99: " << r.delay_p99 << " ms";
  if (r.stable_fallback_reads >= 0) {
    std::cout << " (stable window p99: " << r.stable_delay_p99
              << " ms, fallbacks: " << r.stable_fallback_reads << ")";
  }
  std::cout << "\nquiesced at: " << r.quiesced_at << " ms (ended "
            << r.ended_at << " ms)\n";
}

int cmd_run(const std::string& scenario_path, int64_t seed,
            const std::string& report_path, const std::string& trace_path,
            bool trace_stdout) {
  tailcopy::harness::Scenario sc =
      tailcopy::harness::load_scenario_file(scenario_path);
  tailcopy::harness::RunOptions opts;
  opts.seed = seed;
  std::string trace;
  if (!trace_path.empty() || trace_stdout) {
    opts.trace_sink = [&trace, trace_stdout](const std::string& line) {
      if (trace_stdout) std::cout << line << "\n";
      trace += line;
      trace += '\n';
    };
  }
  auto r = tailcopy::harness::run_scenario(sc, opts);
  if (!report_path.empty()) {
    if (report_path == "-") {
      std::cout << r.report_json;
    } else {
      write_file(report_path, r.report_json);
    }
  }
  if (!trace_path.empty()) {
    // Header embeds everything replay needs to reproduce the run.
    std::string head = std::string(kTraceMagic) + "\n#seed " +
                       std::to_string(seed >= 0 ? seed : (int64_t)sc.seed) +
                       "\n#scenario " +
                       nlohmann::json(slurp(scenario_path)).dump() + "\n";
    write_file(trace_path, head + trace);
  }
  print_summary(r);
  return r.pass() ? kExitPass : kExitMonitorFailure;
}

int cmd_replay(const std::string& trace_path) {
  std::string text = slurp(trace_path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTraceMagic) {
    throw tailcopy::harness::ConfigError(trace_path +
                                         ":1: not a trace file");
  }
  if (!std::getline(in, line) || line.rfind("#seed ", 0) != 0) {
    throw tailcopy::harness::ConfigError(trace_path + ":2: missing seed");
  }
  int64_t seed = std::stoll(line.substr(6));
  if (!std::getline(in, line) || line.rfind("#scenario ", 0) != 0) {
    throw tailcopy::harness::ConfigError(trace_path + ":3: missing scenario");
  }
  std::string sc_text;
  try {
    sc_text = nlohmann::json::parse(line.substr(10)).get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw tailcopy::harness::ConfigError(trace_path +
                                         ":3: bad scenario header");
  }
  tailcopy::harness::Scenario sc =
      tailcopy::harness::scenario_from_json(sc_text, trace_path);

  std::vector<std::string> want;
  while (std::getline(in, line)) want.push_back(line);

  int64_t n = 0;
  int64_t first_diff = -1;
  tailcopy::harness::RunOptions opts;
  opts.seed = seed;
  opts.trace_sink = [&](const std::string& got) {
    if (first_diff >= 0) return;
    if (n >= static_cast<int64_t>(want.size()) || want[n] != got) {
      first_diff = n;
    }
    n++;
  };
  auto r = tailcopy::harness::run_scenario(sc, opts);
  if (first_diff < 0 && n != static_cast<int64_t>(want.size())) {
    first_diff = n;  // recorded trace has extra lines
  }
  if (first_diff >= 0) {
    std::cout << "replay DIVERGED at event " << first_diff << " (line "
              << first_diff + 4 << " of " << trace_path << ")\n";
    return kExitMonitorFailure;
  }
  std::cout << "replay ok: " << n << " events match\n";
  return r.pass() ? kExitPass : kExitMonitorFailure;
}

int cmd_check(int chunks, int chunk_bytes, int writers, int64_t trials,
              uint64_t seed, const std::string& mutation,
              int64_t exhaustive_states) {
  tailcopy::harness::checker::ModelConfig cfg;
  cfg.n_chunks = chunks;
  cfg.chunk_bytes = chunk_bytes;
  cfg.cache_writers = writers;
  if (mutation == "partial_from_position") {
    cfg.mutation =
        tailcopy::harness::checker::Mutation::kPartialFromPosition;
  } else if (mutation == "early_pointer") {
    cfg.mutation = tailcopy::harness::checker::Mutation::kEarlyPointer;
  } else if (mutation != "none") {
    throw tailcopy::harness::ConfigError("unknown mutation: " + mutation);
  }
  auto st = tailcopy::harness::checker::run_trials(cfg, seed, trials);
  std::cout << "trials: " << st.trials << " (" << st.steps << " steps, "
            << st.reads << " reads)\n"
            << "byte violations: " << st.byte_violation_trials
            << " trials\npublish violations: " << st.publish_violation_trials
            << " trials\ntermination failures: " << st.termination_failures
            << "\n";
  if (!st.counterexample_text.empty()) {
    std::cout << "minimized counterexample (" << st.counterexample.size()
              << " steps):\n"
              << st.counterexample_text;
  }
  if (exhaustive_states > 0) {
    auto ex = tailcopy::harness::checker::run_exhaustive(cfg,
                                                         exhaustive_states);
    std::cout << "exhaustive: " << ex.states << " states, " << ex.transitions
              << " transitions, "
              << (ex.complete ? "complete" : "bound reached") << ", "
              << (ex.ok ? "clean" : "VIOLATION") << "\n";
    if (!ex.ok) return kExitMonitorFailure;
  }
  return st.clean() ? kExitPass : kExitMonitorFailure;
}

int cmd_build_tree(const std::string& graph_path, int source,
                   std::vector<int> dests, double alpha, double beta,
                   int max_depth) {
  tailcopy::route::ClusterGraph g =
      tailcopy::route::graph_from_json(slurp(graph_path));
  tailcopy::route::TreeConfig cfg;
  cfg.alpha_depth = alpha;
  cfg.beta_fanout = beta;
  cfg.max_depth = max_depth;
  auto tree = tailcopy::route::build_tree(g, source, dests, cfg);
  std::cout << tailcopy::route::tree_to_json(tree) << "\n";
  if (!tree.ok()) {
    std::cerr << "warning: " << tree.unreachable.size()
              << " destination(s) unreachable\n";
    return kExitMonitorFailure;
  }
  return kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tailcopy: deterministic cluster simulator for ordered "
               "file-based message delivery"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a scenario and verify it");
  std::string scenario_path;
  int64_t seed = -1;
  std::string report_path;
  std::string trace_path;
  bool trace_stdout = false;
  run->add_option("scenario", scenario_path, "scenario JSON file")
      ->required();
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--report", report_path,
                  "write the JSON report here ('-' for stdout)");
  run->add_option("--trace", trace_path, "record the event trace here");
  run->add_flag("--trace-stdout", trace_stdout,
                "stream the event trace to stdout");

  auto* chk = app.add_subcommand("check-interleavings",
                                 "randomized write-path protocol checker");
  int chunks = 4;
  int chunk_bytes = 4;
  int writers = 2;
  int64_t trials = 100000;
  uint64_t cseed = 1;
  std::string mutation = "none";
  int64_t exhaustive_states = 0;
  chk->add_option("--chunks", chunks, "chunks in the model file");
  chk->add_option("--chunk-bytes", chunk_bytes, "bytes per chunk");
  chk->add_option("--writers", writers, "racing cache writers");
  chk->add_option("--trials", trials, "random schedules to run");
  chk->add_option("--seed", cseed, "schedule seed");
  chk->add_option("--mutation", mutation,
                  "none | partial_from_position | early_pointer");
  chk->add_option("--exhaustive", exhaustive_states,
                  "also walk every interleaving up to this many states");

  auto* bt = app.add_subcommand("build-tree",
                                "build a copy tree from a graph JSON");
  std::string graph_path;
  int source = 0;
  std::vector<int> dests;
  double alpha = 0.1;
  double beta = 0.1;
  int max_depth = 4;
  bt->add_option("graph", graph_path, "graph JSON file")->required();
  bt->add_option("--source", source, "root cluster id")->required();
  bt->add_option("--dests", dests, "destination cluster ids")->required();
  bt->add_option("--alpha", alpha, "depth pressure");
  bt->add_option("--beta", beta, "fan-out pressure");
  bt->add_option("--max-depth", max_depth, "hop budget");

  auto* rp = app.add_subcommand("replay",
                                "re-run a recorded trace and verify it");
  std::string replay_path;
  rp->add_option("trace", replay_path, "trace file from run --trace")
      ->required();

  try {
    app.parse(argc, argv);
    if (*run) {
      return cmd_run(scenario_path, seed, report_path, trace_path,
                     trace_stdout);
    }
    if (*chk) {
      return cmd_check(chunks, chunk_bytes, writers, trials, cseed, mutation,
                       exhaustive_states);
    }
    if (*bt) {
      return cmd_build_tree(graph_path, source, dests, alpha, beta,
                            max_depth);
    }
    if (*rp) return cmd_replay(replay_path);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? kExitConfigError : kExitPass;
  } catch (const tailcopy::harness::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitConfigError;
}
