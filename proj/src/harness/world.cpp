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
#include "tailcopy/harness/world.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tailcopy/cache/instance.hpp"
#include "tailcopy/common/hash.hpp"
#include "tailcopy/file/codec.hpp"
#include "tailcopy/harness/consumer.hpp"
#include "tailcopy/harness/metrics.hpp"
#include "tailcopy/harness/producer.hpp"
#include "tailcopy/hop/scheduler.hpp"
#include "tailcopy/log/durable_log.hpp"
#include "tailcopy/route/copy_tree.hpp"

namespace tailcopy::harness {
namespace {

using nlohmann::ordered_json;

constexpr sim::TimeMs kQuiesceCheckMs = 250;
constexpr sim::TimeMs kPromotionCheckMs = 500;
constexpr sim::TimeMs kConsumerMaxDelayMs = 1000;  // delayed-read tolerance
constexpr int kMaxWorkers = 16;  // worker-pool autoscale ceiling

struct Cluster {
  int id = -1;
  const ClusterSpec* spec = nullptr;
  std::unique_ptr<cache::Instance> data;
  std::unique_ptr<cache::Instance> meta;
  std::unique_ptr<log::DurableLog> durable;
  std::vector<sim::Pid> readers;
  std::vector<sim::Pid> writers;
  bool healthy = true;
  hop::ClusterRuntime rt() const {
    return {id, data.get(), meta.get(), durable.get()};
  }
};

struct PathPair {
  std::string data;
  std::string index;
};

struct StreamState {
  const StreamSpec* spec = nullptr;
  route::CopyTree tree;
  std::vector<PathPair> paths;  // by shard
};

class World {
 public:
  World(const Scenario& sc, const RunOptions& opts)
      : sc_(sc),
        seed_(opts.seed >= 0 ? static_cast<uint64_t>(opts.seed) : sc.seed),
        sim_(seed_),
        metrics_(sc.metrics_window_ms) {
    if (opts.trace_sink) sim_.set_trace_sink(opts.trace_sink);
    build_clusters();
    build_links();
    build_streams();
    build_consumers();
    schedule_faults();
  }

  RunResult run();

 private:
  // --- construction ----------------------------------------------------

  void build_clusters() {
    for (size_t i = 0; i < sc_.clusters.size(); i++) {
      const ClusterSpec& cs = sc_.clusters[i];
      auto cl = std::make_unique<Cluster>();
      cl->id = static_cast<int>(i);
      cl->spec = &cs;
      cl->data = std::make_unique<cache::Instance>(
          sim_, cs.name + "/data", cache_config(cs.data));
      cl->meta = std::make_unique<cache::Instance>(
          sim_, cs.name + "/meta", cache_config(cs.meta));
      log::DurableLog::Config dc;
      dc.max_reads_per_s = cs.durable_max_reads_per_s;
      dc.max_read_bytes_per_s = cs.durable_max_read_bytes_per_s;
      cl->durable = std::make_unique<log::DurableLog>(sim_, dc);
      for (int r = 0; r < cs.readers; r++) {
        cl->readers.push_back(
            sim_.spawn_process(cs.name + "/reader" + std::to_string(r)));
      }
      for (int w = 0; w < cs.writers; w++) {
        cl->writers.push_back(
            sim_.spawn_process(cs.name + "/writer" + std::to_string(w)));
      }
      ring_[{cl->id, 0}] = init_ring(cs.data.replicas);
      ring_[{cl->id, 1}] = init_ring(cs.meta.replicas);
      clusters_.push_back(std::move(cl));
    }
  }

  static cache::Instance::Config cache_config(const CacheSpec& s) {
    cache::Instance::Config c;
    c.n_replicas = s.replicas;
    c.capacity_bytes = s.capacity_bytes;
    c.ttl_ms = s.ttl_ms;
    c.max_qps = s.max_qps;
    c.max_bps = s.max_bps;
    return c;
  }

  static std::vector<int> init_ring(int n) {
    std::vector<int> v(n);
    for (int i = 0; i < n; i++) v[i] = i;
    return v;
  }

  void build_links() {
    graph_.reset(static_cast<int>(clusters_.size()));
    for (const EdgeSpec& e : sc_.edges) {
      links_[{e.a, e.b}] = sim_.add_link(e.latency_ms, e.bandwidth_bps);
      links_[{e.b, e.a}] = sim_.add_link(e.latency_ms, e.bandwidth_bps);
      graph_.add_edge(e.a, e.b, e.cost);
    }
  }

  sim::Sim::LinkId link(int from, int to) const {
    auto it = links_.find({from, to});
    return it == links_.end() ? sim::Sim::LinkId{} : it->second;
  }

  void build_streams() {
    for (size_t si = 0; si < sc_.streams.size(); si++) {
      const StreamSpec& sp = sc_.streams[si];
      StreamState st;
      st.spec = &sp;
      for (int sh = 0; sh < sp.shards; sh++) {
        std::string base =
            "/streams/" + sp.name + "/" + std::to_string(sh) + "/";
        st.paths.push_back({base + "data", base + "index"});
      }
      st.tree = route::build_tree(graph_, sp.source, sp.destinations, sc_.tree);
      if (!st.tree.ok()) {
        throw ConfigError("stream '" + sp.name +
                          "': destinations unreachable from the source");
      }
      streams_.push_back(std::move(st));
    }
    // Schedulers for every (stream, tree member), children wired after all
    // of a stream's schedulers exist.
    for (size_t si = 0; si < streams_.size(); si++) {
      for (const auto& [node, par] : streams_[si].tree.parent) {
        make_scheduler(static_cast<int>(si), node);
      }
      for (const auto& [node, par] : streams_[si].tree.parent) {
        if (par < 0) continue;
        scheds_.at({static_cast<int>(si), par})
            ->add_child({scheds_.at({static_cast<int>(si), node}).get(),
                         link(par, node)});
      }
    }
    for (auto& [key, s] : scheds_) {
      sim::TimeMs at = clusters_[key.second]->spec->joins_at_ms;
      if (at <= 0) {
        s->start();
      } else {
        hop::Scheduler* sp2 = s.get();
        sim_.schedule(at, [sp2] { sp2->start(); });
      }
    }
    // Rate-limited joiners attach to every stream at their join time.
    for (auto& cl : clusters_) {
      if (!cl->spec->rate_limited_join) continue;
      int c = cl->id;
      sim_.schedule(cl->spec->joins_at_ms, [this, c] { rl_join(c); });
    }
    build_producers();
  }

  void make_scheduler(int si, int node) {
    StreamState& st = streams_[si];
    int par = st.tree.parent.at(node);
    hop::Scheduler::Env env;
    env.self = clusters_[node]->rt();
    // The source scheduler runs no ops, but its balance timer still walks
    // the worker pools, so the pointers must be valid for every node.
    env.writers = &clusters_[node]->writers;
    env.up_readers = &clusters_[node]->readers;
    if (par >= 0) {
      env.has_upstream = true;
      env.up = clusters_[par]->rt();
      env.up_link = link(par, node);
      env.up_readers = &clusters_[par]->readers;
      env.up_lengths = [this, par](sim::Pid, const std::string& path) {
        return oracle_len(par, path);
      };
    }
    auto s = std::make_unique<hop::Scheduler>(
        sim_, "sched/" + st.spec->name + "/" + clusters_[node]->spec->name,
        sc_.sched, std::move(env));
    scheds_[{si, node}] = std::move(s);
  }

  /// Freshest length record among the live metadata owners, merged with
  /// the durable store's own length. This is what a hop reader's local
  /// metadata watcher would know; consumers carry the real polling load.
  file::FileMeta oracle_len(int cluster, const std::string& path) const {
    const Cluster& c = *clusters_[cluster];
    file::FileMeta m;
    uint64_t best = 0;
    cache::Key key = cache::meta_key(path);
    for (int idx : c.meta->owners_of(key)) {
      if (!c.meta->replica_alive(idx)) continue;
      auto v = c.meta->peek(idx, key);
      if (!v || v->bytes.size() < file::kFileMetaSize) continue;
      if (v->version >= best) {
        best = v->version;
        m = file::decode_file_meta(v->bytes);
      }
    }
    m.durable_len = std::max(m.durable_len, c.durable->poll_length(path));
    return m;
  }

  void build_producers() {
    for (size_t si = 0; si < streams_.size(); si++) {
      const StreamSpec& sp = *streams_[si].spec;
      int64_t slice = std::max<int64_t>(1, sp.rate_bps / sp.shards);
      for (int sh = 0; sh < sp.shards; sh++) {
        Producer::Config pc;
        pc.stream = sp.name;
        pc.shard = sh;
        pc.data_path = streams_[si].paths[sh].data;
        pc.index_path = streams_[si].paths[sh].index;
        pc.message_bytes = sp.message_bytes;
        pc.rate_bps = slice;
        pc.buffer_ms = sp.buffer_ms;
        pc.start_ms = sp.start_ms;
        pc.geom = sc_.sched.op.geom;
        pc.retry_ms = sc_.sched.op.retry_ms;
        uint64_t payload_seed =
            common::fnv1a64_u64(seed_, common::fnv1a64(pc.data_path));
        int src = sp.source;
        int sidx = static_cast<int>(si);
        auto notify = [this, sidx, src](const std::string& path) {
          auto& s = scheds_.at({sidx, src});
          if (s->alive()) s->notify_produced(path);
        };
        producer_index_[{sidx, sh}] = static_cast<int>(producers_.size());
        producers_.push_back(std::make_unique<Producer>(
            sim_, clusters_[src]->rt(), src, pc, payload_seed, monitor_,
            metrics_, notify));
        Producer* p = producers_.back().get();
        if (sp.stop_ms >= 0 && sp.stop_ms < sc_.duration_ms) {
          sim_.schedule(sp.stop_ms, [p] { p->stop(); });
        }
        // Unconditional stop at the duration covers producers a fault
        // resumed later.
        sim_.schedule(sc_.duration_ms, [p] { p->stop(); });
      }
    }
  }

  void rl_join(int c) {
    for (size_t si = 0; si < streams_.size(); si++) {
      StreamState& st = streams_[si];
      if (st.tree.contains(c)) continue;
      if (!route::add_cluster(st.tree, graph_, c, sc_.tree)) {
        metrics_.event(sim_.now(), "join-failed cluster=" +
                                       clusters_[c]->spec->name +
                                       " stream=" + st.spec->name);
        continue;
      }
      int par = st.tree.parent.at(c);
      make_scheduler(static_cast<int>(si), c);
      hop::Scheduler* s = scheds_.at({static_cast<int>(si), c}).get();
      s->set_rate_limited(true);
      s->start();
      scheds_.at({static_cast<int>(si), par})->add_child({s, link(par, c)});
      pending_promotions_.emplace_back(static_cast<int>(si), c);
      metrics_.event(sim_.now(),
                     "join cluster=" + clusters_[c]->spec->name + " stream=" +
                         st.spec->name + " parent=" +
                         clusters_[par]->spec->name);
    }
  }

  void build_consumers() {
    for (const ConsumerSpec& cs : sc_.consumers) spawn_consumers(cs, 0);
  }

  /// start_ms (and the spawn stagger) count from `base`: zero for the
  /// scenario's own consumers, the fault time for spikes.
  void spawn_consumers(const ConsumerSpec& cs, sim::TimeMs base) {
    for (int i = 0; i < cs.count; i++) {
      int serial = consumer_seq_++;
      sim::TimeMs at = base + cs.start_ms + i * cs.spawn_every_ms;
      ConsumerSpec spec = cs;
      sim_.schedule(std::max<sim::TimeMs>(0, at - sim_.now()),
                    [this, spec, i, serial] { spawn_one(spec, i, serial); });
    }
  }

  void spawn_one(const ConsumerSpec& cs, int ordinal, int serial) {
    std::vector<Consumer::ShardTarget> targets;
    std::vector<std::pair<int, int>> keys;
    for (size_t si = 0; si < streams_.size(); si++) {
      const StreamSpec& sp = *streams_[si].spec;
      if (!cs.streams.empty() &&
          std::find(cs.streams.begin(), cs.streams.end(), sp.name) ==
              cs.streams.end()) {
        continue;
      }
      if (!streams_[si].tree.contains(cs.cluster)) continue;
      int take = std::min(cs.shards_each, sp.shards);
      for (int j = 0; j < take; j++) {
        int sh = (ordinal * cs.shards_each + j) % sp.shards;
        targets.push_back({sp.name, sh, streams_[si].paths[sh].data,
                           streams_[si].paths[sh].index});
        keys.emplace_back(static_cast<int>(si), sh);
      }
    }
    if (targets.empty()) return;
    Consumer::Config cc;
    cc.name = "consumer/" + clusters_[cs.cluster]->spec->name + "/" +
              std::to_string(serial);
    cc.poll_ms = cs.poll_ms;
    cc.rate_cap_bps = cs.rate_cap_bps;
    cc.max_delay_ms = kConsumerMaxDelayMs;
    cc.geom = sc_.sched.op.geom;
    cc.hedge_ms = sc_.sched.op.hedge_ms;
    cc.phase_timeout_ms = sc_.sched.op.phase_timeout_ms;
    consumers_.push_back(std::make_unique<Consumer>(
        sim_, clusters_[cs.cluster]->rt(), cs.cluster, cc, std::move(targets),
        monitor_, metrics_));
    consumer_targets_.push_back(std::move(keys));
  }

  // --- faults ----------------------------------------------------------

  void schedule_faults() {
    for (const FaultSpec& f : sc_.faults) {
      sim_.schedule(f.at_ms, [this, f] { apply_fault(f); });
    }
  }

  cache::Instance* instance_of(const FaultSpec& f) {
    Cluster& cl = *clusters_[f.cluster];
    return f.instance == "meta" ? cl.meta.get() : cl.data.get();
  }

  int instance_slot(const FaultSpec& f) { return f.instance == "meta" ? 1 : 0; }

  std::string fault_tag(const FaultSpec& f) {
    std::string s = "fault " + f.action;
    if (f.cluster >= 0) s += " cluster=" + clusters_[f.cluster]->spec->name;
    if (!f.instance.empty()) s += " instance=" + f.instance;
    if (f.replica >= 0) s += " replica=" + std::to_string(f.replica);
    if (!f.pool.empty()) s += " pool=" + f.pool;
    if (f.index >= 0) s += " index=" + std::to_string(f.index);
    if (f.a >= 0) s += " edge=" + std::to_string(f.a) + "-" +
                       std::to_string(f.b);
    if (!f.stream.empty()) s += " stream=" + f.stream;
    return s;
  }

  void apply_fault(const FaultSpec& f) {
    metrics_.event(sim_.now(), fault_tag(f));
    const std::string& a = f.action;
    if (a == "kill_replica") {
      instance_of(f)->kill_replica(f.replica);
    } else if (a == "restart_replica") {
      instance_of(f)->restart_replica(f.replica);
    } else if (a == "spawn_replica") {
      int idx = instance_of(f)->spawn_replica();
      ring_[{f.cluster, instance_slot(f)}].push_back(idx);
    } else if (a == "remove_replica") {
      instance_of(f)->remove_replica(f.replica);
      auto& r = ring_[{f.cluster, instance_slot(f)}];
      r.erase(std::remove(r.begin(), r.end(), f.replica), r.end());
    } else if (a == "kill_worker") {
      auto& pool = f.pool == "readers" ? clusters_[f.cluster]->readers
                                       : clusters_[f.cluster]->writers;
      sim_.kill_process(pool[f.index]);
    } else if (a == "restart_worker") {
      auto& pool = f.pool == "readers" ? clusters_[f.cluster]->readers
                                       : clusters_[f.cluster]->writers;
      pool[f.index] = sim_.restart_process(pool[f.index]);
    } else if (a == "spawn_worker") {
      auto& pool = f.pool == "readers" ? clusters_[f.cluster]->readers
                                       : clusters_[f.cluster]->writers;
      const char* kind = f.pool == "readers" ? "/reader" : "/writer";
      pool.push_back(sim_.spawn_process(clusters_[f.cluster]->spec->name +
                                        kind + std::to_string(pool.size())));
    } else if (a == "kill_scheduler" || a == "restart_scheduler") {
      for (auto& [key, s] : scheds_) {
        if (key.second != f.cluster) continue;
        if (!f.stream.empty() && streams_[key.first].spec->name != f.stream) {
          continue;
        }
        if (a == "kill_scheduler") {
          s->kill();
        } else {
          s->restart();
        }
      }
    } else if (a == "link_down") {
      links_admin_down_.insert({std::min(f.a, f.b), std::max(f.a, f.b)});
      refresh_link(f.a, f.b);
    } else if (a == "link_up") {
      links_admin_down_.erase({std::min(f.a, f.b), std::max(f.a, f.b)});
      refresh_link(f.a, f.b);
    } else if (a == "link_latency") {
      sim_.set_link_latency(link(f.a, f.b), f.latency_ms);
      sim_.set_link_latency(link(f.b, f.a), f.latency_ms);
    } else if (a == "double_assign") {
      int si = stream_index(f.stream);
      const PathPair& pp = streams_[si].paths[std::max(0, f.shard)];
      const std::string& path = f.file == "index" ? pp.index : pp.data;
      auto it = scheds_.find({si, f.cluster});
      if (it != scheds_.end()) {
        it->second->force_duplicate_assignment(path, f.kind != "durable");
      }
    } else if (a == "consumer_spike") {
      spawn_consumers(f.spike, sim_.now());
    } else if (a == "stop_producer" || a == "start_producer") {
      int si = stream_index(f.stream);
      for (int sh = 0; sh < streams_[si].spec->shards; sh++) {
        if (f.shard >= 0 && f.shard != sh) continue;
        Producer* p = producers_[producer_index_.at({si, sh})].get();
        if (a == "stop_producer") {
          p->stop();
        } else {
          p->resume();
        }
      }
    } else if (a == "cluster_outage") {
      set_outage(f.cluster, true);
    } else if (a == "cluster_recover") {
      set_outage(f.cluster, false);
    }
  }

  int stream_index(const std::string& name) const {
    for (size_t i = 0; i < streams_.size(); i++) {
      if (streams_[i].spec->name == name) return static_cast<int>(i);
    }
    return 0;  // validation guarantees the name resolves
  }

  /// A link is usable iff no admin fault holds it down and both endpoint
  /// clusters are healthy.
  void refresh_link(int a, int b) {
    auto ab = link(a, b);
    auto ba = link(b, a);
    if (!ab.assigned()) return;
    bool up = !links_admin_down_.count({std::min(a, b), std::max(a, b)}) &&
              clusters_[a]->healthy && clusters_[b]->healthy;
    sim_.set_link_up(ab, up);
    sim_.set_link_up(ba, up);
  }

  void set_outage(int c, bool down) {
    clusters_[c]->healthy = !down;
    graph_.node_healthy[c] = !down;
    for (const EdgeSpec& e : sc_.edges) {
      if (e.a == c || e.b == c) refresh_link(e.a, e.b);
    }
    if (!down) return;
    // Strand nobody: consumers of the dead cluster re-point to the nearest
    // healthy one and stay there.
    int target = route::reroute_consumers(graph_, c);
    for (auto& con : consumers_) {
      if (con->cluster() != c) continue;
      if (target < 0) {
        metrics_.event(sim_.now(), "reroute-failed consumer=" + con->name());
        continue;
      }
      con->retarget(clusters_[target]->rt(), target);
      metrics_.event(sim_.now(), "reroute consumer=" + con->name() + " to=" +
                                     clusters_[target]->spec->name);
    }
  }

  // --- periodic work ---------------------------------------------------

  void promotion_tick() {
    for (auto it = pending_promotions_.begin();
         it != pending_promotions_.end();) {
      auto [si, c] = *it;
      hop::Scheduler* s = scheds_.at({si, c}).get();
      size_t want = 2 * static_cast<size_t>(streams_[si].spec->shards);
      if (s->alive() && s->files().size() >= want && s->live_op_count() > 0 &&
          s->all_caught_up()) {
        route::promote_cluster(streams_[si].tree, c);
        s->set_rate_limited(false);
        result_.promotions++;
        metrics_.event(sim_.now(),
                       "promote cluster=" + clusters_[c]->spec->name +
                           " stream=" + streams_[si].spec->name);
        it = pending_promotions_.erase(it);
      } else {
        ++it;
      }
    }
    sim_.schedule(kPromotionCheckMs, [this] { promotion_tick(); });
  }

  void metrics_tick() {
    sim::TimeMs now = sim_.now();
    int64_t win = now / sc_.metrics_window_ms - 1;
    for (auto& cl : clusters_) {
      sample_window(*cl, 0, *cl->data, win);
      sample_window(*cl, 1, *cl->meta, win);
    }
    sample_hop_lag(now);
    if (!monitor_.ok() && stopped_at_ < 0) {
      stopped_at_ = now;
      sim_.request_stop();
      return;
    }
    sim_.schedule(sc_.metrics_window_ms, [this] { metrics_tick(); });
  }

  void sample_window(Cluster& cl, int which, cache::Instance& inst,
                     int64_t win) {
    int64_t reqs = 0;
    int64_t bytes = 0;
    for (int i = 0; i < inst.replica_count(); i++) {
      auto cur = inst.offered(i);
      auto& prev = offered_metrics_prev_[{cl.id, which, i}];
      reqs += cur.reqs - prev.reqs;
      bytes += cur.bytes - prev.bytes;
      prev = {cur.reqs, cur.bytes};
    }
    metrics_.cache_window(cl.id, which == 1 ? "meta" : "data", win, reqs,
                          bytes);
  }

  void sample_hop_lag(sim::TimeMs now) {
    for (size_t si = 0; si < streams_.size(); si++) {
      StreamState& st = streams_[si];
      for (const auto& [node, par] : st.tree.parent) {
        if (par < 0 || !clusters_[node]->healthy) continue;
        for (int sh = 0; sh < st.spec->shards; sh++) {
          const std::string& path = st.paths[sh].data;
          int64_t len = clusters_[node]->durable->poll_length(path);
          int64_t& last = lag_last_len_[{node, path}];
          if (len <= last) continue;
          last = len;
          Producer* p =
              producers_[producer_index_.at({static_cast<int>(si), sh})].get();
          sim::TimeMs at = p->flushed_at(len);
          if (at >= 0) metrics_.hop_arrival_lag(node, now - at);
        }
      }
    }
  }

  void autoscale_tick() {
    const AutoscaleSpec& as = sc_.autoscale;
    for (auto& cl : clusters_) {
      scale_instance(*cl, 0, *cl->data);
      scale_instance(*cl, 1, *cl->meta);
    }
    if (as.egress_bytes_per_reader > 0 || as.ingress_bytes_per_writer > 0) {
      scale_workers();
    }
    sim_.schedule(as.check_ms, [this] { autoscale_tick(); });
  }

  void scale_instance(Cluster& cl, int which, cache::Instance& inst) {
    const AutoscaleSpec& as = sc_.autoscale;
    if (as.qps_per_replica == 0 && as.bps_per_replica == 0) return;
    int64_t reqs = 0;
    int64_t bytes = 0;
    for (int i = 0; i < inst.replica_count(); i++) {
      auto cur = inst.offered(i);
      auto& prev = offered_prev_[{cl.id, which, i}];
      reqs += cur.reqs - prev.reqs;
      bytes += cur.bytes - prev.bytes;
      prev = {cur.reqs, cur.bytes};
    }
    auto& members = ring_[{cl.id, which}];
    int n = static_cast<int>(members.size());
    if (n == 0) return;
    int64_t qps = reqs * 1000 / as.check_ms / n;
    int64_t bps = bytes * 1000 / as.check_ms / n;
    const char* iname = which == 1 ? "meta" : "data";
    bool over = (as.qps_per_replica > 0 && qps > as.qps_per_replica) ||
                (as.bps_per_replica > 0 && bps > as.bps_per_replica);
    bool under =
        (as.qps_per_replica == 0 ||
         qps < static_cast<int64_t>(as.low_watermark *
                                    static_cast<double>(as.qps_per_replica))) &&
        (as.bps_per_replica == 0 ||
         bps < static_cast<int64_t>(as.low_watermark *
                                    static_cast<double>(as.bps_per_replica)));
    std::pair<int, int> lowkey{cl.id, which};
    if (over) {
      low_since_.erase(lowkey);
      if (!inst.migrating() && n < as.max_replicas) {
        int idx = inst.spawn_replica();
        members.push_back(idx);
        result_.autoscale_ups++;
        metrics_.event(sim_.now(), "scale-up cluster=" + cl.spec->name + " " +
                                       iname + " replicas=" +
                                       std::to_string(members.size()));
      }
      return;
    }
    int floor = which == 1 ? cl.spec->meta.replicas : cl.spec->data.replicas;
    if (under && n > floor) {
      auto [it, fresh] = low_since_.try_emplace(lowkey, sim_.now());
      if (!fresh && sim_.now() - it->second >= as.scale_down_after_ms &&
          !inst.migrating()) {
        int idx = members.back();
        members.pop_back();
        inst.remove_replica(idx);
        result_.autoscale_downs++;
        metrics_.event(sim_.now(), "scale-down cluster=" + cl.spec->name +
                                       " " + iname + " replicas=" +
                                       std::to_string(members.size()));
        it->second = sim_.now();  // cooldown before the next removal
      }
    } else {
      low_since_.erase(lowkey);
    }
  }

  void scale_workers() {
    const AutoscaleSpec& as = sc_.autoscale;
    std::map<int, int64_t> ingress;
    std::map<int, int64_t> egress;
    for (auto& [key, s] : scheds_) {
      auto [si, c] = key;
      int64_t bytes = 0;
      for (const auto& path : s->files()) {
        for (bool cache_op : {false, true}) {
          if (auto op = s->op_for(path, cache_op)) {
            bytes += op->stats().bytes_sent;
          }
        }
      }
      ingress[c] += bytes;
      auto pit = streams_[si].tree.parent.find(c);
      if (pit != streams_[si].tree.parent.end() && pit->second >= 0) {
        egress[pit->second] += bytes;
      }
    }
    for (auto& cl : clusters_) {
      if (as.ingress_bytes_per_writer > 0) {
        int64_t rate = std::max<int64_t>(0, ingress[cl->id] -
                                                ingress_prev_[cl->id]) *
                       1000 / as.check_ms;
        ingress_prev_[cl->id] = ingress[cl->id];
        if (rate / static_cast<int64_t>(cl->writers.size()) >
                as.ingress_bytes_per_writer &&
            static_cast<int>(cl->writers.size()) < kMaxWorkers) {
          cl->writers.push_back(sim_.spawn_process(
              cl->spec->name + "/writer" + std::to_string(cl->writers.size())));
          metrics_.event(sim_.now(), "scale-up cluster=" + cl->spec->name +
                                         " writers=" +
                                         std::to_string(cl->writers.size()));
        }
      }
      if (as.egress_bytes_per_reader > 0) {
        int64_t rate = std::max<int64_t>(0, egress[cl->id] -
                                                egress_prev_[cl->id]) *
                       1000 / as.check_ms;
        egress_prev_[cl->id] = egress[cl->id];
        if (rate / static_cast<int64_t>(cl->readers.size()) >
                as.egress_bytes_per_reader &&
            static_cast<int>(cl->readers.size()) < kMaxWorkers) {
          cl->readers.push_back(sim_.spawn_process(
              cl->spec->name + "/reader" + std::to_string(cl->readers.size())));
          metrics_.event(sim_.now(), "scale-up cluster=" + cl->spec->name +
                                         " readers=" +
                                         std::to_string(cl->readers.size()));
        }
      }
    }
  }

  void quiesce_tick() {
    if (quiesced()) {
      result_.quiesced_at = sim_.now();
      metrics_.event(sim_.now(), "quiesced");
      stopped_at_ = sim_.now();
      sim_.request_stop();
      return;
    }
    sim_.schedule(kQuiesceCheckMs, [this] { quiesce_tick(); });
  }

  bool quiesced() const {
    for (const auto& p : producers_) {
      if (p->running() || !p->drained()) return false;
    }
    for (size_t si = 0; si < streams_.size(); si++) {
      const StreamState& st = streams_[si];
      for (const auto& [node, par] : st.tree.parent) {
        if (!clusters_[node]->healthy) continue;
        for (int sh = 0; sh < st.spec->shards; sh++) {
          const PathPair& pp = st.paths[sh];
          if (clusters_[node]->durable->poll_length(pp.data) !=
              monitor_.produced_len(pp.data)) {
            return false;
          }
          if (clusters_[node]->durable->poll_length(pp.index) !=
              monitor_.produced_len(pp.index)) {
            return false;
          }
        }
      }
    }
    for (const auto& c : consumers_) {
      if (!c->caught_up(monitor_)) return false;
    }
    return true;
  }

  // --- verdict + report ------------------------------------------------

  RunResult finish();
  ordered_json dist_json(std::vector<int64_t> v) const;
  ordered_json instance_json(const Cluster& cl, int which,
                             const cache::Instance& inst) const;

  const Scenario& sc_;
  uint64_t seed_;
  sim::Sim sim_;
  Monitor monitor_;
  Metrics metrics_;
  RunResult result_;
  route::ClusterGraph graph_;
  std::vector<std::unique_ptr<Cluster>> clusters_;
  std::map<std::pair<int, int>, sim::Sim::LinkId> links_;
  std::set<std::pair<int, int>> links_admin_down_;
  std::vector<StreamState> streams_;
  std::vector<std::unique_ptr<Producer>> producers_;
  std::map<std::pair<int, int>, int> producer_index_;  // (stream, shard)
  std::map<std::pair<int, int>, std::unique_ptr<hop::Scheduler>> scheds_;
  std::vector<std::unique_ptr<Consumer>> consumers_;
  std::vector<std::vector<std::pair<int, int>>> consumer_targets_;
  std::vector<std::pair<int, int>> pending_promotions_;
  int consumer_seq_ = 0;
  // (cluster, instance, replica) -> last sampled cumulative offered load.
  struct Snap {
    int64_t reqs = 0;
    int64_t bytes = 0;
  };
  std::map<std::tuple<int, int, int>, Snap> offered_prev_;
  std::map<std::tuple<int, int, int>, Snap> offered_metrics_prev_;
  std::map<std::pair<int, int>, std::vector<int>> ring_;  // live ring members
  std::map<std::pair<int, int>, sim::TimeMs> low_since_;
  std::map<int, int64_t> ingress_prev_;
  std::map<int, int64_t> egress_prev_;
  std::map<std::pair<int, std::string>, int64_t> lag_last_len_;
  sim::TimeMs stopped_at_ = -1;
};

RunResult World::run() {
  sim_.schedule(sc_.metrics_window_ms, [this] { metrics_tick(); });
  sim_.schedule(kPromotionCheckMs, [this] { promotion_tick(); });
  if (sc_.autoscale.enabled) {
    sim_.schedule(sc_.autoscale.check_ms, [this] { autoscale_tick(); });
  }
  sim_.schedule(sc_.duration_ms + kQuiesceCheckMs, [this] { quiesce_tick(); });
  sim_.run_until(sc_.duration_ms + sc_.drain_ms);
  return finish();
}

ordered_json World::dist_json(std::vector<int64_t> v) const {
  ordered_json d;
  d["count"] = static_cast<int64_t>(v.size());
  if (v.empty()) {
    d["p50"] = -1;
    d["p95"] = -1;
    d["p99"] = -1;
    d["p999"] = -1;
    d["max"] = -1;
    return d;
  }
  std::sort(v.begin(), v.end());
  d["p50"] = percentile(v, 0.50);
  d["p95"] = percentile(v, 0.95);
  d["p99"] = percentile(v, 0.99);
  d["p999"] = percentile(v, 0.999);
  d["max"] = v.back();
  return d;
}

ordered_json World::instance_json(const Cluster& cl, int which,
                                  const cache::Instance& inst) const {
  ordered_json j;
  auto rit = ring_.find({cl.id, which});
  j["replicas"] = rit == ring_.end()
                      ? 0
                      : static_cast<int64_t>(rit->second.size());
  int alive = 0;
  int64_t off_reqs = 0;
  int64_t off_bytes = 0;
  for (int i = 0; i < inst.replica_count(); i++) {
    if (inst.replica_alive(i)) alive++;
    auto o = inst.offered(i);
    off_reqs += o.reqs;
    off_bytes += o.bytes;
  }
  j["alive"] = alive;
  j["offered_reqs"] = off_reqs;
  j["offered_bytes"] = off_bytes;
  const auto& s = inst.stats();
  j["puts"] = s.puts;
  j["put_zero_ack"] = s.put_zero_ack;
  j["relaxed_gets"] = s.relaxed_gets;
  j["consistent_gets"] = s.consistent_gets;
  j["hits"] = s.hits;
  j["misses"] = s.misses;
  j["errors"] = s.errors;
  j["rejects"] = s.rejects;
  j["ttl_evictions"] = s.ttl_evictions;
  j["capacity_evictions"] = s.capacity_evictions;
  j["migrated_keys"] = s.migrated_keys;
  return j;
}

RunResult World::finish() {
  result_.safety_ok = monitor_.ok();
  result_.violation = monitor_.first_violation();
  result_.termination_ok = result_.quiesced_at >= 0;
  result_.ended_at =
      stopped_at_ >= 0 ? stopped_at_ : sc_.duration_ms + sc_.drain_ms;

  int64_t produced_bytes = 0;
  int64_t produced_msgs = 0;
  for (const auto& p : producers_) {
    produced_bytes += p->produced_bytes();
    produced_msgs += static_cast<int64_t>(p->messages());
  }
  result_.produced_bytes = produced_bytes;
  result_.produced_messages = produced_msgs;

  int64_t cache_bytes = 0;
  int64_t durable_bytes = 0;
  int64_t hedged = 0;
  int64_t escalated = 0;
  for (const auto& [c, k] : metrics_.counters()) {
    result_.consumer_reads += k.consumer_reads;
    result_.fallback_reads += k.fallback_reads;
    result_.fallback_bytes += k.fallback_bytes;
    result_.read_failures += k.read_failures;
    result_.throttled_reads += k.throttled_reads;
    result_.delivered_messages += k.messages_delivered;
    cache_bytes += k.bytes_from_cache;
    durable_bytes += k.bytes_from_durable;
    hedged += k.hedged;
    escalated += k.escalated;
  }
  auto all = metrics_.all_delays();
  if (!all.empty()) {
    std::sort(all.begin(), all.end());
    result_.delay_p99 = percentile(all, 0.99);
  }
  bool stable = sc_.stable_from_ms >= 0;
  if (stable) {
    auto sd = metrics_.all_delays(sc_.stable_from_ms, sc_.stable_to_ms);
    result_.stable_delay_p99 = sd.empty() ? -1 : percentile(sd, 0.99);
    result_.stable_fallback_reads =
        metrics_.fallback_reads_in(sc_.stable_from_ms, sc_.stable_to_ms);
  }

  if (result_.termination_ok) {
    int64_t expected_emissions = 0;
    for (const auto& keys : consumer_targets_) {
      for (auto [si, sh] : keys) {
        expected_emissions += static_cast<int64_t>(
            producers_[producer_index_.at({si, sh})]->messages());
      }
    }
    int64_t consumed = 0;
    for (const auto& c : consumers_) consumed += c->consumed_bytes();
    result_.accounting_ok = monitor_.emissions() == expected_emissions &&
                            monitor_.observed_bytes() == consumed &&
                            cache_bytes + durable_bytes == consumed;
  }

  ordered_json r;
  r["scenario"] = sc_.name;
  r["seed"] = seed_;
  {
    ordered_json v;
    v["pass"] = result_.pass();
    v["safety"] = result_.safety_ok;
    v["termination"] = result_.termination_ok;
    v["accounting"] = result_.accounting_ok;
    std::string viol;
    if (result_.violation.found) {
      viol = "t=" + std::to_string(result_.violation.at) + " path=" +
             result_.violation.path + " offset=" +
             std::to_string(result_.violation.offset) + " reader=" +
             result_.violation.reader + " " + result_.violation.detail;
    }
    v["first_violation"] = viol;
    r["verdict"] = v;
  }
  r["quiesced_at_ms"] = result_.quiesced_at;
  r["ended_at_ms"] = result_.ended_at;
  {
    ordered_json t;
    t["produced_bytes"] = result_.produced_bytes;
    t["produced_messages"] = result_.produced_messages;
    t["delivered_messages"] = result_.delivered_messages;
    t["emissions"] = monitor_.emissions();
    t["consumer_reads"] = result_.consumer_reads;
    t["observed_bytes"] = monitor_.observed_bytes();
    t["bytes_from_cache"] = cache_bytes;
    t["bytes_from_durable"] = durable_bytes;
    t["fallback_reads"] = result_.fallback_reads;
    t["fallback_bytes"] = result_.fallback_bytes;
    t["hedged_reads"] = hedged;
    t["escalated_reads"] = escalated;
    t["throttled_reads"] = result_.throttled_reads;
    t["read_failures"] = result_.read_failures;
    r["totals"] = t;
  }
  if (stable) {
    ordered_json sw;
    sw["from_ms"] = sc_.stable_from_ms;
    sw["to_ms"] = sc_.stable_to_ms;
    sw["fallback_reads"] = result_.stable_fallback_reads;
    sw["delay_p99"] = result_.stable_delay_p99;
    r["stable_window"] = sw;
  }
  {
    ordered_json a;
    a["ups"] = result_.autoscale_ups;
    a["downs"] = result_.autoscale_downs;
    a["promotions"] = result_.promotions;
    r["autoscale"] = a;
  }
  ordered_json cls = ordered_json::array();
  for (const auto& cl : clusters_) {
    ordered_json c;
    c["name"] = cl->spec->name;
    c["healthy"] = cl->healthy;
    c["readers"] = static_cast<int64_t>(cl->readers.size());
    c["writers"] = static_cast<int64_t>(cl->writers.size());
    c["delivery_delay"] = dist_json(metrics_.delays_of(cl->id));
    auto wl = metrics_.write_latencies().find(cl->id);
    c["write_latency"] = dist_json(wl == metrics_.write_latencies().end()
                                       ? std::vector<int64_t>{}
                                       : wl->second);
    auto hl = metrics_.hop_lags().find(cl->id);
    c["hop_arrival_lag"] = dist_json(
        hl == metrics_.hop_lags().end() ? std::vector<int64_t>{} : hl->second);
    ordered_json k;
    auto cit = metrics_.counters().find(cl->id);
    Metrics::ClusterCounters zero;
    const Metrics::ClusterCounters& cc =
        cit == metrics_.counters().end() ? zero : cit->second;
    k["consumer_reads"] = cc.consumer_reads;
    k["fallback_reads"] = cc.fallback_reads;
    k["fallback_bytes"] = cc.fallback_bytes;
    k["bytes_from_cache"] = cc.bytes_from_cache;
    k["bytes_from_durable"] = cc.bytes_from_durable;
    k["hedged"] = cc.hedged;
    k["escalated"] = cc.escalated;
    k["throttled_reads"] = cc.throttled_reads;
    k["read_failures"] = cc.read_failures;
    k["messages_delivered"] = cc.messages_delivered;
    c["consumers"] = k;
    ordered_json fw = ordered_json::array();
    auto fit = metrics_.fallback_windows().find(cl->id);
    if (fit != metrics_.fallback_windows().end()) {
      for (const auto& [win, load] : fit->second) {
        if (load.reqs > 0) fw.push_back({win, load.reqs});
      }
    }
    c["fallback_windows"] = fw;
    c["data_cache"] = instance_json(*cl, 0, *cl->data);
    c["meta_cache"] = instance_json(*cl, 1, *cl->meta);
    {
      ordered_json d;
      const auto& ds = cl->durable->stats();
      d["appends"] = ds.appends;
      d["bytes_appended"] = ds.bytes_appended;
      d["reads"] = ds.reads;
      d["bytes_read"] = ds.bytes_read;
      d["reads_throttled"] = ds.reads_throttled;
      c["durable"] = d;
    }
    cls.push_back(c);
  }
  r["clusters"] = cls;
  ordered_json ev = ordered_json::array();
  for (const auto& [at, what] : metrics_.events()) ev.push_back({at, what});
  r["events"] = ev;
  result_.report_json = r.dump(2) + "\n";
  return result_;
}

}  // namespace

RunResult run_scenario(const Scenario& sc, const RunOptions& opts) {
  World w(sc, opts);
  return w.run();
}

}  // namespace tailcopy::harness
