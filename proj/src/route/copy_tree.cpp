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
#include "tailcopy/route/copy_tree.hpp"

#include <algorithm>
#include <cassert>
#include <deque>
#include <limits>
#include <queue>
#include <set>

#include "json.hpp"

namespace tailcopy::route {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void ClusterGraph::reset(int nodes) {
  n = nodes;
  cost.assign(n, std::vector<double>(n, -1.0));
  edge_penalty.assign(n, std::vector<double>(n, 0.0));
  node_penalty.assign(n, 0.0);
  node_healthy.assign(n, true);
  edge_healthy.assign(n, std::vector<bool>(n, true));
}

void ClusterGraph::add_edge(int a, int b, double bandwidth_cost) {
  assert(a != b && bandwidth_cost >= 0);
  cost[a][b] = cost[b][a] = bandwidth_cost;
}

double ClusterGraph::max_edge_cost() const {
  double m = 0;
  for (int a = 0; a < n; a++) {
    for (int b = a + 1; b < n; b++) {
      if (cost[a][b] > m) m = cost[a][b];
    }
  }
  return m;
}

void ClusterGraph::clear_penalties() {
  for (auto& row : edge_penalty) std::fill(row.begin(), row.end(), 0.0);
  std::fill(node_penalty.begin(), node_penalty.end(), 0.0);
}

std::vector<int> CopyTree::children_of(int node) const {
  std::vector<int> out;
  for (const auto& [v, p] : parent) {
    if (p == node) out.push_back(v);
  }
  return out;
}

double CopyTree::total_cost(const ClusterGraph& g) const {
  double sum = 0;
  for (const auto& [v, p] : parent) {
    if (p >= 0) sum += g.cost[p][v];
  }
  return sum;
}

namespace {

double attach_weight(const ClusterGraph& g, const TreeConfig& cfg, int u,
                     int v, int depth_u, int fanout_u) {
  return g.cost[u][v] + g.edge_penalty[u][v] + g.node_penalty[v] +
         cfg.alpha_depth * depth_u + cfg.beta_fanout * fanout_u;
}

void greedy_build(const ClusterGraph& g, const TreeConfig& cfg,
                  const std::vector<int>& members, CopyTree& t) {
  std::set<int> left(members.begin(), members.end());
  left.erase(t.root);
  while (!left.empty()) {
    double best_w = kInf;
    int best_v = -1, best_u = -1;
    for (const auto& [u, du] : t.depth) {
      if (du + 1 > cfg.max_depth) continue;
      if (t.mode.at(u) == NodeMode::kRateLimitedLeaf) continue;
      for (int v : left) {
        if (!g.usable_edge(u, v)) continue;
        double w = attach_weight(g, cfg, u, v, du, t.fanout.at(u));
        if (w < best_w || (w == best_w && (v < best_v ||
                                           (v == best_v && u < best_u)))) {
          best_w = w;
          best_v = v;
          best_u = u;
        }
      }
    }
    if (best_v < 0) break;  // nothing attachable: the rest is unreachable
    t.parent[best_v] = best_u;
    t.depth[best_v] = t.depth[best_u] + 1;
    t.fanout[best_v] = 0;
    t.fanout[best_u]++;
    t.mode[best_v] = NodeMode::kRegular;
    left.erase(best_v);
  }
}

/// Depth-bounded exact minimizer over the same per-attachment weight the
/// greedy pass uses. Trees are enumerated by their unique (depth, id)
/// attachment order, so each candidate tree is visited exactly once;
/// a per-node lower bound on the remaining attachment cost prunes.
struct ExactSearch {
  const ClusterGraph& g;
  const TreeConfig& cfg;
  std::vector<int> ids;  // member index -> node id; ids[0] == source
  int m;
  std::vector<double> lb;       // cheapest conceivable attach, per member
  std::vector<int> parent, depth, fanout;
  std::vector<char> attached;
  int n_attached = 1;
  double j = 0;
  double best_j = kInf;
  std::vector<int> best_parent;

  ExactSearch(const ClusterGraph& gg, const TreeConfig& c,
              std::vector<int> members)
      : g(gg), cfg(c), ids(std::move(members)), m(static_cast<int>(ids.size())) {
    parent.assign(m, -1);
    depth.assign(m, 0);
    fanout.assign(m, 0);
    attached.assign(m, 0);
    attached[0] = 1;
    lb.assign(m, kInf);
    for (int v = 1; v < m; v++) {
      for (int u = 0; u < m; u++) {
        if (u == v || !g.usable_edge(ids[u], ids[v])) continue;
        double w = g.cost[ids[u]][ids[v]] + g.edge_penalty[ids[u]][ids[v]] +
                   g.node_penalty[ids[v]];
        lb[v] = std::min(lb[v], w);
      }
    }
  }

  bool feasible() const {
    for (int v = 1; v < m; v++) {
      if (lb[v] == kInf) return false;  // some member has no usable edge
    }
    return true;
  }

  void run() {
    if (!feasible()) return;
    double remaining = 0;
    for (int v = 1; v < m; v++) remaining += lb[v];
    dfs(0, -1, remaining);
  }

  void dfs(int last_depth, int last_id, double remaining) {
    if (n_attached == m) {
      if (j < best_j) {
        best_j = j;
        best_parent = parent;
      }
      return;
    }
    if (j + remaining >= best_j) return;
    // Moves in canonical order: attach at the same depth to a larger id,
    // or start the next level.
    for (int d = last_depth; d <= cfg.max_depth; d++) {
      for (int v = 1; v < m; v++) {
        if (attached[v]) continue;
        if (d == last_depth && ids[v] <= last_id) continue;
        for (int u = 0; u < m; u++) {
          if (!attached[u] || depth[u] != d - 1) continue;
          if (!g.usable_edge(ids[u], ids[v])) continue;
          double w = attach_weight(g, cfg, ids[u], ids[v], depth[u],
                                   fanout[u]);
          parent[v] = u;
          depth[v] = d;
          attached[v] = 1;
          fanout[u]++;
          n_attached++;
          j += w;
          dfs(d, ids[v], remaining - lb[v]);
          j -= w;
          n_attached--;
          fanout[u]--;
          attached[v] = 0;
          parent[v] = -1;
        }
      }
      // From here on moves are at deeper levels; same-depth id constraint
      // no longer applies.
      last_id = -1;
    }
  }

  void apply(CopyTree& t) const {
    if (best_parent.empty()) return;
    // Rebuild depth/fanout from the winning parent vector.
    for (int v = 1; v < m; v++) {
      t.parent[ids[v]] = ids[best_parent[v]];
      t.fanout[ids[v]] = 0;
      t.mode[ids[v]] = NodeMode::kRegular;
    }
    for (int v = 1; v < m; v++) t.fanout[ids[best_parent[v]]]++;
    for (int v = 1; v < m; v++) {
      int d = 0;
      for (int w = v; best_parent[w] >= 0; w = best_parent[w]) d++;
      t.depth[ids[v]] = d;
    }
  }
};

}  // namespace

CopyTree build_tree(const ClusterGraph& g, int source,
                    const std::vector<int>& destinations,
                    const TreeConfig& cfg) {
  CopyTree t;
  t.root = source;
  std::set<int> member_set(destinations.begin(), destinations.end());
  member_set.insert(source);
  if (!g.node_healthy[source]) {
    for (int d : destinations) t.unreachable.push_back(d);
    std::sort(t.unreachable.begin(), t.unreachable.end());
    return t;
  }
  std::vector<int> members;
  members.push_back(source);
  for (int v : member_set) {
    if (v != source && g.node_healthy[v]) members.push_back(v);
  }
  std::sort(members.begin() + 1, members.end());

  t.parent[source] = -1;
  t.depth[source] = 0;
  t.fanout[source] = 0;
  t.mode[source] = NodeMode::kRegular;

  if (static_cast<int>(members.size()) <= cfg.exact_member_limit) {
    ExactSearch search(g, cfg, members);
    search.run();
    if (!search.best_parent.empty()) {
      search.apply(t);
    } else {
      // No full tree exists; greedy places whatever fits and the rest is
      // reported unreachable.
      greedy_build(g, cfg, members, t);
    }
  } else {
    greedy_build(g, cfg, members, t);
  }

  for (int v : member_set) {
    if (!t.contains(v)) t.unreachable.push_back(v);
  }
  std::sort(t.unreachable.begin(), t.unreachable.end());
  return t;
}

CopyTree penalize_and_rebuild(ClusterGraph& g, int source,
                              const std::vector<int>& destinations,
                              const Outage& outage, const TreeConfig& cfg) {
  const double p0 = cfg.outage_penalty_scale * g.max_edge_cost();

  auto spread = [&](const std::vector<std::pair<int, int>>& seeds) {
    // seeds: (node, starting BFS distance)
    std::vector<int> dist(g.n, -1);
    std::deque<int> q;
    for (auto [node, d0] : seeds) {
      if (dist[node] < 0 || d0 < dist[node]) {
        dist[node] = d0;
        q.push_back(node);
      }
    }
    while (!q.empty()) {
      int u = q.front();
      q.pop_front();
      for (int v = 0; v < g.n; v++) {
        if (!g.has_edge(u, v)) continue;
        if (dist[v] >= 0 && dist[v] <= dist[u] + 1) continue;
        dist[v] = dist[u] + 1;
        q.push_back(v);
      }
    }
    auto decayed = [&](int d) {
      double p = p0;
      for (int i = 0; i < d; i++) p *= cfg.outage_penalty_decay;
      return p;
    };
    for (int v = 0; v < g.n; v++) {
      if (dist[v] >= 0) g.node_penalty[v] += decayed(dist[v]);
    }
    for (int a = 0; a < g.n; a++) {
      for (int b = a + 1; b < g.n; b++) {
        if (!g.has_edge(a, b) || dist[a] < 0 || dist[b] < 0) continue;
        double p = decayed(std::min(dist[a], dist[b]));
        g.edge_penalty[a][b] += p;
        g.edge_penalty[b][a] += p;
      }
    }
  };

  for (int node : outage.nodes) {
    spread({{node, 0}});
  }
  for (auto [a, b] : outage.edges) {
    if (g.has_edge(a, b)) {
      g.edge_penalty[a][b] += p0;
      g.edge_penalty[b][a] += p0;
    }
    spread({{a, 1}, {b, 1}});
  }
  return build_tree(g, source, destinations, cfg);
}

bool add_cluster(CopyTree& t, const ClusterGraph& g, int new_cluster,
                 const TreeConfig& cfg) {
  if (t.contains(new_cluster) || !g.node_healthy[new_cluster]) return false;
  double best_w = kInf;
  int best_u = -1;
  for (const auto& [u, du] : t.depth) {
    if (du + 1 > cfg.max_depth) continue;
    if (t.mode.at(u) == NodeMode::kRateLimitedLeaf) continue;
    if (!g.usable_edge(u, new_cluster)) continue;
    double w = attach_weight(g, cfg, u, new_cluster, du, t.fanout.at(u));
    if (w < best_w || (w == best_w && u < best_u)) {
      best_w = w;
      best_u = u;
    }
  }
  if (best_u < 0) return false;
  t.parent[new_cluster] = best_u;
  t.depth[new_cluster] = t.depth.at(best_u) + 1;
  t.fanout[new_cluster] = 0;
  t.fanout[best_u]++;
  t.mode[new_cluster] = NodeMode::kRateLimitedLeaf;
  return true;
}

void promote_cluster(CopyTree& t, int cluster) {
  auto it = t.mode.find(cluster);
  if (it != t.mode.end()) it->second = NodeMode::kRegular;
}

int reroute_consumers(const ClusterGraph& g, int from) {
  std::vector<double> dist(g.n, kInf);
  dist[from] = 0;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  pq.push({0, from});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    for (int v = 0; v < g.n; v++) {
      // The dead origin may be exited; every other hop must be healthy.
      if (!g.has_edge(u, v) || !g.edge_healthy[u][v]) continue;
      if (!g.node_healthy[v]) continue;
      double nd = d + g.cost[u][v];
      if (nd < dist[v]) {
        dist[v] = nd;
        pq.push({nd, v});
      }
    }
  }
  int best = -1;
  for (int v = 0; v < g.n; v++) {
    if (v == from || !g.node_healthy[v] || dist[v] == kInf) continue;
    if (best < 0 || dist[v] < dist[best] ||
        (dist[v] == dist[best] && v < best)) {
      best = v;
    }
  }
  return best;
}

std::string graph_to_json(const ClusterGraph& g) {
  nlohmann::json j;
  j["n"] = g.n;
  auto edges = nlohmann::json::array();
  for (int a = 0; a < g.n; a++) {
    for (int b = a + 1; b < g.n; b++) {
      if (g.has_edge(a, b)) edges.push_back({a, b, g.cost[a][b]});
    }
  }
  j["edges"] = edges;
  auto down_nodes = nlohmann::json::array();
  for (int v = 0; v < g.n; v++) {
    if (!g.node_healthy[v]) down_nodes.push_back(v);
  }
  if (!down_nodes.empty()) j["down_nodes"] = down_nodes;
  auto down_edges = nlohmann::json::array();
  for (int a = 0; a < g.n; a++) {
    for (int b = a + 1; b < g.n; b++) {
      if (g.has_edge(a, b) && !g.edge_healthy[a][b]) {
        down_edges.push_back({a, b});
      }
    }
  }
  if (!down_edges.empty()) j["down_edges"] = down_edges;
  return j.dump(2);
}

ClusterGraph graph_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ClusterGraph g(j.at("n").get<int>());
  for (const auto& e : j.at("edges")) {
    g.add_edge(e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<double>());
  }
  if (j.contains("down_nodes")) {
    for (const auto& v : j["down_nodes"]) g.node_healthy[v.get<int>()] = false;
  }
  if (j.contains("down_edges")) {
    for (const auto& e : j["down_edges"]) {
      int a = e.at(0).get<int>();
      int b = e.at(1).get<int>();
      g.edge_healthy[a][b] = g.edge_healthy[b][a] = false;
    }
  }
  return g;
}

std::string tree_to_json(const CopyTree& t) {
  nlohmann::json j;
  j["root"] = t.root;
  nlohmann::json parents = nlohmann::json::object();
  nlohmann::json depths = nlohmann::json::object();
  nlohmann::json modes = nlohmann::json::object();
  for (const auto& [v, p] : t.parent) {
    std::string key = std::to_string(v);
    parents[key] = p;
    depths[key] = t.depth.at(v);
    modes[key] =
        t.mode.at(v) == NodeMode::kRateLimitedLeaf ? "rate_limited_leaf"
                                                   : "regular";
  }
  j["parents"] = parents;
  j["depths"] = depths;
  j["modes"] = modes;
  j["unreachable"] = t.unreachable;
  return j.dump(2);
}

}  // namespace tailcopy::route
