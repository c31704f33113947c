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

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace tailcopy::route {

/// Inter-cluster topology. Nodes are dense ids [0, n). Edges are symmetric
/// with a nonnegative bandwidth cost; cost < 0 means no edge. Unhealthy
/// nodes and edges are unusable; penalties make elements expensive but
/// still usable (a degraded cluster keeps receiving the stream, just as a
/// leaf).
struct ClusterGraph {
  int n = 0;
  std::vector<std::vector<double>> cost;          // adjacency, -1 = none
  std::vector<std::vector<double>> edge_penalty;  // additive
  std::vector<double> node_penalty;
  std::vector<bool> node_healthy;
  std::vector<std::vector<bool>> edge_healthy;

  explicit ClusterGraph(int nodes = 0) { reset(nodes); }
  void reset(int nodes);
  void add_edge(int a, int b, double bandwidth_cost);
  bool has_edge(int a, int b) const { return cost[a][b] >= 0; }
  bool usable_edge(int a, int b) const {
    return has_edge(a, b) && edge_healthy[a][b] && node_healthy[a] &&
           node_healthy[b];
  }
  double max_edge_cost() const;
  void clear_penalties();
};

enum class NodeMode { kRegular, kRateLimitedLeaf };

/// Distribution tree rooted at the source cluster.
struct CopyTree {
  int root = -1;
  std::map<int, int> parent;  // member -> parent; root -> -1
  std::map<int, int> depth;
  std::map<int, int> fanout;
  std::map<int, NodeMode> mode;
  std::vector<int> unreachable;  // destinations that could not be placed

  bool ok() const { return root >= 0 && unreachable.empty(); }
  bool contains(int node) const { return parent.count(node) != 0; }
  std::vector<int> children_of(int node) const;
  /// Bandwidth cost of the tree's edges (penalty- and shape-term free).
  double total_cost(const ClusterGraph& g) const;
};

struct TreeConfig {
  double alpha_depth = 0.1;   // charge for attaching below a deep parent
  double beta_fanout = 0.1;   // charge per sibling already under a parent
  int max_depth = 4;          // hops from the source, hard cap
  // Up to this many members the tree is solved exactly (depth-bounded
  // minimum over the full weight objective); beyond it, greedy growth.
  // The greedy heuristic commits to parents early and can miss the
  // optimum when the depth cap binds, so small fleets get the real thing.
  int exact_member_limit = 8;
  double outage_penalty_decay = 0.5;  // per BFS hop
  double outage_penalty_scale = 10.0; // x max edge cost at distance 0
};

/// Builds the tree spanning {source} ∪ destinations using only those
/// members as relay points. Weight of attaching v under u:
///   w(u,v) = cost(u,v) + edge_penalty(u,v) + node_penalty(v)
///          + alpha·depth(u) + beta·fanout(u)
/// grown greedily from the source, deterministic tie-break on
/// (weight, child id, parent id); attachments past max_depth are
/// impossible. Members that cannot be reached end up in `unreachable`.
CopyTree build_tree(const ClusterGraph& g, int source,
                    const std::vector<int>& destinations,
                    const TreeConfig& cfg);

struct Outage {
  std::vector<int> nodes;
  std::vector<std::pair<int, int>> edges;
};

/// Spreads additive penalties outward from each outage element —
/// scale·max_cost at the element itself, halving per BFS hop — then
/// rebuilds. A penalized node's edges all carry its penalty, so using it
/// as a relay pays twice and the rebuild usually demotes it to a leaf.
/// Mutates g's penalties (clear_penalties undoes after recovery).
CopyTree penalize_and_rebuild(ClusterGraph& g, int source,
                              const std::vector<int>& destinations,
                              const Outage& outage, const TreeConfig& cfg);

/// Attaches a new member as a rate-limited leaf under the cheapest
/// eligible regular parent (same weight formula). Returns false when no
/// parent is within the depth cap.
bool add_cluster(CopyTree& t, const ClusterGraph& g, int new_cluster,
                 const TreeConfig& cfg);

/// Catch-up complete: the leaf becomes a regular node, parent unchanged.
void promote_cluster(CopyTree& t, int cluster);

/// Nearest healthy cluster by shortest-path cost over the healthy
/// subgraph (ties: lower id). -1 when none exists. Consumers of a dead
/// cluster point their reads here instead.
int reroute_consumers(const ClusterGraph& g, int from);

/// Scenario/CLI wire forms.
std::string graph_to_json(const ClusterGraph& g);
ClusterGraph graph_from_json(const std::string& text);
std::string tree_to_json(const CopyTree& t);

}  // namespace tailcopy::route
