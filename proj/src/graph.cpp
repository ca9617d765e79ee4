#include "gem/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <set>

#include "gem/error.hpp"

namespace gem {

Edge make_edge(std::size_t a, std::size_t b) {
  if (a == b) throw InputError("self-loop on node " + std::to_string(a));
  return a < b ? Edge{a, b} : Edge{b, a};
}

void validate(const Graph& graph) {
  std::set<Edge> seen;
  for (const Edge& e : graph.edges) {
    if (e.u >= e.v) {
      throw InputError("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                       ") not stored with u < v");
    }
    if (e.v >= graph.num_nodes) {
      throw InputError("edge endpoint " + std::to_string(e.v) + " out of range");
    }
    if (!seen.insert(e).second) {
      throw InputError("duplicate edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ")");
    }
  }
  if (static_cast<std::size_t>(graph.node_features.rows()) != graph.num_nodes) {
    throw InputError("feature rows do not match node count");
  }
  if (graph.node_labels && graph.node_labels->size() != graph.num_nodes) {
    throw InputError("node label count does not match node count");
  }
}

Adjacency Adjacency::from_edges(std::size_t n, std::span<const Edge> edges) {
  Adjacency a(n);
  for (const Edge& e : edges) {
    if (e.u >= n || e.v >= n) throw InputError("edge endpoint out of range");
    if (e.u == e.v) throw InputError("self-loop in edge list");
    a.set_edge(e.u, e.v, true);
  }
  return a;
}

Adjacency Adjacency::from_matrix(const Tensor2& matrix) {
  if (matrix.rows() != matrix.cols()) throw InputError("adjacency is not square");
  const auto n = static_cast<std::size_t>(matrix.rows());
  Adjacency a(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (matrix(i, i) != 0.0) throw InputError("adjacency has a nonzero diagonal");
    for (std::size_t j = i + 1; j < n; ++j) {
      const double x = matrix(i, j);
      if (x != matrix(j, i)) throw InputError("adjacency is not symmetric");
      if (x != 0.0 && x != 1.0) throw InputError("adjacency is not binary");
      if (x == 1.0) a.set_edge(i, j, true);
    }
  }
  return a;
}

void Adjacency::set_edge(std::size_t i, std::size_t j, bool present) {
  if (i == j) throw InputError("self-loop in adjacency");
  const std::uint8_t bit = present ? 1 : 0;
  bits_[i * n_ + j] = bit;
  bits_[j * n_ + i] = bit;
}

std::vector<Edge> Adjacency::edges() const {
  std::vector<Edge> out;
  for (std::size_t i = 0; i < n_; ++i) {
    const std::uint8_t* row = bits_.data() + i * n_;
    for (std::size_t j = i + 1; j < n_; ++j) {
      if (row[j]) out.push_back({i, j});
    }
  }
  return out;
}

std::size_t Adjacency::edge_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)) / 2;
}

std::size_t Adjacency::degree(std::size_t i) const {
  return static_cast<std::size_t>(
      std::count(bits_.begin() + static_cast<std::ptrdiff_t>(i * n_),
                 bits_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_), 1));
}

std::vector<std::size_t> Adjacency::neighbors(std::size_t i) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < n_; ++j) {
    if (bits_[i * n_ + j]) out.push_back(j);
  }
  return out;
}

Tensor2 Adjacency::to_matrix() const {
  Tensor2 m = Tensor2::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < n_; ++j) {
      if (bits_[i * n_ + j]) m(i, j) = 1.0;
    }
  }
  return m;
}

std::vector<std::size_t> bfs_distances(const Adjacency& adjacency, std::size_t source) {
  const std::size_t n = adjacency.size();
  if (source >= n) throw InputError("BFS source out of range");
  std::vector<std::size_t> dist(n, kUnreachable);
  std::deque<std::size_t> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t v = 0; v < n; ++v) {
      if (adjacency.has_edge(u, v) && dist[v] == kUnreachable) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

ComputationGraph l_hop_subgraph(const Graph& graph, std::size_t node, std::size_t hops) {
  if (node >= graph.num_nodes) {
    throw InputError("node " + std::to_string(node) + " out of range (graph has " +
                     std::to_string(graph.num_nodes) + " nodes)");
  }
  if (hops < 1) throw InputError("hop count must be at least 1");

  std::vector<std::vector<std::size_t>> adj(graph.num_nodes);
  for (const Edge& e : graph.edges) {
    adj[e.u].push_back(e.v);
    adj[e.v].push_back(e.u);
  }
  std::vector<std::size_t> dist(graph.num_nodes, kUnreachable);
  std::deque<std::size_t> queue{node};
  dist[node] = 0;
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    if (dist[u] == hops) continue;
    for (std::size_t v : adj[u]) {
      if (dist[v] == kUnreachable) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }

  ComputationGraph cg;
  std::vector<std::size_t> local(graph.num_nodes, kUnreachable);
  for (std::size_t v = 0; v < graph.num_nodes; ++v) {
    if (dist[v] != kUnreachable) {
      local[v] = cg.nodes.size();
      cg.nodes.push_back(v);
    }
  }
  const std::size_t n = cg.nodes.size();
  cg.target_local_index = local[node];
  cg.adjacency = Adjacency(n);
  for (const Edge& e : graph.edges) {
    if (local[e.u] != kUnreachable && local[e.v] != kUnreachable) {
      cg.adjacency.set_edge(local[e.u], local[e.v], true);
    }
  }
  cg.features.resize(static_cast<Eigen::Index>(n), graph.node_features.cols());
  for (std::size_t i = 0; i < n; ++i) {
    cg.features.row(static_cast<Eigen::Index>(i)) =
        graph.node_features.row(static_cast<Eigen::Index>(cg.nodes[i]));
  }
  cg.origin = "node:" + std::to_string(node);
  return cg;
}

ComputationGraph whole_graph(const Graph& graph, std::string origin) {
  ComputationGraph cg;
  cg.nodes.resize(graph.num_nodes);
  std::iota(cg.nodes.begin(), cg.nodes.end(), std::size_t{0});
  cg.adjacency = Adjacency::from_edges(graph.num_nodes, graph.edges);
  cg.features = graph.node_features;
  cg.origin = std::move(origin);
  return cg;
}

namespace {

std::vector<double> self_loop_scales(std::span<const std::size_t> degree, Normalization norm) {
  std::vector<double> scale(degree.size());
  for (std::size_t i = 0; i < degree.size(); ++i) {
    const double d = static_cast<double>(degree[i] + 1);
    scale[i] = norm == Normalization::kSymmetric ? 1.0 / std::sqrt(d) : 1.0 / d;
  }
  return scale;
}

double entry(const std::vector<double>& scale, std::size_t i, std::size_t j, Normalization norm) {
  return norm == Normalization::kSymmetric ? scale[i] * scale[j] : scale[i];
}

}  // namespace

Tensor2 normalized_adjacency(const Tensor2& adjacency, Normalization norm) {
  return normalized_adjacency(Adjacency::from_matrix(adjacency), norm);
}

Tensor2 normalized_adjacency(const Adjacency& adjacency, Normalization norm) {
  const std::size_t n = adjacency.size();
  std::vector<std::size_t> degree(n);
  for (std::size_t i = 0; i < n; ++i) degree[i] = adjacency.degree(i);
  const auto scale = self_loop_scales(degree, norm);
  Tensor2 out = Tensor2::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    out(i, i) = entry(scale, i, i, norm);
    for (std::size_t j = 0; j < n; ++j) {
      if (adjacency.has_edge(i, j)) out(i, j) = entry(scale, i, j, norm);
    }
  }
  return out;
}

SparseOperator propagation_operator(std::size_t n, std::span<const Edge> edges,
                                    Normalization norm) {
  std::vector<std::size_t> degree(n, 0);
  for (const Edge& e : edges) {
    ++degree[e.u];
    ++degree[e.v];
  }
  const auto scale = self_loop_scales(degree, norm);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(n + 2 * edges.size());
  for (std::size_t i = 0; i < n; ++i) {
    triplets.emplace_back(static_cast<int>(i), static_cast<int>(i), entry(scale, i, i, norm));
  }
  for (const Edge& e : edges) {
    triplets.emplace_back(static_cast<int>(e.u), static_cast<int>(e.v), entry(scale, e.u, e.v, norm));
    triplets.emplace_back(static_cast<int>(e.v), static_cast<int>(e.u), entry(scale, e.v, e.u, norm));
  }
  SparseOperator op(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  op.setFromTriplets(triplets.begin(), triplets.end());
  return op;
}

SparseOperator propagation_operator(const Adjacency& adjacency, Normalization norm) {
  const auto edges = adjacency.edges();
  return propagation_operator(adjacency.size(), edges, norm);
}

ComputationGraph remove_edge(const ComputationGraph& cg, Edge edge) {
  if (edge.u >= cg.size() || edge.v >= cg.size() || !cg.has_edge(edge)) {
    throw InputError("edge (" + std::to_string(edge.u) + "," + std::to_string(edge.v) +
                     ") is not in the computation graph");
  }
  ComputationGraph out = cg;
  out.adjacency.set_edge(edge.u, edge.v, false);
  return out;
}

ComputationGraph restrict_to_edges(const ComputationGraph& cg, std::span<const Edge> keep) {
  ComputationGraph out = cg;
  out.adjacency = Adjacency(cg.size());
  for (const Edge& e : keep) {
    if (e.u >= cg.size() || e.v >= cg.size() || !cg.has_edge(e)) {
      throw InputError("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                       ") is not in the computation graph");
    }
    out.adjacency.set_edge(e.u, e.v, true);
  }
  return out;
}

std::vector<std::vector<std::size_t>> connected_components(const Adjacency& adjacency) {
  const std::size_t n = adjacency.size();
  std::vector<bool> seen(n, false);
  std::vector<std::vector<std::size_t>> components;
  for (std::size_t s = 0; s < n; ++s) {
    if (seen[s]) continue;
    std::vector<std::size_t> comp{s};
    seen[s] = true;
    for (std::size_t k = 0; k < comp.size(); ++k) {
      const std::size_t u = comp[k];
      for (std::size_t v = 0; v < n; ++v) {
        if (!seen[v] && adjacency.has_edge(u, v)) {
          seen[v] = true;
          comp.push_back(v);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    components.push_back(std::move(comp));
  }
  return components;
}

std::vector<std::vector<std::size_t>> connected_components(const ComputationGraph& cg) {
  return connected_components(cg.adjacency);
}

ComputationGraph largest_component_subgraph(const ComputationGraph& cg,
                                            std::optional<std::size_t> anchor) {
  if (anchor && *anchor >= cg.size()) {
    throw InputError("anchor " + std::to_string(*anchor) + " is not in the computation graph");
  }
  const auto components = connected_components(cg);
  if (components.size() <= 1) return cg;

  const std::vector<std::size_t>* chosen = nullptr;
  for (const auto& comp : components) {
    if (anchor) {
      if (std::binary_search(comp.begin(), comp.end(), *anchor)) chosen = &comp;
    } else if (chosen == nullptr || comp.size() > chosen->size()) {
      // components are ordered by smallest member, so strict > keeps the
      // lowest-index component on ties
      chosen = &comp;
    }
  }
  std::vector<bool> inside(cg.size(), false);
  for (std::size_t v : *chosen) inside[v] = true;

  ComputationGraph out = cg;
  for (const Edge& e : cg.edges()) {
    if (!inside[e.u]) out.adjacency.set_edge(e.u, e.v, false);
  }
  return out;
}

}  // namespace gem
