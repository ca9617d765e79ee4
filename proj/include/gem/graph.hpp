#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gem/tensor.hpp"

namespace gem {

/// Undirected edge stored with u < v.
struct Edge {
  std::size_t u = 0;
  std::size_t v = 0;

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Builds the canonical (smaller, larger) edge. Self-loops are rejected.
Edge make_edge(std::size_t a, std::size_t b);

/// Undirected, unweighted attributed graph.
struct Graph {
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  Tensor2 node_features;
  std::optional<std::vector<int>> node_labels;
  std::optional<int> graph_label;
};

/// Throws InputError if the graph breaks an invariant (endpoint range,
/// canonical order, duplicates, feature row count, label count).
void validate(const Graph& graph);

/// Dense binary symmetric adjacency with a zero diagonal.
class Adjacency {
 public:
  Adjacency() = default;
  explicit Adjacency(std::size_t n) : n_(n), bits_(n * n, 0) {}

  static Adjacency from_edges(std::size_t n, std::span<const Edge> edges);
  /// Validates that the real matrix is square, symmetric, binary and has a
  /// zero diagonal.
  static Adjacency from_matrix(const Tensor2& matrix);

  std::size_t size() const { return n_; }
  bool has_edge(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
  void set_edge(std::size_t i, std::size_t j, bool present);

  /// Edges in lexicographic order.
  std::vector<Edge> edges() const;
  std::size_t edge_count() const;
  std::size_t degree(std::size_t i) const;
  std::vector<std::size_t> neighbors(std::size_t i) const;

  Tensor2 to_matrix() const;

  friend bool operator==(const Adjacency&, const Adjacency&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// The neighbourhood (node task) or whole graph (graph task) a GNN consumes
/// to produce one prediction.
struct ComputationGraph {
  std::vector<std::size_t> nodes;  ///< original node index of each local node
  std::optional<std::size_t> target_local_index;
  Adjacency adjacency;
  Tensor2 features;
  std::string origin;

  std::size_t size() const { return nodes.size(); }
  std::vector<Edge> edges() const { return adjacency.edges(); }
  std::size_t edge_count() const { return adjacency.edge_count(); }
  bool has_edge(Edge e) const { return adjacency.has_edge(e.u, e.v); }
};

enum class Normalization {
  kSymmetric,  ///< D^-1/2 (A + I) D^-1/2
  kMean,       ///< D^-1 (A + I)
};

std::vector<std::size_t> bfs_distances(const Adjacency& adjacency, std::size_t source);
inline constexpr std::size_t kUnreachable = static_cast<std::size_t>(-1);

/// Induced subgraph on every node within `hops` BFS steps of `node`.
ComputationGraph l_hop_subgraph(const Graph& graph, std::size_t node, std::size_t hops);

/// The whole graph as a computation graph (graph classification).
ComputationGraph whole_graph(const Graph& graph, std::string origin);

/// Propagation matrix of a GCN layer with self-loops added. Input must be a
/// square, symmetric, binary matrix with zero diagonal.
Tensor2 normalized_adjacency(const Tensor2& adjacency,
                             Normalization norm = Normalization::kSymmetric);
Tensor2 normalized_adjacency(const Adjacency& adjacency,
                             Normalization norm = Normalization::kSymmetric);

/// Sparse form of normalized_adjacency. Entries are bitwise equal to the
/// dense version.
SparseOperator propagation_operator(std::size_t n, std::span<const Edge> edges,
                                    Normalization norm = Normalization::kSymmetric);
SparseOperator propagation_operator(const Adjacency& adjacency,
                                    Normalization norm = Normalization::kSymmetric);

ComputationGraph remove_edge(const ComputationGraph& cg, Edge edge);

/// Same node set, adjacency restricted to `keep`. Every kept edge must exist.
ComputationGraph restrict_to_edges(const ComputationGraph& cg, std::span<const Edge> keep);

/// Components under the current adjacency, each sorted, ordered by their
/// smallest node.
std::vector<std::vector<std::size_t>> connected_components(const Adjacency& adjacency);
std::vector<std::vector<std::size_t>> connected_components(const ComputationGraph& cg);

/// Zeroes every edge outside the chosen component. The chosen component is
/// the one containing `anchor` when given, otherwise the largest by node
/// count with ties going to the component holding the lowest node index.
ComputationGraph largest_component_subgraph(const ComputationGraph& cg,
                                            std::optional<std::size_t> anchor = std::nullopt);

}  // namespace gem
