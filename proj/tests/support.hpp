#pragma once

// Shared fixtures for the unit, property and acceptance tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gem/graph.hpp"
#include "gem/numerics.hpp"
#include "gem/rng.hpp"

namespace gem::testing {

inline Graph graph_from_edges(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                              std::size_t d = 1) {
  Graph g;
  g.num_nodes = n;
  for (auto [a, b] : pairs) g.edges.push_back(make_edge(a, b));
  std::sort(g.edges.begin(), g.edges.end());
  g.node_features = Tensor2::Ones(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  return g;
}

/// Erdos-Renyi graph with uniform random features in [-1, 1].
inline Graph random_graph(std::size_t n, double p, std::size_t d, Rng& rng) {
  Graph g;
  g.num_nodes = n;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.uniform() < p) g.edges.push_back({i, j});
    }
  }
  g.node_features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < g.node_features.size(); ++i) g.node_features.data()[i] = rng.uniform(-1.0, 1.0);
  return g;
}

/// Random connected graph: a random spanning tree plus extra edges.
inline Graph random_connected_graph(std::size_t n, std::size_t extra, std::size_t d, Rng& rng) {
  Graph g;
  g.num_nodes = n;
  std::vector<Edge> edges;
  for (std::size_t v = 1; v < n; ++v) edges.push_back(make_edge(v, static_cast<std::size_t>(rng.below(v))));
  for (std::size_t k = 0; k < extra && n > 2; ++k) {
    const auto a = static_cast<std::size_t>(rng.below(n));
    const auto b = static_cast<std::size_t>(rng.below(n));
    if (a != b) edges.push_back(make_edge(a, b));
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  g.edges = std::move(edges);
  g.node_features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < g.node_features.size(); ++i) g.node_features.data()[i] = rng.uniform(-1.0, 1.0);
  return g;
}

inline ComputationGraph cg_from_graph(const Graph& g, std::optional<std::size_t> target = std::nullopt) {
  ComputationGraph cg = whole_graph(g, "fixture");
  cg.target_local_index = target;
  return cg;
}

/// Applies a node permutation: new index of old node v is perm[v].
inline Graph permute(const Graph& g, const std::vector<std::size_t>& perm) {
  Graph out;
  out.num_nodes = g.num_nodes;
  for (const Edge& e : g.edges) out.edges.push_back(make_edge(perm[e.u], perm[e.v]));
  std::sort(out.edges.begin(), out.edges.end());
  out.node_features.resize(g.node_features.rows(), g.node_features.cols());
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    out.node_features.row(static_cast<Eigen::Index>(perm[v])) = g.node_features.row(static_cast<Eigen::Index>(v));
  }
  return out;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  return perm;
}

inline Tensor2 random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Tensor2 m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradientReport {
  double worst = 0.0;
  std::size_t entries = 0;
  std::string worst_at;
};

/// Compares tape gradients against central differences for every entry of
/// every parameter. `loss(tape, params)` must record a 1 x 1 value.
template <typename Loss>
GradientReport gradient_check(ParamSet& params, Loss&& loss, double h = 1e-5) {
  params.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape, params));
  }
  std::map<std::string, Tensor2> analytic;
  for (auto& [name, p] : params) analytic[name] = p.grad;

  auto evaluate = [&] {
    Tape tape;
    return tape.value(loss(tape, params))(0, 0);
  };
  GradientReport report;
  for (auto& [name, p] : params) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = evaluate();
      x = saved - h;
      const double down = evaluate();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[name].data()[i], numeric);
      ++report.entries;
      if (err > report.worst) {
        report.worst = err;
        report.worst_at = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  params.zero_grad();
  return report;
}

}  // namespace gem::testing
