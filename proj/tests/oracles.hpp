#pragma once

// Brute-force references shared by the distillation tests and the acceptance
// binary.

#include <limits>
#include <optional>
#include <vector>

#include "gem/distill.hpp"
#include "gem/graph.hpp"

namespace gem::testing {

struct SubsetSearch {
  double best_error = std::numeric_limits<double>::infinity();
  std::vector<Edge> best;
  std::size_t candidates = 0;
};

/// True when `edges` form one component, and that component touches
/// `anchor` when one is given.
inline bool edge_set_connected(std::size_t n, const std::vector<Edge>& edges, std::optional<std::size_t> anchor) {
  if (edges.empty()) return true;
  const auto comps = connected_components(Adjacency::from_edges(n, edges));
  std::size_t nontrivial = 0;
  bool anchored = !anchor;
  for (const auto& comp : comps) {
    if (comp.size() < 2) continue;
    ++nontrivial;
    if (anchor && std::find(comp.begin(), comp.end(), *anchor) != comp.end()) anchored = true;
  }
  return nontrivial == 1 && anchored;
}

/// Minimum model error over every connected edge subset of exactly
/// min(K, |E|) edges (containing the anchor when given).
inline SubsetSearch exhaustive_best(const GnnModel& model, const ComputationGraph& cg, int y, std::size_t K,
                                    std::optional<std::size_t> anchor) {
  const std::vector<Edge> all = cg.edges();
  SubsetSearch out;
  const std::size_t m = all.size();
  const std::size_t size = std::min(K, m);
  for (std::size_t mask = 0; mask < (std::size_t{1} << m); ++mask) {
    std::vector<Edge> subset;
    for (std::size_t i = 0; i < m; ++i) {
      if (mask & (std::size_t{1} << i)) subset.push_back(all[i]);
    }
    if (subset.size() != size || !edge_set_connected(cg.size(), subset, anchor)) continue;
    ++out.candidates;
    const double err = model_error(model, restrict_to_edges(cg, subset), y);
    if (err < out.best_error) {
      out.best_error = err;
      out.best = subset;
    }
  }
  return out;
}

}  // namespace gem::testing
