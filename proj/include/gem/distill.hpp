#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gem/gnn.hpp"
#include "gem/graph.hpp"

namespace gem {

struct KeptEdge {
  Edge edge;          ///< local indices of the computation graph
  double weight = 0;  ///< normalized target weight in [0.1, 1]
  double importance = 0;  ///< error increase recorded in the greedy pass
};

/// Ground-truth explanation for one instance.
struct DistilledExplanation {
  std::string origin;
  std::size_t K = 0;
  double base_error = 0.0;
  /// Single-edge causal contributions on the full computation graph.
  std::map<Edge, double> edge_contributions;
  /// Kept edges ordered by descending importance, ties lexicographic.
  std::vector<KeptEdge> kept_edges;
  /// Symmetric n x n, nonzero exactly on kept edges.
  Tensor2 target_mask;
  bool connected = false;

  /// Error of the subgraph after the greedy pass and after pruning.
  double greedy_error = 0.0;
  double final_error = 0.0;

  std::vector<Edge> kept() const;
};

struct DistillConfig {
  std::size_t K = 6;
  bool connectivity = true;
  /// Store the weight as (current - tentative) error, a negative number, and
  /// prune in ascending order of that value.
  bool literal_sign = false;
};

/// Cross-entropy of the classifier's prediction against class y.
double model_error(const GnnModel& model, const ComputationGraph& cg, int y);

/// model_error without `edge` minus model_error with it.
double edge_causal_contribution(const GnnModel& model, const ComputationGraph& cg, int y, Edge edge);

/// Greedy top-K distillation. With connectivity on, every intermediate
/// subgraph is restricted to the component containing `anchor` (or the
/// largest component when no anchor is given).
DistilledExplanation distill(const GnnModel& model, const ComputationGraph& cg, int y,
                             const DistillConfig& config, std::optional<std::size_t> anchor = std::nullopt);

/// Fraction of instances whose distilled subgraph (all nodes, only kept
/// edges) is classified as the paired label.
double distillation_accuracy(const GnnModel& model, std::span<const DistilledExplanation> explanations,
                             std::span<const ComputationGraph> cgs, std::span<const int> labels);

/// One JSON-lines record; edges are written in original node indices.
nlohmann::json distilled_to_json(const DistilledExplanation& expl, const ComputationGraph& cg);
/// Rebuilds the record against its computation graph.
DistilledExplanation distilled_from_json(const nlohmann::json& record, const ComputationGraph& cg);

inline constexpr const char* kDistillFormat = "gem-distill-v1";

}  // namespace gem
