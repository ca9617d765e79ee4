#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gem/datasets.hpp"
#include "gem/graph.hpp"
#include "gem/numerics.hpp"

namespace gem {

/// BFS distance from the target node, capped at `cap`.
std::vector<std::size_t> node_role_labels(const ComputationGraph& cg, std::size_t cap);

/// Weisfeiler-Lehman refinement. Seeds are the argmax of one-hot node
/// features when every row is one-hot, otherwise the degree. Signatures are
/// graph-independent hashes, so equal colors across graphs mean equal
/// refinement histories (up to hash collisions).
struct WlColoring {
  std::vector<std::uint64_t> signatures;
  /// Signatures compressed to 0..k-1 in order of first appearance.
  std::vector<std::size_t> dense;
};

WlColoring wl_refine(const ComputationGraph& cg, std::size_t iterations);

/// WL signatures bucketed into a vocabulary of size `vocab`.
std::vector<std::size_t> wl_labels(const ComputationGraph& cg, std::size_t iterations, std::size_t vocab);

// ---------------------------------------------------------------------------

inline constexpr std::size_t kExplainerHidden1 = 32;
inline constexpr std::size_t kExplainerHidden2 = 32;
inline constexpr std::size_t kExplainerLatent = 16;

/// Graph auto-encoder: three GCN layers (ReLU, ReLU, linear) and an
/// inner-product decoder.
struct ExplainerModel {
  Task task = Task::kNode;
  std::size_t role_vocab = 0;
  /// Width of raw node features appended to the role one-hot (0 = none).
  std::size_t feature_dim = 0;
  /// Node task: BFS cap. Graph task: WL rounds.
  std::size_t role_param = 0;
  ParamSet params;  // E1, E2, E3

  std::size_t input_dim() const { return role_vocab + feature_dim; }
};

ExplainerModel make_explainer(Task task, std::size_t role_vocab, std::size_t feature_dim,
                              std::size_t role_param, Rng& rng);

/// Role labels as the model expects them.
std::vector<std::size_t> explainer_roles(const ExplainerModel& model, const ComputationGraph& cg);

/// One-hot roles, optionally followed by the raw features.
Tensor2 explainer_input(const ExplainerModel& model, const ComputationGraph& cg,
                        std::span<const std::size_t> roles);

struct ExplanationMask {
  Tensor2 latent;  ///< Z, n x 16
  Tensor2 mask;    ///< sigmoid(Z Z^T), n x n
};

Var record_explainer(Tape& tape, ParamSet& params, const SparseOperator& op, const Tensor2& input);
Var record_explainer(Tape& tape, const ExplainerModel& model, const SparseOperator& op, const Tensor2& input);

ExplanationMask encode_decode(const ExplainerModel& model, const ComputationGraph& cg,
                              std::span<const std::size_t> roles);

/// Mask values on the existing edges only, in cg.edges() order. Equal bitwise
/// to the corresponding entries of encode_decode().mask.
std::vector<double> edge_scores(const ExplainerModel& model, const ComputationGraph& cg);

// Training ------------------------------------------------------------------

/// One supervised instance: a computation graph and its target mask.
struct ExplainerExample {
  ComputationGraph cg;
  Tensor2 target;
};

struct ExplainerTrainConfig {
  std::size_t epochs = 100;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct ExplainerTrainReport {
  double initial_val_mse = 0.0;
  double best_val_mse = 0.0;
  double final_train_mse = 0.0;
  std::size_t best_epoch = 0;  ///< 0 = the initialization was never beaten
};

struct TrainedExplainer {
  ExplainerModel model;
  ExplainerTrainReport report;
};

/// Mean over instances of the squared error between mask and target on the
/// existing edges of each computation graph.
double explainer_mse(const ExplainerModel& model, std::span<const ExplainerExample> examples);

/// Adam on the edge-restricted MSE. Keeps the parameters with the lowest
/// validation MSE (training MSE when `val` is empty). `initial` supplies the
/// architecture and starting weights.
TrainedExplainer train_explainer(ExplainerModel initial, std::span<const ExplainerExample> train,
                                 std::span<const ExplainerExample> val, const ExplainerTrainConfig& config);

// Inference -----------------------------------------------------------------

struct ScoredEdge {
  Edge edge;
  double score = 0.0;
};

struct ExplanationResult {
  std::string origin;
  std::size_t K = 0;
  std::vector<ScoredEdge> selected;  ///< in selection order
  ComputationGraph subgraph;         ///< all nodes, selected edges only

  std::vector<Edge> edges() const;
};

/// Top-K edges by score (descending, ties lexicographic). With connectivity
/// on, grows one component from the target node (node task) or from the
/// best edge, always taking the best edge touching the component.
ExplanationResult select_edges(const ComputationGraph& cg, std::span<const double> scores, std::size_t K,
                               bool connectivity);

ExplanationResult explain(const ExplainerModel& model, const ComputationGraph& cg, std::size_t K,
                          bool connectivity);

/// Linear model over binary edge indicators with psi0 = 0 and one
/// coefficient per existing edge.
struct AttributionView {
  double psi0 = 0.0;
  std::map<Edge, double> psi;

  double evaluate(std::span<const Edge> indicator) const;
};

AttributionView attribution_view(const ExplanationMask& mask, const ComputationGraph& cg);

// Persistence ---------------------------------------------------------------

inline constexpr const char* kExplainerArch = "gem-explainer-v1";
inline constexpr const char* kExplainFormat = "gem-explain-v1";

nlohmann::json explainer_to_json(const ExplainerModel& model, std::uint64_t rng_seed,
                                 const nlohmann::json& train_meta);
ExplainerModel explainer_from_json(const nlohmann::json& doc);

nlohmann::json explanation_to_json(const ExplanationResult& result, const ComputationGraph& cg);
/// Rebuilds the selection and its subgraph from a record written by
/// explanation_to_json. Endpoints must be edges of `cg`.
ExplanationResult explanation_from_json(const nlohmann::json& record, const ComputationGraph& cg);

}  // namespace gem
