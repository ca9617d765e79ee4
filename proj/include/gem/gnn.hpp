#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gem/datasets.hpp"
#include "gem/graph.hpp"
#include "gem/numerics.hpp"

namespace gem {

/// Target classifier: three GCN layers of width 20 and a linear head. Each
/// layer is relu(normalize_rows(A X W + b)), so node embeddings have unit L2
/// norm. The node head reads the concatenation of all three layers, the graph
/// head reads the column-wise max of the last one.
struct GnnModel {
  Task task = Task::kNode;
  std::size_t input_dim = 0;
  int num_classes = 0;
  ParamSet params;  // W1..W3, b1..b3, head_W, head_b
};

inline constexpr std::size_t kGnnHidden = 20;

GnnModel make_gnn(Task task, std::size_t input_dim, int num_classes, Rng& rng);

/// "gem-nodegcn-v1" or "gem-graphgcn-v1".
std::string gnn_arch(Task task);

struct Prediction {
  std::vector<double> probabilities;
  int predicted_class = 0;
};

Prediction prediction_from_logits(std::span<const double> logits);

/// Records the classifier on a tape. Returns per-node logits [n x l] for the
/// node task and graph logits [1 x l] for the graph task. Binding a mutable
/// ParamSet makes the weights trainable leaves.
Var record_gnn(Tape& tape, ParamSet& params, const GnnModel& shape, const SparseOperator& op,
               const Tensor2& features);
Var record_gnn(Tape& tape, const GnnModel& model, const SparseOperator& op, const Tensor2& features);

/// Logits straight from a propagation operator and feature matrix.
Tensor2 gnn_logits(const GnnModel& model, const SparseOperator& op, const Tensor2& features);

Tensor2 node_forward(const GnnModel& model, const ComputationGraph& cg);
Tensor2 graph_forward(const GnnModel& model, const ComputationGraph& cg);

/// Class distribution for the instance the computation graph belongs to.
Prediction predict(const GnnModel& model, const ComputationGraph& cg);

/// Row of logits that predict() turns into probabilities.
std::vector<double> instance_logits(const GnnModel& model, const ComputationGraph& cg);

struct GnnTrainConfig {
  std::size_t epochs = 1000;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t plateau_patience = 100;
  double decay = 0.5;
  std::uint64_t seed = 0;
};

struct GnnTrainReport {
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double final_lr = 0.0;
};

struct TrainedGnn {
  GnnModel model;
  GnnTrainReport report;
};

/// Node split used to fit the classifier. Explanation splits cover motif
/// nodes only, so the remaining nodes are divided in the same val/test
/// proportions and added to those sets; every other node trains. Graph
/// tasks return `split` unchanged.
SplitSpec classifier_split(const LabeledDataset& dataset, const SplitSpec& split);

/// Full-batch training on the single graph for node tasks (over
/// classifier_split), minibatches of graphs for graph tasks. Keeps the
/// parameters with the best validation accuracy.
TrainedGnn train_gnn(const LabeledDataset& dataset, const SplitSpec& split,
                     const GnnTrainConfig& config);

/// Fraction of `ids` the model labels correctly using whole-graph inference.
double gnn_accuracy(const GnnModel& model, const LabeledDataset& dataset,
                    std::span<const InstanceId> ids);

// Checkpoints ---------------------------------------------------------------

nlohmann::json params_to_json(const ParamSet& params, const std::string& arch,
                              std::uint64_t rng_seed, const nlohmann::json& train_meta);
/// Reads tensors back; checks the format tag and, when non-empty, the arch.
ParamSet params_from_json(const nlohmann::json& doc, const std::string& expected_arch = "");

nlohmann::json gnn_to_json(const GnnModel& model, std::uint64_t rng_seed,
                           const nlohmann::json& train_meta);
GnnModel gnn_from_json(const nlohmann::json& doc);

}  // namespace gem
