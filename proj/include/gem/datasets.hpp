#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gem/graph.hpp"

namespace gem {

enum class Task { kNode, kGraph };

std::string to_string(Task task);
Task task_from_string(const std::string& s);

/// Node task: instance id is a node of graphs[0]. Graph task: index into graphs.
using InstanceId = std::size_t;

struct LabeledDataset {
  std::string name;
  std::vector<Graph> graphs;
  Task task = Task::kGraph;
  int num_classes = 0;
  /// Ground-truth motif edges per instance, in original node indices.
  std::optional<std::map<InstanceId, std::vector<Edge>>> motif_edges;
  /// Realized-statistics notes raised during generation (not errors).
  std::vector<std::string> warnings;

  /// Instances eligible for explanation: motif members for node tasks,
  /// every graph for graph tasks.
  std::vector<InstanceId> explanation_instances() const;
  int label_of(InstanceId id) const;
  std::size_t instance_count() const;
};

/// Throws InputError when the dataset breaks its invariants.
void validate(const LabeledDataset& dataset);

struct SplitSpec {
  std::vector<InstanceId> train_ids;
  std::vector<InstanceId> val_ids;
  std::vector<InstanceId> test_ids;
  std::uint64_t seed = 0;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// Preferential-attachment growth from an m-clique.
Graph gen_ba_graph(std::size_t n, std::size_t m, std::uint64_t seed);

struct BaShapesOptions {
  std::size_t base_nodes = 300;
  std::size_t attachment = 5;
  std::size_t num_motifs = 80;
  std::size_t noise_edges = 0;
};

/// Node classes of the house benchmark.
enum HouseRole : int { kNoneNode = 0, kTopNode = 1, kMiddleNode = 2, kBottomNode = 3 };

LabeledDataset gen_ba_shapes(std::uint64_t seed, const BaShapesOptions& options = {});

struct TreeCyclesOptions {
  std::size_t tree_levels = 8;
  std::size_t num_motifs = 80;
  std::size_t cycle_length = 6;
};

LabeledDataset gen_tree_cycles(std::uint64_t seed, const TreeCyclesOptions& options = {});

/// Reads <dir>/<name>_{A,graph_indicator,graph_labels,node_labels}.txt.
LabeledDataset load_tu_dataset(const std::filesystem::path& dir, const std::string& name);

/// Writes a dataset back out in the same text format.
void write_tu_dataset(const LabeledDataset& dataset, const std::filesystem::path& dir,
                      const std::string& name);

SplitSpec make_split(const LabeledDataset& dataset, const SplitCounts& counts, std::uint64_t seed);

nlohmann::json dataset_to_json(const LabeledDataset& dataset);
LabeledDataset dataset_from_json(const nlohmann::json& doc);

/// Edge list in original indices.
nlohmann::json edges_to_json(const std::vector<Edge>& edges);

}  // namespace gem
