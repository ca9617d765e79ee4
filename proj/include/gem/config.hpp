#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace gem {

enum class DatasetKind { kBaShapes, kTreeCycles, kTu };

struct DataSection {
  std::size_t base_nodes = 300;
  std::size_t attachment = 5;
  std::size_t motifs = 80;
  std::size_t noise_edges = 0;
  std::size_t tree_levels = 8;
  std::size_t cycle_length = 6;
};

struct SplitSection {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

struct GnnSection {
  std::size_t epochs = 1000;
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t patience = 100;
  double decay = 0.5;
};

struct DistillSection {
  std::size_t K = 9;
  bool connectivity = true;
  bool literal_sign = false;
};

struct ExplainerSection {
  double lr = 0.01;
  std::size_t epochs = 100;
  std::size_t batch = 32;
  std::size_t wl_iterations = 3;
  /// WL vocabulary for graph tasks. Node tasks always use hops + 1.
  std::size_t role_vocab = 16;
  bool use_features = false;
};

struct EvalSection {
  std::vector<std::size_t> K_grid;
  bool connectivity = true;
  std::size_t log_odds_K = 0;
  std::size_t histogram_bins = 20;
};

/// Fully resolved run configuration. Every field has a value after loading.
struct RunConfig {
  std::string dataset;  ///< ba_shapes | tree_cycles | tu:<name>:<dir>
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::size_t hops = 3;
  DataSection data;
  SplitSection split;
  GnnSection gnn;
  DistillSection distill;
  ExplainerSection explainer;
  EvalSection eval;

  DatasetKind kind() const;
  /// Short dataset name used in CSV rows: ba_shapes, tree_cycles or the TU name.
  std::string dataset_name() const;
  /// TU directory (empty for synthetics).
  std::filesystem::path tu_dir() const;
};

/// Defaults for a dataset string, as a JSON document with every key present.
nlohmann::json default_config(const std::string& dataset);

/// Overlays `doc` on the defaults for doc["dataset"] and validates. Unknown
/// keys and type mismatches are InputErrors.
RunConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const RunConfig& config);

/// Reads a config file (JSON object).
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Applies one "a.b.c=value" override to `doc`. The value is parsed as JSON
/// when it parses, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Throws InputError when an invariant is broken.
void validate(const RunConfig& config);

}  // namespace gem
