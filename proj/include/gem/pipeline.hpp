#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gem/config.hpp"
#include "gem/datasets.hpp"
#include "gem/error.hpp"
#include "gem/graph.hpp"

namespace gem {

/// A stage's input file is missing. The message names the command that
/// produces it.
class MissingArtifactError : public InputError {
 public:
  using InputError::InputError;
};

/// Artifact file names inside the output directory.
namespace artifact {
inline constexpr const char* kDataset = "dataset.json";
inline constexpr const char* kSplit = "split.json";
inline constexpr const char* kGnn = "gnn.json";
inline constexpr const char* kDistill = "distill.jsonl";
inline constexpr const char* kExplainer = "explainer.json";
inline constexpr const char* kExplain = "explain.jsonl";
inline constexpr const char* kAccuracy = "accuracy_by_k.csv";
inline constexpr const char* kLogOdds = "log_odds.csv";
inline constexpr const char* kLogOddsHistogram = "log_odds_histogram.csv";
inline constexpr const char* kTiming = "timing.csv";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace artifact

inline constexpr const char* kManifestFormat = "gem-manifest-v1";
inline constexpr const char* kSplitFormat = "gem-split-v1";

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(const std::string& bytes);

/// Computation graph of one instance: the hop-limited neighbourhood for node
/// tasks, the whole graph (origin "graph:<id>") for graph tasks.
ComputationGraph instance_graph(const LabeledDataset& dataset, InstanceId id, std::size_t hops);

nlohmann::json split_to_json(const SplitSpec& split);
SplitSpec split_from_json(const nlohmann::json& doc);

/// JSON-lines with a {"format": ...} header line.
void write_jsonl(const std::filesystem::path& path, const std::string& format,
                 const std::vector<nlohmann::json>& records);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path, const std::string& format);

/// Worker count: `requested` when non-zero, else GEM_JOBS, else 1.
std::size_t resolve_jobs(std::size_t requested);

/// The staged workflow over one output directory. Each stage reads its
/// upstream artifacts, writes its own, and records timings and checksums in
/// manifest.json.
class Pipeline {
 public:
  Pipeline(RunConfig config, std::size_t jobs);

  void gen_data();
  void train_gnn();
  void distill();
  void train_explainer();
  void explain();
  void evaluate();
  void run_all();

  /// Stage names in execution order.
  static const std::vector<std::string>& stages();
  void run_stage(const std::string& name);

  const RunConfig& config() const { return config_; }
  std::filesystem::path path(const char* name) const { return config_.output_dir / name; }

 private:
  template <typename Body>
  void stage(const std::string& name, const std::vector<const char*>& inputs,
             const std::vector<const char*>& outputs, Body&& body);

  nlohmann::json load_manifest() const;
  void save_manifest(const nlohmann::json& manifest) const;
  void require(const char* name) const;

  LabeledDataset load_dataset() const;
  SplitSpec load_split() const;

  RunConfig config_;
  nlohmann::json config_json_;
  std::string config_hash_;
  std::size_t jobs_;
};

}  // namespace gem
