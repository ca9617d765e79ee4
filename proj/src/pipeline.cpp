#include "gem/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>

#include "gem/distill.hpp"
#include "gem/evaluation.hpp"
#include "gem/explainer.hpp"
#include "gem/gnn.hpp"
#include "gem/parallel.hpp"
#include "gem/rng.hpp"

namespace gem {

using nlohmann::json;

// Files ---------------------------------------------------------------------

namespace {

std::string to_hex(const unsigned char* bytes, unsigned int n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < n; ++i) {
    out += digits[bytes[i] >> 4];
    out += digits[bytes[i] & 0xF];
  }
  return out;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 unavailable");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const char* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_DigestFinal_ex(ctx_, digest, &n);
    return to_hex(digest, n);
  }

 private:
  EVP_MD_CTX* ctx_;
};

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& doc, int indent) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << doc.dump(indent) << '\n';
}

const std::map<std::string, std::string>& producers() {
  static const std::map<std::string, std::string> m = {
      {artifact::kDataset, "gen-data"},         {artifact::kSplit, "gen-data"},  {artifact::kGnn, "train-gnn"},
      {artifact::kDistill, "distill"},          {artifact::kExplainer, "train-explainer"},
      {artifact::kExplain, "explain"},
  };
  return m;
}

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

ComputationGraph instance_graph(const LabeledDataset& dataset, InstanceId id, std::size_t hops) {
  if (dataset.task == Task::kNode) return l_hop_subgraph(dataset.graphs.at(0), id, hops);
  return whole_graph(dataset.graphs.at(id), "graph:" + std::to_string(id));
}

json split_to_json(const SplitSpec& split) {
  return {{"format", kSplitFormat},
          {"seed", split.seed},
          {"train", split.train_ids},
          {"val", split.val_ids},
          {"test", split.test_ids}};
}

SplitSpec split_from_json(const json& doc) {
  if (doc.value("format", "") != kSplitFormat) throw FormatError("split file is not " + std::string(kSplitFormat));
  SplitSpec s;
  s.seed = doc.at("seed").get<std::uint64_t>();
  s.train_ids = doc.at("train").get<std::vector<InstanceId>>();
  s.val_ids = doc.at("val").get<std::vector<InstanceId>>();
  s.test_ids = doc.at("test").get<std::vector<InstanceId>>();
  return s;
}

void write_jsonl(const std::filesystem::path& path, const std::string& format, const std::vector<json>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << json{{"format", format}}.dump() << '\n';
  for (const auto& r : records) out << r.dump() << '\n';
}

std::vector<json> read_jsonl(const std::filesystem::path& path, const std::string& format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + " is empty");
  const json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.is_object() || header.value("format", "") != format) {
    throw FormatError(path.string() + " does not start with a " + format + " header");
  }
  std::vector<json> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded()) throw FormatError(path.string() + ":" + std::to_string(lineno) + " is not JSON");
    out.push_back(std::move(record));
  }
  return out;
}

std::size_t resolve_jobs(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("GEM_JOBS"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0' || v == 0) throw InputError("GEM_JOBS must be a positive integer, got '" + std::string(env) + "'");
    return static_cast<std::size_t>(v);
  }
  return 1;
}

// Pipeline ------------------------------------------------------------------

Pipeline::Pipeline(RunConfig config, std::size_t jobs)
    : config_(std::move(config)), config_json_(config_to_json(config_)), jobs_(std::max<std::size_t>(1, jobs)) {
  config_hash_ = sha256_hex(config_json_.dump());
}

const std::vector<std::string>& Pipeline::stages() {
  static const std::vector<std::string> names = {"gen-data", "train-gnn", "distill",
                                                 "train-explainer", "explain", "evaluate"};
  return names;
}

void Pipeline::run_stage(const std::string& name) {
  if (name == "gen-data") return gen_data();
  if (name == "train-gnn") return train_gnn();
  if (name == "distill") return distill();
  if (name == "train-explainer") return train_explainer();
  if (name == "explain") return explain();
  if (name == "evaluate") return evaluate();
  if (name == "run-all") return run_all();
  throw InputError("unknown stage '" + name + "'");
}

void Pipeline::run_all() {
  for (const auto& s : stages()) run_stage(s);
}

json Pipeline::load_manifest() const {
  const auto p = path(artifact::kManifest);
  if (!std::filesystem::exists(p)) {
    throw MissingArtifactError("no " + std::string(artifact::kManifest) + " in " + config_.output_dir.string() +
                               "; run `gem gen-data` first");
  }
  return read_json(p);
}

void Pipeline::save_manifest(const json& manifest) const { write_json(path(artifact::kManifest), manifest, 2); }

void Pipeline::require(const char* name) const {
  if (!std::filesystem::exists(path(name))) {
    throw MissingArtifactError("missing " + path(name).string() + "; run `gem " + producers().at(name) +
                               "` with the same config first");
  }
}

template <typename Body>
void Pipeline::stage(const std::string& name, const std::vector<const char*>& inputs,
                     const std::vector<const char*>& outputs, Body&& body) {
  json manifest;
  if (name == "gen-data") {
    std::filesystem::create_directories(config_.output_dir);
    manifest = {{"format", kManifestFormat},
                {"config", config_json_},
                {"config_sha256", config_hash_},
                {"seed", config_.seed},
                {"stages", json::object()},
                {"artifacts", json::object()}};
  } else {
    for (const char* in : inputs) require(in);
    manifest = load_manifest();
    if (manifest.value("format", "") != kManifestFormat) throw FormatError("unrecognized manifest format");
    if (manifest.value("config_sha256", "") != config_hash_) {
      throw InputError("artifacts in " + config_.output_dir.string() +
                       " were produced with a different config; rerun `gem gen-data` or pick another --out");
    }
  }

  // Inputs must be exactly what their producing stage recorded.
  std::map<std::string, std::string> before;
  for (const char* in : inputs) {
    const std::string sum = sha256_file(path(in));
    const auto& recorded = manifest["artifacts"];
    if (!recorded.contains(in)) {
      throw MissingArtifactError(path(in).string() + " is stale; rerun `gem " + producers().at(in) + "`");
    }
    if (recorded[in].get<std::string>() != sum) {
      throw FormatError(path(in).string() + " changed after `gem " + producers().at(in) +
                        "` wrote it; rerun that command");
    }
    before[in] = sum;
  }

  // Later stages' outputs no longer match their inputs once this one reruns.
  const auto& order = stages();
  const auto self = std::find(order.begin(), order.end(), name);
  for (auto it = self; it != order.end(); ++it) {
    if (!manifest["stages"].contains(*it)) continue;
    for (const auto& [file, sum] : manifest["stages"][*it]["outputs"].items()) manifest["artifacts"].erase(file);
    manifest["stages"].erase(*it);
  }
  save_manifest(manifest);

  const auto start = Clock::now();
  body();
  const double ms = elapsed_ms(start);

  json stage_record = {{"seconds", ms / 1000.0}, {"inputs", json::object()}, {"outputs", json::object()}};
  for (const char* in : inputs) {
    if (sha256_file(path(in)) != before[in]) throw Error("stage " + name + " modified its input " + in);
    stage_record["inputs"][in] = before[in];
  }
  for (const char* out : outputs) {
    const std::string sum = sha256_file(path(out));
    stage_record["outputs"][out] = sum;
    manifest["artifacts"][out] = sum;
  }
  manifest["stages"][name] = std::move(stage_record);
  save_manifest(manifest);
}

LabeledDataset Pipeline::load_dataset() const { return dataset_from_json(read_json(path(artifact::kDataset))); }

SplitSpec Pipeline::load_split() const { return split_from_json(read_json(path(artifact::kSplit))); }

void Pipeline::gen_data() {
  stage("gen-data", {}, {artifact::kDataset, artifact::kSplit}, [&] {
    const std::uint64_t seed = derive_seed(config_.seed, "gen-data");
    LabeledDataset ds;
    switch (config_.kind()) {
      case DatasetKind::kBaShapes:
        ds = gen_ba_shapes(seed, {config_.data.base_nodes, config_.data.attachment, config_.data.motifs,
                                  config_.data.noise_edges});
        break;
      case DatasetKind::kTreeCycles:
        ds = gen_tree_cycles(seed, {config_.data.tree_levels, config_.data.motifs, config_.data.cycle_length});
        break;
      case DatasetKind::kTu:
        ds = load_tu_dataset(config_.tu_dir(), config_.dataset_name());
        break;
    }
    const SplitSpec split = make_split(ds, {config_.split.train, config_.split.val, config_.split.test},
                                       derive_seed(config_.seed, "split"));
    write_json(path(artifact::kDataset), dataset_to_json(ds), -1);
    write_json(path(artifact::kSplit), split_to_json(split), -1);
  });
}

void Pipeline::train_gnn() {
  stage("train-gnn", {artifact::kDataset, artifact::kSplit}, {artifact::kGnn}, [&] {
    const LabeledDataset ds = load_dataset();
    const SplitSpec split = load_split();
    GnnTrainConfig cfg;
    cfg.epochs = config_.gnn.epochs;
    cfg.lr = config_.gnn.lr;
    cfg.batch_size = config_.gnn.batch;
    cfg.plateau_patience = config_.gnn.patience;
    cfg.decay = config_.gnn.decay;
    cfg.seed = derive_seed(config_.seed, "train-gnn");
    const TrainedGnn trained = gem::train_gnn(ds, split, cfg);
    const json meta = {{"train_accuracy", trained.report.train_accuracy},
                       {"val_accuracy", trained.report.val_accuracy},
                       {"test_accuracy", trained.report.test_accuracy},
                       {"best_epoch", trained.report.best_epoch},
                       {"epochs_run", trained.report.epochs_run},
                       {"final_lr", trained.report.final_lr}};
    write_json(path(artifact::kGnn), gnn_to_json(trained.model, cfg.seed, meta), -1);
  });
}

void Pipeline::distill() {
  stage("distill", {artifact::kDataset, artifact::kSplit, artifact::kGnn}, {artifact::kDistill}, [&] {
    const LabeledDataset ds = load_dataset();
    const SplitSpec split = load_split();
    const GnnModel model = gnn_from_json(read_json(path(artifact::kGnn)));
    std::vector<InstanceId> ids = split.train_ids;
    ids.insert(ids.end(), split.val_ids.begin(), split.val_ids.end());
    ids.insert(ids.end(), split.test_ids.begin(), split.test_ids.end());

    const DistillConfig cfg{config_.distill.K, config_.distill.connectivity, config_.distill.literal_sign};
    std::vector<json> records(ids.size());
    parallel_for(ids.size(), jobs_, [&](std::size_t i) {
      const ComputationGraph cg = instance_graph(ds, ids[i], config_.hops);
      const DistilledExplanation d = gem::distill(model, cg, ds.label_of(ids[i]), cfg, cg.target_local_index);
      records[i] = distilled_to_json(d, cg);
    });
    write_jsonl(path(artifact::kDistill), kDistillFormat, records);
  });
}

namespace {

/// Distilled records keyed by origin.
std::map<std::string, json> by_origin(const std::vector<json>& records) {
  std::map<std::string, json> out;
  for (const auto& r : records) out[r.at("origin").get<std::string>()] = r;
  return out;
}

}  // namespace

void Pipeline::train_explainer() {
  stage("train-explainer", {artifact::kDataset, artifact::kSplit, artifact::kDistill}, {artifact::kExplainer}, [&] {
    const LabeledDataset ds = load_dataset();
    const SplitSpec split = load_split();
    const auto distilled = by_origin(read_jsonl(path(artifact::kDistill), kDistillFormat));

    auto examples = [&](const std::vector<InstanceId>& ids) {
      std::vector<ExplainerExample> out;
      for (InstanceId id : ids) {
        ComputationGraph cg = instance_graph(ds, id, config_.hops);
        auto it = distilled.find(cg.origin);
        if (it == distilled.end()) {
          throw MissingArtifactError(path(artifact::kDistill).string() + " has no record for " + cg.origin +
                                     "; rerun `gem distill`");
        }
        Tensor2 target = distilled_from_json(it->second, cg).target_mask;
        out.push_back({std::move(cg), std::move(target)});
      }
      return out;
    };
    const auto train = examples(split.train_ids);
    const auto val = examples(split.val_ids);

    const bool node = ds.task == Task::kNode;
    const std::size_t vocab = node ? config_.hops + 1 : config_.explainer.role_vocab;
    const std::size_t role_param = node ? config_.hops : config_.explainer.wl_iterations;
    const std::size_t feature_dim =
        config_.explainer.use_features ? static_cast<std::size_t>(ds.graphs.at(0).node_features.cols()) : 0;
    const std::uint64_t init_seed = derive_seed(config_.seed, "explainer-init");
    Rng rng(init_seed);
    ExplainerModel initial = make_explainer(ds.task, vocab, feature_dim, role_param, rng);

    ExplainerTrainConfig cfg;
    cfg.epochs = config_.explainer.epochs;
    cfg.lr = config_.explainer.lr;
    cfg.batch_size = config_.explainer.batch;
    cfg.seed = derive_seed(config_.seed, "train-explainer");
    const TrainedExplainer trained = gem::train_explainer(std::move(initial), train, val, cfg);
    const json meta = {{"initial_val_mse", trained.report.initial_val_mse},
                       {"best_val_mse", trained.report.best_val_mse},
                       {"final_train_mse", trained.report.final_train_mse},
                       {"best_epoch", trained.report.best_epoch}};
    write_json(path(artifact::kExplainer), explainer_to_json(trained.model, init_seed, meta), -1);
  });
}

void Pipeline::explain() {
  stage("explain", {artifact::kDataset, artifact::kSplit, artifact::kExplainer}, {artifact::kExplain}, [&] {
    const LabeledDataset ds = load_dataset();
    const SplitSpec split = load_split();
    const ExplainerModel model = explainer_from_json(read_json(path(artifact::kExplainer)));
    const auto& ids = split.test_ids;
    const auto& grid = config_.eval.K_grid;

    std::vector<json> records(ids.size() * grid.size());
    parallel_for(ids.size(), jobs_, [&](std::size_t i) {
      const ComputationGraph cg = instance_graph(ds, ids[i], config_.hops);
      const std::vector<double> scores = edge_scores(model, cg);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        records[k * ids.size() + i] = explanation_to_json(select_edges(cg, scores, grid[k], config_.eval.connectivity), cg);
      }
    });
    write_jsonl(path(artifact::kExplain), kExplainFormat, records);
  });
}

void Pipeline::evaluate() {
  const std::vector<const char*> inputs = {artifact::kDataset, artifact::kSplit,     artifact::kGnn,
                                           artifact::kDistill, artifact::kExplainer, artifact::kExplain};
  const std::vector<const char*> outputs = {artifact::kAccuracy, artifact::kLogOdds, artifact::kLogOddsHistogram,
                                            artifact::kTiming, artifact::kMetrics};
  stage("evaluate", inputs, outputs, [&] {
    const LabeledDataset ds = load_dataset();
    const SplitSpec split = load_split();
    const GnnModel gnn = gnn_from_json(read_json(path(artifact::kGnn)));
    const ExplainerModel explainer = explainer_from_json(read_json(path(artifact::kExplainer)));
    const auto& ids = split.test_ids;
    const auto& grid = config_.eval.K_grid;
    if (ids.empty()) throw InputError("the test split is empty; nothing to evaluate");

    std::vector<ComputationGraph> cgs(ids.size());
    std::vector<int> labels(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      cgs[i] = instance_graph(ds, ids[i], config_.hops);
      labels[i] = ds.label_of(ids[i]);
    }

    const auto explained = read_jsonl(path(artifact::kExplain), kExplainFormat);
    if (explained.size() != ids.size() * grid.size()) {
      throw FormatError(path(artifact::kExplain).string() + " has " + std::to_string(explained.size()) +
                        " records, expected " + std::to_string(ids.size() * grid.size()) + "; rerun `gem explain`");
    }
    auto results_at = [&](std::size_t k) {
      std::vector<ExplanationResult> out(ids.size());
      parallel_for(ids.size(), jobs_, [&](std::size_t i) {
        const json& record = explained[k * ids.size() + i];
        if (record.at("origin").get<std::string>() != cgs[i].origin || record.at("K").get<std::size_t>() != grid[k]) {
          throw FormatError(path(artifact::kExplain).string() + " is out of order at " + cgs[i].origin +
                            "; rerun `gem explain`");
        }
        out[i] = explanation_from_json(record, cgs[i]);
      });
      return out;
    };

    std::vector<std::vector<Edge>> motifs;
    if (ds.motif_edges) {
      for (InstanceId id : ids) {
        auto it = ds.motif_edges->find(id);
        motifs.push_back(it == ds.motif_edges->end() ? std::vector<Edge>{} : it->second);
      }
    }

    json metrics;
    metrics["dataset"] = config_.dataset_name();
    metrics["test_instances"] = ids.size();
    std::vector<AccuracyRow> rows;
    json per_k = json::array();
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const auto results = results_at(k);
      const double acc = explanation_accuracy(gnn, results, labels);
      rows.push_back({config_.dataset_name(), "gem", grid[k], acc});
      json entry = {{"K", grid[k]}, {"accuracy", acc}, {"fidelity", fidelity(gnn, results, cgs)}};
      if (!motifs.empty()) {
        const MotifSummary m = motif_recovery(results, motifs);
        entry["motif_precision"] = m.mean_precision;
        entry["motif_recall"] = m.mean_recall;
      }
      per_k.push_back(std::move(entry));
    }
    metrics["explanation"] = std::move(per_k);
    write_accuracy_csv(path(artifact::kAccuracy), rows);

    // Log-odds at the configured K, computed fresh so it need not be on the grid.
    const std::size_t lk = config_.eval.log_odds_K;
    std::vector<EvalRecord> records(ids.size());
    parallel_for(ids.size(), jobs_, [&](std::size_t i) {
      records[i] = evaluate_instance(gnn, cgs[i], gem::explain(explainer, cgs[i], lk, config_.eval.connectivity),
                                     labels[i]);
    });
    // Timing runs single-threaded so workers do not compete for cores.
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto start = Clock::now();
      const ExplanationResult r = gem::explain(explainer, cgs[i], lk, config_.eval.connectivity);
      records[i].inference_ms = elapsed_ms(start);
    }
    std::vector<double> deltas;
    std::vector<double> abs_deltas;
    std::vector<double> ms;
    for (const auto& r : records) {
      deltas.push_back(r.delta_log_odds);
      abs_deltas.push_back(std::abs(r.delta_log_odds));
      ms.push_back(r.inference_ms);
    }
    const Histogram hist = histogram(deltas, config_.eval.histogram_bins);
    write_log_odds_csv(path(artifact::kLogOdds), records);
    write_histogram_csv(path(artifact::kLogOddsHistogram), hist);
    write_timing_csv(path(artifact::kTiming), records);
    metrics["log_odds"] = {{"K", lk},
                           {"median_abs_delta", median(abs_deltas)},
                           {"histogram", {{"edges", hist.edges}, {"counts", hist.counts}}}};
    const TimingSummary timing = timing_summary(ms);
    metrics["timing"] = {{"K", lk}, {"mean_ms", timing.mean_ms}, {"median_ms", timing.median_ms}};

    // Distilled ground truth on the test split, against true labels.
    const auto distilled = by_origin(read_jsonl(path(artifact::kDistill), kDistillFormat));
    std::vector<DistilledExplanation> test_distilled;
    for (const auto& cg : cgs) {
      auto it = distilled.find(cg.origin);
      if (it == distilled.end()) {
        throw MissingArtifactError(path(artifact::kDistill).string() + " has no record for " + cg.origin +
                                   "; rerun `gem distill`");
      }
      test_distilled.push_back(distilled_from_json(it->second, cg));
    }
    metrics["distillation_accuracy"] = {{"K", config_.distill.K},
                                        {"accuracy", distillation_accuracy(gnn, test_distilled, cgs, labels)}};
    metrics["classifier"] = {{"test_accuracy", gnn_accuracy(gnn, ds, ids)}};
    write_json(path(artifact::kMetrics), metrics, 2);
  });
}

}  // namespace gem
