#include "gem/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "gem/error.hpp"

namespace gem {

namespace {

using nlohmann::json;

struct TuRef {
  std::string name;
  std::filesystem::path dir;
};

TuRef parse_tu(const std::string& dataset) {
  // tu:<name>:<dir>; the directory may itself contain ':'
  const auto first = dataset.find(':');
  const auto second = dataset.find(':', first + 1);
  if (first != 2 || second == std::string::npos || second == first + 1 || second + 1 >= dataset.size()) {
    throw InputError("config: dataset must be ba_shapes, tree_cycles or tu:<name>:<dir>, got '" + dataset + "'");
  }
  return {dataset.substr(first + 1, second - first - 1), dataset.substr(second + 1)};
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::size_t count_tu_graphs(const TuRef& ref) {
  const auto path = ref.dir / (ref.name + "_graph_labels.txt");
  std::ifstream in(path);
  if (!in) throw InputError("config: cannot read " + path.string());
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) ++n;
  }
  return n;
}

json split_json(std::size_t train, std::size_t val, std::size_t test) {
  return {{"train", train}, {"val", val}, {"test", test}};
}

json grid_json(std::initializer_list<std::size_t> ks) { return json(std::vector<std::size_t>(ks)); }

/// Recursively overlays `patch` on `base`. Keys must already exist in base
/// and keep their JSON kind.
void overlay(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw InputError("config: " + (where.empty() ? "root" : where) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw InputError("config: unknown key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
      continue;
    }
    const bool ok = (slot.is_boolean() && value.is_boolean()) || (slot.is_string() && value.is_string()) ||
                    (slot.is_array() && value.is_array()) ||
                    (slot.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() >= 0) ||
                    (slot.is_number_float() && value.is_number());
    if (!ok) throw InputError("config: '" + path + "' has the wrong type (" + value.type_name() + ")");
    slot = slot.is_number_unsigned() ? json(value.get<std::uint64_t>()) : value;
  }
}

template <typename T>
T get(const json& doc, const char* section, const char* key) {
  return doc.at(section).at(key).get<T>();
}

}  // namespace

DatasetKind RunConfig::kind() const {
  if (dataset == "ba_shapes") return DatasetKind::kBaShapes;
  if (dataset == "tree_cycles") return DatasetKind::kTreeCycles;
  parse_tu(dataset);
  return DatasetKind::kTu;
}

std::string RunConfig::dataset_name() const {
  return kind() == DatasetKind::kTu ? parse_tu(dataset).name : dataset;
}

std::filesystem::path RunConfig::tu_dir() const { return kind() == DatasetKind::kTu ? parse_tu(dataset).dir : ""; }

json default_config(const std::string& dataset) {
  json doc = {
      {"dataset", dataset},
      {"seed", 0u},
      {"output_dir", "runs/" + dataset},
      {"hops", 3u},
      {"data",
       {{"base_nodes", 300u},
        {"attachment", 5u},
        {"motifs", 80u},
        {"noise_edges", 0u},
        {"tree_levels", 8u},
        {"cycle_length", 6u}}},
      {"gnn", {{"epochs", 1000u}, {"lr", 1e-3}, {"batch", 32u}, {"patience", 100u}, {"decay", 0.5}}},
      {"distill", {{"K", 9u}, {"connectivity", true}, {"literal_sign", false}}},
      {"explainer",
       {{"lr", 0.01},
        {"epochs", 100u},
        {"batch", 32u},
        {"wl_iterations", 3u},
        {"role_vocab", 16u},
        {"use_features", false}}},
      {"eval", {{"K_grid", grid_json({5, 6, 7, 8, 9})}, {"connectivity", true}, {"log_odds_K", 5u}, {"histogram_bins", 20u}}},
  };
  if (dataset == "ba_shapes") {
    doc["split"] = split_json(300, 50, 50);
  } else if (dataset == "tree_cycles") {
    doc["split"] = split_json(270, 45, 45);
    doc["distill"]["K"] = 10u;
    doc["eval"]["K_grid"] = grid_json({6, 7, 8, 9, 10});
    doc["eval"]["log_odds_K"] = 6u;
  } else {
    const TuRef ref = parse_tu(dataset);
    doc["output_dir"] = "runs/" + ref.name;
    const std::string name = lower(ref.name);
    if (name.starts_with("mutag")) {
      doc["split"] = split_json(3468, 434, 434);
    } else if (name == "nci1") {
      doc["split"] = split_json(3031, 410, 411);
      doc["distill"]["connectivity"] = false;
      doc["eval"]["connectivity"] = false;
    } else {
      const std::size_t n = count_tu_graphs(ref);
      doc["split"] = split_json(n * 8 / 10, n / 10, n / 10);
    }
    doc["gnn"]["epochs"] = 300u;
    doc["distill"]["K"] = 30u;
    doc["explainer"]["use_features"] = true;
    doc["eval"]["K_grid"] = grid_json({15, 20, 25, 30});
    doc["eval"]["log_odds_K"] = 15u;
  }
  return doc;
}

RunConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw InputError("config: root must be an object");
  if (!doc.contains("dataset") || !doc.at("dataset").is_string()) {
    throw InputError("config: 'dataset' is required (ba_shapes, tree_cycles or tu:<name>:<dir>)");
  }
  json resolved = default_config(doc.at("dataset").get<std::string>());
  overlay(resolved, doc, "");

  RunConfig c;
  try {
    c.dataset = resolved.at("dataset").get<std::string>();
    c.seed = resolved.at("seed").get<std::uint64_t>();
    c.output_dir = resolved.at("output_dir").get<std::string>();
    c.hops = resolved.at("hops").get<std::size_t>();
    c.data.base_nodes = get<std::size_t>(resolved, "data", "base_nodes");
    c.data.attachment = get<std::size_t>(resolved, "data", "attachment");
    c.data.motifs = get<std::size_t>(resolved, "data", "motifs");
    c.data.noise_edges = get<std::size_t>(resolved, "data", "noise_edges");
    c.data.tree_levels = get<std::size_t>(resolved, "data", "tree_levels");
    c.data.cycle_length = get<std::size_t>(resolved, "data", "cycle_length");
    c.split.train = get<std::size_t>(resolved, "split", "train");
    c.split.val = get<std::size_t>(resolved, "split", "val");
    c.split.test = get<std::size_t>(resolved, "split", "test");
    c.gnn.epochs = get<std::size_t>(resolved, "gnn", "epochs");
    c.gnn.lr = get<double>(resolved, "gnn", "lr");
    c.gnn.batch = get<std::size_t>(resolved, "gnn", "batch");
    c.gnn.patience = get<std::size_t>(resolved, "gnn", "patience");
    c.gnn.decay = get<double>(resolved, "gnn", "decay");
    c.distill.K = get<std::size_t>(resolved, "distill", "K");
    c.distill.connectivity = get<bool>(resolved, "distill", "connectivity");
    c.distill.literal_sign = get<bool>(resolved, "distill", "literal_sign");
    c.explainer.lr = get<double>(resolved, "explainer", "lr");
    c.explainer.epochs = get<std::size_t>(resolved, "explainer", "epochs");
    c.explainer.batch = get<std::size_t>(resolved, "explainer", "batch");
    c.explainer.wl_iterations = get<std::size_t>(resolved, "explainer", "wl_iterations");
    c.explainer.role_vocab = get<std::size_t>(resolved, "explainer", "role_vocab");
    c.explainer.use_features = get<bool>(resolved, "explainer", "use_features");
    c.eval.K_grid = get<std::vector<std::size_t>>(resolved, "eval", "K_grid");
    c.eval.connectivity = get<bool>(resolved, "eval", "connectivity");
    c.eval.log_odds_K = get<std::size_t>(resolved, "eval", "log_odds_K");
    c.eval.histogram_bins = get<std::size_t>(resolved, "eval", "histogram_bins");
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

json config_to_json(const RunConfig& c) {
  return {
      {"dataset", c.dataset},
      {"seed", c.seed},
      {"output_dir", c.output_dir.generic_string()},
      {"hops", c.hops},
      {"data",
       {{"base_nodes", c.data.base_nodes},
        {"attachment", c.data.attachment},
        {"motifs", c.data.motifs},
        {"noise_edges", c.data.noise_edges},
        {"tree_levels", c.data.tree_levels},
        {"cycle_length", c.data.cycle_length}}},
      {"split", split_json(c.split.train, c.split.val, c.split.test)},
      {"gnn",
       {{"epochs", c.gnn.epochs},
        {"lr", c.gnn.lr},
        {"batch", c.gnn.batch},
        {"patience", c.gnn.patience},
        {"decay", c.gnn.decay}}},
      {"distill", {{"K", c.distill.K}, {"connectivity", c.distill.connectivity}, {"literal_sign", c.distill.literal_sign}}},
      {"explainer",
       {{"lr", c.explainer.lr},
        {"epochs", c.explainer.epochs},
        {"batch", c.explainer.batch},
        {"wl_iterations", c.explainer.wl_iterations},
        {"role_vocab", c.explainer.role_vocab},
        {"use_features", c.explainer.use_features}}},
      {"eval",
       {{"K_grid", c.eval.K_grid},
        {"connectivity", c.eval.connectivity},
        {"log_odds_K", c.eval.log_odds_K},
        {"histogram_bins", c.eval.histogram_bins}}},
  };
}

json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config: cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw InputError("override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* slot = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw InputError("override has an empty key segment: '" + assignment + "'");
    if (!slot->is_object()) throw InputError("override path '" + key + "' goes through a non-object");
    if (dot == std::string::npos) {
      (*slot)[part] = std::move(value);
      return;
    }
    slot = &(*slot)[part];
    if (slot->is_null()) *slot = json::object();
    start = dot + 1;
  }
}

void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InputError("config: " + what);
  };
  if (c.kind() == DatasetKind::kTu) {
    require(std::filesystem::is_directory(c.tu_dir()), "TU directory " + c.tu_dir().string() + " does not exist");
  }
  require(!c.output_dir.empty(), "output_dir is empty");
  require(c.hops >= 1, "hops must be at least 1");
  require(c.data.attachment >= 1, "data.attachment must be at least 1");
  require(c.data.cycle_length >= 3, "data.cycle_length must be at least 3");
  require(c.split.train >= 1, "split.train must be at least 1");
  require(c.gnn.epochs >= 1, "gnn.epochs must be at least 1");
  require(c.gnn.batch >= 1, "gnn.batch must be at least 1");
  require(std::isfinite(c.gnn.lr) && c.gnn.lr >= 0.0, "gnn.lr must be finite and non-negative");
  require(c.gnn.decay > 0.0 && c.gnn.decay <= 1.0, "gnn.decay must be in (0, 1]");
  require(c.distill.K >= 1, "distill.K must be at least 1");
  require(c.explainer.epochs >= 1, "explainer.epochs must be at least 1");
  require(c.explainer.batch >= 1, "explainer.batch must be at least 1");
  require(std::isfinite(c.explainer.lr) && c.explainer.lr >= 0.0, "explainer.lr must be finite and non-negative");
  require(c.explainer.role_vocab >= 1, "explainer.role_vocab must be at least 1");
  require(!c.eval.K_grid.empty(), "eval.K_grid is empty");
  for (std::size_t k : c.eval.K_grid) require(k >= 1, "every K in eval.K_grid must be at least 1");
  require(c.eval.log_odds_K >= 1, "eval.log_odds_K must be at least 1");
  require(c.eval.histogram_bins >= 1, "eval.histogram_bins must be at least 1");
}

}  // namespace gem
