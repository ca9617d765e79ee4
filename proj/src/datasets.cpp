#include "gem/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "gem/error.hpp"
#include "gem/rng.hpp"

namespace gem {

std::string to_string(Task task) { return task == Task::kNode ? "node" : "graph"; }

Task task_from_string(const std::string& s) {
  if (s == "node" || s == "node-classification") return Task::kNode;
  if (s == "graph" || s == "graph-classification") return Task::kGraph;
  throw InputError("unknown task '" + s + "'");
}

std::vector<InstanceId> LabeledDataset::explanation_instances() const {
  std::vector<InstanceId> ids;
  if (task == Task::kNode) {
    if (motif_edges) {
      for (const auto& [id, edges] : *motif_edges) ids.push_back(id);
    } else if (!graphs.empty()) {
      for (std::size_t v = 0; v < graphs[0].num_nodes; ++v) ids.push_back(v);
    }
  } else {
    for (std::size_t g = 0; g < graphs.size(); ++g) ids.push_back(g);
  }
  return ids;
}

int LabeledDataset::label_of(InstanceId id) const {
  if (task == Task::kNode) return graphs.at(0).node_labels->at(id);
  return *graphs.at(id).graph_label;
}

std::size_t LabeledDataset::instance_count() const {
  return task == Task::kNode ? (graphs.empty() ? 0 : graphs[0].num_nodes) : graphs.size();
}

void validate(const LabeledDataset& dataset) {
  if (dataset.task == Task::kNode) {
    if (dataset.graphs.size() != 1 || !dataset.graphs[0].node_labels) {
      throw InputError("node task needs exactly one graph with node labels");
    }
  }
  for (const Graph& g : dataset.graphs) {
    validate(g);
    if (dataset.task == Task::kGraph && !g.graph_label) {
      throw InputError("graph task needs a label on every graph");
    }
    if (g.graph_label && (*g.graph_label < 0 || *g.graph_label >= dataset.num_classes)) {
      throw InputError("graph label out of range");
    }
    if (dataset.task == Task::kNode && g.node_labels) {
      for (int y : *g.node_labels) {
        if (y < 0 || y >= dataset.num_classes) throw InputError("node label out of range");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic generators

Graph gen_ba_graph(std::size_t n, std::size_t m, std::uint64_t seed) {
  if (m < 1 || n <= m) {
    throw InputError("BA graph needs n > m >= 1 (got n=" + std::to_string(n) +
                     ", m=" + std::to_string(m) + ")");
  }
  Rng rng(seed);
  Graph g;
  g.num_nodes = n;
  std::vector<std::size_t> degree(n, 0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      g.edges.push_back({i, j});
      ++degree[i];
      ++degree[j];
    }
  }
  for (std::size_t t = m; t < n; ++t) {
    std::vector<bool> chosen(t, false);
    std::vector<std::size_t> targets;
    for (std::size_t k = 0; k < m; ++k) {
      std::uint64_t total = 0;
      for (std::size_t v = 0; v < t; ++v) {
        if (!chosen[v]) total += degree[v];
      }
      std::size_t pick = t;
      if (total == 0) {
        // every remaining candidate has degree zero: draw uniformly
        std::vector<std::size_t> open;
        for (std::size_t v = 0; v < t; ++v) {
          if (!chosen[v]) open.push_back(v);
        }
        pick = open[rng.below(open.size())];
      } else {
        std::uint64_t r = rng.below(total);
        for (std::size_t v = 0; v < t; ++v) {
          if (chosen[v]) continue;
          if (r < degree[v]) {
            pick = v;
            break;
          }
          r -= degree[v];
        }
      }
      chosen[pick] = true;
      targets.push_back(pick);
    }
    for (std::size_t v : targets) {
      g.edges.push_back(make_edge(v, t));
      ++degree[v];
      ++degree[t];
    }
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.node_features = Tensor2::Ones(static_cast<Eigen::Index>(n), 1);
  return g;
}

namespace {

void add_noise_edges(Graph& g, std::size_t count, Rng& rng) {
  std::set<Edge> present(g.edges.begin(), g.edges.end());
  std::size_t added = 0;
  while (added < count) {
    const std::size_t a = rng.below(g.num_nodes);
    const std::size_t b = rng.below(g.num_nodes);
    if (a == b) continue;
    if (present.insert(make_edge(a, b)).second) ++added;
  }
  g.edges.assign(present.begin(), present.end());
}

}  // namespace

LabeledDataset gen_ba_shapes(std::uint64_t seed, const BaShapesOptions& options) {
  Graph g = gen_ba_graph(options.base_nodes, options.attachment, derive_seed(seed, "ba-base"));
  Rng rng(derive_seed(seed, "ba-houses"));

  const std::size_t base = options.base_nodes;
  g.num_nodes = base + 5 * options.num_motifs;
  std::vector<int> labels(g.num_nodes, kNoneNode);
  std::map<InstanceId, std::vector<Edge>> motifs;

  // house layout: 0-1 under the roof (4), 2-3 the floor
  constexpr std::array<std::array<std::size_t, 2>, 6> kHouse{
      {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 0}, {4, 1}}};
  constexpr std::array<int, 5> kRoles{kMiddleNode, kMiddleNode, kBottomNode, kBottomNode, kTopNode};

  for (std::size_t k = 0; k < options.num_motifs; ++k) {
    const std::size_t first = base + 5 * k;
    std::vector<Edge> house;
    for (const auto& [a, b] : kHouse) house.push_back(make_edge(first + a, first + b));
    std::sort(house.begin(), house.end());
    for (std::size_t i = 0; i < 5; ++i) {
      labels[first + i] = kRoles[i];
      motifs[first + i] = house;
    }
    g.edges.insert(g.edges.end(), house.begin(), house.end());
    g.edges.push_back(make_edge(rng.below(base), first));
  }
  std::sort(g.edges.begin(), g.edges.end());
  if (options.noise_edges > 0) add_noise_edges(g, options.noise_edges, rng);

  g.node_features = Tensor2::Ones(static_cast<Eigen::Index>(g.num_nodes), 1);
  g.node_labels = std::move(labels);

  LabeledDataset ds;
  ds.name = "ba_shapes";
  ds.task = Task::kNode;
  ds.num_classes = 4;
  ds.graphs.push_back(std::move(g));
  ds.motif_edges = std::move(motifs);
  validate(ds);
  return ds;
}

LabeledDataset gen_tree_cycles(std::uint64_t seed, const TreeCyclesOptions& options) {
  if (options.tree_levels < 1 || options.cycle_length < 3) {
    throw InputError("tree-cycles needs at least one tree level and cycles of length >= 3");
  }
  Rng rng(derive_seed(seed, "tree-cycles"));
  const std::size_t tree_nodes = (std::size_t{1} << options.tree_levels) - 1;
  const std::size_t len = options.cycle_length;

  Graph g;
  g.num_nodes = tree_nodes + len * options.num_motifs;
  for (std::size_t i = 1; i < tree_nodes; ++i) g.edges.push_back(make_edge((i - 1) / 2, i));

  std::vector<int> labels(g.num_nodes, 0);
  std::map<InstanceId, std::vector<Edge>> motifs;
  for (std::size_t k = 0; k < options.num_motifs; ++k) {
    const std::size_t first = tree_nodes + len * k;
    std::vector<Edge> cycle;
    for (std::size_t i = 0; i < len; ++i) cycle.push_back(make_edge(first + i, first + (i + 1) % len));
    std::sort(cycle.begin(), cycle.end());
    for (std::size_t i = 0; i < len; ++i) {
      labels[first + i] = 1;
      motifs[first + i] = cycle;
    }
    g.edges.insert(g.edges.end(), cycle.begin(), cycle.end());
    g.edges.push_back(make_edge(rng.below(tree_nodes), first));
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.node_features = Tensor2::Ones(static_cast<Eigen::Index>(g.num_nodes), 1);
  g.node_labels = std::move(labels);

  LabeledDataset ds;
  ds.name = "tree_cycles";
  ds.task = Task::kNode;
  ds.num_classes = 2;
  ds.graphs.push_back(std::move(g));
  ds.motif_edges = std::move(motifs);
  constexpr std::size_t kReportedNodes = 871;
  if (ds.graphs[0].num_nodes != kReportedNodes) {
    ds.warnings.push_back("tree_cycles realized " + std::to_string(ds.graphs[0].num_nodes) +
                          " nodes (" + std::to_string(tree_nodes) + " tree + " +
                          std::to_string(len * options.num_motifs) + " cycle); reference total is " +
                          std::to_string(kReportedNodes));
  }
  validate(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// TU text format

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

long long parse_int(const std::string& token, const std::filesystem::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(token, &used);
    for (std::size_t i = used; i < token.size(); ++i) {
      if (!std::isspace(static_cast<unsigned char>(token[i]))) throw std::invalid_argument("trailing");
    }
    return v;
  } catch (const std::exception&) {
    throw FormatError(path.string() + ":" + std::to_string(line) + ": expected an integer, got '" +
                      token + "'");
  }
}

std::vector<long long> read_int_column(const std::filesystem::path& path) {
  std::vector<long long> values;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    values.push_back(parse_int(lines[i], path, i + 1));
  }
  return values;
}

std::map<long long, int> dense_codes(const std::vector<long long>& values) {
  std::map<long long, int> codes;
  for (long long v : values) codes.emplace(v, 0);
  int next = 0;
  for (auto& [v, code] : codes) code = next++;
  return codes;
}

}  // namespace

LabeledDataset load_tu_dataset(const std::filesystem::path& dir, const std::string& name) {
  const auto file = [&](const char* suffix) { return dir / (name + "_" + suffix + ".txt"); };
  for (const char* suffix : {"A", "graph_indicator", "graph_labels", "node_labels"}) {
    if (!std::filesystem::exists(file(suffix))) {
      throw IngestionError("missing TU file " + file(suffix).string());
    }
  }

  const auto indicator = read_int_column(file("graph_indicator"));
  const auto graph_labels = read_int_column(file("graph_labels"));
  const auto node_labels = read_int_column(file("node_labels"));
  const std::size_t total_nodes = indicator.size();
  if (node_labels.size() != total_nodes) {
    throw FormatError(file("node_labels").string() + ": has " + std::to_string(node_labels.size()) +
                      " rows but the graph indicator lists " + std::to_string(total_nodes) + " nodes");
  }
  const std::size_t num_graphs = graph_labels.size();

  // Node ids are 1-indexed and grouped contiguously by graph.
  std::vector<std::size_t> graph_of(total_nodes);
  std::vector<std::size_t> local_of(total_nodes);
  std::vector<std::size_t> sizes(num_graphs, 0);
  for (std::size_t v = 0; v < total_nodes; ++v) {
    const long long gid = indicator[v];
    if (gid < 1 || static_cast<std::size_t>(gid) > num_graphs) {
      throw FormatError(file("graph_indicator").string() + ":" + std::to_string(v + 1) +
                        ": graph id " + std::to_string(gid) + " out of range");
    }
    graph_of[v] = static_cast<std::size_t>(gid - 1);
    local_of[v] = sizes[graph_of[v]]++;
  }

  const auto label_codes = dense_codes(graph_labels);
  const auto atom_codes = dense_codes(node_labels);
  const auto width = static_cast<Eigen::Index>(atom_codes.size());

  LabeledDataset ds;
  ds.name = name;
  ds.task = Task::kGraph;
  ds.num_classes = static_cast<int>(label_codes.size());
  ds.graphs.resize(num_graphs);
  for (std::size_t g = 0; g < num_graphs; ++g) {
    ds.graphs[g].num_nodes = sizes[g];
    ds.graphs[g].node_features = Tensor2::Zero(static_cast<Eigen::Index>(sizes[g]), width);
    ds.graphs[g].graph_label = label_codes.at(graph_labels[g]);
  }
  for (std::size_t v = 0; v < total_nodes; ++v) {
    ds.graphs[graph_of[v]].node_features(static_cast<Eigen::Index>(local_of[v]),
                                         atom_codes.at(node_labels[v])) = 1.0;
  }

  std::vector<std::set<Edge>> edge_sets(num_graphs);
  const auto a_path = file("A");
  const auto lines = read_lines(a_path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    const auto comma = lines[i].find(',');
    if (comma == std::string::npos) {
      throw FormatError(a_path.string() + ":" + std::to_string(i + 1) + ": expected 'i, j'");
    }
    const long long a = parse_int(lines[i].substr(0, comma), a_path, i + 1);
    const long long b = parse_int(lines[i].substr(comma + 1), a_path, i + 1);
    for (long long x : {a, b}) {
      if (x < 1 || static_cast<std::size_t>(x) > total_nodes) {
        throw FormatError(a_path.string() + ":" + std::to_string(i + 1) + ": dangling node index " +
                          std::to_string(x));
      }
    }
    const auto ua = static_cast<std::size_t>(a - 1);
    const auto ub = static_cast<std::size_t>(b - 1);
    if (graph_of[ua] != graph_of[ub]) {
      throw FormatError(a_path.string() + ":" + std::to_string(i + 1) +
                        ": edge joins nodes of different graphs");
    }
    if (ua == ub) continue;  // self-loops are not representable
    edge_sets[graph_of[ua]].insert(make_edge(local_of[ua], local_of[ub]));
  }
  for (std::size_t g = 0; g < num_graphs; ++g) {
    ds.graphs[g].edges.assign(edge_sets[g].begin(), edge_sets[g].end());
  }
  validate(ds);
  return ds;
}

void write_tu_dataset(const LabeledDataset& dataset, const std::filesystem::path& dir,
                      const std::string& name) {
  if (dataset.task != Task::kGraph) throw InputError("TU export supports graph datasets only");
  std::filesystem::create_directories(dir);
  std::ofstream a(dir / (name + "_A.txt"));
  std::ofstream ind(dir / (name + "_graph_indicator.txt"));
  std::ofstream gl(dir / (name + "_graph_labels.txt"));
  std::ofstream nl(dir / (name + "_node_labels.txt"));
  std::size_t offset = 1;
  for (std::size_t g = 0; g < dataset.graphs.size(); ++g) {
    const Graph& graph = dataset.graphs[g];
    for (const Edge& e : graph.edges) {
      a << offset + e.u << ", " << offset + e.v << "\n";
      a << offset + e.v << ", " << offset + e.u << "\n";
    }
    for (std::size_t v = 0; v < graph.num_nodes; ++v) {
      ind << g + 1 << "\n";
      Eigen::Index code = 0;
      graph.node_features.row(static_cast<Eigen::Index>(v)).maxCoeff(&code);
      nl << code << "\n";
    }
    gl << *graph.graph_label << "\n";
    offset += graph.num_nodes;
  }
}

// ---------------------------------------------------------------------------

SplitSpec make_split(const LabeledDataset& dataset, const SplitCounts& counts, std::uint64_t seed) {
  std::vector<InstanceId> pool = dataset.explanation_instances();
  const std::size_t wanted = counts.train + counts.val + counts.test;
  if (wanted > pool.size()) {
    throw InputError("split counts " + std::to_string(wanted) + " exceed the " +
                     std::to_string(pool.size()) + " available instances");
  }
  Rng rng(seed);
  rng.shuffle(pool);
  SplitSpec split;
  split.seed = seed;
  auto take = [&pool](std::size_t from, std::size_t count) {
    std::vector<InstanceId> ids(pool.begin() + static_cast<std::ptrdiff_t>(from),
                                pool.begin() + static_cast<std::ptrdiff_t>(from + count));
    std::sort(ids.begin(), ids.end());
    return ids;
  };
  split.train_ids = take(0, counts.train);
  split.val_ids = take(counts.train, counts.val);
  split.test_ids = take(counts.train + counts.val, counts.test);
  return split;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json edges_to_json(const std::vector<Edge>& edges) {
  nlohmann::json out = nlohmann::json::array();
  for (const Edge& e : edges) out.push_back({e.u, e.v});
  return out;
}

namespace {

std::vector<Edge> edges_from_json(const nlohmann::json& doc) {
  std::vector<Edge> edges;
  for (const auto& pair : doc) {
    edges.push_back(make_edge(pair.at(0).get<std::size_t>(), pair.at(1).get<std::size_t>()));
  }
  return edges;
}

}  // namespace

nlohmann::json dataset_to_json(const LabeledDataset& dataset) {
  nlohmann::json doc;
  doc["format"] = "gem-dataset-v1";
  doc["name"] = dataset.name;
  doc["task"] = to_string(dataset.task);
  doc["num_classes"] = dataset.num_classes;
  doc["graphs"] = nlohmann::json::array();
  for (const Graph& g : dataset.graphs) {
    nlohmann::json jg;
    jg["n"] = g.num_nodes;
    jg["edges"] = edges_to_json(g.edges);
    nlohmann::json features = nlohmann::json::array();
    for (Eigen::Index r = 0; r < g.node_features.rows(); ++r) {
      std::vector<double> row(g.node_features.row(r).begin(), g.node_features.row(r).end());
      features.push_back(row);
    }
    jg["features"] = std::move(features);
    if (g.node_labels) jg["node_labels"] = *g.node_labels;
    if (g.graph_label) jg["graph_label"] = *g.graph_label;
    doc["graphs"].push_back(std::move(jg));
  }
  if (dataset.motif_edges) {
    nlohmann::json motifs = nlohmann::json::object();
    for (const auto& [id, edges] : *dataset.motif_edges) motifs[std::to_string(id)] = edges_to_json(edges);
    doc["motif_edges"] = std::move(motifs);
  } else {
    doc["motif_edges"] = nullptr;
  }
  return doc;
}

LabeledDataset dataset_from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "gem-dataset-v1") {
    throw FormatError("expected a gem-dataset-v1 document");
  }
  LabeledDataset ds;
  ds.name = doc.value("name", "");
  ds.task = task_from_string(doc.at("task").get<std::string>());
  ds.num_classes = doc.at("num_classes").get<int>();
  for (const auto& jg : doc.at("graphs")) {
    Graph g;
    g.num_nodes = jg.at("n").get<std::size_t>();
    g.edges = edges_from_json(jg.at("edges"));
    const auto& features = jg.at("features");
    const auto width = features.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(features[0].size());
    g.node_features.resize(static_cast<Eigen::Index>(features.size()), width);
    for (std::size_t r = 0; r < features.size(); ++r) {
      if (static_cast<Eigen::Index>(features[r].size()) != width) throw FormatError("ragged feature matrix");
      for (Eigen::Index c = 0; c < width; ++c) {
        g.node_features(static_cast<Eigen::Index>(r), c) = features[r][static_cast<std::size_t>(c)].get<double>();
      }
    }
    if (jg.contains("node_labels")) g.node_labels = jg["node_labels"].get<std::vector<int>>();
    if (jg.contains("graph_label")) g.graph_label = jg["graph_label"].get<int>();
    ds.graphs.push_back(std::move(g));
  }
  if (doc.contains("motif_edges") && !doc["motif_edges"].is_null()) {
    std::map<InstanceId, std::vector<Edge>> motifs;
    for (const auto& [key, edges] : doc["motif_edges"].items()) {
      motifs[static_cast<InstanceId>(std::stoull(key))] = edges_from_json(edges);
    }
    ds.motif_edges = std::move(motifs);
  }
  validate(ds);
  return ds;
}

}  // namespace gem
