#include "gem/distill.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "gem/error.hpp"

namespace gem {

std::vector<Edge> DistilledExplanation::kept() const {
  std::vector<Edge> out;
  for (const auto& k : kept_edges) out.push_back(k.edge);
  std::sort(out.begin(), out.end());
  return out;
}

double model_error(const GnnModel& model, const ComputationGraph& cg, int y) {
  if (y < 0 || y >= model.num_classes) throw InputError("class " + std::to_string(y) + " out of range");
  return cross_entropy(instance_logits(model, cg), y);
}

double edge_causal_contribution(const GnnModel& model, const ComputationGraph& cg, int y, Edge edge) {
  const ComputationGraph without = remove_edge(cg, edge);
  return model_error(model, without, y) - model_error(model, cg, y);
}

namespace {

/// Evaluates the classifier on edge subsets of one computation graph. Edge
/// lists are kept sorted so the propagation operator is built exactly as
/// propagation_operator(Adjacency) would build it.
class SubgraphScorer {
 public:
  SubgraphScorer(const GnnModel& model, const ComputationGraph& cg, int y)
      : model_(model), cg_(cg), y_(y) {
    if (model.task == Task::kNode && !cg.target_local_index) {
      throw InputError("node distillation needs a target node");
    }
  }

  double error(const std::vector<Edge>& edges) const {
    const SparseOperator op = propagation_operator(cg_.size(), edges);
    const Tensor2 logits = gnn_logits(model_, op, cg_.features);
    const auto r = static_cast<Eigen::Index>(model_.task == Task::kNode ? *cg_.target_local_index : 0);
    return cross_entropy(std::span<const double>(logits.row(r).data(), static_cast<std::size_t>(logits.cols())),
                         y_);
  }

 private:
  const GnnModel& model_;
  const ComputationGraph& cg_;
  int y_;
};

std::vector<Edge> without(const std::vector<Edge>& edges, Edge e) {
  std::vector<Edge> out;
  out.reserve(edges.size());
  for (const Edge& x : edges) {
    if (x != e) out.push_back(x);
  }
  return out;
}

/// Same selection rule as largest_component_subgraph, over an edge list.
std::vector<Edge> restrict_component(std::size_t n, const std::vector<Edge>& edges,
                                     std::optional<std::size_t> anchor) {
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&parent](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const Edge& e : edges) {
    const std::size_t a = find(e.u);
    const std::size_t b = find(e.v);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  // with the smaller index as parent, every root is its component's minimum
  std::vector<std::size_t> size(n, 0);
  for (std::size_t v = 0; v < n; ++v) ++size[find(v)];
  std::size_t chosen = 0;
  if (anchor) {
    chosen = find(*anchor);
  } else {
    for (std::size_t v = 0; v < n; ++v) {
      if (find(v) == v && size[v] > size[chosen]) chosen = v;
    }
  }
  std::vector<Edge> out;
  for (const Edge& e : edges) {
    if (find(e.u) == chosen) out.push_back(e);
  }
  return out;
}

bool is_connected_with(std::size_t n, const std::vector<Edge>& edges, std::optional<std::size_t> anchor) {
  if (edges.empty()) return true;
  const auto comp = restrict_component(n, edges, anchor ? anchor : std::optional<std::size_t>(edges.front().u));
  return comp.size() == edges.size();
}

}  // namespace

DistilledExplanation distill(const GnnModel& model, const ComputationGraph& cg, int y,
                             const DistillConfig& config, std::optional<std::size_t> anchor) {
  if (config.K < 1) throw InputError("K must be at least 1");
  if (anchor && *anchor >= cg.size()) {
    throw InputError("anchor " + std::to_string(*anchor) + " is outside the computation graph");
  }
  const std::vector<Edge> all = cg.edges();
  if (all.empty()) throw InputError("cannot distill a computation graph without edges");

  const SubgraphScorer scorer(model, cg, y);
  const std::size_t n = cg.size();
  auto restrict = [&](std::vector<Edge> edges) {
    return config.connectivity ? restrict_component(n, edges, anchor) : edges;
  };

  DistilledExplanation out;
  out.origin = cg.origin;
  out.K = config.K;
  out.base_error = scorer.error(all);

  std::vector<std::pair<double, Edge>> ranked;
  for (const Edge& e : all) {
    const double c = scorer.error(without(all, e)) - out.base_error;
    out.edge_contributions[e] = c;
    ranked.emplace_back(c, e);
  }
  std::sort(ranked.begin(), ranked.end());

  // Greedy pass: drop an edge unless dropping it raises the error.
  std::vector<Edge> current = all;
  double current_error = out.base_error;
  std::map<Edge, double> weight;
  for (const auto& [contribution, e] : ranked) {
    if (!std::binary_search(current.begin(), current.end(), e)) continue;
    std::vector<Edge> tentative = restrict(without(current, e));
    const double tentative_error = scorer.error(tentative);
    if (tentative_error > current_error) {
      weight[e] = config.literal_sign ? current_error - tentative_error : tentative_error - current_error;
    } else {
      current = std::move(tentative);
      current_error = tentative_error;
    }
  }
  out.greedy_error = current_error;

  // Prune lowest weight first until at most K edges remain.
  std::vector<std::pair<double, Edge>> by_weight;
  for (const Edge& e : current) by_weight.emplace_back(weight.at(e), e);
  std::sort(by_weight.begin(), by_weight.end());
  for (const auto& [w, e] : by_weight) {
    if (current.size() <= config.K) break;
    if (!std::binary_search(current.begin(), current.end(), e)) continue;
    current = restrict(without(current, e));
  }
  out.final_error = current.size() == all.size() ? out.base_error : scorer.error(current);

  // Min-max onto [0.1, 1].
  double lo = 0.0;
  double hi = 0.0;
  for (std::size_t i = 0; i < current.size(); ++i) {
    const double w = weight.at(current[i]);
    lo = i == 0 ? w : std::min(lo, w);
    hi = i == 0 ? w : std::max(hi, w);
  }
  out.target_mask = Tensor2::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (const Edge& e : current) {
    const double w = weight.at(e);
    const double normalized = hi > lo ? 0.1 + 0.9 * (w - lo) / (hi - lo) : 1.0;
    out.kept_edges.push_back({e, normalized, w});
    out.target_mask(e.u, e.v) = normalized;
    out.target_mask(e.v, e.u) = normalized;
  }
  std::sort(out.kept_edges.begin(), out.kept_edges.end(), [](const KeptEdge& a, const KeptEdge& b) {
    return a.importance != b.importance ? a.importance > b.importance : a.edge < b.edge;
  });
  out.connected = config.connectivity ? true : is_connected_with(n, current, anchor);
  return out;
}

double distillation_accuracy(const GnnModel& model, std::span<const DistilledExplanation> explanations,
                             std::span<const ComputationGraph> cgs, std::span<const int> labels) {
  if (explanations.empty()) throw InputError("no explanations to score");
  if (explanations.size() != cgs.size() || cgs.size() != labels.size()) {
    throw InputError("explanations, computation graphs and labels must pair up");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < explanations.size(); ++i) {
    const auto kept = explanations[i].kept();
    const ComputationGraph sub = restrict_to_edges(cgs[i], kept);
    correct += predict(model, sub).predicted_class == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(explanations.size());
}

nlohmann::json distilled_to_json(const DistilledExplanation& expl, const ComputationGraph& cg) {
  nlohmann::json edges = nlohmann::json::array();
  for (const KeptEdge& k : expl.kept_edges) {
    edges.push_back({cg.nodes.at(k.edge.u), cg.nodes.at(k.edge.v), k.weight});
  }
  return {{"origin", expl.origin},
          {"K", expl.K},
          {"base_error", expl.base_error},
          {"edges", std::move(edges)},
          {"connected", expl.connected}};
}

DistilledExplanation distilled_from_json(const nlohmann::json& record, const ComputationGraph& cg) {
  std::map<std::size_t, std::size_t> local;
  for (std::size_t i = 0; i < cg.nodes.size(); ++i) local[cg.nodes[i]] = i;
  auto to_local = [&](std::size_t original) {
    auto it = local.find(original);
    if (it == local.end()) {
      throw FormatError("distilled edge endpoint " + std::to_string(original) + " is not in " + cg.origin);
    }
    return it->second;
  };

  DistilledExplanation out;
  out.origin = record.at("origin").get<std::string>();
  out.K = record.at("K").get<std::size_t>();
  out.base_error = record.at("base_error").get<double>();
  out.connected = record.at("connected").get<bool>();
  const auto n = static_cast<Eigen::Index>(cg.size());
  out.target_mask = Tensor2::Zero(n, n);
  for (const auto& item : record.at("edges")) {
    const Edge e = make_edge(to_local(item.at(0).get<std::size_t>()), to_local(item.at(1).get<std::size_t>()));
    if (!cg.has_edge(e)) throw FormatError("distilled edge is not in " + cg.origin);
    const double w = item.at(2).get<double>();
    out.kept_edges.push_back({e, w, w});
    out.target_mask(e.u, e.v) = w;
    out.target_mask(e.v, e.u) = w;
  }
  return out;
}

}  // namespace gem
