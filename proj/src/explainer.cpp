#include "gem/explainer.hpp"

#include <algorithm>
#include <queue>
#include <unordered_map>

#include "gem/error.hpp"
#include "gem/gnn.hpp"

namespace gem {

std::vector<std::size_t> node_role_labels(const ComputationGraph& cg, std::size_t cap) {
  if (!cg.target_local_index) throw InputError("node roles need a target node");
  std::vector<std::size_t> roles = bfs_distances(cg.adjacency, *cg.target_local_index);
  for (auto& r : roles) r = std::min(r, cap);  // kUnreachable also lands on cap
  return roles;
}

namespace {

bool one_hot_rows(const Tensor2& x) {
  if (x.cols() < 2) return false;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int ones = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double v = x(i, j);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        return false;
      }
    }
    if (ones != 1) return false;
  }
  return true;
}

std::uint64_t combine(std::uint64_t h, std::uint64_t v) { return mix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6))); }

}  // namespace

WlColoring wl_refine(const ComputationGraph& cg, std::size_t iterations) {
  const std::size_t n = cg.size();
  std::vector<std::vector<std::size_t>> nbrs(n);
  for (const Edge& e : cg.edges()) {
    nbrs[e.u].push_back(e.v);
    nbrs[e.v].push_back(e.u);
  }

  std::vector<std::uint64_t> sig(n);
  const bool labelled = one_hot_rows(cg.features);
  for (std::size_t v = 0; v < n; ++v) {
    std::uint64_t seed = nbrs[v].size();
    if (labelled) {
      Eigen::Index arg = 0;
      cg.features.row(static_cast<Eigen::Index>(v)).maxCoeff(&arg);
      seed = static_cast<std::uint64_t>(arg);
    }
    sig[v] = combine(labelled ? 0x4c4142454cULL : 0x444547ULL, seed);
  }

  std::vector<std::uint64_t> next(n);
  std::vector<std::uint64_t> multiset;
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t v = 0; v < n; ++v) {
      multiset.clear();
      for (std::size_t w : nbrs[v]) multiset.push_back(sig[w]);
      std::sort(multiset.begin(), multiset.end());
      std::uint64_t h = combine(sig[v], multiset.size());
      for (std::uint64_t s : multiset) h = combine(h, s);
      next[v] = h;
    }
    sig.swap(next);
  }

  WlColoring out;
  out.signatures = sig;
  std::unordered_map<std::uint64_t, std::size_t> index;
  for (std::uint64_t s : sig) {
    auto [it, inserted] = index.emplace(s, index.size());
    out.dense.push_back(it->second);
  }
  return out;
}

std::vector<std::size_t> wl_labels(const ComputationGraph& cg, std::size_t iterations, std::size_t vocab) {
  if (vocab == 0) throw InputError("WL vocabulary must be positive");
  const WlColoring colors = wl_refine(cg, iterations);
  std::vector<std::size_t> out;
  out.reserve(colors.signatures.size());
  for (std::uint64_t s : colors.signatures) out.push_back(static_cast<std::size_t>(s % vocab));
  return out;
}

// ---------------------------------------------------------------------------

ExplainerModel make_explainer(Task task, std::size_t role_vocab, std::size_t feature_dim,
                              std::size_t role_param, Rng& rng) {
  if (role_vocab == 0) throw InputError("role vocabulary must be positive");
  ExplainerModel model;
  model.task = task;
  model.role_vocab = role_vocab;
  model.feature_dim = feature_dim;
  model.role_param = role_param;
  model.params.add("E1", glorot_uniform(model.input_dim(), kExplainerHidden1, rng));
  model.params.add("E2", glorot_uniform(kExplainerHidden1, kExplainerHidden2, rng));
  model.params.add("E3", glorot_uniform(kExplainerHidden2, kExplainerLatent, rng));
  return model;
}

std::vector<std::size_t> explainer_roles(const ExplainerModel& model, const ComputationGraph& cg) {
  return model.task == Task::kNode ? node_role_labels(cg, model.role_param)
                                   : wl_labels(cg, model.role_param, model.role_vocab);
}

Tensor2 explainer_input(const ExplainerModel& model, const ComputationGraph& cg,
                        std::span<const std::size_t> roles) {
  const std::size_t n = cg.size();
  if (roles.size() != n) throw StructuralError("one role per node expected");
  if (model.feature_dim != 0 && static_cast<std::size_t>(cg.features.cols()) != model.feature_dim) {
    throw StructuralError("feature width " + std::to_string(cg.features.cols()) +
                          " does not match explainer feature dim " + std::to_string(model.feature_dim));
  }
  Tensor2 x = Tensor2::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(model.input_dim()));
  for (std::size_t v = 0; v < n; ++v) {
    if (roles[v] >= model.role_vocab) {
      throw StructuralError("role " + std::to_string(roles[v]) + " outside vocabulary of " +
                            std::to_string(model.role_vocab));
    }
    x(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(roles[v])) = 1.0;
  }
  if (model.feature_dim != 0) {
    x.rightCols(static_cast<Eigen::Index>(model.feature_dim)) = cg.features;
  }
  return x;
}

namespace {

Var bind(Tape& tape, ParamSet& params, const char* name) { return tape.parameter(params.at(name)); }
Var bind(Tape& tape, const ParamSet& params, const char* name) {
  return tape.constant(params.at(name).value);
}

template <typename Params>
Var record(Tape& tape, Params& params, const SparseOperator& op, const Tensor2& input) {
  if (static_cast<Eigen::Index>(params.at("E1").value.rows()) != input.cols()) {
    throw StructuralError("explainer input width " + std::to_string(input.cols()) + " does not match E1");
  }
  if (op.rows() != input.rows()) throw StructuralError("operator and input rows differ");
  const Var x = tape.constant(input);
  const Var h1 = tape.relu(tape.propagate(op, tape.matmul(x, bind(tape, params, "E1"))));
  const Var h2 = tape.relu(tape.propagate(op, tape.matmul(h1, bind(tape, params, "E2"))));
  return tape.propagate(op, tape.matmul(h2, bind(tape, params, "E3")));
}

Tensor2 latent(const ExplainerModel& model, const ComputationGraph& cg, std::span<const std::size_t> roles) {
  const SparseOperator op = propagation_operator(cg.adjacency);
  Tape tape;
  return tape.value(record_explainer(tape, model, op, explainer_input(model, cg, roles)));
}

}  // namespace

Var record_explainer(Tape& tape, ParamSet& params, const SparseOperator& op, const Tensor2& input) {
  return record(tape, params, op, input);
}

Var record_explainer(Tape& tape, const ExplainerModel& model, const SparseOperator& op, const Tensor2& input) {
  return record(tape, model.params, op, input);
}

ExplanationMask encode_decode(const ExplainerModel& model, const ComputationGraph& cg,
                              std::span<const std::size_t> roles) {
  ExplanationMask out;
  out.latent = latent(model, cg, roles);
  const std::size_t n = cg.size();
  out.mask.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double s = sigmoid(row_dot(out.latent, i, j));
      out.mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s;
      out.mask(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = s;
    }
  }
  return out;
}

std::vector<double> edge_scores(const ExplainerModel& model, const ComputationGraph& cg) {
  const auto roles = explainer_roles(model, cg);
  const Tensor2 z = latent(model, cg, roles);
  std::vector<double> out;
  for (const Edge& e : cg.edges()) out.push_back(sigmoid(row_dot(z, e.u, e.v)));
  return out;
}

// Training ------------------------------------------------------------------

namespace {

struct Prepared {
  SparseOperator op;
  Tensor2 input;
  std::vector<Edge> edges;
  Tensor2 target;  // |E| x 1
};

std::vector<Prepared> prepare(const ExplainerModel& model, std::span<const ExplainerExample> examples) {
  std::vector<Prepared> out;
  for (const auto& ex : examples) {
    const auto n = static_cast<Eigen::Index>(ex.cg.size());
    if (ex.target.rows() != n || ex.target.cols() != n) {
      throw InputError("target mask of " + ex.cg.origin + " does not match its computation graph");
    }
    Prepared p;
    p.edges = ex.cg.edges();
    if (p.edges.empty()) continue;
    p.op = propagation_operator(ex.cg.adjacency);
    p.input = explainer_input(model, ex.cg, explainer_roles(model, ex.cg));
    p.target.resize(static_cast<Eigen::Index>(p.edges.size()), 1);
    for (std::size_t k = 0; k < p.edges.size(); ++k) {
      p.target(static_cast<Eigen::Index>(k), 0) = ex.target(p.edges[k].u, p.edges[k].v);
    }
    out.push_back(std::move(p));
  }
  return out;
}

double mean_mse(const ExplainerModel& model, const std::vector<Prepared>& items) {
  if (items.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : items) {
    Tape tape;
    const Var z = record_explainer(tape, model, p.op, p.input);
    const Var loss = tape.mean_squared_error(tape.sigmoid(tape.edge_dot(z, p.edges)), p.target);
    total += tape.value(loss)(0, 0);
  }
  return total / static_cast<double>(items.size());
}

}  // namespace

double explainer_mse(const ExplainerModel& model, std::span<const ExplainerExample> examples) {
  return mean_mse(model, prepare(model, examples));
}

TrainedExplainer train_explainer(ExplainerModel initial, std::span<const ExplainerExample> train,
                                 std::span<const ExplainerExample> val, const ExplainerTrainConfig& config) {
  if (train.empty()) throw InputError("explainer training set is empty");
  if (config.epochs < 1) throw InputError("explainer epochs must be at least 1");
  if (config.batch_size < 1) throw InputError("explainer batch size must be at least 1");

  TrainedExplainer out{std::move(initial), {}};
  ExplainerModel& model = out.model;
  const std::vector<Prepared> train_items = prepare(model, train);
  if (train_items.empty()) throw InputError("no explainer training instance has edges");
  const std::vector<Prepared> val_items = prepare(model, val);
  const std::vector<Prepared>& select_on = val_items.empty() ? train_items : val_items;

  double best = mean_mse(model, select_on);
  out.report.initial_val_mse = best;
  ParamSet best_params = model.params;

  Rng rng(derive_seed(config.seed, "explainer-batches"));
  std::vector<std::size_t> order(train_items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      model.params.zero_grad();
      Tape tape;
      Var total{};
      for (std::size_t b = start; b < stop; ++b) {
        const Prepared& p = train_items[order[b]];
        const Var z = record_explainer(tape, model.params, p.op, p.input);
        const Var loss = tape.mean_squared_error(tape.sigmoid(tape.edge_dot(z, p.edges)), p.target);
        total = b == start ? loss : tape.add(total, loss);
      }
      try {
        tape.backward(tape.scale(total, 1.0 / static_cast<double>(stop - start)));
      } catch (const NumericError& e) {
        throw TrainingError("explainer diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      adam_step(model.params, config.lr);
    }
    const double score = mean_mse(model, select_on);
    if (score < best) {
      best = score;
      best_params = model.params;
      out.report.best_epoch = epoch;
    }
  }
  model.params = std::move(best_params);
  out.report.best_val_mse = best;
  out.report.final_train_mse = mean_mse(model, train_items);
  return out;
}

// Inference -----------------------------------------------------------------

std::vector<Edge> ExplanationResult::edges() const {
  std::vector<Edge> out;
  for (const auto& s : selected) out.push_back(s.edge);
  std::sort(out.begin(), out.end());
  return out;
}

ExplanationResult select_edges(const ComputationGraph& cg, std::span<const double> scores, std::size_t K,
                               bool connectivity) {
  if (K < 1) throw InputError("K must be at least 1");
  const std::vector<Edge> edges = cg.edges();
  if (scores.size() != edges.size()) throw StructuralError("one score per edge expected");

  std::vector<std::size_t> ranked(edges.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i] = i;
  // edges are already lexicographic, so index order breaks ties
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  ExplanationResult out;
  out.origin = cg.origin;
  out.K = K;
  auto take = [&](std::size_t idx) { out.selected.push_back({edges[idx], scores[idx]}); };

  if (!connectivity || edges.empty()) {
    for (std::size_t r = 0; r < ranked.size() && out.selected.size() < K; ++r) take(ranked[r]);
  } else {
    std::vector<std::size_t> rank_of(edges.size());
    for (std::size_t r = 0; r < ranked.size(); ++r) rank_of[ranked[r]] = r;
    std::vector<std::vector<std::size_t>> incident(cg.size());
    for (std::size_t i = 0; i < edges.size(); ++i) {
      incident[edges[i].u].push_back(i);
      incident[edges[i].v].push_back(i);
    }
    std::vector<bool> in_component(cg.size(), false);
    std::vector<bool> used(edges.size(), false);
    // min-heap on rank
    std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> frontier;
    auto join = [&](std::size_t v) {
      if (in_component[v]) return;
      in_component[v] = true;
      for (std::size_t i : incident[v]) {
        if (!used[i]) frontier.push(rank_of[i]);
      }
    };
    if (cg.target_local_index) {
      join(*cg.target_local_index);
    } else {
      join(edges[ranked.front()].u);
      join(edges[ranked.front()].v);
    }
    while (out.selected.size() < K && !frontier.empty()) {
      const std::size_t idx = ranked[frontier.top()];
      frontier.pop();
      if (used[idx]) continue;
      used[idx] = true;
      take(idx);
      join(edges[idx].u);
      join(edges[idx].v);
    }
  }
  const std::vector<Edge> kept = out.edges();
  out.subgraph = restrict_to_edges(cg, kept);
  return out;
}

ExplanationResult explain(const ExplainerModel& model, const ComputationGraph& cg, std::size_t K,
                          bool connectivity) {
  const std::vector<double> scores = edge_scores(model, cg);
  return select_edges(cg, scores, K, connectivity);
}

double AttributionView::evaluate(std::span<const Edge> indicator) const {
  double total = psi0;
  for (const Edge& e : indicator) {
    auto it = psi.find(e);
    if (it == psi.end()) throw InputError("indicator edge is not in the computation graph");
    total += it->second;
  }
  return total;
}

AttributionView attribution_view(const ExplanationMask& mask, const ComputationGraph& cg) {
  AttributionView view;
  for (const Edge& e : cg.edges()) view.psi[e] = mask.mask(e.u, e.v);
  return view;
}

// Persistence ---------------------------------------------------------------

nlohmann::json explainer_to_json(const ExplainerModel& model, std::uint64_t rng_seed,
                                 const nlohmann::json& train_meta) {
  nlohmann::json meta = train_meta;
  meta["task"] = to_string(model.task);
  meta["role_vocab"] = model.role_vocab;
  meta["feature_dim"] = model.feature_dim;
  meta["role_param"] = model.role_param;
  return params_to_json(model.params, kExplainerArch, rng_seed, meta);
}

ExplainerModel explainer_from_json(const nlohmann::json& doc) {
  ExplainerModel model;
  model.params = params_from_json(doc, kExplainerArch);
  const auto& meta = doc.at("train_meta");
  model.task = task_from_string(meta.at("task").get<std::string>());
  model.role_vocab = meta.at("role_vocab").get<std::size_t>();
  model.feature_dim = meta.at("feature_dim").get<std::size_t>();
  model.role_param = meta.at("role_param").get<std::size_t>();
  auto expect = [&](const char* name, std::size_t r, std::size_t c) {
    if (!model.params.contains(name)) throw FormatError(std::string("checkpoint lacks ") + name);
    const Tensor2& v = model.params.at(name).value;
    if (v.rows() != static_cast<Eigen::Index>(r) || v.cols() != static_cast<Eigen::Index>(c)) {
      throw FormatError(std::string("bad shape for ") + name);
    }
  };
  expect("E1", model.input_dim(), kExplainerHidden1);
  expect("E2", kExplainerHidden1, kExplainerHidden2);
  expect("E3", kExplainerHidden2, kExplainerLatent);
  return model;
}

nlohmann::json explanation_to_json(const ExplanationResult& result, const ComputationGraph& cg) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& s : result.selected) edges.push_back({cg.nodes.at(s.edge.u), cg.nodes.at(s.edge.v), s.score});
  return {{"origin", result.origin}, {"edges", std::move(edges)}, {"K", result.K}};
}

ExplanationResult explanation_from_json(const nlohmann::json& record, const ComputationGraph& cg) {
  std::map<std::size_t, std::size_t> local;
  for (std::size_t i = 0; i < cg.nodes.size(); ++i) local[cg.nodes[i]] = i;
  auto to_local = [&](std::size_t original) {
    auto it = local.find(original);
    if (it == local.end()) {
      throw FormatError("explanation edge endpoint " + std::to_string(original) + " is not in " + cg.origin);
    }
    return it->second;
  };

  ExplanationResult out;
  out.origin = record.at("origin").get<std::string>();
  out.K = record.at("K").get<std::size_t>();
  for (const auto& item : record.at("edges")) {
    const Edge e = make_edge(to_local(item.at(0).get<std::size_t>()), to_local(item.at(1).get<std::size_t>()));
    if (!cg.has_edge(e)) throw FormatError("explanation edge is not in " + cg.origin);
    out.selected.push_back({e, item.at(2).get<double>()});
  }
  const std::vector<Edge> kept = out.edges();
  out.subgraph = restrict_to_edges(cg, kept);
  return out;
}

}  // namespace gem
