#include "gem/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <limits>
#include <set>

#include "gem/error.hpp"

namespace gem {

std::string gnn_arch(Task task) {
  return task == Task::kNode ? "gem-nodegcn-v1" : "gem-graphgcn-v1";
}

GnnModel make_gnn(Task task, std::size_t input_dim, int num_classes, Rng& rng) {
  if (input_dim == 0 || num_classes < 1) throw StructuralError("classifier needs d >= 1 and l >= 1");
  GnnModel model;
  model.task = task;
  model.input_dim = input_dim;
  model.num_classes = num_classes;
  const auto l = static_cast<std::size_t>(num_classes);
  const std::size_t head_in = task == Task::kNode ? 3 * kGnnHidden : kGnnHidden;
  model.params.add("W1", glorot_uniform(input_dim, kGnnHidden, rng));
  model.params.add("W2", glorot_uniform(kGnnHidden, kGnnHidden, rng));
  model.params.add("W3", glorot_uniform(kGnnHidden, kGnnHidden, rng));
  for (const char* b : {"b1", "b2", "b3"}) model.params.add(b, Tensor2::Zero(1, static_cast<Eigen::Index>(kGnnHidden)));
  model.params.add("head_W", glorot_uniform(head_in, l, rng));
  model.params.add("head_b", Tensor2::Zero(1, static_cast<Eigen::Index>(l)));
  return model;
}

namespace {

Var bind(Tape& tape, ParamSet& params, const char* name) { return tape.parameter(params.at(name)); }
Var bind(Tape& tape, const ParamSet& params, const char* name) {
  return tape.constant(params.at(name).value);
}

// relu(normalize_rows(op X W + b))
Var layer(Tape& tape, const SparseOperator& op, Var x, Var w, Var b) {
  return tape.relu(tape.row_normalize(tape.add_row(tape.propagate(op, tape.matmul(x, w)), b)));
}

template <typename Params>
Var record(Tape& tape, Params& params, const GnnModel& shape, const SparseOperator& op,
           const Tensor2& features) {
  if (static_cast<std::size_t>(features.cols()) != shape.input_dim) {
    throw StructuralError("feature width " + std::to_string(features.cols()) +
                          " does not match classifier input dim " + std::to_string(shape.input_dim));
  }
  if (op.rows() != features.rows()) throw StructuralError("operator and feature rows differ");
  const Var x = tape.constant(features);
  const Var h1 = layer(tape, op, x, bind(tape, params, "W1"), bind(tape, params, "b1"));
  const Var h2 = layer(tape, op, h1, bind(tape, params, "W2"), bind(tape, params, "b2"));
  const Var h3 = layer(tape, op, h2, bind(tape, params, "W3"), bind(tape, params, "b3"));
  Var readout;
  if (shape.task == Task::kNode) {
    const Var blocks[] = {h1, h2, h3};
    readout = tape.concat_cols(blocks);
  } else {
    readout = tape.max_pool_rows(h3);
  }
  return tape.add_row(tape.matmul(readout, bind(tape, params, "head_W")),
                      bind(tape, params, "head_b"));
}

}  // namespace

Var record_gnn(Tape& tape, ParamSet& params, const GnnModel& shape, const SparseOperator& op,
               const Tensor2& features) {
  return record(tape, params, shape, op, features);
}

Var record_gnn(Tape& tape, const GnnModel& model, const SparseOperator& op,
               const Tensor2& features) {
  return record(tape, model.params, model, op, features);
}

Tensor2 gnn_logits(const GnnModel& model, const SparseOperator& op, const Tensor2& features) {
  Tape tape;
  return tape.value(record_gnn(tape, model, op, features));
}

Tensor2 node_forward(const GnnModel& model, const ComputationGraph& cg) {
  if (model.task != Task::kNode) throw StructuralError("node_forward needs a node classifier");
  return gnn_logits(model, propagation_operator(cg.adjacency), cg.features);
}

Tensor2 graph_forward(const GnnModel& model, const ComputationGraph& cg) {
  if (model.task != Task::kGraph) throw StructuralError("graph_forward needs a graph classifier");
  return gnn_logits(model, propagation_operator(cg.adjacency), cg.features);
}

Prediction prediction_from_logits(std::span<const double> logits) {
  Tensor2 row(1, static_cast<Eigen::Index>(logits.size()));
  for (std::size_t i = 0; i < logits.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = logits[i];
  const Tensor2 p = softmax_rows(row);
  Prediction out;
  out.probabilities.assign(p.data(), p.data() + p.size());
  out.predicted_class = static_cast<int>(
      std::max_element(out.probabilities.begin(), out.probabilities.end()) - out.probabilities.begin());
  return out;
}

std::vector<double> instance_logits(const GnnModel& model, const ComputationGraph& cg) {
  if (model.task == Task::kNode) {
    if (!cg.target_local_index) throw InputError("node prediction needs a target node");
    const Tensor2 logits = node_forward(model, cg);
    const auto r = static_cast<Eigen::Index>(*cg.target_local_index);
    return {logits.row(r).begin(), logits.row(r).end()};
  }
  const Tensor2 logits = graph_forward(model, cg);
  return {logits.data(), logits.data() + logits.size()};
}

Prediction predict(const GnnModel& model, const ComputationGraph& cg) {
  return prediction_from_logits(instance_logits(model, cg));
}

// ---------------------------------------------------------------------------
// Training

namespace {

int argmax_row(const Tensor2& logits, Eigen::Index r) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < logits.cols(); ++c) {
    if (logits(r, c) > logits(r, best)) best = c;
  }
  return static_cast<int>(best);
}

struct Score {
  double accuracy = 0.0;
  double loss = 0.0;
};

bool better(const Score& a, const Score& b) {
  return a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.loss < b.loss);
}

Score score_rows(const Tensor2& logits, std::span<const InstanceId> ids, const LabeledDataset& ds) {
  Score s;
  if (ids.empty()) return s;
  for (InstanceId id : ids) {
    const auto r = static_cast<Eigen::Index>(id);
    const int y = ds.label_of(id);
    s.accuracy += argmax_row(logits, r) == y ? 1.0 : 0.0;
    s.loss += cross_entropy(std::span<const double>(logits.row(r).data(),
                                                    static_cast<std::size_t>(logits.cols())),
                            y);
  }
  s.accuracy /= static_cast<double>(ids.size());
  s.loss /= static_cast<double>(ids.size());
  return s;
}

Score score_graphs(const GnnModel& model, const std::vector<SparseOperator>& ops,
                   const LabeledDataset& ds, std::span<const InstanceId> ids) {
  Score s;
  if (ids.empty()) return s;
  for (InstanceId id : ids) {
    const Tensor2 logits = gnn_logits(model, ops[id], ds.graphs[id].node_features);
    const int y = ds.label_of(id);
    s.accuracy += argmax_row(logits, 0) == y ? 1.0 : 0.0;
    s.loss += cross_entropy(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())), y);
  }
  s.accuracy /= static_cast<double>(ids.size());
  s.loss /= static_cast<double>(ids.size());
  return s;
}

void check_split(const LabeledDataset& ds, const SplitSpec& split) {
  std::set<InstanceId> seen;
  for (const auto* ids : {&split.train_ids, &split.val_ids, &split.test_ids}) {
    for (InstanceId id : *ids) {
      if (id >= ds.instance_count()) throw InputError("split id out of range");
      if (!seen.insert(id).second) throw InputError("split lists overlap");
    }
  }
}

class PlateauSchedule {
 public:
  PlateauSchedule(double lr, std::size_t patience, double decay)
      : lr_(lr), patience_(patience), decay_(decay) {}
  double lr() const { return lr_; }
  /// Fed the epoch's training loss.
  void observe(double loss) {
    if (loss < best_) {
      best_ = loss;
      stale_ = 0;
      return;
    }
    if (patience_ > 0 && ++stale_ >= patience_) {
      lr_ *= decay_;
      stale_ = 0;
    }
  }

 private:
  double best_ = std::numeric_limits<double>::infinity();
  double lr_;
  std::size_t patience_;
  double decay_;
  std::size_t stale_ = 0;
};

TrainedGnn train_node(const LabeledDataset& ds, const SplitSpec& split, const GnnTrainConfig& config) {
  const Graph& g = ds.graphs[0];
  Rng rng(derive_seed(config.seed, "gnn-init"));
  GnnModel model = make_gnn(Task::kNode, static_cast<std::size_t>(g.node_features.cols()),
                            ds.num_classes, rng);
  const SparseOperator op = propagation_operator(g.num_nodes, g.edges);

  const SplitSpec nodes = classifier_split(ds, split);
  const std::vector<std::size_t>& train_rows = nodes.train_ids;
  std::vector<int> train_labels;
  for (std::size_t v : train_rows) train_labels.push_back((*g.node_labels)[v]);
  if (train_rows.empty()) throw InputError("no training nodes");

  PlateauSchedule schedule(config.lr, config.plateau_patience, config.decay);
  ParamSet best = model.params;
  Score best_score{-1.0, 0.0};
  std::size_t best_epoch = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Tape tape;
    Var loss;
    try {
      const Var logits = record_gnn(tape, model.params, model, op, g.node_features);
      const Score val = score_rows(tape.value(logits), nodes.val_ids, ds);
      if (better(val, best_score)) {
        best_score = val;
        best = model.params;
        best_epoch = epoch;
      }
      loss = tape.softmax_cross_entropy(logits, train_rows, train_labels);
      model.params.zero_grad();
      tape.backward(loss);
      adam_step(model.params, schedule.lr());
      schedule.observe(tape.value(loss)(0, 0));
    } catch (const NumericError& e) {
      throw TrainingError("classifier diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
  }
  // the final update has not been scored yet
  {
    const Tensor2 logits = gnn_logits(model, op, g.node_features);
    const Score val = score_rows(logits, nodes.val_ids, ds);
    if (better(val, best_score)) {
      best = model.params;
      best_epoch = config.epochs;
    }
  }
  model.params = best;

  TrainedGnn out{std::move(model), {}};
  const Tensor2 logits = gnn_logits(out.model, op, g.node_features);
  out.report.train_accuracy = score_rows(logits, train_rows, ds).accuracy;
  out.report.val_accuracy = score_rows(logits, nodes.val_ids, ds).accuracy;
  out.report.test_accuracy = score_rows(logits, nodes.test_ids, ds).accuracy;
  out.report.best_epoch = best_epoch;
  out.report.epochs_run = config.epochs;
  out.report.final_lr = schedule.lr();
  return out;
}

TrainedGnn train_graph(const LabeledDataset& ds, const SplitSpec& split, const GnnTrainConfig& config) {
  if (split.train_ids.empty()) throw InputError("no training graphs");
  Rng rng(derive_seed(config.seed, "gnn-init"));
  GnnModel model = make_gnn(Task::kGraph, static_cast<std::size_t>(ds.graphs[0].node_features.cols()),
                            ds.num_classes, rng);
  std::vector<SparseOperator> ops;
  ops.reserve(ds.graphs.size());
  for (const Graph& g : ds.graphs) ops.push_back(propagation_operator(g.num_nodes, g.edges));

  Rng order_rng(derive_seed(config.seed, "gnn-batches"));
  PlateauSchedule schedule(config.lr, config.plateau_patience, config.decay);
  ParamSet best = model.params;
  Score best_score{-1.0, 0.0};
  std::size_t best_epoch = 0;
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);
  std::vector<InstanceId> order = split.train_ids;

  auto evaluate = [&](std::size_t epoch) {
    const Score val = score_graphs(model, ops, ds, split.val_ids);
    if (better(val, best_score)) {
      best_score = val;
      best = model.params;
      best_epoch = epoch;
    }
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    evaluate(epoch);
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      Tape tape;
      try {
        Var total;
        for (std::size_t k = start; k < stop; ++k) {
          const InstanceId id = order[k];
          const Var logits = record_gnn(tape, model.params, model, ops[id], ds.graphs[id].node_features);
          const std::size_t row = 0;
          const int label = ds.label_of(id);
          const Var ce = tape.softmax_cross_entropy(logits, std::span(&row, 1), std::span(&label, 1));
          total = k == start ? ce : tape.add(total, ce);
        }
        const Var loss = tape.scale(total, 1.0 / static_cast<double>(stop - start));
        epoch_loss += tape.value(total)(0, 0);
        model.params.zero_grad();
        tape.backward(loss);
        adam_step(model.params, schedule.lr());
      } catch (const NumericError& e) {
        throw TrainingError("classifier diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    schedule.observe(epoch_loss / static_cast<double>(order.size()));
  }
  evaluate(config.epochs);
  model.params = best;

  TrainedGnn out{std::move(model), {}};
  out.report.train_accuracy = score_graphs(out.model, ops, ds, split.train_ids).accuracy;
  out.report.val_accuracy = score_graphs(out.model, ops, ds, split.val_ids).accuracy;
  out.report.test_accuracy = score_graphs(out.model, ops, ds, split.test_ids).accuracy;
  out.report.best_epoch = best_epoch;
  out.report.epochs_run = config.epochs;
  out.report.final_lr = schedule.lr();
  return out;
}

}  // namespace

SplitSpec classifier_split(const LabeledDataset& dataset, const SplitSpec& split) {
  if (dataset.task == Task::kGraph) return split;
  const std::size_t n = dataset.graphs.at(0).num_nodes;
  const std::vector<InstanceId> instances = dataset.explanation_instances();
  const std::set<InstanceId> is_instance(instances.begin(), instances.end());
  std::vector<std::size_t> others;
  for (std::size_t v = 0; v < n; ++v) {
    if (is_instance.count(v) == 0) others.push_back(v);
  }
  Rng rng(derive_seed(split.seed, "gnn-holdout"));
  rng.shuffle(others);
  auto share = [&](std::size_t count) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(others.size() * count) /
                                                 static_cast<double>(instances.size())));
  };
  const std::size_t n_val = share(split.val_ids.size());
  const std::size_t n_test = std::min(share(split.test_ids.size()), others.size() - n_val);

  SplitSpec out;
  out.seed = split.seed;
  out.val_ids = split.val_ids;
  out.test_ids = split.test_ids;
  out.val_ids.insert(out.val_ids.end(), others.begin(), others.begin() + static_cast<std::ptrdiff_t>(n_val));
  out.test_ids.insert(out.test_ids.end(), others.begin() + static_cast<std::ptrdiff_t>(n_val),
                      others.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  std::sort(out.val_ids.begin(), out.val_ids.end());
  std::sort(out.test_ids.begin(), out.test_ids.end());
  std::set<std::size_t> held(out.val_ids.begin(), out.val_ids.end());
  held.insert(out.test_ids.begin(), out.test_ids.end());
  for (std::size_t v = 0; v < n; ++v) {
    if (held.count(v) == 0) out.train_ids.push_back(v);
  }
  return out;
}

TrainedGnn train_gnn(const LabeledDataset& dataset, const SplitSpec& split,
                     const GnnTrainConfig& config) {
  validate(dataset);
  check_split(dataset, split);
  return dataset.task == Task::kNode ? train_node(dataset, split, config)
                                     : train_graph(dataset, split, config);
}

double gnn_accuracy(const GnnModel& model, const LabeledDataset& dataset,
                    std::span<const InstanceId> ids) {
  if (ids.empty()) return 0.0;
  if (dataset.task == Task::kNode) {
    const Graph& g = dataset.graphs[0];
    const Tensor2 logits = gnn_logits(model, propagation_operator(g.num_nodes, g.edges), g.node_features);
    return score_rows(logits, ids, dataset).accuracy;
  }
  std::size_t correct = 0;
  for (InstanceId id : ids) {
    const Graph& g = dataset.graphs[id];
    const Tensor2 logits = gnn_logits(model, propagation_operator(g.num_nodes, g.edges), g.node_features);
    correct += argmax_row(logits, 0) == dataset.label_of(id) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

// ---------------------------------------------------------------------------
// Checkpoints

nlohmann::json params_to_json(const ParamSet& params, const std::string& arch,
                              std::uint64_t rng_seed, const nlohmann::json& train_meta) {
  nlohmann::json doc;
  doc["format"] = "gem-params-v1";
  doc["arch"] = arch;
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, p] : params) {
    tensors[name] = {{"rows", p.value.rows()},
                     {"cols", p.value.cols()},
                     {"data", std::vector<double>(p.value.data(), p.value.data() + p.value.size())}};
  }
  doc["tensors"] = std::move(tensors);
  doc["rng_seed"] = rng_seed;
  doc["train_meta"] = train_meta;
  return doc;
}

ParamSet params_from_json(const nlohmann::json& doc, const std::string& expected_arch) {
  if (doc.value("format", "") != "gem-params-v1") throw FormatError("expected a gem-params-v1 checkpoint");
  if (!expected_arch.empty() && doc.value("arch", "") != expected_arch) {
    throw FormatError("checkpoint arch '" + doc.value("arch", "") + "' is not '" + expected_arch + "'");
  }
  ParamSet params;
  for (const auto& [name, t] : doc.at("tensors").items()) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto data = t.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw FormatError("tensor '" + name + "' has " + std::to_string(data.size()) + " values for shape " +
                        std::to_string(rows) + "x" + std::to_string(cols));
    }
    Tensor2 value(rows, cols);
    std::copy(data.begin(), data.end(), value.data());
    params.add(name, std::move(value));
  }
  return params;
}

nlohmann::json gnn_to_json(const GnnModel& model, std::uint64_t rng_seed,
                           const nlohmann::json& train_meta) {
  nlohmann::json meta = train_meta;
  meta["task"] = to_string(model.task);
  meta["input_dim"] = model.input_dim;
  meta["num_classes"] = model.num_classes;
  return params_to_json(model.params, gnn_arch(model.task), rng_seed, meta);
}

GnnModel gnn_from_json(const nlohmann::json& doc) {
  const std::string arch = doc.value("arch", "");
  GnnModel model;
  if (arch == gnn_arch(Task::kNode)) {
    model.task = Task::kNode;
  } else if (arch == gnn_arch(Task::kGraph)) {
    model.task = Task::kGraph;
  } else {
    throw FormatError("not a classifier checkpoint (arch '" + arch + "')");
  }
  model.params = params_from_json(doc, arch);
  const auto& meta = doc.at("train_meta");
  model.input_dim = meta.at("input_dim").get<std::size_t>();
  model.num_classes = meta.at("num_classes").get<int>();
  const auto l = static_cast<Eigen::Index>(model.num_classes);
  const auto head_in = static_cast<Eigen::Index>(model.task == Task::kNode ? 3 * kGnnHidden : kGnnHidden);
  const auto h = static_cast<Eigen::Index>(kGnnHidden);
  auto expect = [&](const char* name, Eigen::Index r, Eigen::Index c) {
    const Tensor2& v = model.params.at(name).value;
    if (v.rows() != r || v.cols() != c) throw FormatError(std::string("bad shape for ") + name);
  };
  expect("W1", static_cast<Eigen::Index>(model.input_dim), h);
  expect("W2", h, h);
  expect("W3", h, h);
  expect("b1", 1, h);
  expect("b2", 1, h);
  expect("b3", 1, h);
  expect("head_W", head_in, l);
  expect("head_b", 1, l);
  return model;
}

}  // namespace gem
