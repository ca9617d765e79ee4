#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "gem/error.hpp"
#include "gem/gnn.hpp"
#include "support.hpp"

using namespace gem;
using namespace gem::testing;

namespace {

GnnModel random_model(Task task, std::size_t d, int classes, std::uint64_t seed) {
  Rng rng(seed);
  GnnModel m = make_gnn(task, d, classes, rng);
  // nonzero biases so the gradient check covers them
  for (const char* b : {"b1", "b2", "b3", "head_b"}) {
    Parameter& p = m.params.at(b);
    p.value = random_matrix(1, static_cast<std::size_t>(p.value.cols()), rng, 0.3);
  }
  return m;
}

Tensor2 logits_of(const GnnModel& m, const Graph& g) {
  return gnn_logits(m, propagation_operator(g.num_nodes, g.edges), g.node_features);
}

// Plain-Eigen evaluation of one layer on a single isolated node, where the
// normalized adjacency is the 1 x 1 identity.
Tensor2 lone_layer(const Tensor2& x, const Tensor2& w, const Tensor2& b) {
  Tensor2 h = x * w + b;
  h /= std::max(h.norm(), 1e-12);
  return h.cwiseMax(0.0);
}

}  // namespace

TEST_CASE("zero weights give a uniform class distribution") {
  for (Task task : {Task::kNode, Task::kGraph}) {
    Rng rng(0);
    GnnModel m = make_gnn(task, 3, 4, rng);
    for (auto& [name, p] : m.params) p.value.setZero();
    Graph g = random_connected_graph(8, 4, 3, rng);
    ComputationGraph cg = cg_from_graph(g, 2);
    const Prediction p = predict(m, cg);
    for (double q : p.probabilities) CHECK(q == doctest::Approx(0.25).epsilon(1e-15));
  }
}

TEST_CASE("single isolated node matches a hand evaluation") {
  Rng rng(11);
  for (Task task : {Task::kNode, Task::kGraph}) {
    const GnnModel m = random_model(task, 2, 3, 5);
    Graph g;
    g.num_nodes = 1;
    g.node_features = random_matrix(1, 2, rng);
    const Tensor2 got = logits_of(m, g);

    const auto& P = m.params;
    const Tensor2 h1 = lone_layer(g.node_features, P.at("W1").value, P.at("b1").value);
    const Tensor2 h2 = lone_layer(h1, P.at("W2").value, P.at("b2").value);
    const Tensor2 h3 = lone_layer(h2, P.at("W3").value, P.at("b3").value);
    Tensor2 readout;
    if (task == Task::kNode) {
      readout.resize(1, 60);
      readout << h1, h2, h3;
    } else {
      readout = h3;
    }
    const Tensor2 want = readout * P.at("head_W").value + P.at("head_b").value;
    REQUIRE(got.rows() == 1);
    for (Eigen::Index c = 0; c < 3; ++c) CHECK(got(0, c) == doctest::Approx(want(0, c)).epsilon(1e-12));
  }
}

TEST_CASE("node logits are permutation equivariant") {
  Rng rng(21);
  const GnnModel m = random_model(Task::kNode, 3, 4, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = random_connected_graph(12, 8, 3, rng);
    const auto perm = random_permutation(g.num_nodes, rng);
    const Tensor2 a = logits_of(m, g);
    const Tensor2 b = logits_of(m, permute(g, perm));
    for (std::size_t v = 0; v < g.num_nodes; ++v) {
      const auto diff = (a.row(static_cast<Eigen::Index>(v)) - b.row(static_cast<Eigen::Index>(perm[v]))).cwiseAbs().maxCoeff();
      CHECK(diff <= 1e-10);
    }
  }
}

TEST_CASE("graph logits are permutation invariant") {
  Rng rng(22);
  const GnnModel m = random_model(Task::kGraph, 3, 2, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = random_connected_graph(10, 6, 3, rng);
    const auto perm = random_permutation(g.num_nodes, rng);
    const Tensor2 diff = logits_of(m, g) - logits_of(m, permute(g, perm));
    CHECK(diff.cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("a duplicated isolated node leaves the pooled logits unchanged") {
  Rng rng(23);
  const GnnModel m = random_model(Task::kGraph, 2, 2, 3);
  Graph g = random_connected_graph(6, 3, 2, rng);
  g.num_nodes = 7;
  g.node_features.conservativeResize(7, 2);
  g.node_features.row(6) = random_matrix(1, 2, rng);
  const Tensor2 before = logits_of(m, g);
  Graph dup = g;
  dup.num_nodes = 8;
  dup.node_features.conservativeResize(8, 2);
  dup.node_features.row(7) = g.node_features.row(6);
  CHECK(logits_of(m, dup) == before);
}

TEST_CASE("edges beyond the receptive field do not change a node's logits") {
  Rng rng(24);
  const GnnModel m = random_model(Task::kNode, 2, 3, 4);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const Graph g = random_connected_graph(40, 5, 2, rng);
    const std::size_t target = static_cast<std::size_t>(rng.below(g.num_nodes));
    const auto dist = bfs_distances(Adjacency::from_edges(g.num_nodes, g.edges), target);
    for (std::size_t k = 0; k < g.edges.size(); ++k) {
      const Edge e = g.edges[k];
      if (std::min(dist[e.u], dist[e.v]) < 4) continue;
      Graph cut = g;
      cut.edges.erase(cut.edges.begin() + static_cast<std::ptrdiff_t>(k));
      const Tensor2 a = logits_of(m, g);
      const Tensor2 b = logits_of(m, cut);
      const auto t = static_cast<Eigen::Index>(target);
      CHECK((a.row(t) - b.row(t)).cwiseAbs().maxCoeff() <= 1e-12);
      ++checked;
      break;
    }
  }
  CHECK(checked > 5);
}

TEST_CASE("a 4-hop subgraph reproduces the whole-graph prediction") {
  Rng rng(25);
  const GnnModel m = random_model(Task::kNode, 2, 3, 6);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = random_connected_graph(50, 10, 2, rng);
    const std::size_t target = static_cast<std::size_t>(rng.below(g.num_nodes));
    const Tensor2 whole = logits_of(m, g);
    const std::vector<double> local = instance_logits(m, l_hop_subgraph(g, target, 4));
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(local[c] == doctest::Approx(whole(static_cast<Eigen::Index>(target), static_cast<Eigen::Index>(c))).epsilon(1e-12));
    }
  }
}

TEST_CASE("classifier gradients match central differences") {
  for (Task task : {Task::kNode, Task::kGraph}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(300 + seed);
      GnnModel m = random_model(task, 3, 3, seed);
      const Graph g = random_connected_graph(7, 4, 3, rng);
      const SparseOperator op = propagation_operator(g.num_nodes, g.edges);
      const std::vector<std::size_t> rows = task == Task::kNode ? std::vector<std::size_t>{0, 3, 5} : std::vector<std::size_t>{0};
      const std::vector<int> labels = task == Task::kNode ? std::vector<int>{2, 0, 1} : std::vector<int>{1};
      const auto report = gradient_check(m.params, [&](Tape& t, ParamSet& p) {
        return t.softmax_cross_entropy(record_gnn(t, p, m, op, g.node_features), rows, labels);
      });
      INFO(to_string(task) << " seed " << seed << " worst " << report.worst << " at " << report.worst_at);
      CHECK(report.worst < 1e-4);
    }
  }
}

TEST_CASE("prediction does not touch the parameters") {
  Rng rng(26);
  const GnnModel m = random_model(Task::kNode, 2, 2, 7);
  const std::uint64_t before = m.params.checksum();
  const Graph g = random_connected_graph(9, 3, 2, rng);
  const Prediction a = predict(m, cg_from_graph(g, 1));
  const Prediction b = predict(m, cg_from_graph(g, 1));
  CHECK(m.params.checksum() == before);
  CHECK(a.probabilities == b.probabilities);
}

TEST_CASE("input errors") {
  Rng rng(27);
  const GnnModel node = random_model(Task::kNode, 2, 2, 8);
  const Graph g = random_connected_graph(5, 1, 3, rng);
  CHECK_THROWS_AS(logits_of(node, g), StructuralError);
  const Graph ok = random_connected_graph(5, 1, 2, rng);
  CHECK_THROWS_AS(predict(node, cg_from_graph(ok)), InputError);
  CHECK_THROWS_AS(graph_forward(node, cg_from_graph(ok)), StructuralError);
  CHECK_THROWS_AS(make_gnn(Task::kNode, 0, 2, rng), StructuralError);
}

TEST_CASE("zero learning rate training leaves the initialization in place") {
  const LabeledDataset ds = gen_tree_cycles(0, {4, 6, 6});
  const SplitSpec split = make_split(ds, {24, 6, 6}, 0);
  GnnTrainConfig config;
  config.epochs = 3;
  config.lr = 0.0;
  config.seed = 12;
  const TrainedGnn trained = train_gnn(ds, split, config);
  Rng rng(derive_seed(12, "gnn-init"));
  const GnnModel fresh = make_gnn(Task::kNode, 1, 2, rng);
  CHECK(trained.model.params.checksum() == fresh.params.checksum());
}

TEST_CASE("short training improves on the initialization") {
  const LabeledDataset ds = gen_tree_cycles(1, {5, 12, 6});
  const SplitSpec split = make_split(ds, {52, 10, 10}, 1);
  GnnTrainConfig config;
  config.epochs = 300;
  config.lr = 0.01;
  config.seed = 1;
  const TrainedGnn trained = train_gnn(ds, split, config);
  GnnTrainConfig frozen = config;
  frozen.lr = 0.0;
  const TrainedGnn untrained = train_gnn(ds, split, frozen);
  CHECK(trained.report.train_accuracy >= 0.8);
  CHECK(trained.report.train_accuracy > untrained.report.train_accuracy + 0.1);
  const TrainedGnn again = train_gnn(ds, split, config);
  CHECK(again.model.params.checksum() == trained.model.params.checksum());
}

TEST_CASE("classifier split partitions every node") {
  const LabeledDataset ds = gen_ba_shapes(0);
  const SplitSpec split = make_split(ds, {300, 50, 50}, 0);
  const SplitSpec cs = classifier_split(ds, split);
  std::set<std::size_t> seen;
  for (const auto* ids : {&cs.train_ids, &cs.val_ids, &cs.test_ids}) {
    for (std::size_t v : *ids) CHECK(seen.insert(v).second);
  }
  CHECK(seen.size() == 700);
  for (std::size_t v : split.test_ids) CHECK(std::binary_search(cs.test_ids.begin(), cs.test_ids.end(), v));
  for (std::size_t v : split.train_ids) CHECK(std::binary_search(cs.train_ids.begin(), cs.train_ids.end(), v));
}

TEST_CASE("checkpoint round trip") {
  Rng rng(28);
  const GnnModel m = random_model(Task::kGraph, 3, 2, 9);
  const nlohmann::json doc = gnn_to_json(m, 9, {{"epochs", 1}});
  const GnnModel back = gnn_from_json(nlohmann::json::parse(doc.dump()));
  CHECK(back.task == m.task);
  CHECK(back.input_dim == 3);
  CHECK(back.num_classes == 2);
  CHECK(back.params.checksum() == m.params.checksum());
  const Graph g = random_connected_graph(6, 2, 3, rng);
  CHECK(logits_of(back, g) == logits_of(m, g));
  CHECK_THROWS_AS(params_from_json(doc, gnn_arch(Task::kNode)), FormatError);
}
