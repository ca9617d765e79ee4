#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <limits>

#include "gem/error.hpp"
#include "gem/numerics.hpp"
#include "support.hpp"

using namespace gem;
using gem::testing::gradient_check;
using gem::testing::random_matrix;

namespace {

constexpr double kGradTol = 1e-4;

// Reduces a tape value to a scalar through a squared error against a fixed
// random target, so every entry of the op output reaches the loss.
Var reduce(Tape& tape, Var x, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor2& v = tape.value(x);
  return tape.mean_squared_error(x, random_matrix(static_cast<std::size_t>(v.rows()),
                                                  static_cast<std::size_t>(v.cols()), rng));
}

template <typename Build>
void check_op(const char* name, ParamSet& params, Build&& build) {
  const auto report = gradient_check(params, [&](Tape& tape, ParamSet& p) { return reduce(tape, build(tape, p), 99); });
  INFO(name << " worst " << report.worst << " at " << report.worst_at);
  CHECK(report.entries > 0);
  CHECK(report.worst < kGradTol);
}

}  // namespace

TEST_CASE("elementwise primitives") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) == 1.0);
  Tensor2 x(1, 3);
  x << -1.0, 0.0, 2.0;
  const Tensor2 r = relu(x);
  CHECK(r(0, 0) == 0.0);
  CHECK(r(0, 1) == 0.0);
  CHECK(r(0, 2) == 2.0);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor2 x = random_matrix(5, 7, rng, 30.0);
    const Tensor2 s = softmax_rows(x);
    for (Eigen::Index r = 0; r < s.rows(); ++r) CHECK(std::abs(s.row(r).sum() - 1.0) <= 1e-12);
    CHECK((s.array() >= 0.0).all());
  }
}

TEST_CASE("cross entropy of uniform logits is ln of the class count") {
  for (std::size_t l : {2, 3, 4, 10}) {
    const std::vector<double> logits(l, 0.7);
    CHECK(cross_entropy(logits, 1) == doctest::Approx(std::log(static_cast<double>(l))).epsilon(1e-14));
  }
  const std::vector<double> logits = {0.0, 1.0};
  CHECK_THROWS_AS(cross_entropy(logits, 2), InputError);
}

TEST_CASE("max pool and concat") {
  Tensor2 one(1, 3);
  one << 1.0, -2.0, 3.0;
  CHECK(global_max_pool_rows(one) == one);

  Tensor2 x(3, 2);
  x << 1.0, 5.0, 4.0, -1.0, 2.0, 0.0;
  const Tensor2 p = global_max_pool_rows(x);
  CHECK(p(0, 0) == 4.0);
  CHECK(p(0, 1) == 5.0);
  CHECK_THROWS_AS(global_max_pool_rows(Tensor2(0, 2)), StructuralError);

  Tensor2 a(2, 1), b(2, 2);
  a << 1.0, 2.0;
  b << 3.0, 4.0, 5.0, 6.0;
  const std::array<Tensor2, 2> blocks = {a, b};
  const Tensor2 c = concat_cols(blocks);
  REQUIRE(c.cols() == 3);
  CHECK(c(0, 0) == 1.0);
  CHECK(c(0, 1) == 3.0);
  CHECK(c(1, 2) == 6.0);
  const std::array<Tensor2, 2> ragged = {a, Tensor2(3, 1)};
  CHECK_THROWS_AS(concat_cols(ragged), StructuralError);
}

TEST_CASE("zero-weight linear layer on a zero target has zero loss and gradient") {
  ParamSet params;
  params.add("W", Tensor2::Zero(4, 3));
  Rng rng(1);
  Tape tape;
  const Var x = tape.constant(random_matrix(5, 4, rng));
  const Var loss = tape.mean_squared_error(tape.matmul(x, tape.parameter(params.at("W"))), Tensor2::Zero(5, 3));
  CHECK(tape.value(loss)(0, 0) == 0.0);
  params.zero_grad();
  tape.backward(loss);
  CHECK(params.at("W").grad.isZero(0.0));
}

TEST_CASE("per-op gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    ParamSet p;
    p.add("A", random_matrix(4, 3, rng));
    p.add("B", random_matrix(3, 5, rng));
    p.add("C", random_matrix(4, 5, rng));
    p.add("r", random_matrix(1, 5, rng));

    check_op("matmul", p, [](Tape& t, ParamSet& q) { return t.matmul(t.parameter(q.at("A")), t.parameter(q.at("B"))); });
    check_op("add_row", p, [](Tape& t, ParamSet& q) { return t.add_row(t.parameter(q.at("C")), t.parameter(q.at("r"))); });
    check_op("add", p, [](Tape& t, ParamSet& q) { return t.add(t.parameter(q.at("C")), t.parameter(q.at("C"))); });
    check_op("scale", p, [](Tape& t, ParamSet& q) { return t.scale(t.parameter(q.at("C")), -2.5); });
    check_op("relu", p, [](Tape& t, ParamSet& q) { return t.relu(t.parameter(q.at("C"))); });
    check_op("sigmoid", p, [](Tape& t, ParamSet& q) { return t.sigmoid(t.parameter(q.at("C"))); });
    check_op("row_normalize", p, [](Tape& t, ParamSet& q) { return t.row_normalize(t.parameter(q.at("C"))); });
    check_op("max_pool", p, [](Tape& t, ParamSet& q) { return t.max_pool_rows(t.parameter(q.at("C"))); });
    check_op("concat", p, [](Tape& t, ParamSet& q) {
      const std::array<Var, 2> parts = {t.parameter(q.at("A")), t.parameter(q.at("C"))};
      return t.concat_cols(parts);
    });
    const std::vector<Edge> edges = {{0, 1}, {1, 2}, {0, 3}, {2, 3}};
    check_op("edge_dot", p, [&](Tape& t, ParamSet& q) { return t.edge_dot(t.parameter(q.at("C")), edges); });
    const SparseOperator op = propagation_operator(4, edges);
    check_op("propagate", p, [&](Tape& t, ParamSet& q) { return t.propagate(op, t.parameter(q.at("C"))); });

    const std::vector<std::size_t> rows = {0, 2, 3};
    const std::vector<int> labels = {4, 0, 2};
    const auto report = gradient_check(p, [&](Tape& t, ParamSet& q) {
      return t.softmax_cross_entropy(t.parameter(q.at("C")), rows, labels);
    });
    INFO("cross entropy worst " << report.worst);
    CHECK(report.worst < kGradTol);
  }
}

TEST_CASE("composed expression gradients") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    ParamSet p;
    p.add("W1", random_matrix(3, 6, rng));
    p.add("b1", random_matrix(1, 6, rng));
    p.add("W2", random_matrix(6, 4, rng));
    const Tensor2 x = random_matrix(5, 3, rng);
    const std::vector<Edge> edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}};
    const SparseOperator op = propagation_operator(5, edges);
    const auto report = gradient_check(p, [&](Tape& t, ParamSet& q) {
      Var h = t.propagate(op, t.matmul(t.constant(x), t.parameter(q.at("W1"))));
      h = t.row_normalize(t.relu(t.add_row(h, t.parameter(q.at("b1")))));
      const Var z = t.matmul(h, t.parameter(q.at("W2")));
      return t.mean_squared_error(t.sigmoid(t.edge_dot(z, edges)), Tensor2::Constant(5, 1, 0.3));
    });
    INFO("worst " << report.worst << " at " << report.worst_at);
    CHECK(report.worst < kGradTol);
  }
}

TEST_CASE("forward evaluation is deterministic") {
  Rng rng(5);
  ParamSet p;
  p.add("W", random_matrix(3, 3, rng));
  const Tensor2 x = random_matrix(4, 3, rng);
  auto eval = [&] {
    Tape t;
    return t.value(t.sigmoid(t.matmul(t.constant(x), t.parameter(p.at("W")))));
  };
  const Tensor2 a = eval();
  const Tensor2 b = eval();
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
}

TEST_CASE("non-finite values raise a numeric error") {
  Tensor2 x = Tensor2::Zero(2, 2);
  x(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(require_finite(x, "probe"), NumericError);
  Tape tape;
  CHECK_THROWS_AS(tape.constant(x), NumericError);
  Tensor2 big = Tensor2::Constant(1, 1, 1e300);
  Tape t2;
  const Var v = t2.constant(big);
  CHECK_THROWS_AS(t2.matmul(v, v), NumericError);
}

TEST_CASE("shape mismatches raise a structural error") {
  Tape tape;
  const Var a = tape.constant(Tensor2::Zero(2, 3));
  const Var b = tape.constant(Tensor2::Zero(2, 3));
  CHECK_THROWS_AS(tape.matmul(a, b), StructuralError);
}

TEST_CASE("Adam with zero gradient leaves parameters unchanged") {
  Rng rng(2);
  ParamSet p;
  p.add("W", random_matrix(3, 3, rng));
  const std::uint64_t before = p.checksum();
  p.zero_grad();
  for (int i = 0; i < 5; ++i) adam_step(p, 0.1);
  CHECK(p.checksum() == before);
  CHECK(p.step() == 5);
}

TEST_CASE("first Adam step moves each entry by about lr against the gradient") {
  Rng rng(4);
  ParamSet p;
  p.add("W", random_matrix(4, 4, rng));
  const Tensor2 before = p.at("W").value;
  p.at("W").grad = random_matrix(4, 4, rng, 3.0);
  const Tensor2 g = p.at("W").grad;
  adam_step(p, 0.01);
  const Tensor2 delta = p.at("W").value - before;
  for (Eigen::Index i = 0; i < delta.size(); ++i) {
    const double sign = g.data()[i] > 0 ? 1.0 : -1.0;
    CHECK(delta.data()[i] == doctest::Approx(-0.01 * sign).epsilon(1e-5));
  }
}

TEST_CASE("Adam minimizes x squared") {
  ParamSet p;
  p.add("x", Tensor2::Constant(1, 1, 1.0));
  for (int step = 0; step < 200; ++step) {
    p.zero_grad();
    Tape tape;
    tape.backward(tape.mean_squared_error(tape.parameter(p.at("x")), Tensor2::Zero(1, 1)));
    adam_step(p, 0.1);
  }
  CHECK(std::abs(p.at("x").value(0, 0)) < 1e-2);
}

TEST_CASE("Adam with zero learning rate is the identity") {
  Rng rng(8);
  ParamSet p;
  p.add("W", random_matrix(2, 5, rng));
  p.at("W").grad = random_matrix(2, 5, rng);
  const std::uint64_t before = p.checksum();
  adam_step(p, 0.0);
  CHECK(p.checksum() == before);
}

TEST_CASE("glorot bound") {
  Rng rng(0);
  const Tensor2 w = glorot_uniform(10, 20, rng);
  const double bound = std::sqrt(6.0 / 30.0);
  CHECK(w.cwiseAbs().maxCoeff() <= bound);
  CHECK(w.cwiseAbs().maxCoeff() > 0.5 * bound);
}
