#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gem/graph.hpp"
#include "gem/rng.hpp"
#include "gem/tensor.hpp"

namespace gem {

// ---------------------------------------------------------------------------
// Elementwise and reduction primitives. The tape uses these same functions so
// that forward-only evaluation and taped evaluation agree bitwise.

Tensor2 relu(const Tensor2& x);
double sigmoid(double x);
Tensor2 sigmoid(const Tensor2& x);
Tensor2 softmax_rows(const Tensor2& x);
/// Column-wise maximum over rows, as a 1 x cols matrix.
Tensor2 global_max_pool_rows(const Tensor2& x);
Tensor2 concat_cols(std::span<const Tensor2> blocks);
/// -log softmax(logits)[label], evaluated with log-sum-exp.
double cross_entropy(std::span<const double> logits, int label);
/// Sequential dot product of two rows of `z`.
double row_dot(const Tensor2& z, std::size_t i, std::size_t j);

/// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(const Tensor2& x, const char* what);

// ---------------------------------------------------------------------------

struct Parameter {
  Tensor2 value;
  Tensor2 grad;
  Tensor2 m;  ///< Adam first moment
  Tensor2 v;  ///< Adam second moment
};

/// Named parameters with gradient and Adam moment buffers.
class ParamSet {
 public:
  Parameter& add(const std::string& name, Tensor2 initial);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad();
  /// FNV-1a over the raw bits of every parameter value, in name order.
  std::uint64_t checksum() const;

  std::size_t step() const { return step_; }
  void set_step(std::size_t t) { step_ = t; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Parameter> params_;
  std::size_t step_ = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update using the accumulated gradients.
void adam_step(ParamSet& params, double lr, const AdamConfig& config = {});

/// Glorot-uniform initialization, bound sqrt(6 / (fan_in + fan_out)).
Tensor2 glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// ---------------------------------------------------------------------------

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Records a forward computation over a fixed operation vocabulary and
/// replays it backwards to obtain exact gradients.
///
/// Operators passed to propagate() are borrowed and must outlive the tape.
class Tape {
 public:
  Var constant(Tensor2 value);
  /// Leaf bound to a parameter; backward() accumulates into its grad.
  Var parameter(Parameter& param);

  Var matmul(Var a, Var b);
  /// op * x for a constant sparse operator.
  Var propagate(const SparseOperator& op, Var x);
  /// Adds a 1 x cols row to every row of x.
  Var add_row(Var x, Var bias);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var concat_cols(std::span<const Var> blocks);
  Var max_pool_rows(Var x);
  /// Column vector whose k-th entry is z[u_k] . z[v_k].
  Var edge_dot(Var z, std::span<const Edge> edges);
  Var add(Var a, Var b);
  Var scale(Var x, double factor);
  /// Divides each row by max(||row||_2, 1e-12).
  Var row_normalize(Var x);

  /// Mean softmax cross-entropy over the selected rows (1 x 1).
  Var softmax_cross_entropy(Var logits, std::span<const std::size_t> rows,
                            std::span<const int> labels);
  /// Mean of squared differences over every entry (1 x 1).
  Var mean_squared_error(Var prediction, Tensor2 target);

  const Tensor2& value(Var v) const { return nodes_[v.id].value; }
  const Tensor2& gradient(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Back-propagates from a 1 x 1 value.
  void backward(Var loss);

 private:
  enum class Op {
    kConstant,
    kParameter,
    kMatmul,
    kPropagate,
    kAddRow,
    kRelu,
    kSigmoid,
    kConcatCols,
    kMaxPoolRows,
    kEdgeDot,
    kAdd,
    kScale,
    kRowNormalize,
    kCrossEntropy,
    kSquaredError,
  };

  struct Node {
    Op op = Op::kConstant;
    std::vector<std::size_t> inputs;
    Tensor2 value;
    Tensor2 grad;
    Parameter* param = nullptr;
    const SparseOperator* sparse = nullptr;
    std::vector<Edge> edges;
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    std::vector<Eigen::Index> argmax;
    Tensor2 aux;  // softmax probabilities or regression target
    double factor = 1.0;
  };

  static Node make_node(Op op, std::vector<std::size_t> inputs);
  Var push(Node node, const char* what);
  Tensor2& grad_of(std::size_t id);

  std::vector<Node> nodes_;
};

}  // namespace gem
