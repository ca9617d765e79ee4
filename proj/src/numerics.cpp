#include "gem/numerics.hpp"

#include <cmath>
#include <cstring>
#include <utility>

#include "gem/error.hpp"

namespace gem {

namespace {
constexpr double kRowNormFloor = 1e-12;
}  // namespace

Tensor2 relu(const Tensor2& x) { return x.cwiseMax(0.0); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor2 sigmoid(const Tensor2& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

Tensor2 softmax_rows(const Tensor2& x) {
  Tensor2 out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      out(r, c) = std::exp(x(r, c) - mx);
      sum += out(r, c);
    }
    for (Eigen::Index c = 0; c < x.cols(); ++c) out(r, c) /= sum;
  }
  return out;
}

Tensor2 global_max_pool_rows(const Tensor2& x) {
  if (x.rows() == 0) throw StructuralError("max-pool over zero rows");
  return x.colwise().maxCoeff();
}

Tensor2 concat_cols(std::span<const Tensor2> blocks) {
  if (blocks.empty()) return {};
  const Eigen::Index rows = blocks.front().rows();
  Eigen::Index cols = 0;
  for (const auto& b : blocks) {
    if (b.rows() != rows) throw StructuralError("concat_cols row mismatch");
    cols += b.cols();
  }
  Tensor2 out(rows, cols);
  Eigen::Index offset = 0;
  for (const auto& b : blocks) {
    out.middleCols(offset, b.cols()) = b;
    offset += b.cols();
  }
  return out;
}

double cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw InputError("class index " + std::to_string(label) + " out of range");
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return mx + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

double row_dot(const Tensor2& z, std::size_t i, std::size_t j) {
  double s = 0.0;
  const auto ii = static_cast<Eigen::Index>(i);
  const auto jj = static_cast<Eigen::Index>(j);
  for (Eigen::Index k = 0; k < z.cols(); ++k) s += z(ii, k) * z(jj, k);
  return s;
}

void require_finite(const Tensor2& x, const char* what) {
  if (!x.allFinite()) throw NumericError(std::string("non-finite value in ") + what);
}

// ---------------------------------------------------------------------------

Parameter& ParamSet::add(const std::string& name, Tensor2 initial) {
  Parameter p;
  p.grad = Tensor2::Zero(initial.rows(), initial.cols());
  p.m = p.grad;
  p.v = p.grad;
  p.value = std::move(initial);
  auto [it, inserted] = params_.insert_or_assign(name, std::move(p));
  return it->second;
}

Parameter& ParamSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw StructuralError("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw StructuralError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamSet::zero_grad() {
  for (auto& [name, p] : params_) p.grad.setZero();
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, p] : params_) {
    feed(name.data(), name.size());
    feed(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()));
  }
  return h;
}

void adam_step(ParamSet& params, double lr, const AdamConfig& config) {
  const std::size_t t = params.step() + 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    p.m = config.beta1 * p.m + (1.0 - config.beta1) * p.grad;
    p.v = config.beta2 * p.v + (1.0 - config.beta2) * p.grad.cwiseProduct(p.grad);
    if (lr == 0.0) continue;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double m_hat = p.m.data()[i] / c1;
      const double v_hat = p.v.data()[i] / c2;
      p.value.data()[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
  params.set_step(t);
}

Tensor2 glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor2 w(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
  return w;
}

// ---------------------------------------------------------------------------

Tape::Node Tape::make_node(Op op, std::vector<std::size_t> inputs) {
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  return n;
}

Var Tape::push(Node node, const char* what) {
  require_finite(node.value, what);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Tensor2& Tape::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Tensor2::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::constant(Tensor2 value) {
  Node n = make_node(Op::kConstant, {});
  n.value = std::move(value);
  return push(std::move(n), "constant");
}

Var Tape::parameter(Parameter& param) {
  Node n = make_node(Op::kParameter, {});
  n.value = param.value;
  n.param = &param;
  return push(std::move(n), "parameter");
}

Var Tape::matmul(Var a, Var b) {
  const Tensor2& x = value(a);
  const Tensor2& y = value(b);
  if (x.cols() != y.rows()) {
    throw StructuralError("matmul shape mismatch: [" + std::to_string(x.rows()) + "x" +
                          std::to_string(x.cols()) + "] * [" + std::to_string(y.rows()) + "x" +
                          std::to_string(y.cols()) + "]");
  }
  Node n = make_node(Op::kMatmul, {a.id, b.id});
  n.value = x * y;
  return push(std::move(n), "matmul");
}

Var Tape::propagate(const SparseOperator& op, Var x) {
  const Tensor2& v = value(x);
  if (op.cols() != v.rows()) throw StructuralError("propagate shape mismatch");
  Node n = make_node(Op::kPropagate, {x.id});
  n.value = op * v;
  n.sparse = &op;
  return push(std::move(n), "propagate");
}

Var Tape::add_row(Var x, Var bias) {
  const Tensor2& v = value(x);
  const Tensor2& b = value(bias);
  if (b.rows() != 1 || b.cols() != v.cols()) throw StructuralError("bias shape mismatch");
  Node n = make_node(Op::kAddRow, {x.id, bias.id});
  n.value = v.rowwise() + b.row(0);
  return push(std::move(n), "add_row");
}

Var Tape::relu(Var x) {
  Node n = make_node(Op::kRelu, {x.id});
  n.value = gem::relu(value(x));
  return push(std::move(n), "relu");
}

Var Tape::sigmoid(Var x) {
  Node n = make_node(Op::kSigmoid, {x.id});
  n.value = gem::sigmoid(value(x));
  return push(std::move(n), "sigmoid");
}

Var Tape::concat_cols(std::span<const Var> blocks) {
  std::vector<Tensor2> values;
  Node n = make_node(Op::kConcatCols, {});
  for (Var b : blocks) {
    values.push_back(value(b));
    n.inputs.push_back(b.id);
  }
  n.value = gem::concat_cols(values);
  return push(std::move(n), "concat_cols");
}

Var Tape::max_pool_rows(Var x) {
  const Tensor2& v = value(x);
  if (v.rows() == 0) throw StructuralError("max-pool over zero rows");
  Node n = make_node(Op::kMaxPoolRows, {x.id});
  n.value.resize(1, v.cols());
  n.argmax.resize(static_cast<std::size_t>(v.cols()));
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < v.rows(); ++r) {
      if (v(r, c) > v(best, c)) best = r;
    }
    n.argmax[static_cast<std::size_t>(c)] = best;
    n.value(0, c) = v(best, c);
  }
  return push(std::move(n), "max_pool_rows");
}

Var Tape::edge_dot(Var z, std::span<const Edge> edges) {
  const Tensor2& v = value(z);
  Node n = make_node(Op::kEdgeDot, {z.id});
  n.value.resize(static_cast<Eigen::Index>(edges.size()), 1);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    if (edges[k].u >= static_cast<std::size_t>(v.rows()) ||
        edges[k].v >= static_cast<std::size_t>(v.rows())) {
      throw StructuralError("edge_dot endpoint out of range");
    }
    n.value(static_cast<Eigen::Index>(k), 0) = row_dot(v, edges[k].u, edges[k].v);
  }
  n.edges.assign(edges.begin(), edges.end());
  return push(std::move(n), "edge_dot");
}

Var Tape::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
    throw StructuralError("add shape mismatch");
  }
  Node n = make_node(Op::kAdd, {a.id, b.id});
  n.value = value(a) + value(b);
  return push(std::move(n), "add");
}

Var Tape::scale(Var x, double factor) {
  Node n = make_node(Op::kScale, {x.id});
  n.value = value(x) * factor;
  n.factor = factor;
  return push(std::move(n), "scale");
}

Var Tape::row_normalize(Var x) {
  const Tensor2& v = value(x);
  Node n = make_node(Op::kRowNormalize, {x.id});
  n.value.resize(v.rows(), v.cols());
  n.aux.resize(v.rows(), 1);
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double norm = std::max(v.row(i).norm(), kRowNormFloor);
    n.aux(i, 0) = norm;
    n.value.row(i) = v.row(i) / norm;
  }
  return push(std::move(n), "row_normalize");
}

Var Tape::softmax_cross_entropy(Var logits, std::span<const std::size_t> rows,
                                std::span<const int> labels) {
  const Tensor2& v = value(logits);
  if (rows.size() != labels.size() || rows.empty()) {
    throw StructuralError("cross-entropy needs one label per selected row");
  }
  Node n = make_node(Op::kCrossEntropy, {logits.id});
  double total = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= static_cast<std::size_t>(v.rows())) throw StructuralError("row out of range");
    const auto r = static_cast<Eigen::Index>(rows[k]);
    const Tensor2 row = v.row(r);
    total += cross_entropy(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                           labels[k]);
  }
  n.value = Tensor2::Constant(1, 1, total / static_cast<double>(rows.size()));
  n.rows.assign(rows.begin(), rows.end());
  n.labels.assign(labels.begin(), labels.end());
  return push(std::move(n), "cross_entropy");
}

Var Tape::mean_squared_error(Var prediction, Tensor2 target) {
  const Tensor2& v = value(prediction);
  if (v.rows() != target.rows() || v.cols() != target.cols() || v.size() == 0) {
    throw StructuralError("squared-error shape mismatch");
  }
  Node n = make_node(Op::kSquaredError, {prediction.id});
  n.value = Tensor2::Constant(1, 1, (v - target).squaredNorm() / static_cast<double>(v.size()));
  n.aux = std::move(target);
  return push(std::move(n), "squared_error");
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) throw StructuralError("backward needs a scalar loss");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_of(loss.id).setConstant(1.0);

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) continue;
    const Tensor2 g = n.grad;
    switch (n.op) {
      case Op::kConstant:
        break;
      case Op::kParameter:
        n.param->grad += g;
        break;
      case Op::kMatmul: {
        const Tensor2& a = nodes_[n.inputs[0]].value;
        const Tensor2& b = nodes_[n.inputs[1]].value;
        grad_of(n.inputs[0]) += g * b.transpose();
        grad_of(n.inputs[1]) += a.transpose() * g;
        break;
      }
      case Op::kPropagate:
        grad_of(n.inputs[0]) += Tensor2(n.sparse->transpose() * g);
        break;
      case Op::kAddRow:
        grad_of(n.inputs[0]) += g;
        grad_of(n.inputs[1]) += g.colwise().sum();
        break;
      case Op::kRelu: {
        const Tensor2& x = nodes_[n.inputs[0]].value;
        grad_of(n.inputs[0]) += (x.array() > 0.0).select(g, 0.0);
        break;
      }
      case Op::kSigmoid: {
        const Tensor2& s = n.value;
        grad_of(n.inputs[0]) += g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
        break;
      }
      case Op::kConcatCols: {
        Eigen::Index offset = 0;
        for (std::size_t in : n.inputs) {
          const Eigen::Index c = nodes_[in].value.cols();
          grad_of(in) += g.middleCols(offset, c);
          offset += c;
        }
        break;
      }
      case Op::kMaxPoolRows: {
        Tensor2& gx = grad_of(n.inputs[0]);
        for (std::size_t c = 0; c < n.argmax.size(); ++c) {
          gx(n.argmax[c], static_cast<Eigen::Index>(c)) += g(0, static_cast<Eigen::Index>(c));
        }
        break;
      }
      case Op::kEdgeDot: {
        const Tensor2& z = nodes_[n.inputs[0]].value;
        Tensor2& gz = grad_of(n.inputs[0]);
        for (std::size_t k = 0; k < n.edges.size(); ++k) {
          const double gk = g(static_cast<Eigen::Index>(k), 0);
          const auto u = static_cast<Eigen::Index>(n.edges[k].u);
          const auto v = static_cast<Eigen::Index>(n.edges[k].v);
          gz.row(u) += gk * z.row(v);
          gz.row(v) += gk * z.row(u);
        }
        break;
      }
      case Op::kAdd:
        grad_of(n.inputs[0]) += g;
        grad_of(n.inputs[1]) += g;
        break;
      case Op::kScale:
        grad_of(n.inputs[0]) += n.factor * g;
        break;
      case Op::kRowNormalize: {
        Tensor2& gx = grad_of(n.inputs[0]);
        for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
          const double norm = n.aux(i, 0);
          if (norm == kRowNormFloor) {
            // below the floor the op is a plain scaling
            gx.row(i) += g.row(i) / norm;
            continue;
          }
          const double along = n.value.row(i).dot(g.row(i));
          gx.row(i) += (g.row(i) - along * n.value.row(i)) / norm;
        }
        break;
      }
      case Op::kCrossEntropy: {
        const Tensor2& logits = nodes_[n.inputs[0]].value;
        Tensor2& gl = grad_of(n.inputs[0]);
        const double w = g(0, 0) / static_cast<double>(n.rows.size());
        for (std::size_t k = 0; k < n.rows.size(); ++k) {
          const auto r = static_cast<Eigen::Index>(n.rows[k]);
          Tensor2 p = softmax_rows(logits.row(r));
          p(0, n.labels[k]) -= 1.0;
          gl.row(r) += w * p;
        }
        break;
      }
      case Op::kSquaredError: {
        const Tensor2& pred = nodes_[n.inputs[0]].value;
        const double w = 2.0 * g(0, 0) / static_cast<double>(pred.size());
        grad_of(n.inputs[0]) += w * (pred - n.aux);
        break;
      }
    }
  }
}

}  // namespace gem
