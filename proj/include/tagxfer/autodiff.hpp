#pragma once

// Tape-based reverse-mode differentiation over dense double arrays.
//
// A Graph records every primitive applied during a forward pass in creation
// order, which is already a topological order, so backward() is a single
// reverse sweep. Parameters live outside the graph; the graph only borrows
// them and accumulates into Parameter::grad.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "tagxfer/array.hpp"
#include "tagxfer/errors.hpp"

namespace tagxfer {

// Values below this norm are mapped to the zero vector by l2_normalize.
inline constexpr double kNormFloor = 1e-12;

struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Array v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }

  std::string name;
  Array value;
  Array grad;
  bool trainable = true;
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
// References returned by value()/grad() stay valid for the graph's lifetime.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Array& value() const;
  const Array& grad() const;
  const Shape& shape() const { return value().shape(); }
};

enum class OpKind {
  kInput,
  kConstant,
  kParam,
  kRow,
  kMatMul,
  kAdd,
  kMul,
  kConcat,
  kSigmoid,
  kTanh,
  kL2Normalize,
  kLogSoftmax,
  kSoftmaxCrossEntropy,
  kSlice,
  kSum,
  kScale,
};

class Graph {
 public:
  // With track_gradients=false the graph is an inference-only evaluator:
  // parameters and inputs never require gradients and backward() is a no-op.
  explicit Graph(bool track_gradients = true) : track_(track_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Array value) {
    require_finite(value, "graph input");
    Node n(OpKind::kInput);
    n.value = std::move(value);
    n.requires_grad = track_;
    return push(std::move(n));
  }

  Var constant(Array value) {
    require_finite(value, "graph constant");
    Node n(OpKind::kConstant);
    n.value = std::move(value);
    return push(std::move(n));
  }

  // Each parameter maps to a single node per graph.
  Var param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{this, it->second};
    Node n(OpKind::kParam);
    n.param = &p;
    n.requires_grad = track_ && p.trainable;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  // Embedding lookup: row `index` of a matrix parameter, gradient scattered back
  // into that row only.
  Var row(Parameter& table, std::size_t index) {
    if (table.value.rank() != 2) {
      throw ShapeError("row lookup needs a matrix, got " + shape_str(table.value.shape()));
    }
    if (index >= table.value.rows()) {
      throw IndexError("row " + std::to_string(index) + " out of range for " + table.name);
    }
    Node n(OpKind::kRow);
    n.param = &table;
    n.index = index;
    auto r = table.value.row(index);
    n.value = Array({r.size()}, std::vector<double>(r.begin(), r.end()));
    n.requires_grad = track_ && table.trainable;
    return push(std::move(n));
  }

  const Array& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.op == OpKind::kParam ? n.param->value : n.value;
  }

  // Gradient of the most recent backward() with respect to node `id`. Parameter
  // nodes report the accumulated Parameter::grad.
  const Array& grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.op == OpKind::kParam) return n.param->grad;
    if (n.grad.empty()) {
      empty_grads_.emplace_back(n.value.shape(), 0.0);
      return empty_grads_.back();
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }
  bool tracking() const { return track_; }

  void backward(Var loss);

  // Primitive construction; exposed through the free functions below.
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var concat(const std::vector<Var>& parts);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var l2_normalize(Var a);
  Var log_softmax(Var a);
  Var softmax_cross_entropy(Var logits, std::size_t gold);
  Var slice(Var a, std::size_t begin, std::size_t length);
  Var sum(Var a);
  Var scale(Var a, double factor);

 private:
  struct Node {
    explicit Node(OpKind k) : op(k) {}
    OpKind op;
    std::vector<std::size_t> parents;
    Array value;
    Array grad;
    Parameter* param = nullptr;
    std::size_t index = 0;
    std::size_t length = 0;
    double scalar = 0.0;
    bool requires_grad = false;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  void check_owner(Var v) const {
    if (v.graph != this || v.id >= nodes_.size()) {
      throw StateError("variable does not belong to this graph");
    }
  }

  bool any_requires(std::initializer_list<std::size_t> ids) const {
    for (std::size_t id : ids) {
      if (nodes_[id].requires_grad) return true;
    }
    return false;
  }

  // Destination for gradient flowing into node `id`, or nullptr if the node
  // does not need it.
  Array* grad_sink(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.op == OpKind::kParam) return &n.param->grad;
    if (n.grad.empty()) n.grad = Array(n.value.shape(), 0.0);
    return &n.grad;
  }

  void backward_node(std::size_t id);

  bool track_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  mutable std::deque<Array> empty_grads_;
};

inline const Array& Var::value() const { return graph->value(id); }
inline const Array& Var::grad() const { return graph->grad(id); }

// --- forward rules ---------------------------------------------------------

inline Var Graph::matmul(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  const Array& A = value(a.id);
  const Array& B = value(b.id);
  if (A.rank() != 2 || B.rank() < 1 || B.rank() > 2 || A.shape()[1] != B.shape()[0]) {
    throw ShapeError("matmul shape mismatch: " + shape_str(A.shape()) + " x " +
                     shape_str(B.shape()));
  }
  const std::size_t m = A.shape()[0];
  const std::size_t k = A.shape()[1];
  const std::size_t n = B.rank() == 2 ? B.shape()[1] : 1;
  Node node(OpKind::kMatMul);
  node.value = B.rank() == 2 ? Array({m, n}) : Array({m});
  const double* pa = A.raw().data();
  const double* pb = B.raw().data();
  double* out = node.value.raw().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += arow[t] * pb[t * n + j];
      out[i * n + j] = acc;
    }
  }
  node.parents = {a.id, b.id};
  node.requires_grad = any_requires({a.id, b.id});
  return push(std::move(node));
}

inline Var Graph::add(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  const Array& A = value(a.id);
  const Array& B = value(b.id);
  if (A.shape() != B.shape()) {
    throw ShapeError("add shape mismatch: " + shape_str(A.shape()) + " vs " +
                     shape_str(B.shape()));
  }
  Node node(OpKind::kAdd);
  node.value = A;
  for (std::size_t i = 0; i < A.size(); ++i) node.value[i] += B[i];
  node.parents = {a.id, b.id};
  node.requires_grad = any_requires({a.id, b.id});
  return push(std::move(node));
}

inline Var Graph::mul(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  const Array& A = value(a.id);
  const Array& B = value(b.id);
  if (A.shape() != B.shape()) {
    throw ShapeError("elementwise multiply shape mismatch: " + shape_str(A.shape()) +
                     " vs " + shape_str(B.shape()));
  }
  Node node(OpKind::kMul);
  node.value = A;
  for (std::size_t i = 0; i < A.size(); ++i) node.value[i] *= B[i];
  node.parents = {a.id, b.id};
  node.requires_grad = any_requires({a.id, b.id});
  return push(std::move(node));
}

inline Var Graph::concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero arrays");
  Node node(OpKind::kConcat);
  std::vector<double> out;
  const Shape& first = value(parts.front().id).shape();
  std::size_t total_cols = 0;
  for (Var p : parts) {
    check_owner(p);
    const Array& v = value(p.id);
    if (v.rank() != first.size() || (v.rank() == 2 && v.rows() != first[0])) {
      throw ShapeError("concat shape mismatch: " + shape_str(first) + " vs " +
                       shape_str(v.shape()));
    }
    total_cols += v.cols();
    node.parents.push_back(p.id);
    node.requires_grad = node.requires_grad || nodes_[p.id].requires_grad;
  }
  const std::size_t rows = first.size() == 2 ? first[0] : 1;
  out.reserve(rows * total_cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (Var p : parts) {
      auto src = value(p.id).row(r);
      out.insert(out.end(), src.begin(), src.end());
    }
  }
  node.value = first.size() == 2 ? Array({rows, total_cols}, std::move(out))
                                 : Array({total_cols}, std::move(out));
  return push(std::move(node));
}

inline Var Graph::sigmoid(Var a) {
  check_owner(a);
  Node node(OpKind::kSigmoid);
  node.value = value(a.id);
  for (double& v : node.value.raw()) {
    // Split on sign so exp never overflows.
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  node.parents = {a.id};
  node.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(node));
}

inline Var Graph::tanh(Var a) {
  check_owner(a);
  Node node(OpKind::kTanh);
  node.value = value(a.id);
  for (double& v : node.value.raw()) v = std::tanh(v);
  node.parents = {a.id};
  node.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(node));
}

inline Var Graph::l2_normalize(Var a) {
  check_owner(a);
  const Array& x = value(a.id);
  if (x.rank() != 1) throw ShapeError("l2_normalize expects a vector, got " + shape_str(x.shape()));
  double sq = 0.0;
  for (double v : x.raw()) sq += v * v;
  const double norm = std::sqrt(sq);
  Node node(OpKind::kL2Normalize);
  node.value = Array(x.shape(), 0.0);
  node.scalar = norm;
  if (norm >= kNormFloor) {
    for (std::size_t i = 0; i < x.size(); ++i) node.value[i] = x[i] / norm;
  }
  node.parents = {a.id};
  node.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(node));
}

namespace detail {

inline double log_sum_exp(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace detail

inline Var Graph::log_softmax(Var a) {
  check_owner(a);
  const Array& x = value(a.id);
  if (x.rank() != 1) throw ShapeError("log_softmax expects a vector, got " + shape_str(x.shape()));
  const double lse = detail::log_sum_exp(x.values());
  Node node(OpKind::kLogSoftmax);
  node.value = x;
  for (double& v : node.value.raw()) v -= lse;
  node.parents = {a.id};
  node.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(node));
}

inline Var Graph::softmax_cross_entropy(Var logits, std::size_t gold) {
  check_owner(logits);
  const Array& x = value(logits.id);
  if (x.rank() != 1) {
    throw ShapeError("softmax_cross_entropy expects a vector, got " + shape_str(x.shape()));
  }
  if (gold >= x.size()) {
    throw IndexError("gold class " + std::to_string(gold) + " outside [0, " +
                     std::to_string(x.size()) + ")");
  }
  const double loss = detail::log_sum_exp(x.values()) - x[gold];
  if (!std::isfinite(loss)) throw NumericError("non-finite cross-entropy");
  Node node(OpKind::kSoftmaxCrossEntropy);
  node.value = Array::vector({loss});
  node.index = gold;
  node.parents = {logits.id};
  node.requires_grad = nodes_[logits.id].requires_grad;
  return push(std::move(node));
}

inline Var Graph::slice(Var a, std::size_t begin, std::size_t length) {
  check_owner(a);
  const Array& x = value(a.id);
  if (x.rank() != 1 || length == 0 || begin + length > x.size()) {
    throw ShapeError("slice [" + std::to_string(begin) + ", +" + std::to_string(length) +
                     ") invalid for " + shape_str(x.shape()));
  }
  Node node(OpKind::kSlice);
  node.value = Array({length}, std::vector<double>(x.raw().begin() + begin,
                                                   x.raw().begin() + begin + length));
  node.index = begin;
  node.length = length;
  node.parents = {a.id};
  node.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(node));
}

inline Var Graph::sum(Var a) {
  check_owner(a);
  double s = 0.0;
  for (double v : value(a.id).raw()) s += v;
  Node node(OpKind::kSum);
  node.value = Array::vector({s});
  node.parents = {a.id};
  node.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(node));
}

inline Var Graph::scale(Var a, double factor) {
  check_owner(a);
  Node node(OpKind::kScale);
  node.value = value(a.id);
  for (double& v : node.value.raw()) v *= factor;
  node.scalar = factor;
  node.parents = {a.id};
  node.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(node));
}

// --- backward rules --------------------------------------------------------

inline void Graph::backward(Var loss) {
  check_owner(loss);
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_str(value(loss.id).shape()));
  }
  if (!track_) return;
  for (std::size_t i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[i];
    if (n.op != OpKind::kParam && !n.grad.empty()) n.grad.fill(0.0);
  }
  Array* seed = grad_sink(loss.id);
  if (seed == nullptr) return;
  if (nodes_[loss.id].op == OpKind::kParam) {
    (*seed)[0] += 1.0;
    return;
  }
  (*seed)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) backward_node(i);
}

inline void Graph::backward_node(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad || n.grad.empty()) return;
  // Leaves keep their gradient; parameter nodes never own one.
  switch (n.op) {
    case OpKind::kInput:
    case OpKind::kConstant:
    case OpKind::kParam:
      return;
    default:
      break;
  }
  const std::vector<double>& g = n.grad.raw();

  switch (n.op) {
    case OpKind::kRow: {
      auto dst = n.param->grad.row(n.index);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      break;
    }
    case OpKind::kMatMul: {
      const std::size_t ia = n.parents[0];
      const std::size_t ib = n.parents[1];
      const Array& A = value(ia);
      const Array& B = value(ib);
      const std::size_t m = A.shape()[0];
      const std::size_t k = A.shape()[1];
      const std::size_t cols = B.rank() == 2 ? B.shape()[1] : 1;
      if (Array* da = grad_sink(ia)) {
        double* pd = da->raw().data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            const double gij = g[i * cols + j];
            if (gij == 0.0) continue;
            const double* pb = B.raw().data();
            for (std::size_t t = 0; t < k; ++t) pd[i * k + t] += gij * pb[t * cols + j];
          }
        }
      }
      if (Array* db = grad_sink(ib)) {
        double* pd = db->raw().data();
        const double* pa = A.raw().data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            const double gij = g[i * cols + j];
            if (gij == 0.0) continue;
            for (std::size_t t = 0; t < k; ++t) pd[t * cols + j] += pa[i * k + t] * gij;
          }
        }
      }
      break;
    }
    case OpKind::kAdd: {
      for (std::size_t p : n.parents) {
        if (Array* d = grad_sink(p)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
        }
      }
      break;
    }
    case OpKind::kMul: {
      const std::size_t ia = n.parents[0];
      const std::size_t ib = n.parents[1];
      if (Array* da = grad_sink(ia)) {
        const Array& B = value(ib);
        for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] * B[i];
      }
      if (Array* db = grad_sink(ib)) {
        const Array& A = value(ia);
        for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] += g[i] * A[i];
      }
      break;
    }
    case OpKind::kConcat: {
      const std::size_t rows = n.value.rows();
      const std::size_t total = n.value.cols();
      std::size_t offset = 0;
      for (std::size_t p : n.parents) {
        const std::size_t w = value(p).cols();
        if (Array* d = grad_sink(p)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) (*d)[r * w + c] += g[r * total + offset + c];
          }
        }
        offset += w;
      }
      break;
    }
    case OpKind::kSigmoid: {
      if (Array* d = grad_sink(n.parents[0])) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = n.value[i];
          (*d)[i] += g[i] * y * (1.0 - y);
        }
      }
      break;
    }
    case OpKind::kTanh: {
      if (Array* d = grad_sink(n.parents[0])) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = n.value[i];
          (*d)[i] += g[i] * (1.0 - y * y);
        }
      }
      break;
    }
    case OpKind::kL2Normalize: {
      const double norm = n.scalar;
      if (norm < kNormFloor) break;
      if (Array* d = grad_sink(n.parents[0])) {
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += n.value[i] * g[i];
        for (std::size_t i = 0; i < g.size(); ++i) {
          (*d)[i] += (g[i] - n.value[i] * dot) / norm;
        }
      }
      break;
    }
    case OpKind::kLogSoftmax: {
      if (Array* d = grad_sink(n.parents[0])) {
        double gsum = 0.0;
        for (double v : g) gsum += v;
        for (std::size_t i = 0; i < g.size(); ++i) {
          (*d)[i] += g[i] - std::exp(n.value[i]) * gsum;
        }
      }
      break;
    }
    case OpKind::kSoftmaxCrossEntropy: {
      if (Array* d = grad_sink(n.parents[0])) {
        const Array& x = value(n.parents[0]);
        const double lse = detail::log_sum_exp(x.values());
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double p = std::exp(x[i] - lse);
          (*d)[i] += g[0] * (p - (i == n.index ? 1.0 : 0.0));
        }
      }
      break;
    }
    case OpKind::kSlice: {
      if (Array* d = grad_sink(n.parents[0])) {
        for (std::size_t i = 0; i < n.length; ++i) (*d)[n.index + i] += g[i];
      }
      break;
    }
    case OpKind::kSum: {
      if (Array* d = grad_sink(n.parents[0])) {
        for (double& v : d->raw()) v += g[0];
      }
      break;
    }
    case OpKind::kScale: {
      if (Array* d = grad_sink(n.parents[0])) {
        for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += n.scalar * g[i];
      }
      break;
    }
    default:
      break;
  }
}

// --- free-function spelling ------------------------------------------------

inline Var matmul(Var a, Var b) { return a.graph->matmul(a, b); }
inline Var add(Var a, Var b) { return a.graph->add(a, b); }
inline Var mul(Var a, Var b) { return a.graph->mul(a, b); }
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero arrays");
  return parts.front().graph->concat(parts);
}
inline Var sigmoid(Var a) { return a.graph->sigmoid(a); }
inline Var tanh(Var a) { return a.graph->tanh(a); }
inline Var l2_normalize(Var a) { return a.graph->l2_normalize(a); }
inline Var log_softmax(Var a) { return a.graph->log_softmax(a); }
inline Var softmax_cross_entropy(Var logits, std::size_t gold) {
  return logits.graph->softmax_cross_entropy(logits, gold);
}
inline Var slice(Var a, std::size_t begin, std::size_t length) {
  return a.graph->slice(a, begin, length);
}
inline Var sum(Var a) { return a.graph->sum(a); }
inline Var scale(Var a, double factor) { return a.graph->scale(a, factor); }

// Plain-array versions used outside of training graphs.
inline Array l2_normalize(const Array& x) {
  Graph g(false);
  return l2_normalize(g.constant(x)).value();
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double lse = detail::log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace tagxfer
