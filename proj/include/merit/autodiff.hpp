#pragma once

// Reverse-mode automatic differentiation over dense row-major f64 tensors.
//
// Forward values are computed eagerly when a node is appended; backward()
// walks the tape in reverse insertion order. A Graph is single-threaded, but
// independent graphs share no state and may be driven from different threads.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace merit::ad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  // 2-D view: rank-1 tensors read as a single row.
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : shape_.back(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class Op {
  kConstant,
  kParameter,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kConcat,
  kGatherRows,
  kSigmoid,
  kSoftplus,
  kRelu,
  kTanh,
  kLog,
  kExp,
  kNeg,
  kScale,
  kAddScalar,
  kSumAll,
  kMeanAll,
  kSumAxis,
  kMeanAxis,
  kClamp,
  kMaxAxis,
  kMinAxis,
  kSoftmax,
  kReshape,
};

const char* to_string(Op op);

struct OpAttrs {
  std::vector<std::size_t> indices;  // gather-rows
  Shape shape;                       // reshape target
  double scalar = 0.0;               // scale / add-scalar factor
  double lo = 0.0;                   // clamp bounds
  double hi = 0.0;
  int axis = -1;                     // reductions over a 2-D axis (0 or 1/-1)
};

struct Node {
  Op op = Op::kConstant;
  std::vector<NodeId> inputs;
  OpAttrs attrs;
  Tensor value;
  bool requires_grad = false;
};

// Gradients indexed by node; only leaves created with parameter() or
// variable() are retained after backward().
class GradientMap {
 public:
  explicit GradientMap(std::size_t n) : grads_(n) {}

  bool contains(NodeId id) const { return id.index < grads_.size() && grads_[id.index].has_value(); }
  const Tensor& at(NodeId id) const;
  std::optional<Tensor>& slot(NodeId id) { return grads_[id.index]; }

 private:
  std::vector<std::optional<Tensor>> grads_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId constant(Tensor value);
  // Trainable leaf.
  NodeId parameter(Tensor value);
  // Non-trainable leaf whose gradient is still reported (model inputs under
  // sensitivity analysis).
  NodeId variable(Tensor value);

  NodeId apply(Op op, std::span<const NodeId> inputs, const OpAttrs& attrs = {});

  const Tensor& value(NodeId id) const { return nodes_.at(id.index).value; }
  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& parameters() const { return parameters_; }

  GradientMap backward(NodeId loss) const;

 private:
  Tensor forward(Op op, std::span<const NodeId> inputs, const OpAttrs& attrs) const;
  void accumulate_input_grads(const Node& node, const Tensor& upstream,
                              std::vector<std::optional<Tensor>>& grads) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> parameters_;
  std::vector<bool> keep_grad_;
};

// Op builders. Binary elementwise ops broadcast rank <= 2 operands numpy-style
// (a dimension of size 1 stretches to match).
NodeId matmul(Graph& g, NodeId a, NodeId b);
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId concat(Graph& g, std::span<const NodeId> parts);
NodeId gather_rows(Graph& g, NodeId table, std::vector<std::size_t> rows);
NodeId sigmoid(Graph& g, NodeId x);
NodeId softplus(Graph& g, NodeId x);
NodeId relu(Graph& g, NodeId x);
NodeId tanh(Graph& g, NodeId x);
NodeId log(Graph& g, NodeId x);
NodeId exp(Graph& g, NodeId x);
NodeId neg(Graph& g, NodeId x);
NodeId scale(Graph& g, NodeId x, double factor);
NodeId add_scalar(Graph& g, NodeId x, double offset);
NodeId sum(Graph& g, NodeId x);
NodeId mean(Graph& g, NodeId x);
NodeId sum_axis(Graph& g, NodeId x, int axis);
NodeId mean_axis(Graph& g, NodeId x, int axis);
NodeId clamp(Graph& g, NodeId x, double lo, double hi);
NodeId max_axis(Graph& g, NodeId x, int axis);
NodeId min_axis(Graph& g, NodeId x, int axis);
NodeId softmax(Graph& g, NodeId x);
NodeId reshape(Graph& g, NodeId x, Shape shape);

// Numerically stable scalar helpers shared with the loss code.
double sigmoid(double x);
double softplus(double x);

using LossBuilder = std::function<NodeId(Graph&, std::span<const NodeId>)>;

// Central finite differences on every coordinate of every tensor in `x0`,
// compared against backward(). Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-12). Throws on a non-finite loss.
double grad_check(const LossBuilder& builder, const std::vector<Tensor>& x0, double eps = 1e-5);

double grad_check(const std::function<NodeId(Graph&, NodeId)>& builder, const Tensor& x0,
                  double eps = 1e-5);

}  // namespace merit::ad
