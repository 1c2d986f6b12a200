#include "merit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "merit/error.hpp"

namespace merit::ad {

namespace {

// c[m,n] = a[m,k] * b[k,n], all row-major. Every output accumulates over k in
// index order and the inner loop vectorizes across columns, so results do not
// depend on buffer alignment, batch size or thread count.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  std::size_t i = 0;
  // Four rows share each pass over b; per-element order is unchanged.
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    const double* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double x0 = a0[p];
      const double x1 = a0[k + p];
      const double x2 = a0[2 * k + p];
      const double x3 = a0[3 * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = bp[j];
        c0[j] += x0 * bj;
        c1[j] += x1 * bj;
        c2[j] += x2 * bj;
        c3[j] += x3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[k,n] = a[m,k]^T * g[m,n], accumulating over m in index order.
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * gi[j];
    }
  }
}

std::vector<double> transposed(const double* b, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = b[r * cols + c];
  }
  return t;
}

struct Dims2 {
  std::size_t rows;
  std::size_t cols;
};

Dims2 dims2(const Shape& s) {
  if (s.empty()) return {1, 1};
  if (s.size() == 1) return {1, s[0]};
  return {s[0], s[1]};
}

[[noreturn]] void shape_error(Op op, const std::string& detail) {
  fail(ErrorKind::kShape, std::string(to_string(op)) + ": " + detail);
}

std::string shapes_str(const Shape& a, const Shape& b) {
  return to_string(a) + " vs " + to_string(b);
}

Shape broadcast_shape(Op op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (a.size() > 2 || b.size() > 2) shape_error(op, "broadcast supports rank <= 2, got " + shapes_str(a, b));
  const Dims2 da = dims2(a);
  const Dims2 db = dims2(b);
  auto join = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    shape_error(op, "incompatible shapes " + shapes_str(a, b));
  };
  const std::size_t rows = join(da.rows, db.rows);
  const std::size_t cols = join(da.cols, db.cols);
  const std::size_t rank = std::max(a.size(), b.size());
  if (rank == 2) return {rows, cols};
  if (rank == 1) return {cols};
  return {};
}

// Index into an operand of dims `d` for output coordinate (r, c).
inline std::size_t bidx(const Dims2& d, std::size_t r, std::size_t c) {
  return (d.rows == 1 ? 0 : r) * d.cols + (d.cols == 1 ? 0 : c);
}

template <typename F>
Tensor binary_forward(const Tensor& a, const Tensor& b, const Shape& out_shape, F f) {
  Tensor out(out_shape);
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(av[i], bv[i]);
    return out;
  }
  const Dims2 d = dims2(out_shape);
  const Dims2 da = dims2(a.shape());
  const Dims2 db = dims2(b.shape());
  for (std::size_t r = 0; r < d.rows; ++r) {
    for (std::size_t c = 0; c < d.cols; ++c) {
      o[r * d.cols + c] = f(av[bidx(da, r, c)], bv[bidx(db, r, c)]);
    }
  }
  return out;
}

// Accumulates g * scale_of(r, c) into a tensor shaped like `target`, summing
// over broadcast dimensions.
template <typename F>
Tensor reduce_to(const Shape& target, const Tensor& g, F factor) {
  Tensor out(target);
  auto o = out.data();
  auto gv = g.data();
  if (target == g.shape()) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = gv[i] * factor(i, i);
    return out;
  }
  const Dims2 d = dims2(g.shape());
  const Dims2 dt = dims2(target);
  for (std::size_t r = 0; r < d.rows; ++r) {
    for (std::size_t c = 0; c < d.cols; ++c) {
      const std::size_t oi = r * d.cols + c;
      o[bidx(dt, r, c)] += gv[oi] * factor(oi, bidx(dt, r, c));
    }
  }
  return out;
}

void add_into(std::optional<Tensor>& slot, Tensor&& g) {
  if (!slot) {
    slot = std::move(g);
    return;
  }
  auto s = slot->data();
  auto gv = g.data();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] += gv[i];
}

template <typename F>
Tensor unary_map(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(xv[i]);
  return out;
}

std::size_t normalize_axis(Op op, const Tensor& x, int axis) {
  if (x.rank() != 2) shape_error(op, "expects a rank-2 input, got " + to_string(x.shape()));
  if (axis == 0) return 0;
  if (axis == 1 || axis == -1) return 1;
  shape_error(op, "axis must be 0, 1 or -1");
}

Shape reduced_shape(const Tensor& x, std::size_t axis) {
  return axis == 0 ? Shape{1, x.dim(1)} : Shape{x.dim(0), 1};
}

// Index of the first extreme element along an axis line.
template <typename Cmp>
std::size_t arg_extreme(const Tensor& x, std::size_t axis, std::size_t line, Cmp better) {
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  const std::size_t len = axis == 0 ? rows : cols;
  auto at = [&](std::size_t k) { return axis == 0 ? k * cols + line : line * cols + k; };
  std::size_t best = at(0);
  for (std::size_t k = 1; k < len; ++k) {
    if (better(x[at(k)], x[best])) best = at(k);
  }
  return best;
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {
void check_dims(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) fail(ErrorKind::kShape, "tensor dimensions must be >= 1, got " + to_string(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (numel(shape_) != data_.size()) {
    fail(ErrorKind::kShape,
         "tensor shape " + to_string(shape_) + " does not match " + std::to_string(data_.size()) + " values");
  }
}

double Tensor::item() const {
  if (data_.size() != 1) fail(ErrorKind::kShape, "item() on non-scalar tensor " + to_string(shape_));
  return data_[0];
}

const char* to_string(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kConcat: return "concat";
    case Op::kGatherRows: return "gather_rows";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftplus: return "softplus";
    case Op::kRelu: return "relu";
    case Op::kTanh: return "tanh";
    case Op::kLog: return "log";
    case Op::kExp: return "exp";
    case Op::kNeg: return "neg";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kSumAll: return "sum";
    case Op::kMeanAll: return "mean";
    case Op::kSumAxis: return "sum_axis";
    case Op::kMeanAxis: return "mean_axis";
    case Op::kClamp: return "clamp";
    case Op::kMaxAxis: return "max_axis";
    case Op::kMinAxis: return "min_axis";
    case Op::kSoftmax: return "softmax";
    case Op::kReshape: return "reshape";
  }
  return "unknown";
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

const Tensor& GradientMap::at(NodeId id) const {
  if (!contains(id)) fail(ErrorKind::kInvalidArgument, "no gradient recorded for node " + std::to_string(id.index));
  return *grads_[id.index];
}

NodeId Graph::constant(Tensor value) {
  nodes_.push_back(Node{Op::kConstant, {}, {}, std::move(value), false});
  keep_grad_.push_back(false);
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::parameter(Tensor value) {
  nodes_.push_back(Node{Op::kParameter, {}, {}, std::move(value), true});
  keep_grad_.push_back(true);
  NodeId id{static_cast<std::uint32_t>(nodes_.size() - 1)};
  parameters_.push_back(id);
  return id;
}

NodeId Graph::variable(Tensor value) {
  nodes_.push_back(Node{Op::kConstant, {}, {}, std::move(value), true});
  keep_grad_.push_back(true);
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::apply(Op op, std::span<const NodeId> inputs, const OpAttrs& attrs) {
  if (op == Op::kConstant || op == Op::kParameter) {
    fail(ErrorKind::kInvalidArgument, "apply: leaves are created with constant()/parameter()/variable()");
  }
  for (NodeId in : inputs) {
    if (in.index >= nodes_.size()) {
      fail(ErrorKind::kInvalidArgument, std::string(to_string(op)) + ": unknown input node " + std::to_string(in.index));
    }
  }
  Tensor value = forward(op, inputs, attrs);
  bool needs = false;
  for (NodeId in : inputs) needs = needs || nodes_[in.index].requires_grad;
  nodes_.push_back(Node{op, {inputs.begin(), inputs.end()}, attrs, std::move(value), needs});
  keep_grad_.push_back(false);
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor Graph::forward(Op op, std::span<const NodeId> inputs, const OpAttrs& attrs) const {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      shape_error(op, "expects " + std::to_string(n) + " inputs, got " + std::to_string(inputs.size()));
    }
  };
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[inputs[i].index].value; };

  switch (op) {
    case Op::kMatMul: {
      arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        shape_error(op, "cannot multiply " + shapes_str(a.shape(), b.shape()));
      }
      Tensor out({a.dim(0), b.dim(1)});
      gemm(a.data().data(), b.data().data(), out.data().data(), a.dim(0), a.dim(1), b.dim(1));
      return out;
    }
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      arity(2);
      const Shape s = broadcast_shape(op, in(0).shape(), in(1).shape());
      if (op == Op::kAdd) return binary_forward(in(0), in(1), s, [](double x, double y) { return x + y; });
      if (op == Op::kSub) return binary_forward(in(0), in(1), s, [](double x, double y) { return x - y; });
      return binary_forward(in(0), in(1), s, [](double x, double y) { return x * y; });
    }
    case Op::kConcat: {
      if (inputs.empty()) shape_error(op, "needs at least one input");
      const std::size_t rank = in(0).rank();
      const std::size_t rows = in(0).rows();
      std::size_t cols = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (in(i).rank() != rank || in(i).rows() != rows || rank == 0 || rank > 2) {
          shape_error(op, "cannot concatenate " + shapes_str(in(0).shape(), in(i).shape()) + " on the last axis");
        }
        cols += in(i).cols();
      }
      Tensor out(rank == 2 ? Shape{rows, cols} : Shape{cols});
      std::size_t offset = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& t = in(i);
        const std::size_t c = t.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(t.data().begin() + r * c, c, out.data().begin() + r * cols + offset);
        }
        offset += c;
      }
      return out;
    }
    case Op::kGatherRows: {
      arity(1);
      const Tensor& t = in(0);
      if (t.rank() != 2 || attrs.indices.empty()) {
        shape_error(op, "expects a rank-2 table and at least one index, got " + to_string(t.shape()));
      }
      const std::size_t d = t.dim(1);
      Tensor out({attrs.indices.size(), d});
      for (std::size_t i = 0; i < attrs.indices.size(); ++i) {
        const std::size_t row = attrs.indices[i];
        if (row >= t.dim(0)) {
          fail(ErrorKind::kInvalidArgument, "gather_rows: index " + std::to_string(row) + " out of range for table " +
                                                to_string(t.shape()));
        }
        std::copy_n(t.data().begin() + row * d, d, out.data().begin() + i * d);
      }
      return out;
    }
    case Op::kSigmoid: arity(1); return unary_map(in(0), [](double x) { return sigmoid(x); });
    case Op::kSoftplus: arity(1); return unary_map(in(0), [](double x) { return softplus(x); });
    case Op::kRelu: arity(1); return unary_map(in(0), [](double x) { return x > 0 ? x : 0.0; });
    case Op::kTanh: arity(1); return unary_map(in(0), [](double x) { return std::tanh(x); });
    case Op::kLog: arity(1); return unary_map(in(0), [](double x) { return std::log(x); });
    case Op::kExp: arity(1); return unary_map(in(0), [](double x) { return std::exp(x); });
    case Op::kNeg: arity(1); return unary_map(in(0), [](double x) { return -x; });
    case Op::kScale: {
      arity(1);
      const double k = attrs.scalar;
      return unary_map(in(0), [k](double x) { return k * x; });
    }
    case Op::kAddScalar: {
      arity(1);
      const double k = attrs.scalar;
      return unary_map(in(0), [k](double x) { return x + k; });
    }
    case Op::kClamp: {
      arity(1);
      if (!(attrs.lo <= attrs.hi)) shape_error(op, "lower bound exceeds upper bound");
      const double lo = attrs.lo;
      const double hi = attrs.hi;
      return unary_map(in(0), [lo, hi](double x) { return std::clamp(x, lo, hi); });
    }
    case Op::kSumAll:
    case Op::kMeanAll: {
      arity(1);
      const auto v = in(0).data();
      double s = std::accumulate(v.begin(), v.end(), 0.0);
      if (op == Op::kMeanAll) s /= static_cast<double>(v.size());
      return Tensor::scalar(s);
    }
    case Op::kSumAxis:
    case Op::kMeanAxis:
    case Op::kMaxAxis:
    case Op::kMinAxis: {
      arity(1);
      const Tensor& x = in(0);
      const std::size_t axis = normalize_axis(op, x, attrs.axis);
      Tensor out(reduced_shape(x, axis));
      const std::size_t rows = x.dim(0);
      const std::size_t cols = x.dim(1);
      const std::size_t lines = axis == 0 ? cols : rows;
      for (std::size_t line = 0; line < lines; ++line) {
        if (op == Op::kMaxAxis) {
          out[line] = x[arg_extreme(x, axis, line, std::greater<>())];
        } else if (op == Op::kMinAxis) {
          out[line] = x[arg_extreme(x, axis, line, std::less<>())];
        } else {
          double s = 0.0;
          const std::size_t len = axis == 0 ? rows : cols;
          for (std::size_t k = 0; k < len; ++k) s += axis == 0 ? x[k * cols + line] : x[line * cols + k];
          out[line] = op == Op::kMeanAxis ? s / static_cast<double>(len) : s;
        }
      }
      return out;
    }
    case Op::kSoftmax: {
      arity(1);
      const Tensor& x = in(0);
      if (x.rank() == 0 || x.rank() > 2) shape_error(op, "expects rank 1 or 2, got " + to_string(x.shape()));
      Tensor out(x.shape());
      const std::size_t rows = x.rows();
      const std::size_t cols = x.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* src = x.data().data() + r * cols;
        double* dst = out.data().data() + r * cols;
        const double m = *std::max_element(src, src + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += (dst[c] = std::exp(src[c] - m));
        for (std::size_t c = 0; c < cols; ++c) dst[c] /= z;
      }
      return out;
    }
    case Op::kReshape: {
      arity(1);
      if (numel(attrs.shape) != in(0).size()) {
        shape_error(op, "cannot reshape " + shapes_str(in(0).shape(), attrs.shape));
      }
      return Tensor(attrs.shape, in(0).values());
    }
    case Op::kConstant:
    case Op::kParameter:
      break;
  }
  shape_error(op, "not a computational op");
}

void Graph::accumulate_input_grads(const Node& node, const Tensor& g,
                                   std::vector<std::optional<Tensor>>& grads) const {
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[node.inputs[i].index].value; };
  auto wants = [&](std::size_t i) { return nodes_[node.inputs[i].index].requires_grad; };
  auto slot = [&](std::size_t i) -> std::optional<Tensor>& { return grads[node.inputs[i].index]; };
  const Tensor& y = node.value;

  auto unary = [&](auto dfdx) {
    if (!wants(0)) return;
    const Tensor& x = in(0);
    Tensor dx(x.shape());
    auto d = dx.data();
    auto gv = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = gv[i] * dfdx(x[i], y[i]);
    add_into(slot(0), std::move(dx));
  };

  switch (node.op) {
    case Op::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (wants(0)) {
        Tensor da(a.shape());
        const std::vector<double> bt = transposed(b.data().data(), b.dim(0), b.dim(1));
        gemm(g.data().data(), bt.data(), da.data().data(), g.dim(0), g.dim(1), a.dim(1));
        add_into(slot(0), std::move(da));
      }
      if (wants(1)) {
        Tensor db(b.shape());
        gemm_tn(a.data().data(), g.data().data(), db.data().data(), a.dim(0), a.dim(1), b.dim(1));
        add_into(slot(1), std::move(db));
      }
      return;
    }
    case Op::kAdd:
    case Op::kSub: {
      if (wants(0)) add_into(slot(0), reduce_to(in(0).shape(), g, [](std::size_t, std::size_t) { return 1.0; }));
      if (wants(1)) {
        const double s = node.op == Op::kAdd ? 1.0 : -1.0;
        add_into(slot(1), reduce_to(in(1).shape(), g, [s](std::size_t, std::size_t) { return s; }));
      }
      return;
    }
    case Op::kMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const Dims2 dout = dims2(y.shape());
      const Dims2 da = dims2(a.shape());
      const Dims2 db = dims2(b.shape());
      // factor(i, _) receives the flat output index.
      auto other = [&](const Tensor& t, const Dims2& dt) {
        return [&t, &dt, &dout](std::size_t oi, std::size_t) {
          return t[bidx(dt, oi / dout.cols, oi % dout.cols)];
        };
      };
      if (wants(0)) add_into(slot(0), reduce_to(a.shape(), g, other(b, db)));
      if (wants(1)) add_into(slot(1), reduce_to(b.shape(), g, other(a, da)));
      return;
    }
    case Op::kConcat: {
      const std::size_t rows = y.rows();
      const std::size_t cols = y.cols();
      std::size_t offset = 0;
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const std::size_t c = in(i).cols();
        if (wants(i)) {
          Tensor part(in(i).shape());
          for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(g.data().begin() + r * cols + offset, c, part.data().begin() + r * c);
          }
          add_into(slot(i), std::move(part));
        }
        offset += c;
      }
      return;
    }
    case Op::kGatherRows: {
      if (!wants(0)) return;
      const std::size_t d = in(0).dim(1);
      Tensor dt(in(0).shape());
      for (std::size_t i = 0; i < node.attrs.indices.size(); ++i) {
        const std::size_t row = node.attrs.indices[i];
        for (std::size_t k = 0; k < d; ++k) dt[row * d + k] += g[i * d + k];
      }
      add_into(slot(0), std::move(dt));
      return;
    }
    case Op::kSigmoid: unary([](double, double s) { return s * (1.0 - s); }); return;
    case Op::kSoftplus: unary([](double x, double) { return sigmoid(x); }); return;
    case Op::kRelu: unary([](double x, double) { return x > 0 ? 1.0 : 0.0; }); return;
    case Op::kTanh: unary([](double, double t) { return 1.0 - t * t; }); return;
    case Op::kLog: unary([](double x, double) { return 1.0 / x; }); return;
    case Op::kExp: unary([](double, double e) { return e; }); return;
    case Op::kNeg: unary([](double, double) { return -1.0; }); return;
    case Op::kScale: {
      const double k = node.attrs.scalar;
      unary([k](double, double) { return k; });
      return;
    }
    case Op::kAddScalar: unary([](double, double) { return 1.0; }); return;
    case Op::kClamp: {
      const double lo = node.attrs.lo;
      const double hi = node.attrs.hi;
      unary([lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
      return;
    }
    case Op::kSumAll:
    case Op::kMeanAll: {
      if (!wants(0)) return;
      double v = g[0];
      if (node.op == Op::kMeanAll) v /= static_cast<double>(in(0).size());
      add_into(slot(0), Tensor(in(0).shape(), v));
      return;
    }
    case Op::kSumAxis:
    case Op::kMeanAxis: {
      if (!wants(0)) return;
      const Tensor& x = in(0);
      const std::size_t axis = node.attrs.axis == 0 ? 0 : 1;
      const std::size_t cols = x.dim(1);
      const double k = node.op == Op::kMeanAxis ? 1.0 / static_cast<double>(axis == 0 ? x.dim(0) : cols) : 1.0;
      Tensor dx(x.shape());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = k * g[axis == 0 ? i % cols : i / cols];
      add_into(slot(0), std::move(dx));
      return;
    }
    case Op::kMaxAxis:
    case Op::kMinAxis: {
      if (!wants(0)) return;
      const Tensor& x = in(0);
      const std::size_t axis = node.attrs.axis == 0 ? 0 : 1;
      const std::size_t lines = axis == 0 ? x.dim(1) : x.dim(0);
      Tensor dx(x.shape());
      for (std::size_t line = 0; line < lines; ++line) {
        const std::size_t at = node.op == Op::kMaxAxis ? arg_extreme(x, axis, line, std::greater<>())
                                                       : arg_extreme(x, axis, line, std::less<>());
        dx[at] += g[line];
      }
      add_into(slot(0), std::move(dx));
      return;
    }
    case Op::kSoftmax: {
      if (!wants(0)) return;
      const std::size_t rows = y.rows();
      const std::size_t cols = y.cols();
      Tensor dx(y.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] = y[r * cols + c] * (g[r * cols + c] - dot);
      }
      add_into(slot(0), std::move(dx));
      return;
    }
    case Op::kReshape: {
      if (!wants(0)) return;
      add_into(slot(0), Tensor(in(0).shape(), g.values()));
      return;
    }
    case Op::kConstant:
    case Op::kParameter:
      return;
  }
}

GradientMap Graph::backward(NodeId loss) const {
  require(loss.index < nodes_.size(), ErrorKind::kInvalidArgument, "backward: unknown loss node");
  const Tensor& lv = nodes_[loss.index].value;
  require(lv.size() == 1, ErrorKind::kShape, "backward: loss must be scalar, got shape " + to_string(lv.shape()));

  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[loss.index] = Tensor(lv.shape(), 1.0);
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    if (!grads[i]) continue;
    const Node& n = nodes_[i];
    if (!n.requires_grad) {
      grads[i].reset();
      continue;
    }
    if (!n.inputs.empty()) {
      accumulate_input_grads(n, *grads[i], grads);
      grads[i].reset();
    }
  }

  GradientMap out(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (keep_grad_[i]) {
      NodeId id{static_cast<std::uint32_t>(i)};
      if (grads[i]) {
        out.slot(id) = std::move(grads[i]);
      } else {
        out.slot(id) = Tensor::zeros_like(nodes_[i].value);
      }
    }
  }
  return out;
}

NodeId matmul(Graph& g, NodeId a, NodeId b) { return g.apply(Op::kMatMul, std::array{a, b}); }
NodeId add(Graph& g, NodeId a, NodeId b) { return g.apply(Op::kAdd, std::array{a, b}); }
NodeId sub(Graph& g, NodeId a, NodeId b) { return g.apply(Op::kSub, std::array{a, b}); }
NodeId mul(Graph& g, NodeId a, NodeId b) { return g.apply(Op::kMul, std::array{a, b}); }
NodeId concat(Graph& g, std::span<const NodeId> parts) { return g.apply(Op::kConcat, parts); }

NodeId gather_rows(Graph& g, NodeId table, std::vector<std::size_t> rows) {
  OpAttrs attrs;
  attrs.indices = std::move(rows);
  return g.apply(Op::kGatherRows, std::array{table}, attrs);
}

NodeId sigmoid(Graph& g, NodeId x) { return g.apply(Op::kSigmoid, std::array{x}); }
NodeId softplus(Graph& g, NodeId x) { return g.apply(Op::kSoftplus, std::array{x}); }
NodeId relu(Graph& g, NodeId x) { return g.apply(Op::kRelu, std::array{x}); }
NodeId tanh(Graph& g, NodeId x) { return g.apply(Op::kTanh, std::array{x}); }
NodeId log(Graph& g, NodeId x) { return g.apply(Op::kLog, std::array{x}); }
NodeId exp(Graph& g, NodeId x) { return g.apply(Op::kExp, std::array{x}); }
NodeId neg(Graph& g, NodeId x) { return g.apply(Op::kNeg, std::array{x}); }

NodeId scale(Graph& g, NodeId x, double factor) {
  OpAttrs attrs;
  attrs.scalar = factor;
  return g.apply(Op::kScale, std::array{x}, attrs);
}

NodeId add_scalar(Graph& g, NodeId x, double offset) {
  OpAttrs attrs;
  attrs.scalar = offset;
  return g.apply(Op::kAddScalar, std::array{x}, attrs);
}

NodeId sum(Graph& g, NodeId x) { return g.apply(Op::kSumAll, std::array{x}); }
NodeId mean(Graph& g, NodeId x) { return g.apply(Op::kMeanAll, std::array{x}); }

namespace {
NodeId axis_op(Graph& g, Op op, NodeId x, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return g.apply(op, std::array{x}, attrs);
}
}  // namespace

NodeId sum_axis(Graph& g, NodeId x, int axis) { return axis_op(g, Op::kSumAxis, x, axis); }
NodeId mean_axis(Graph& g, NodeId x, int axis) { return axis_op(g, Op::kMeanAxis, x, axis); }
NodeId max_axis(Graph& g, NodeId x, int axis) { return axis_op(g, Op::kMaxAxis, x, axis); }
NodeId min_axis(Graph& g, NodeId x, int axis) { return axis_op(g, Op::kMinAxis, x, axis); }

NodeId clamp(Graph& g, NodeId x, double lo, double hi) {
  OpAttrs attrs;
  attrs.lo = lo;
  attrs.hi = hi;
  return g.apply(Op::kClamp, std::array{x}, attrs);
}

NodeId softmax(Graph& g, NodeId x) { return g.apply(Op::kSoftmax, std::array{x}); }

NodeId reshape(Graph& g, NodeId x, Shape shape) {
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return g.apply(Op::kReshape, std::array{x}, attrs);
}

double grad_check(const LossBuilder& builder, const std::vector<Tensor>& x0, double eps) {
  require(eps >= 1e-7 && eps <= 1e-3, ErrorKind::kInvalidArgument, "grad_check: eps must lie in [1e-7, 1e-3]");

  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Graph g;
    std::vector<NodeId> ids;
    ids.reserve(xs.size());
    for (const Tensor& x : xs) ids.push_back(g.parameter(x));
    const double v = g.value(builder(g, ids)).item();
    require(std::isfinite(v), ErrorKind::kNonFinite, "grad_check: loss is not finite");
    return v;
  };

  Graph g;
  std::vector<NodeId> ids;
  for (const Tensor& x : x0) ids.push_back(g.parameter(x));
  const NodeId loss = builder(g, ids);
  require(std::isfinite(g.value(loss).item()), ErrorKind::kNonFinite, "grad_check: loss is not finite");
  const GradientMap grads = g.backward(loss);

  double worst = 0.0;
  std::vector<Tensor> xs = x0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const Tensor& analytic = grads.at(ids[t]);
    for (std::size_t i = 0; i < xs[t].size(); ++i) {
      const double orig = xs[t][i];
      xs[t][i] = orig + eps;
      const double up = evaluate(xs);
      xs[t][i] = orig - eps;
      const double down = evaluate(xs);
      xs[t][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

double grad_check(const std::function<NodeId(Graph&, NodeId)>& builder, const Tensor& x0, double eps) {
  return grad_check([&](Graph& g, std::span<const NodeId> ids) { return builder(g, ids[0]); },
                    std::vector<Tensor>{x0}, eps);
}

}  // namespace merit::ad
