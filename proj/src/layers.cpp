#include "merit/layers.hpp"

#include <array>
#include <cmath>

#include "merit/error.hpp"
#include "merit/rng.hpp"

namespace merit::layers {

namespace {

// softplus^-1(0.1): initial positive weights start near 0.1.
constexpr double kFreeWeightInit = -2.2521684610440904;

Tensor free_weight_init(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  for (double& v : t.data()) v = kFreeWeightInit + 0.1 * (uniform01(rng) - 0.5);
  return t;
}

NodeId affine(GraphParams& p, NodeId x, const std::string& w, const std::string& b) {
  Graph& g = p.graph();
  return ad::add(g, ad::matmul(g, x, p(w)), p(b));
}

void check_width(const Graph& g, NodeId x, std::size_t want, const std::string& who) {
  const Tensor& v = g.value(x);
  if (v.rank() != 2 || v.cols() != want) {
    fail(ErrorKind::kShape, who + ": expected input [batch," + std::to_string(want) + "], got " + ad::to_string(v.shape()));
  }
}

}  // namespace

void ParamStore::add(std::string name, Tensor value, bool decay) {
  if (index_.count(name)) fail(ErrorKind::kInvalidArgument, "duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), decay});
}

std::size_t ParamStore::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::kInvalidArgument, "unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const ParamEntry& e : entries_) n += e.value.size();
  return n;
}

NodeId GraphParams::operator()(const std::string& name) {
  const std::size_t i = store_.index_of(name);
  const auto it = nodes_.find(i);
  if (it != nodes_.end()) return it->second;
  const NodeId id = graph_.parameter(store_.entries()[i].value);
  nodes_.emplace(i, id);
  bound_.emplace_back(i, id);
  return id;
}

Tensor glorot_uniform(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (double& v : t.data()) v = limit * (2.0 * uniform01(rng) - 1.0);
  return t;
}

NodeId activate(Graph& g, NodeId x, Activation act) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return ad::relu(g, x);
    case Activation::kTanh: return ad::tanh(g, x);
    case Activation::kSigmoid: return ad::sigmoid(g, x);
  }
  return x;
}

NodeId dropout(Graph& g, NodeId x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) fail(ErrorKind::kInvalidArgument, "dropout rate must be below 1");
  Tensor mask(g.value(x).shape());
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) m = uniform01(rng) >= rate ? keep : 0.0;
  return ad::mul(g, x, g.constant(std::move(mask)));
}

void EmbeddingTable::init(ParamStore& store, std::mt19937_64& rng) const {
  if (vocab == 0 || dim == 0) fail(ErrorKind::kInvalidArgument, name + ": empty embedding table");
  store.add(name, glorot_uniform(rng, vocab, dim));
}

NodeId EmbeddingTable::lookup(GraphParams& p, const std::vector<std::size_t>& indices) const {
  for (std::size_t i : indices) {
    if (i >= vocab) {
      fail(ErrorKind::kInvalidArgument,
           name + ": index " + std::to_string(i) + " out of range for vocabulary " + std::to_string(vocab));
    }
  }
  return ad::gather_rows(p.graph(), p(name), indices);
}

void MlpTower::init(ParamStore& store, std::mt19937_64& rng) const {
  if (sizes.empty() || input_dim == 0) fail(ErrorKind::kInvalidArgument, name + ": empty tower");
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    store.add(weight(l), glorot_uniform(rng, in, sizes[l]));
    store.add(bias(l), Tensor({1, sizes[l]}), false);
    in = sizes[l];
  }
}

NodeId MlpTower::forward(GraphParams& p, NodeId x, bool training, std::mt19937_64* rng) const {
  Graph& g = p.graph();
  check_width(g, x, input_dim, name);
  const bool drop = training && dropout > 0.0;
  if (drop && rng == nullptr) fail(ErrorKind::kInvalidArgument, name + ": training with dropout needs an rng");
  NodeId h = x;
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    const bool last = l + 1 == sizes.size();
    h = activate(g, affine(p, h, weight(l), bias(l)), last ? output : hidden);
    if (drop && !last) h = layers::dropout(g, h, dropout, *rng);
  }
  return h;
}

std::vector<NodeId> MlpTower::forward_layers(GraphParams& p, NodeId x) const {
  Graph& g = p.graph();
  check_width(g, x, input_dim, name);
  std::vector<NodeId> out;
  NodeId h = x;
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    h = activate(g, affine(p, h, weight(l), bias(l)), l + 1 == sizes.size() ? output : hidden);
    out.push_back(h);
  }
  return out;
}

namespace {

// Activation derivative expressed through its output h.
NodeId activation_slope(Graph& g, NodeId h, Activation act) {
  switch (act) {
    case Activation::kIdentity: return NodeId{};
    case Activation::kTanh: return ad::add_scalar(g, ad::neg(g, ad::mul(g, h, h)), 1.0);
    case Activation::kSigmoid: return ad::mul(g, h, ad::add_scalar(g, ad::neg(g, h), 1.0));
    case Activation::kRelu: {
      Tensor mask(g.value(h).shape());
      const Tensor& v = g.value(h);
      for (std::size_t i = 0; i < v.size(); ++i) mask[i] = v[i] > 0.0 ? 1.0 : 0.0;
      return g.constant(std::move(mask));
    }
  }
  return NodeId{};
}

}  // namespace

NodeId MlpTower::input_tangent(GraphParams& p, const std::vector<NodeId>& layers, std::size_t column) const {
  Graph& g = p.graph();
  if (layers.size() != sizes.size()) fail(ErrorKind::kInvalidArgument, name + ": layer trace does not match tower");
  if (column >= input_dim) fail(ErrorKind::kInvalidArgument, name + ": tangent column out of range");
  Tensor sel({1, input_dim});
  sel[column] = 1.0;
  NodeId t = ad::matmul(g, g.constant(std::move(sel)), p(weight(0)));  // [1, sizes[0]], broadcasts over the batch
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    if (l > 0) t = ad::matmul(g, t, p(weight(l)));
    const Activation act = l + 1 == sizes.size() ? output : hidden;
    if (act != Activation::kIdentity) t = ad::mul(g, t, activation_slope(g, layers[l], act));
  }
  const std::size_t batch = g.value(layers.back()).rows();
  if (g.value(t).rows() != batch) t = ad::mul(g, t, g.constant(Tensor({batch, 1}, 1.0)));
  return t;
}

void CrossNetwork::init(ParamStore& store, std::mt19937_64& rng) const {
  if (dim == 0) fail(ErrorKind::kInvalidArgument, name + ": zero width");
  for (std::size_t l = 0; l < depth; ++l) {
    store.add(weight(l), glorot_uniform(rng, dim, 1));
    store.add(bias(l), Tensor({1, dim}), false);
  }
}

NodeId CrossNetwork::forward(GraphParams& p, NodeId x0) const {
  Graph& g = p.graph();
  check_width(g, x0, dim, name);
  NodeId x = x0;
  for (std::size_t l = 0; l < depth; ++l) {
    const NodeId s = ad::matmul(g, x, p(weight(l)));  // [batch,1]
    x = ad::add(g, ad::add(g, ad::mul(g, x0, s), p(bias(l))), x);
  }
  return x;
}

void MonotoneTower::init(ParamStore& store, std::mt19937_64& rng) const {
  if (sizes.empty() || mono_dim == 0) fail(ErrorKind::kInvalidArgument, name + ": empty tower");
  if (shared_dim > 0) store.add(shared_weight(), glorot_uniform(rng, shared_dim, sizes[0]));
  std::size_t in = mono_dim;
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    store.add(free_weight(l), free_weight_init(rng, in, sizes[l]));
    store.add(bias(l), Tensor({1, sizes[l]}), false);
    in = sizes[l];
  }
}

NodeId MonotoneTower::forward(GraphParams& p, NodeId shared, NodeId x_s) const {
  Graph& g = p.graph();
  check_width(g, x_s, mono_dim, name);
  NodeId h = ad::add(g, ad::matmul(g, x_s, ad::softplus(g, p(free_weight(0)))), p(bias(0)));
  if (shared_dim > 0) {
    check_width(g, shared, shared_dim, name);
    h = ad::add(g, h, ad::matmul(g, shared, p(shared_weight())));
  }
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    h = activate(g, h, hidden);
    h = ad::add(g, ad::matmul(g, h, ad::softplus(g, p(free_weight(l)))), p(bias(l)));
  }
  return h;
}

NodeId MonotoneTower::forward(GraphParams& p, NodeId x_s) const {
  if (shared_dim > 0) fail(ErrorKind::kInvalidArgument, name + ": shared input required");
  return forward(p, x_s, x_s);
}

void MinMaxNet::init(ParamStore& store, std::mt19937_64& rng) const {
  if (groups == 0 || units == 0 || input_dim == 0) fail(ErrorKind::kInvalidArgument, name + ": empty min-max net");
  store.add(free_weight(), free_weight_init(rng, input_dim, groups * units));
  Tensor b({1, groups * units});
  for (double& v : b.data()) v = uniform01(rng) - 0.5;
  store.add(bias(), std::move(b), false);
}

NodeId MinMaxNet::forward(GraphParams& p, NodeId x_s) const {
  Graph& g = p.graph();
  check_width(g, x_s, input_dim, name);
  const std::size_t batch = g.value(x_s).rows();
  NodeId z = ad::add(g, ad::matmul(g, x_s, ad::softplus(g, p(free_weight()))), p(bias()));  // [batch, K*J]
  z = ad::reshape(g, z, {batch * groups, units});
  z = ad::min_axis(g, z, 1);
  z = ad::reshape(g, z, {batch, groups});
  return ad::max_axis(g, z, 1);
}

void ExpertGate::init(ParamStore& store, std::mt19937_64& rng) const {
  if (n_experts == 0) fail(ErrorKind::kInvalidArgument, name + ": needs at least one expert");
  store.add(weight(), glorot_uniform(rng, input_dim, n_experts));
  store.add(bias(), Tensor({1, n_experts}), false);
}

ExpertGateOutput ExpertGate::forward(GraphParams& p, NodeId gate_input, const std::vector<NodeId>& expert_outputs) const {
  Graph& g = p.graph();
  if (expert_outputs.size() != n_experts) {
    fail(ErrorKind::kShape, name + ": expected " + std::to_string(n_experts) + " experts, got " +
                                std::to_string(expert_outputs.size()));
  }
  check_width(g, gate_input, input_dim, name);
  const NodeId gates = ad::softmax(g, affine(p, gate_input, weight(), bias()));
  NodeId out{};
  for (std::size_t k = 0; k < n_experts; ++k) {
    // Column k of the gates via a one-hot selector.
    Tensor sel({n_experts, 1});
    sel[k] = 1.0;
    const NodeId gk = ad::matmul(g, gates, g.constant(std::move(sel)));
    const NodeId term = ad::mul(g, expert_outputs[k], gk);
    out = k == 0 ? term : ad::add(g, out, term);
  }
  return {out, gates};
}

}  // namespace merit::layers
