#pragma once

// Parameter storage and the neural blocks the models are assembled from.
// Layers only hold names and sizes; their weights live in a ParamStore and
// are bound into a fresh Graph for each forward pass.

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "merit/autodiff.hpp"

namespace merit::layers {

using ad::Graph;
using ad::NodeId;
using ad::Tensor;

struct ParamEntry {
  std::string name;
  Tensor value;
  bool decay = true;  // receives L2 regularization
};

class ParamStore {
 public:
  void add(std::string name, Tensor value, bool decay = true);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const;
  const Tensor& get(const std::string& name) const { return entries_[index_of(name)].value; }
  Tensor& get(const std::string& name) { return entries_[index_of(name)].value; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline bool operator==(const ParamEntry& a, const ParamEntry& b) {
  return a.name == b.name && a.value == b.value && a.decay == b.decay;
}

// Binds store entries into a graph on first use. The bound list maps store
// indices to graph leaves so gradients can be routed back by name.
class GraphParams {
 public:
  GraphParams(Graph& graph, const ParamStore& store) : graph_(graph), store_(store) {}

  NodeId operator()(const std::string& name);
  Graph& graph() { return graph_; }
  const ParamStore& store() const { return store_; }
  const std::vector<std::pair<std::size_t, NodeId>>& bound() const { return bound_; }

 private:
  Graph& graph_;
  const ParamStore& store_;
  std::unordered_map<std::size_t, NodeId> nodes_;
  std::vector<std::pair<std::size_t, NodeId>> bound_;
};

// uniform(+-sqrt(6 / (fan_in + fan_out)))
Tensor glorot_uniform(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out);

enum class Activation { kIdentity, kRelu, kTanh, kSigmoid };

NodeId activate(Graph& g, NodeId x, Activation act);

// Inverted dropout; the mask is drawn from `rng`, so a fixed seed fixes it.
NodeId dropout(Graph& g, NodeId x, double rate, std::mt19937_64& rng);

struct EmbeddingTable {
  std::string name;
  std::size_t vocab = 0;
  std::size_t dim = 0;

  void init(ParamStore& store, std::mt19937_64& rng) const;
  NodeId lookup(GraphParams& p, const std::vector<std::size_t>& indices) const;
};

struct MlpTower {
  std::string name;
  std::size_t input_dim = 0;
  std::vector<std::size_t> sizes{256, 128, 64, 1};
  Activation hidden = Activation::kRelu;
  Activation output = Activation::kIdentity;
  double dropout = 0.3;  // after every layer but the last, training only

  std::size_t output_dim() const { return sizes.back(); }
  std::string weight(std::size_t layer) const { return name + ".l" + std::to_string(layer) + ".w"; }
  std::string bias(std::size_t layer) const { return name + ".l" + std::to_string(layer) + ".b"; }

  void init(ParamStore& store, std::mt19937_64& rng) const;
  // `rng` is required when training with a nonzero rate.
  NodeId forward(GraphParams& p, NodeId x, bool training, std::mt19937_64* rng = nullptr) const;

  // Inference forward that keeps each layer's post-activation node.
  std::vector<NodeId> forward_layers(GraphParams& p, NodeId x) const;
  // d output / d input[:, column] as a graph expression ([batch, output_dim]),
  // built by pushing a tangent through the layers recorded above. Stays
  // differentiable, so penalties on it can be trained.
  NodeId input_tangent(GraphParams& p, const std::vector<NodeId>& layers, std::size_t column) const;
};

struct CrossNetwork {
  std::string name;
  std::size_t dim = 0;
  std::size_t depth = 2;

  std::string weight(std::size_t layer) const { return name + ".l" + std::to_string(layer) + ".w"; }
  std::string bias(std::size_t layer) const { return name + ".l" + std::to_string(layer) + ".b"; }

  void init(ParamStore& store, std::mt19937_64& rng) const;
  // x_{l+1} = x_0 (x_l . w_l) + b_l + x_l
  NodeId forward(GraphParams& p, NodeId x0) const;
};

// Output is non-decreasing in every x_s coordinate: the x_s block and every
// later layer use softplus(V) weights, and activations are monotone. The
// shared representation enters the first layer only, unconstrained.
struct MonotoneTower {
  std::string name;
  std::size_t shared_dim = 0;  // may be 0
  std::size_t mono_dim = 9;
  std::vector<std::size_t> sizes{64, 32, 1};
  Activation hidden = Activation::kTanh;

  std::string free_weight(std::size_t layer) const { return name + ".l" + std::to_string(layer) + ".v"; }
  std::string shared_weight() const { return name + ".l0.we"; }
  std::string bias(std::size_t layer) const { return name + ".l" + std::to_string(layer) + ".b"; }

  void init(ParamStore& store, std::mt19937_64& rng) const;
  NodeId forward(GraphParams& p, NodeId shared, NodeId x_s) const;
  NodeId forward(GraphParams& p, NodeId x_s) const;  // shared_dim == 0
};

// max over groups of min over positive-weight linear units.
struct MinMaxNet {
  std::string name;
  std::size_t input_dim = 9;
  std::size_t groups = 10;
  std::size_t units = 10;

  std::string free_weight() const { return name + ".v"; }
  std::string bias() const { return name + ".b"; }

  void init(ParamStore& store, std::mt19937_64& rng) const;
  NodeId forward(GraphParams& p, NodeId x_s) const;
};

struct ExpertGateOutput {
  NodeId output;
  NodeId gates;  // [batch, n_experts], rows sum to 1
};

// Softmax-gated mixture of expert towers. Experts are evaluated by the
// caller (they may be shared across gates) and passed in as outputs.
struct ExpertGate {
  std::string name;
  std::size_t input_dim = 0;
  std::size_t n_experts = 1;

  std::string weight() const { return name + ".w"; }
  std::string bias() const { return name + ".b"; }

  void init(ParamStore& store, std::mt19937_64& rng) const;
  ExpertGateOutput forward(GraphParams& p, NodeId gate_input, const std::vector<NodeId>& expert_outputs) const;
};

}  // namespace merit::layers
