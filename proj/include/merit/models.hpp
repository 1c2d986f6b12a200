#pragma once

// MERIT and the multi-task baselines. Every architecture maps a batch of
// encoded impressions to (pCTR, pCVR, pCTCVR) with pCTCVR = pCTR * pCVR.

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merit/datagen.hpp"
#include "merit/layers.hpp"

namespace merit::models {

using ad::Graph;
using ad::NodeId;
using ad::Tensor;
using layers::GraphParams;
using layers::ParamStore;

enum class Architecture { kDnn, kSharedBottom, kMmoe, kCgc, kMerit, kMeritMinMax, kMeritPml };

const char* to_string(Architecture arch);
Architecture architecture_from_string(const std::string& name);
const std::vector<Architecture>& all_architectures();
// MERIT variants with a dedicated merchant tower over the MCI block.
bool has_merchant_tower(Architecture arch);
// Output is non-decreasing in every MCI coordinate for any parameters.
bool structurally_monotone(Architecture arch);

struct ModelSpec {
  Architecture arch = Architecture::kMerit;
  std::vector<std::size_t> tower_sizes{256, 128, 64, 1};
  std::vector<std::size_t> trunk_sizes{256, 128};  // shared bottom and experts
  std::vector<std::size_t> head_sizes{64, 1};      // per-task heads on a trunk
  std::size_t cross_depth = 2;
  std::size_t mmoe_experts = 8;
  std::size_t cgc_shared_experts = 1;
  std::size_t cgc_task_experts = 1;
  std::vector<std::size_t> monotone_sizes{64, 32, 1};
  std::size_t minmax_groups = 10;
  std::size_t minmax_units = 10;
  double dropout = 0.3;
  std::shared_ptr<const FeatureSchema> schema;

  void validate() const;
  void validate_structure() const;  // everything except the schema
  // The schema is not part of the JSON; it travels separately. A null schema
  // skips the schema check.
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& doc, std::shared_ptr<const FeatureSchema> schema);
};

// Column-major view of a set of impressions, ready for a forward pass.
struct Batch {
  std::vector<std::vector<std::size_t>> fields;  // [field][row]
  Tensor mci;                                    // [rows, 9] oriented MCI
  std::size_t rows = 0;
};

Batch make_batch(const FeatureSchema& schema, const std::vector<const Impression*>& impressions);
Batch make_batch(const Dataset& dataset, std::size_t begin, std::size_t end);

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout masks; required when training
  bool mci_variable = false;       // bind the MCI block as a variable leaf so backward() reports d/dx_s
  bool mci_tangents = false;       // MERIT_PML only: build d pCTCVR / d x_s in-graph
};

struct Outputs {
  NodeId mci;
  NodeId ctr_logit;
  NodeId cvr_logit;
  NodeId pctr;
  NodeId pcvr;
  NodeId pctcvr;
  std::vector<NodeId> score_tangents;  // kMciDim nodes [rows,1] when mci_tangents
};

struct Predictions {
  std::vector<double> pctr;
  std::vector<double> pcvr;
  std::vector<double> pctcvr;
};

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed);
  Model(ModelSpec spec, ParamStore params);  // validated against the spec

  const ModelSpec& spec() const { return spec_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }
  std::size_t embedding_width() const { return embedding_width_; }

  Outputs forward(GraphParams& p, const Batch& batch, const ForwardOptions& options = {}) const;
  // Inference over [begin, end) in chunks; threads split chunks, output order fixed.
  Predictions predict(const Dataset& dataset, std::size_t threads = 1, std::size_t chunk = 2048) const;
  Predictions predict(const Batch& batch) const;

 private:
  void build();
  NodeId embed(GraphParams& p, const Batch& batch) const;
  std::array<NodeId, 2> merit_logits(GraphParams& p, NodeId e, NodeId x_s, const ForwardOptions& o,
                                     std::vector<NodeId>* tangents_ctr, std::vector<NodeId>* tangents_cvr) const;
  std::array<NodeId, 2> baseline_logits(GraphParams& p, NodeId e, NodeId x_s, const ForwardOptions& o) const;

  ModelSpec spec_;
  ParamStore params_;
  std::size_t embedding_width_ = 0;
  std::vector<layers::EmbeddingTable> embeddings_;
  std::vector<layers::CrossNetwork> cross_;        // ctr, cvr
  std::vector<layers::MlpTower> towers_;           // psi / DNN towers: ctr, cvr
  std::vector<layers::MonotoneTower> monotone_;    // ctr, cvr
  std::vector<layers::MinMaxNet> minmax_;          // ctr, cvr
  std::vector<layers::MlpTower> merchant_mlp_;     // MERIT_PML: ctr, cvr
  std::vector<layers::MlpTower> experts_;          // trunk(s)
  std::vector<layers::ExpertGate> gates_;          // ctr, cvr
  std::vector<layers::MlpTower> heads_;            // ctr, cvr
};

// Checkpoint: version line, spec JSON, schema JSON, then one line per
// parameter with its shape and hex-float values (exact round trip).
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace merit::models
