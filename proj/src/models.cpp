#include "merit/models.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "merit/error.hpp"
#include "merit/parallel.hpp"
#include "merit/rng.hpp"

namespace merit::models {

namespace {

using layers::Activation;

constexpr const char* kCheckpointHeader = "# merit-checkpoint v1";

struct ArchName {
  Architecture arch;
  const char* name;
};

constexpr ArchName kArchNames[] = {
    {Architecture::kDnn, "DNN"},
    {Architecture::kSharedBottom, "SharedBottom"},
    {Architecture::kMmoe, "MMoE"},
    {Architecture::kCgc, "CGC"},
    {Architecture::kMerit, "MERIT"},
    {Architecture::kMeritMinMax, "MERIT_MINMAX"},
    {Architecture::kMeritPml, "MERIT_PML"},
};

void require_sizes(const std::vector<std::size_t>& sizes, const char* what, bool scalar_out) {
  if (sizes.empty()) fail(ErrorKind::kInvalidArgument, std::string("model spec: ") + what + " is empty");
  for (std::size_t s : sizes) {
    if (s == 0) fail(ErrorKind::kInvalidArgument, std::string("model spec: ") + what + " has a zero-width layer");
  }
  if (scalar_out && sizes.back() != 1) {
    fail(ErrorKind::kInvalidArgument, std::string("model spec: ") + what + " must end in a single unit");
  }
}

const char* task_name(std::size_t t) { return t == 0 ? "ctr" : "cvr"; }

}  // namespace

const char* to_string(Architecture arch) {
  for (const ArchName& a : kArchNames) {
    if (a.arch == arch) return a.name;
  }
  return "?";
}

Architecture architecture_from_string(const std::string& name) {
  for (const ArchName& a : kArchNames) {
    if (name == a.name) return a.arch;
  }
  fail(ErrorKind::kInvalidArgument, "unknown architecture '" + name + "'");
}

const std::vector<Architecture>& all_architectures() {
  static const std::vector<Architecture> all = [] {
    std::vector<Architecture> v;
    for (const ArchName& a : kArchNames) v.push_back(a.arch);
    return v;
  }();
  return all;
}

bool has_merchant_tower(Architecture arch) {
  return arch == Architecture::kMerit || arch == Architecture::kMeritMinMax || arch == Architecture::kMeritPml;
}

bool structurally_monotone(Architecture arch) {
  return arch == Architecture::kMerit || arch == Architecture::kMeritMinMax;
}

void ModelSpec::validate() const {
  if (!schema) fail(ErrorKind::kInvalidArgument, "model spec: missing feature schema");
  validate_structure();
}

void ModelSpec::validate_structure() const {
  if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorKind::kInvalidArgument, "model spec: dropout must be in [0,1)");
  switch (arch) {
    case Architecture::kDnn: require_sizes(tower_sizes, "tower_sizes", true); break;
    case Architecture::kSharedBottom:
    case Architecture::kMmoe:
    case Architecture::kCgc:
      require_sizes(trunk_sizes, "trunk_sizes", false);
      require_sizes(head_sizes, "head_sizes", true);
      if (arch == Architecture::kMmoe && mmoe_experts == 0) fail(ErrorKind::kInvalidArgument, "model spec: MMoE needs experts");
      if (arch == Architecture::kCgc && cgc_shared_experts + cgc_task_experts == 0) {
        fail(ErrorKind::kInvalidArgument, "model spec: CGC needs experts");
      }
      break;
    case Architecture::kMerit:
    case Architecture::kMeritMinMax:
    case Architecture::kMeritPml:
      require_sizes(tower_sizes, "tower_sizes", true);
      if (cross_depth == 0) fail(ErrorKind::kInvalidArgument, "model spec: cross_depth must be >= 1");
      if (arch == Architecture::kMeritMinMax) {
        if (minmax_groups == 0 || minmax_units == 0) fail(ErrorKind::kInvalidArgument, "model spec: empty min-max net");
      } else {
        require_sizes(monotone_sizes, "monotone_sizes", true);
      }
      break;
  }
}

nlohmann::json ModelSpec::to_json() const {
  return {
      {"arch", to_string(arch)},
      {"tower_sizes", tower_sizes},
      {"trunk_sizes", trunk_sizes},
      {"head_sizes", head_sizes},
      {"cross_depth", cross_depth},
      {"mmoe_experts", mmoe_experts},
      {"cgc_shared_experts", cgc_shared_experts},
      {"cgc_task_experts", cgc_task_experts},
      {"monotone_sizes", monotone_sizes},
      {"minmax_groups", minmax_groups},
      {"minmax_units", minmax_units},
      {"dropout", dropout},
  };
}

ModelSpec ModelSpec::from_json(const nlohmann::json& doc, std::shared_ptr<const FeatureSchema> schema) {
  ModelSpec s;
  try {
    if (!doc.is_object()) fail(ErrorKind::kSchema, "model spec: expected a JSON object");
    for (const auto& [key, _] : doc.items()) {
      static const char* known[] = {"arch", "tower_sizes", "trunk_sizes", "head_sizes", "cross_depth", "mmoe_experts",
                                    "cgc_shared_experts", "cgc_task_experts", "monotone_sizes", "minmax_groups",
                                    "minmax_units", "dropout"};
      if (std::none_of(std::begin(known), std::end(known), [&](const char* k) { return key == k; })) {
        fail(ErrorKind::kSchema, "model spec: unknown key '" + key + "'");
      }
    }
    if (doc.contains("arch")) s.arch = architecture_from_string(doc.at("arch").get<std::string>());
    auto get = [&](const char* key, auto& field) {
      if (doc.contains(key)) doc.at(key).get_to(field);
    };
    get("tower_sizes", s.tower_sizes);
    get("trunk_sizes", s.trunk_sizes);
    get("head_sizes", s.head_sizes);
    get("cross_depth", s.cross_depth);
    get("mmoe_experts", s.mmoe_experts);
    get("cgc_shared_experts", s.cgc_shared_experts);
    get("cgc_task_experts", s.cgc_task_experts);
    get("monotone_sizes", s.monotone_sizes);
    get("minmax_groups", s.minmax_groups);
    get("minmax_units", s.minmax_units);
    get("dropout", s.dropout);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kSchema, std::string("model spec: ") + e.what());
  }
  s.schema = std::move(schema);
  if (s.schema) {
    s.validate();
  } else {
    s.validate_structure();
  }
  return s;
}

Batch make_batch(const FeatureSchema& schema, const std::vector<const Impression*>& impressions) {
  const std::size_t n_fields = schema.fields().size();
  Batch b;
  b.rows = impressions.size();
  b.fields.assign(n_fields, std::vector<std::size_t>(b.rows));
  b.mci = Tensor({b.rows, kMciDim});
  for (std::size_t r = 0; r < b.rows; ++r) {
    const EncodedFeatures& e = impressions[r]->encoded;
    if (e.indices.size() != n_fields) {
      fail(ErrorKind::kSchema, "batch: impression has " + std::to_string(e.indices.size()) + " fields, schema has " +
                                   std::to_string(n_fields));
    }
    for (std::size_t f = 0; f < n_fields; ++f) b.fields[f][r] = e.indices[f];
    for (std::size_t k = 0; k < kMciDim; ++k) b.mci.at(r, k) = e.mci[k];
  }
  return b;
}

Batch make_batch(const Dataset& dataset, std::size_t begin, std::size_t end) {
  if (!dataset.schema) fail(ErrorKind::kInvalidArgument, "batch: dataset has no schema");
  if (begin > end || end > dataset.size()) fail(ErrorKind::kInvalidArgument, "batch: range out of bounds");
  std::vector<const Impression*> rows;
  rows.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) rows.push_back(&dataset.impressions[i]);
  return make_batch(*dataset.schema, rows);
}

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  build();
  std::mt19937_64 rng = rng_stream(seed, 0x6d6f64656cULL);
  for (const auto& t : embeddings_) t.init(params_, rng);
  for (const auto& t : cross_) t.init(params_, rng);
  for (const auto& t : towers_) t.init(params_, rng);
  for (const auto& t : monotone_) t.init(params_, rng);
  for (const auto& t : minmax_) t.init(params_, rng);
  for (const auto& t : merchant_mlp_) t.init(params_, rng);
  for (const auto& t : experts_) t.init(params_, rng);
  for (const auto& t : gates_) t.init(params_, rng);
  for (const auto& t : heads_) t.init(params_, rng);
}

Model::Model(ModelSpec spec, ParamStore params) : Model(std::move(spec), 0) {
  if (params.size() != params_.size()) {
    fail(ErrorKind::kSchema, "checkpoint has " + std::to_string(params.size()) + " parameters, model expects " +
                                 std::to_string(params_.size()));
  }
  for (const auto& expected : params_.entries()) {
    if (!params.contains(expected.name)) fail(ErrorKind::kSchema, "checkpoint is missing parameter '" + expected.name + "'");
    const Tensor& got = params.get(expected.name);
    if (got.shape() != expected.value.shape()) {
      fail(ErrorKind::kSchema, "parameter '" + expected.name + "' has shape " + ad::to_string(got.shape()) +
                                   ", expected " + ad::to_string(expected.value.shape()));
    }
  }
  for (auto& entry : params_.entries()) entry.value = params.get(entry.name);
}

void Model::build() {
  spec_.validate();
  const FeatureSchema& schema = *spec_.schema;
  embedding_width_ = 0;
  for (const FieldSpec& f : schema.fields()) {
    const std::size_t dim = FeatureSchema::embedding_dim(f.group);
    embeddings_.push_back({"emb." + f.name, f.cardinality(), dim});
    embedding_width_ += dim;
  }
  const std::size_t d = embedding_width_;
  const std::size_t joint = d + kMciDim;
  const double rate = spec_.dropout;
  auto trunk = [&](std::string name) {
    return layers::MlpTower{std::move(name), joint, spec_.trunk_sizes, Activation::kRelu, Activation::kRelu, rate};
  };
  const std::size_t trunk_out = spec_.trunk_sizes.empty() ? 0 : spec_.trunk_sizes.back();

  for (std::size_t t = 0; t < 2; ++t) {
    const std::string task = task_name(t);
    switch (spec_.arch) {
      case Architecture::kDnn:
        towers_.push_back({"tower." + task, joint, spec_.tower_sizes, Activation::kRelu, Activation::kIdentity, rate});
        break;
      case Architecture::kSharedBottom:
      case Architecture::kMmoe:
      case Architecture::kCgc:
        heads_.push_back({"head." + task, trunk_out, spec_.head_sizes, Activation::kRelu, Activation::kIdentity, rate});
        break;
      case Architecture::kMerit:
      case Architecture::kMeritMinMax:
      case Architecture::kMeritPml:
        cross_.push_back({"dcn." + task, d, spec_.cross_depth});
        towers_.push_back({"psi." + task, d, spec_.tower_sizes, Activation::kRelu, Activation::kIdentity, rate});
        if (spec_.arch == Architecture::kMerit) {
          monotone_.push_back({"phi." + task, d, kMciDim, spec_.monotone_sizes, Activation::kTanh});
        } else if (spec_.arch == Architecture::kMeritMinMax) {
          minmax_.push_back({"phi." + task, kMciDim, spec_.minmax_groups, spec_.minmax_units});
        } else {
          merchant_mlp_.push_back(
              {"phi." + task, joint, spec_.monotone_sizes, Activation::kTanh, Activation::kIdentity, 0.0});
        }
        break;
    }
  }

  switch (spec_.arch) {
    case Architecture::kSharedBottom: experts_.push_back(trunk("trunk")); break;
    case Architecture::kMmoe:
      for (std::size_t k = 0; k < spec_.mmoe_experts; ++k) experts_.push_back(trunk("expert." + std::to_string(k)));
      for (std::size_t t = 0; t < 2; ++t) gates_.push_back({std::string("gate.") + task_name(t), joint, spec_.mmoe_experts});
      break;
    case Architecture::kCgc:
      for (std::size_t k = 0; k < spec_.cgc_shared_experts; ++k) experts_.push_back(trunk("expert.shared." + std::to_string(k)));
      for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t k = 0; k < spec_.cgc_task_experts; ++k) {
          experts_.push_back(trunk(std::string("expert.") + task_name(t) + "." + std::to_string(k)));
        }
      }
      for (std::size_t t = 0; t < 2; ++t) {
        gates_.push_back({std::string("gate.") + task_name(t), joint, spec_.cgc_shared_experts + spec_.cgc_task_experts});
      }
      break;
    default: break;
  }
}

NodeId Model::embed(GraphParams& p, const Batch& batch) const {
  if (batch.fields.size() != embeddings_.size()) {
    fail(ErrorKind::kSchema, "batch has " + std::to_string(batch.fields.size()) + " fields, model expects " +
                                 std::to_string(embeddings_.size()));
  }
  std::vector<NodeId> parts;
  parts.reserve(embeddings_.size());
  for (std::size_t f = 0; f < embeddings_.size(); ++f) parts.push_back(embeddings_[f].lookup(p, batch.fields[f]));
  return ad::concat(p.graph(), parts);
}

std::array<NodeId, 2> Model::merit_logits(GraphParams& p, NodeId e, NodeId x_s, const ForwardOptions& o,
                                          std::vector<NodeId>* tangents_ctr, std::vector<NodeId>* tangents_cvr) const {
  Graph& g = p.graph();
  std::array<NodeId, 2> logits;
  for (std::size_t t = 0; t < 2; ++t) {
    const NodeId shared = cross_[t].forward(p, e);
    const NodeId psi = towers_[t].forward(p, shared, o.training, o.rng);
    NodeId phi;
    if (!monotone_.empty()) {
      phi = monotone_[t].forward(p, shared, x_s);
    } else if (!minmax_.empty()) {
      phi = minmax_[t].forward(p, x_s);
    } else {
      const std::array parts{shared, x_s};
      const std::vector<NodeId> trace = merchant_mlp_[t].forward_layers(p, ad::concat(g, parts));
      phi = trace.back();
      std::vector<NodeId>* tangents = t == 0 ? tangents_ctr : tangents_cvr;
      if (tangents != nullptr) {
        for (std::size_t k = 0; k < kMciDim; ++k) {
          tangents->push_back(merchant_mlp_[t].input_tangent(p, trace, embedding_width_ + k));
        }
      }
    }
    logits[t] = ad::add(g, phi, psi);
  }
  return logits;
}

std::array<NodeId, 2> Model::baseline_logits(GraphParams& p, NodeId e, NodeId x_s, const ForwardOptions& o) const {
  Graph& g = p.graph();
  const std::array parts{e, x_s};
  const NodeId joint = ad::concat(g, parts);
  std::array<NodeId, 2> logits;
  switch (spec_.arch) {
    case Architecture::kDnn:
      for (std::size_t t = 0; t < 2; ++t) logits[t] = towers_[t].forward(p, joint, o.training, o.rng);
      break;
    case Architecture::kSharedBottom: {
      const NodeId bottom = experts_[0].forward(p, joint, o.training, o.rng);
      for (std::size_t t = 0; t < 2; ++t) logits[t] = heads_[t].forward(p, bottom, o.training, o.rng);
      break;
    }
    case Architecture::kMmoe: {
      std::vector<NodeId> outs;
      for (const auto& ex : experts_) outs.push_back(ex.forward(p, joint, o.training, o.rng));
      for (std::size_t t = 0; t < 2; ++t) {
        const NodeId mixed = gates_[t].forward(p, joint, outs).output;
        logits[t] = heads_[t].forward(p, mixed, o.training, o.rng);
      }
      break;
    }
    case Architecture::kCgc: {
      std::vector<NodeId> outs;
      for (const auto& ex : experts_) outs.push_back(ex.forward(p, joint, o.training, o.rng));
      const std::size_t s = spec_.cgc_shared_experts;
      const std::size_t k = spec_.cgc_task_experts;
      for (std::size_t t = 0; t < 2; ++t) {
        std::vector<NodeId> mine(outs.begin(), outs.begin() + static_cast<std::ptrdiff_t>(s));
        mine.insert(mine.end(), outs.begin() + static_cast<std::ptrdiff_t>(s + t * k),
                    outs.begin() + static_cast<std::ptrdiff_t>(s + (t + 1) * k));
        const NodeId mixed = gates_[t].forward(p, joint, mine).output;
        logits[t] = heads_[t].forward(p, mixed, o.training, o.rng);
      }
      break;
    }
    default: fail(ErrorKind::kInvalidArgument, "baseline_logits called for a MERIT architecture");
  }
  return logits;
}

Outputs Model::forward(GraphParams& p, const Batch& batch, const ForwardOptions& options) const {
  Graph& g = p.graph();
  if (batch.rows == 0) fail(ErrorKind::kInvalidArgument, "forward: empty batch");
  if (options.training && spec_.dropout > 0.0 && options.rng == nullptr) {
    fail(ErrorKind::kInvalidArgument, "forward: training needs a dropout rng");
  }
  if (options.mci_tangents && spec_.arch != Architecture::kMeritPml) {
    fail(ErrorKind::kInvalidArgument, "forward: in-graph MCI tangents are only built for MERIT_PML");
  }
  Outputs out;
  out.mci = options.mci_variable ? g.variable(batch.mci) : g.constant(batch.mci);
  const NodeId e = embed(p, batch);
  std::array<NodeId, 2> logits;
  std::vector<NodeId> dctr;
  std::vector<NodeId> dcvr;
  if (has_merchant_tower(spec_.arch)) {
    logits = merit_logits(p, e, out.mci, options, options.mci_tangents ? &dctr : nullptr,
                          options.mci_tangents ? &dcvr : nullptr);
  } else {
    logits = baseline_logits(p, e, out.mci, options);
  }
  out.ctr_logit = logits[0];
  out.cvr_logit = logits[1];
  out.pctr = ad::sigmoid(g, logits[0]);
  out.pcvr = ad::sigmoid(g, logits[1]);
  out.pctcvr = ad::mul(g, out.pctr, out.pcvr);
  if (options.mci_tangents) {
    // d(pctr * pcvr) = pcvr * pctr (1 - pctr) dphi_ctr + pctr * pcvr (1 - pcvr) dphi_cvr
    const NodeId a = ad::mul(g, out.pctcvr, ad::add_scalar(g, ad::neg(g, out.pctr), 1.0));
    const NodeId b = ad::mul(g, out.pctcvr, ad::add_scalar(g, ad::neg(g, out.pcvr), 1.0));
    for (std::size_t k = 0; k < kMciDim; ++k) {
      out.score_tangents.push_back(ad::add(g, ad::mul(g, a, dctr[k]), ad::mul(g, b, dcvr[k])));
    }
  }
  return out;
}

Predictions Model::predict(const Batch& batch) const {
  Graph g;
  GraphParams p(g, params_);
  const Outputs out = forward(p, batch);
  Predictions pred;
  const auto copy = [&](NodeId id, std::vector<double>& dst) {
    const auto v = g.value(id).data();
    dst.assign(v.begin(), v.end());
  };
  copy(out.pctr, pred.pctr);
  copy(out.pcvr, pred.pcvr);
  copy(out.pctcvr, pred.pctcvr);
  return pred;
}

Predictions Model::predict(const Dataset& dataset, std::size_t threads, std::size_t chunk) const {
  if (chunk == 0) fail(ErrorKind::kInvalidArgument, "predict: chunk must be positive");
  const std::size_t n = dataset.size();
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  std::vector<Predictions> parts(n_chunks);
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    parts[c] = predict(make_batch(dataset, c * chunk, std::min(n, (c + 1) * chunk)));
  });
  Predictions all;
  for (auto& part : parts) {
    all.pctr.insert(all.pctr.end(), part.pctr.begin(), part.pctr.end());
    all.pcvr.insert(all.pcvr.end(), part.pcvr.begin(), part.pcvr.end());
    all.pctcvr.insert(all.pctcvr.end(), part.pctcvr.begin(), part.pctcvr.end());
  }
  return all;
}

namespace {

std::string hex_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

double parse_hex_double(const std::string& token, std::size_t line) {
  double v = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  const auto res = std::from_chars(first, last, v, std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != last) {
    fail(ErrorKind::kParse, "checkpoint line " + std::to_string(line) + ": bad value '" + token + "'");
  }
  return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write checkpoint " + path.string());
  out << kCheckpointHeader << '\n';
  out << "spec " << model.spec().to_json().dump() << '\n';
  out << "schema " << model.spec().schema->to_json().dump() << '\n';
  out << "params " << model.params().size() << '\n';
  for (const auto& e : model.params().entries()) {
    out << e.name << ' ' << (e.decay ? 1 : 0) << ' ' << e.value.rank();
    for (std::size_t d : e.value.shape()) out << ' ' << d;
    for (double v : e.value.data()) out << ' ' << hex_double(v);
    out << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read checkpoint " + path.string());
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) fail(ErrorKind::kParse, std::string("checkpoint truncated before ") + what);
    ++line_no;
  };
  auto payload = [&](const std::string& key) {
    if (line.rfind(key + " ", 0) != 0) {
      fail(ErrorKind::kParse, "checkpoint line " + std::to_string(line_no) + ": expected '" + key + "'");
    }
    return line.substr(key.size() + 1);
  };
  next("header");
  if (line != kCheckpointHeader) fail(ErrorKind::kParse, "not a merit checkpoint (bad header): " + path.string());

  nlohmann::json spec_doc;
  nlohmann::json schema_doc;
  try {
    next("spec");
    spec_doc = nlohmann::json::parse(payload("spec"));
    next("schema");
    schema_doc = nlohmann::json::parse(payload("schema"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, "checkpoint line " + std::to_string(line_no) + ": " + e.what());
  }
  auto schema = std::make_shared<const FeatureSchema>(FeatureSchema::from_json(schema_doc));
  ModelSpec spec = ModelSpec::from_json(spec_doc, schema);

  next("params");
  std::size_t count = 0;
  {
    std::istringstream ss(payload("params"));
    if (!(ss >> count)) fail(ErrorKind::kParse, "checkpoint line " + std::to_string(line_no) + ": bad parameter count");
  }
  ParamStore store;
  for (std::size_t i = 0; i < count; ++i) {
    next("all parameters were read");
    std::istringstream ss(line);
    std::string name;
    int decay = 0;
    std::size_t rank = 0;
    if (!(ss >> name >> decay >> rank) || rank == 0 || rank > 2) {
      fail(ErrorKind::kParse, "checkpoint line " + std::to_string(line_no) + ": bad parameter header");
    }
    ad::Shape shape(rank);
    for (auto& d : shape) {
      if (!(ss >> d)) fail(ErrorKind::kParse, "checkpoint line " + std::to_string(line_no) + ": bad shape");
    }
    std::vector<double> values(ad::numel(shape));
    std::string token;
    for (double& v : values) {
      if (!(ss >> token)) fail(ErrorKind::kParse, "checkpoint line " + std::to_string(line_no) + ": too few values");
      v = parse_hex_double(token, line_no);
    }
    if (ss >> token) fail(ErrorKind::kParse, "checkpoint line " + std::to_string(line_no) + ": too many values");
    store.add(name, Tensor(std::move(shape), std::move(values)), decay != 0);
  }
  return Model(std::move(spec), std::move(store));
}

}  // namespace merit::models
