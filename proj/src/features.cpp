#include "merit/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "merit/error.hpp"

namespace merit {

namespace {

void check_fraction(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    fail(ErrorKind::kInvalidArgument, std::string("orient_mci: ") + name + " must lie in [0,1], got " + std::to_string(v));
  }
}

FieldKind parse_kind(const std::string& s) {
  if (s == "categorical") return FieldKind::kCategorical;
  if (s == "continuous") return FieldKind::kContinuous;
  fail(ErrorKind::kSchema, "unknown field kind '" + s + "'");
}

FieldGroup parse_group(const std::string& s) {
  if (s == "profile") return FieldGroup::kProfile;
  if (s == "behavior") return FieldGroup::kBehavior;
  if (s == "context") return FieldGroup::kContext;
  if (s == "query") return FieldGroup::kQuery;
  if (s == "hotel") return FieldGroup::kHotel;
  fail(ErrorKind::kSchema, "unknown field group '" + s + "'");
}

}  // namespace

MciWeights uniform_mci_weights() {
  MciWeights w;
  w.fill(1.0 / static_cast<double>(kMciDim));
  return w;
}

OrientedMci orient_mci(const MciFactors& raw, const MciNormalizers& normalizers) {
  require(normalizers.gmv > 0.0 && normalizers.online_inventory > 0.0, ErrorKind::kInvalidArgument,
          "orient_mci: normalizers must be positive");
  check_fraction(raw.inventory_to_sales_ratio, "inventory_to_sales_ratio");
  check_fraction(raw.historical_cvr, "historical_cvr");
  check_fraction(raw.hot_selling_room_ratio, "hot_selling_room_ratio");
  check_fraction(raw.service_refusal_rate, "service_refusal_rate");
  check_fraction(raw.order_refusal_rate, "order_refusal_rate");
  check_fraction(raw.picture_quality, "picture_quality");
  check_fraction(raw.info_completeness, "info_completeness");
  require(raw.gmv >= 0.0 && raw.online_inventory >= 0.0, ErrorKind::kInvalidArgument,
          "orient_mci: gmv and online_inventory must be non-negative");

  OrientedMci out;
  out[0] = raw.inventory_to_sales_ratio;
  out[1] = std::min(raw.gmv / normalizers.gmv, 1.0);
  out[2] = raw.historical_cvr;
  out[3] = std::min(raw.online_inventory / normalizers.online_inventory, 1.0);
  out[4] = raw.hot_selling_room_ratio;
  out[5] = 1.0 - raw.service_refusal_rate;
  out[6] = 1.0 - raw.order_refusal_rate;
  out[7] = raw.picture_quality;
  out[8] = raw.info_completeness;
  return out;
}

double compute_mci(const OrientedMci& oriented, const MciWeights& weights) {
  double total = 0.0;
  for (double w : weights) {
    require(std::isfinite(w) && w >= 0.0, ErrorKind::kInvalidArgument, "compute_mci: weights must be finite and >= 0");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-9, ErrorKind::kInvalidArgument, "compute_mci: weights must sum to 1");
  double score = 0.0;
  for (std::size_t k = 0; k < kMciDim; ++k) score += weights[k] * oriented[k];
  return std::clamp(5.0 * score, 0.0, 5.0);
}

double mci_level(double score, bool has_ratings) {
  require(score >= 0.0 && score <= 5.0, ErrorKind::kInvalidArgument, "mci_level: score must lie in [0,5]");
  if (!has_ratings) return 0.0;
  return std::max(0.5, std::round(score * 2.0) / 2.0);
}

QuantileBins quantile_discretize(std::span<const double> values, std::size_t n_bins) {
  require(n_bins >= 2, ErrorKind::kInvalidArgument, "quantile_discretize: n_bins must be >= 2");
  require(!values.empty(), ErrorKind::kInvalidArgument, "quantile_discretize: no values");
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) require(std::isfinite(v), ErrorKind::kInvalidArgument, "quantile_discretize: non-finite value");
  std::sort(sorted.begin(), sorted.end());

  QuantileBins bins;
  if (sorted.front() == sorted.back()) {
    bins.warning = "all values identical; using a single bin";
    return bins;
  }
  const double last = static_cast<double>(sorted.size() - 1);
  for (std::size_t k = 1; k < n_bins; ++k) {
    const double h = last * static_cast<double>(k) / static_cast<double>(n_bins);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double edge = sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    // An edge at the minimum would leave bin 0 empty.
    if (edge <= sorted.front()) continue;
    if (bins.edges.empty() || edge > bins.edges.back()) bins.edges.push_back(edge);
  }
  if (bins.edges.empty()) bins.warning = "quantiles collapsed; using a single bin";
  return bins;
}

std::uint32_t bin_index(std::span<const double> edges, double value) {
  return static_cast<std::uint32_t>(std::upper_bound(edges.begin(), edges.end(), value) - edges.begin());
}

const char* to_string(FieldKind kind) {
  return kind == FieldKind::kCategorical ? "categorical" : "continuous";
}

const char* to_string(FieldGroup group) {
  switch (group) {
    case FieldGroup::kProfile: return "profile";
    case FieldGroup::kBehavior: return "behavior";
    case FieldGroup::kContext: return "context";
    case FieldGroup::kQuery: return "query";
    case FieldGroup::kHotel: return "hotel";
  }
  return "unknown";
}

std::size_t FieldSpec::cardinality() const {
  return kind == FieldKind::kCategorical ? vocabulary.size() + 1 : edges.size() + 1;
}

FeatureSchema::FeatureSchema(std::vector<FieldSpec> fields, MciNormalizers normalizers, MciWeights weights)
    : fields_(std::move(fields)), normalizers_(normalizers), weights_(weights) {
  // Validates the weights.
  compute_mci(OrientedMci{}, weights_);
  require(normalizers_.gmv > 0 && normalizers_.online_inventory > 0, ErrorKind::kSchema,
          "schema: normalizers must be positive");
  for (const FieldSpec& f : fields_) {
    require(!f.name.empty(), ErrorKind::kSchema, "schema: empty field name");
    for (std::size_t i = 1; i < f.edges.size(); ++i) {
      require(f.edges[i] > f.edges[i - 1], ErrorKind::kSchema, "schema: bin edges of '" + f.name + "' not strictly increasing");
    }
    if (f.kind == FieldKind::kCategorical) {
      require(f.edges.empty(), ErrorKind::kSchema, "schema: categorical field '" + f.name + "' has bin edges");
    } else {
      require(f.vocabulary.empty(), ErrorKind::kSchema, "schema: continuous field '" + f.name + "' has a vocabulary");
    }
  }
  build_lookup();
}

void FeatureSchema::build_lookup() {
  by_name_.clear();
  vocab_lookup_.assign(fields_.size(), {});
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    const bool inserted = by_name_.emplace(fields_[i].name, i).second;
    require(inserted, ErrorKind::kSchema, "schema: duplicate field '" + fields_[i].name + "'");
    const auto& vocab = fields_[i].vocabulary;
    for (std::size_t v = 0; v < vocab.size(); ++v) {
      const bool fresh = vocab_lookup_[i].emplace(vocab[v], static_cast<std::uint32_t>(v + 1)).second;
      require(fresh, ErrorKind::kSchema, "schema: duplicate vocabulary entry '" + vocab[v] + "' in '" + fields_[i].name + "'");
    }
  }
}

std::size_t FeatureSchema::index_of(const std::string& name) const {
  auto it = by_name_.find(name);
  require(it != by_name_.end(), ErrorKind::kSchema, "schema: unknown field '" + name + "'");
  return it->second;
}

std::uint32_t FeatureSchema::vocab_index(std::size_t field, const std::string& value) const {
  const auto& lookup = vocab_lookup_.at(field);
  auto it = lookup.find(value);
  return it == lookup.end() ? 0 : it->second;
}

std::size_t FeatureSchema::embedding_dim(FieldGroup group) {
  switch (group) {
    case FieldGroup::kProfile:
    case FieldGroup::kBehavior:
    case FieldGroup::kQuery:
      return 4;
    case FieldGroup::kContext:
    case FieldGroup::kHotel:
      return 8;
  }
  return 8;
}

nlohmann::json FeatureSchema::to_json() const {
  nlohmann::json fields = nlohmann::json::array();
  for (const FieldSpec& f : fields_) {
    nlohmann::json doc{{"name", f.name}, {"kind", to_string(f.kind)}, {"group", to_string(f.group)}};
    if (f.kind == FieldKind::kCategorical) {
      doc["vocabulary"] = f.vocabulary;
    } else {
      doc["edges"] = f.edges;
    }
    fields.push_back(std::move(doc));
  }
  return {
      {"version", 1},
      {"fields", std::move(fields)},
      {"mci",
       {{"normalizers", {{"gmv", normalizers_.gmv}, {"online_inventory", normalizers_.online_inventory}}},
        {"weights", weights_}}},
  };
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& doc) {
  try {
    require(doc.at("version").get<int>() == 1, ErrorKind::kSchema, "schema: unsupported version");
    std::vector<FieldSpec> fields;
    for (const auto& f : doc.at("fields")) {
      FieldSpec spec;
      spec.name = f.at("name").get<std::string>();
      spec.kind = parse_kind(f.at("kind").get<std::string>());
      spec.group = parse_group(f.at("group").get<std::string>());
      if (spec.kind == FieldKind::kCategorical) {
        spec.vocabulary = f.at("vocabulary").get<std::vector<std::string>>();
      } else {
        spec.edges = f.at("edges").get<std::vector<double>>();
      }
      fields.push_back(std::move(spec));
    }
    const auto& mci = doc.at("mci");
    MciNormalizers norm{mci.at("normalizers").at("gmv").get<double>(),
                        mci.at("normalizers").at("online_inventory").get<double>()};
    const auto w = mci.at("weights").get<std::vector<double>>();
    require(w.size() == kMciDim, ErrorKind::kSchema, "schema: MCI weights must have 9 entries");
    MciWeights weights;
    std::copy(w.begin(), w.end(), weights.begin());
    return FeatureSchema(std::move(fields), norm, weights);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kSchema, std::string("schema: malformed document: ") + e.what());
  }
}

bool operator==(const FeatureSchema& a, const FeatureSchema& b) { return a.to_json() == b.to_json(); }

EncodedFeatures encode_sample(const FeatureSchema& schema, const RawRecord& record, const MciFactors& factors) {
  const auto& fields = schema.fields();
  require(record.categorical.size() + record.continuous.size() == fields.size(), ErrorKind::kSchema,
          "encode_sample: record has " + std::to_string(record.categorical.size() + record.continuous.size()) +
              " fields, schema expects " + std::to_string(fields.size()));
  EncodedFeatures out;
  out.indices.reserve(fields.size());
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const FieldSpec& f = fields[i];
    if (f.kind == FieldKind::kCategorical) {
      auto it = record.categorical.find(f.name);
      require(it != record.categorical.end(), ErrorKind::kSchema, "encode_sample: missing categorical field '" + f.name + "'");
      out.indices.push_back(schema.vocab_index(i, it->second));
    } else {
      auto it = record.continuous.find(f.name);
      require(it != record.continuous.end(), ErrorKind::kSchema, "encode_sample: missing continuous field '" + f.name + "'");
      require(std::isfinite(it->second), ErrorKind::kSchema, "encode_sample: non-finite value for '" + f.name + "'");
      out.indices.push_back(bin_index(f.edges, it->second));
    }
  }
  out.mci = orient_mci(factors, schema.normalizers());
  return out;
}

}  // namespace merit
