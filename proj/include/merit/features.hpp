#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace merit {

inline constexpr std::size_t kMciDim = 9;

// Raw merchant quality indicators for one hotel, grouped as operational
// capability, room inventory, quality of service and basic information.
struct MciFactors {
  double inventory_to_sales_ratio = 0.0;  // fraction
  double gmv = 0.0;                       // currency, >= 0
  double historical_cvr = 0.0;            // fraction
  double online_inventory = 0.0;          // room count, >= 0
  double hot_selling_room_ratio = 0.0;    // fraction
  double service_refusal_rate = 0.0;      // fraction, lower is better
  double order_refusal_rate = 0.0;        // fraction, lower is better
  double picture_quality = 0.0;           // score in [0,1]
  double info_completeness = 0.0;         // score in [0,1]
};

// Scale constants for the two unbounded indicators; values at or above the
// constant saturate to 1.
struct MciNormalizers {
  double gmv = 1.0e6;
  double online_inventory = 200.0;
};

// Oriented indicators: every coordinate lies in [0,1] and larger is better.
struct OrientedMci {
  std::array<double, kMciDim> values{};

  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  friend bool operator==(const OrientedMci&, const OrientedMci&) = default;
};

using MciWeights = std::array<double, kMciDim>;

MciWeights uniform_mci_weights();

OrientedMci orient_mci(const MciFactors& raw, const MciNormalizers& normalizers);

// 5 * sum_k w_k * oriented_k; weights must be a valid simplex vector.
double compute_mci(const OrientedMci& oriented, const MciWeights& weights);

// Reporting level in {0, 0.5, ..., 5}; 0 is reserved for hotels without
// consumer ratings, rated hotels get at least 0.5.
double mci_level(double score, bool has_ratings);

struct QuantileBins {
  std::vector<double> edges;  // strictly increasing, at most n_bins - 1
  std::string warning;        // non-empty when the input collapsed to one bin
};

// Edges at the empirical k/n_bins quantiles (linear interpolation between
// order statistics); duplicate quantiles are collapsed.
QuantileBins quantile_discretize(std::span<const double> values, std::size_t n_bins);

// Right-closed binning: a value equal to an edge lands in the higher bin.
std::uint32_t bin_index(std::span<const double> edges, double value);

enum class FieldKind { kCategorical, kContinuous };

enum class FieldGroup { kProfile, kBehavior, kContext, kQuery, kHotel };

const char* to_string(FieldKind kind);
const char* to_string(FieldGroup group);

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::kCategorical;
  FieldGroup group = FieldGroup::kHotel;
  std::vector<std::string> vocabulary;  // categorical; index 0 is reserved for unknowns
  std::vector<double> edges;            // continuous

  // Number of distinct encoded indices.
  std::size_t cardinality() const;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  FeatureSchema(std::vector<FieldSpec> fields, MciNormalizers normalizers, MciWeights weights);

  const std::vector<FieldSpec>& fields() const { return fields_; }
  const MciNormalizers& normalizers() const { return normalizers_; }
  const MciWeights& weights() const { return weights_; }
  std::size_t index_of(const std::string& name) const;
  std::uint32_t vocab_index(std::size_t field, const std::string& value) const;

  // Embedding width per group: 4 for consumer and query fields, 8 for
  // context and hotel fields.
  static std::size_t embedding_dim(FieldGroup group);

  nlohmann::json to_json() const;
  static FeatureSchema from_json(const nlohmann::json& doc);

  friend bool operator==(const FeatureSchema& a, const FeatureSchema& b);

 private:
  void build_lookup();

  std::vector<FieldSpec> fields_;
  MciNormalizers normalizers_;
  MciWeights weights_ = uniform_mci_weights();
  std::map<std::string, std::size_t> by_name_;
  std::vector<std::map<std::string, std::uint32_t>> vocab_lookup_;
};

struct RawRecord {
  std::map<std::string, std::string> categorical;
  std::map<std::string, double> continuous;
};

struct EncodedFeatures {
  std::vector<std::uint32_t> indices;  // one per schema field, in schema order
  OrientedMci mci;

  friend bool operator==(const EncodedFeatures&, const EncodedFeatures&) = default;
};

EncodedFeatures encode_sample(const FeatureSchema& schema, const RawRecord& record, const MciFactors& factors);

struct Impression {
  std::uint64_t session_id = 0;
  std::uint64_t user_id = 0;
  std::uint64_t hotel_id = 0;
  std::uint32_t position = 1;  // display rank, 1-based
  std::int64_t timestamp = 0;
  EncodedFeatures encoded;
  int y = 0;       // 0 = no click, 1 = click without order, 2 = click and order
  double z = 0.0;  // MCI score in [0,5]

  friend bool operator==(const Impression&, const Impression&) = default;
};

}  // namespace merit
