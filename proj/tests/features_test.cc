#include "merit/features.hpp"

#include <gtest/gtest.h>

#include <random>

#include "merit/error.hpp"

namespace merit {
namespace {

MciFactors best_factors(const MciNormalizers& norm) {
  MciFactors f;
  f.inventory_to_sales_ratio = 1.0;
  f.gmv = norm.gmv;
  f.historical_cvr = 1.0;
  f.online_inventory = norm.online_inventory;
  f.hot_selling_room_ratio = 1.0;
  f.service_refusal_rate = 0.0;
  f.order_refusal_rate = 0.0;
  f.picture_quality = 1.0;
  f.info_completeness = 1.0;
  return f;
}

TEST(OrientMci, RefusalRatesFlip) {
  MciFactors f;
  f.service_refusal_rate = 0.0;
  f.order_refusal_rate = 0.25;
  const OrientedMci o = orient_mci(f, MciNormalizers{});
  EXPECT_DOUBLE_EQ(o[5], 1.0);
  EXPECT_DOUBLE_EQ(o[6], 0.75);
}

TEST(OrientMci, BestValuesGiveAllOnes) {
  const MciNormalizers norm;
  const OrientedMci o = orient_mci(best_factors(norm), norm);
  for (double v : o.values) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(OrientMci, UnboundedFactorsSaturate) {
  MciNormalizers norm{500.0, 100.0};
  MciFactors f;
  f.gmv = 500.0;
  f.online_inventory = 250.0;
  const OrientedMci o = orient_mci(f, norm);
  EXPECT_DOUBLE_EQ(o[1], 1.0);
  EXPECT_DOUBLE_EQ(o[3], 1.0);
  f.gmv = 125.0;
  EXPECT_DOUBLE_EQ(orient_mci(f, norm)[1], 0.25);
}

TEST(OrientMci, StrictMonotonicityOverUnsaturatedRange) {
  const MciNormalizers norm;
  MciFactors lo;
  lo.inventory_to_sales_ratio = lo.historical_cvr = lo.hot_selling_room_ratio = 0.3;
  lo.picture_quality = lo.info_completeness = 0.3;
  lo.service_refusal_rate = lo.order_refusal_rate = 0.3;
  lo.gmv = 0.3 * norm.gmv;
  lo.online_inventory = 0.3 * norm.online_inventory;
  MciFactors hi = lo;
  hi.inventory_to_sales_ratio = hi.historical_cvr = hi.hot_selling_room_ratio = 0.4;
  hi.picture_quality = hi.info_completeness = 0.4;
  hi.service_refusal_rate = hi.order_refusal_rate = 0.2;
  hi.gmv = 0.4 * norm.gmv;
  hi.online_inventory = 0.4 * norm.online_inventory;
  const OrientedMci a = orient_mci(lo, norm);
  const OrientedMci b = orient_mci(hi, norm);
  for (std::size_t k = 0; k < kMciDim; ++k) EXPECT_LT(a[k], b[k]) << k;
}

TEST(OrientMci, RejectsOutOfRangeFractions) {
  MciFactors f;
  f.historical_cvr = 1.2;
  EXPECT_THROW(orient_mci(f, MciNormalizers{}), Error);
  f.historical_cvr = 0.1;
  f.gmv = -1.0;
  EXPECT_THROW(orient_mci(f, MciNormalizers{}), Error);
  EXPECT_THROW(orient_mci(MciFactors{}, MciNormalizers{0.0, 1.0}), Error);
}

TEST(ComputeMci, Examples) {
  OrientedMci ones;
  ones.values.fill(1.0);
  MciWeights skewed{0.5, 0.1, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05, 0.0};
  EXPECT_DOUBLE_EQ(compute_mci(ones, skewed), 5.0);
  EXPECT_DOUBLE_EQ(compute_mci(ones, uniform_mci_weights()), 5.0);
  EXPECT_DOUBLE_EQ(compute_mci(OrientedMci{}, uniform_mci_weights()), 0.0);
  OrientedMci three;
  three[0] = three[1] = three[2] = 1.0;
  EXPECT_NEAR(compute_mci(three, uniform_mci_weights()), 5.0 / 3.0, 1e-12);
}

TEST(ComputeMci, RejectsInvalidWeights) {
  MciWeights w = uniform_mci_weights();
  w[0] += 0.1;
  EXPECT_THROW(compute_mci(OrientedMci{}, w), Error);
  w = uniform_mci_weights();
  w[0] = -w[0];
  w[1] += 2 * w[1];
  EXPECT_THROW(compute_mci(OrientedMci{}, w), Error);
}

TEST(ComputeMci, MonotoneUnderExhaustivePerturbation) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MciWeights w;
  double total = 0.0;
  for (double& v : w) total += (v = u(rng));
  for (double& v : w) v /= total;
  w[8] = 1.0 - (w[0] + w[1] + w[2] + w[3] + w[4] + w[5] + w[6] + w[7]);
  for (int trial = 0; trial < 500; ++trial) {
    OrientedMci o;
    for (double& v : o.values) v = u(rng);
    const double base = compute_mci(o, w);
    for (std::size_t k = 0; k < kMciDim; ++k) {
      for (double step : {1e-9, 0.01, 0.3}) {
        OrientedMci up = o;
        up[k] = std::min(1.0, up[k] + step);
        EXPECT_GE(compute_mci(up, w), base);
      }
    }
  }
}

TEST(MciLevel, Examples) {
  EXPECT_DOUBLE_EQ(mci_level(3.24, true), 3.0);
  EXPECT_DOUBLE_EQ(mci_level(3.26, true), 3.5);
  EXPECT_DOUBLE_EQ(mci_level(4.9, false), 0.0);
  EXPECT_DOUBLE_EQ(mci_level(0.0, true), 0.5);
  EXPECT_DOUBLE_EQ(mci_level(5.0, true), 5.0);
}

TEST(MciLevel, IdempotentAndOrderPreserving) {
  double prev = 0.0;
  for (int i = 0; i <= 500; ++i) {
    const double s = 5.0 * i / 500.0;
    const double level = mci_level(s, true);
    EXPECT_DOUBLE_EQ(mci_level(level, true), level);
    EXPECT_GE(level, prev);
    prev = level;
  }
}

TEST(QuantileDiscretize, IntegerSequence) {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  // Order statistics at h = 99k/4: 24.75, 49.5, 74.25 (0-based).
  const QuantileBins bins = quantile_discretize(v, 4);
  ASSERT_EQ(bins.edges.size(), 3u);
  EXPECT_DOUBLE_EQ(bins.edges[0], 25.75);
  EXPECT_DOUBLE_EQ(bins.edges[1], 50.5);
  EXPECT_DOUBLE_EQ(bins.edges[2], 75.25);
  EXPECT_TRUE(bins.warning.empty());
}

TEST(QuantileDiscretize, TwoDistinctValues) {
  const std::vector<double> v{3.0, 7.0};
  const QuantileBins bins = quantile_discretize(v, 2);
  ASSERT_EQ(bins.edges.size(), 1u);
  EXPECT_GT(bins.edges[0], 3.0);
  EXPECT_LT(bins.edges[0], 7.0);
}

TEST(QuantileDiscretize, UniformSampleMatchesSortingOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(10000);
  for (double& x : v) x = u(rng);
  const QuantileBins bins = quantile_discretize(v, 10);
  ASSERT_EQ(bins.edges.size(), 9u);
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 1; k < 10; ++k) {
    EXPECT_NEAR(bins.edges[k - 1], 0.1 * static_cast<double>(k), 0.02);
    // Oracle: the edge sits between the neighbouring order statistics.
    const std::size_t lo = (9999 * k) / 10;
    EXPECT_GE(bins.edges[k - 1], sorted[lo]);
    EXPECT_LE(bins.edges[k - 1], sorted[lo + 1]);
  }
}

TEST(QuantileDiscretize, IdenticalValuesWarn) {
  const std::vector<double> v(20, 4.0);
  const QuantileBins bins = quantile_discretize(v, 5);
  EXPECT_TRUE(bins.edges.empty());
  EXPECT_FALSE(bins.warning.empty());
  EXPECT_THROW(quantile_discretize(v, 1), Error);
}

TEST(QuantileDiscretize, DuplicateQuantilesCollapse) {
  std::vector<double> v(90, 1.0);
  for (int i = 0; i < 10; ++i) v.push_back(2.0 + i);
  const QuantileBins bins = quantile_discretize(v, 10);
  for (std::size_t i = 1; i < bins.edges.size(); ++i) EXPECT_GT(bins.edges[i], bins.edges[i - 1]);
  EXPECT_LT(bins.edges.size(), 9u);
}

FeatureSchema toy_schema() {
  FieldSpec city{"city", FieldKind::kCategorical, FieldGroup::kQuery, {"hangzhou", "beijing"}, {}};
  FieldSpec price{"price", FieldKind::kContinuous, FieldGroup::kHotel, {}, {100.0, 200.0, 400.0}};
  return FeatureSchema({city, price}, MciNormalizers{}, uniform_mci_weights());
}

TEST(EncodeSample, UnknownCategoryAndBinBoundaries) {
  const FeatureSchema schema = toy_schema();
  RawRecord r;
  r.categorical["city"] = "atlantis";
  r.continuous["price"] = 50.0;
  EncodedFeatures e = encode_sample(schema, r, MciFactors{});
  EXPECT_EQ(e.indices, (std::vector<std::uint32_t>{0, 0}));

  r.categorical["city"] = "beijing";
  r.continuous["price"] = 200.0;
  e = encode_sample(schema, r, MciFactors{});
  EXPECT_EQ(e.indices, (std::vector<std::uint32_t>{2, 2}));

  r.continuous["price"] = 1e9;
  EXPECT_EQ(encode_sample(schema, r, MciFactors{}).indices[1], 3u);
}

TEST(EncodeSample, PassesMciThroughOrientation) {
  const FeatureSchema schema = toy_schema();
  RawRecord r;
  r.categorical["city"] = "hangzhou";
  r.continuous["price"] = 150.0;
  MciFactors f;
  f.order_refusal_rate = 0.1;
  f.picture_quality = 0.8;
  const EncodedFeatures e = encode_sample(schema, r, f);
  EXPECT_EQ(e.mci, orient_mci(f, schema.normalizers()));
  EXPECT_EQ(e, encode_sample(schema, r, f));
}

TEST(EncodeSample, SchemaMismatchIsAnError) {
  const FeatureSchema schema = toy_schema();
  RawRecord r;
  r.categorical["city"] = "hangzhou";
  EXPECT_THROW(encode_sample(schema, r, MciFactors{}), Error);
  r.categorical["price"] = "cheap";
  EXPECT_THROW(encode_sample(schema, r, MciFactors{}), Error);
}

TEST(FeatureSchema, JsonRoundTripAndValidation) {
  const FeatureSchema schema = toy_schema();
  const FeatureSchema back = FeatureSchema::from_json(schema.to_json());
  EXPECT_EQ(schema, back);
  EXPECT_EQ(back.fields()[1].cardinality(), 4u);
  EXPECT_EQ(FeatureSchema::embedding_dim(FieldGroup::kProfile), 4u);
  EXPECT_EQ(FeatureSchema::embedding_dim(FieldGroup::kHotel), 8u);

  FieldSpec bad{"price", FieldKind::kContinuous, FieldGroup::kHotel, {}, {2.0, 1.0}};
  EXPECT_THROW(FeatureSchema({bad}, MciNormalizers{}, uniform_mci_weights()), Error);
  EXPECT_THROW(FeatureSchema::from_json(nlohmann::json{{"version", 1}}), Error);
}

}  // namespace
}  // namespace merit
