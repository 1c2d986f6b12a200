#include "merit/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "merit/error.hpp"
#include "merit/rng.hpp"

namespace merit::metrics {
namespace {

// Brute-force oracles: quadratic pair counting and selection-sort rankings.

std::optional<double> oracle_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double concordant = 0.0;
  double pos = 0.0;
  double neg = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) (y[i] ? pos : neg) += 1.0;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      if (s[i] > s[j]) concordant += 1.0;
      if (s[i] == s[j]) concordant += 0.5;
    }
  }
  return concordant / (pos * neg);
}

std::vector<std::uint64_t> sorted_ids(const std::vector<std::uint64_t>& ids) {
  std::vector<std::uint64_t> u = ids;
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

std::optional<double> oracle_gauc(const std::vector<double>& s, const std::vector<int>& y,
                                  const std::vector<std::uint64_t>& users) {
  double num = 0.0;
  double den = 0.0;
  for (std::uint64_t u : sorted_ids(users)) {
    std::vector<double> su;
    std::vector<int> yu;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (users[i] == u) {
        su.push_back(s[i]);
        yu.push_back(y[i]);
      }
    }
    const auto a = oracle_auc(su, yu);
    if (!a) continue;
    num += static_cast<double>(su.size()) * *a;
    den += static_cast<double>(su.size());
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

// Repeatedly takes the largest remaining key; the smallest index wins ties.
std::vector<std::size_t> selection_rank(const std::vector<double>& key) {
  std::vector<bool> taken(key.size(), false);
  std::vector<std::size_t> ranked;
  for (std::size_t r = 0; r < key.size(); ++r) {
    std::size_t best = key.size();
    for (std::size_t i = 0; i < key.size(); ++i) {
      if (!taken[i] && (best == key.size() || key[i] > key[best])) best = i;
    }
    taken[best] = true;
    ranked.push_back(best);
  }
  return ranked;
}

double oracle_ndcg(const std::vector<double>& s, const std::vector<double>& z, std::size_t k) {
  auto dcg = [&](const std::vector<std::size_t>& ranked) {
    double total = 0.0;
    for (std::size_t r = 1; r <= std::min(k, ranked.size()); ++r) total += z[ranked[r - 1]] / std::log2(r + 1.0);
    return total;
  };
  const double ideal = dcg(selection_rank(z));
  if (ideal == 0.0) return 1.0;
  return std::min(1.0, dcg(selection_rank(s)) / ideal);
}

double oracle_wndcg(const std::vector<double>& s, const std::vector<double>& z, const std::vector<std::uint64_t>& sessions,
                    std::size_t k) {
  double num = 0.0;
  double den = 0.0;
  for (std::uint64_t id : sorted_ids(sessions)) {
    std::vector<double> ss;
    std::vector<double> zs;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (sessions[i] == id) {
        ss.push_back(s[i]);
        zs.push_back(z[i]);
      }
    }
    num += static_cast<double>(ss.size()) * oracle_ndcg(ss, zs, k);
    den += static_cast<double>(ss.size());
  }
  return num / den;
}

TEST(Auc, Examples) {
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.2, 0.6}, std::vector<int>{1, 0, 1}), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, std::vector<int>{1, 0, 0, 1}), 0.5);
  EXPECT_EQ(auc(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 0}), 0.0);
  EXPECT_FALSE(auc(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 1}).has_value());
  EXPECT_FALSE(auc(std::vector<double>{}, std::vector<int>{}).has_value());
  EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), Error);
  EXPECT_THROW(auc(std::vector<double>{NAN, 0.2}, std::vector<int>{1, 0}), Error);
}

TEST(Gauc, Examples) {
  // User 7: AUC 1.0 over 2 samples; user 3: tie, AUC 0.5 over 2 samples.
  const std::vector<double> s = {0.8, 0.2, 0.4, 0.4};
  const std::vector<int> y = {1, 0, 1, 0};
  const std::vector<std::uint64_t> u = {7, 7, 3, 3};
  const GroupedAuc g = gauc(s, y, u);
  EXPECT_EQ(g.value, 0.75);
  EXPECT_EQ(g.groups, 2u);

  const std::vector<double> s1 = {0.8, 0.2, 0.5};
  const std::vector<int> y1 = {1, 0, 1};
  EXPECT_EQ(gauc(s1, y1, std::vector<std::uint64_t>{1, 1, 1}).value, auc(s1, y1));

  // User 2 has only positives and is excluded from both sums.
  const std::vector<double> s2 = {0.8, 0.2, 0.1, 0.9, 0.95};
  const std::vector<int> y2 = {1, 0, 1, 1, 1};
  const GroupedAuc g2 = gauc(s2, y2, std::vector<std::uint64_t>{1, 1, 1, 2, 2});
  EXPECT_EQ(g2.value, auc(std::vector<double>{0.8, 0.2, 0.1}, std::vector<int>{1, 0, 1}));
  EXPECT_EQ(g2.groups, 1u);

  EXPECT_FALSE(gauc(s2, std::vector<int>{1, 1, 1, 1, 1}, std::vector<std::uint64_t>{1, 1, 1, 2, 2}).value.has_value());
}

TEST(Ndcg, Examples) {
  const std::vector<double> s = {0.9, 0.5, 0.1};
  const std::vector<double> z = {3, 5, 1};
  const double dcg = 3 + 5 / std::log2(3.0) + 0.5;
  const double idcg = 5 + 3 / std::log2(3.0) + 0.5;
  EXPECT_NEAR(dcg, 6.654649, 1e-6);
  EXPECT_NEAR(idcg, 7.392789, 1e-6);
  // dcg / idcg = 0.90015399..., which rounds to 0.900154 at six places.
  EXPECT_DOUBLE_EQ(ndcg_at_k(s, z, 3), dcg / idcg);
  EXPECT_NEAR(ndcg_at_k(s, z, 3), 0.900155, 2e-6);
  EXPECT_EQ(ndcg_at_k(std::vector<double>{3, 2, 1}, std::vector<double>{4, 2, 1}, 3), 1.0);
  EXPECT_EQ(ndcg_at_k(s, std::vector<double>{2, 2, 2}, 2), 1.0);
  EXPECT_EQ(ndcg_at_k(s, std::vector<double>{0, 0, 0}, 2), 1.0);
  // Ties resolve to the earlier index: z = [1, 4] with equal scores ranks index 0 first.
  EXPECT_DOUBLE_EQ(ndcg_at_k(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 4}, 1), 0.25);
  // Lists shorter than k use their full length.
  EXPECT_EQ(ndcg_at_k(s, z, 100), ndcg_at_k(s, z, 3));
  EXPECT_THROW(ndcg_at_k(s, z, 0), Error);
  EXPECT_THROW(ndcg_at_k(std::vector<double>{}, std::vector<double>{}, 3), Error);
}

TEST(Wndcg, Examples) {
  // Session 1: ideal order, length 2. Session 2: length 6 with NDCG@1 = 0.5.
  const std::vector<double> s = {0.9, 0.1, 0.9, 0.5, 0.4, 0.3, 0.2, 0.1};
  const std::vector<double> z = {2, 1, 1, 2, 0, 0, 0, 0};
  const std::vector<std::uint64_t> id = {1, 1, 2, 2, 2, 2, 2, 2};
  EXPECT_EQ(wndcg_at_k(s, z, id, 1), 0.625);
  const std::vector<double> s1(s.begin() + 2, s.end());
  const std::vector<double> z1(z.begin() + 2, z.end());
  EXPECT_EQ(wndcg_at_k(s1, z1, std::vector<std::uint64_t>(6, 4), 3), ndcg_at_k(s1, z1, 3));
  EXPECT_EQ(wndcg_at_k(z, z, id, 3), 1.0);
}

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<double> z;
  std::vector<std::uint64_t> groups;
};

Instance random_instance(std::mt19937_64& rng) {
  Instance in;
  const std::size_t n = 1 + uniform_below(rng, 50);
  const bool coarse = uniform_below(rng, 2) == 0;  // many ties
  for (std::size_t i = 0; i < n; ++i) {
    const double u = uniform01(rng);
    in.scores.push_back(coarse ? std::floor(u * 5.0) / 5.0 : u);
    in.labels.push_back(uniform01(rng) < 0.4 ? 1 : 0);
    in.z.push_back(coarse ? static_cast<double>(uniform_below(rng, 6)) : 5.0 * uniform01(rng));
    in.groups.push_back(uniform_below(rng, 6) * 1000 + 3);
  }
  return in;
}

TEST(MetricsOracle, ExactAgreementOnRandomInstances) {
  std::mt19937_64 rng(20240601);
  for (int trial = 0; trial < 200; ++trial) {
    const Instance in = random_instance(rng);
    EXPECT_EQ(auc(in.scores, in.labels), oracle_auc(in.scores, in.labels)) << trial;
    EXPECT_EQ(gauc(in.scores, in.labels, in.groups).value, oracle_gauc(in.scores, in.labels, in.groups)) << trial;
    EXPECT_EQ(gauc(in.scores, in.labels, in.groups, 3).value, oracle_gauc(in.scores, in.labels, in.groups)) << trial;
    for (std::size_t k : {1, 3, 5, 10, 20, 60}) {
      EXPECT_EQ(ndcg_at_k(in.scores, in.z, k), oracle_ndcg(in.scores, in.z, k)) << trial << " k=" << k;
      EXPECT_EQ(wndcg_at_k(in.scores, in.z, in.groups, k), oracle_wndcg(in.scores, in.z, in.groups, k))
          << trial << " k=" << k;
      EXPECT_EQ(wndcg_at_k(in.scores, in.z, in.groups, k, 4), oracle_wndcg(in.scores, in.z, in.groups, k));
    }
  }
}

TEST(MetricsProperties, RangeAndTransformInvariance) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const Instance in = random_instance(rng);
    std::vector<double> transformed;
    for (double s : in.scores) transformed.push_back(std::exp(3.0 * s) - 7.0);
    std::vector<double> scaled_z;
    for (double z : in.z) scaled_z.push_back(4.0 * z);
    const auto a = auc(in.scores, in.labels);
    EXPECT_EQ(a, auc(transformed, in.labels));
    if (a) {
      EXPECT_GE(*a, 0.0);
      EXPECT_LE(*a, 1.0);
    }
    const std::vector<std::uint64_t> one_user(in.scores.size(), 9);
    const auto g = gauc(in.scores, in.labels, one_user).value;
    ASSERT_EQ(g.has_value(), a.has_value());
    if (a) EXPECT_DOUBLE_EQ(*g, *a);  // w * a / w may round by one ulp
    for (std::size_t k : {1, 5, 20}) {
      const double n = ndcg_at_k(in.scores, in.z, k);
      EXPECT_GE(n, 0.0);
      EXPECT_LE(n, 1.0);
      EXPECT_EQ(n, ndcg_at_k(transformed, in.z, k));
      EXPECT_NEAR(n, ndcg_at_k(in.scores, scaled_z, k), 1e-15);
      const double w = wndcg_at_k(in.scores, in.z, in.groups, k);
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
    }
  }
}

Dataset labelled(const std::vector<int>& y, const std::vector<double>& z, const std::vector<std::uint64_t>& users,
                 const std::vector<std::uint64_t>& sessions) {
  Dataset d;
  for (std::size_t i = 0; i < y.size(); ++i) {
    Impression imp;
    imp.y = y[i];
    imp.z = z[i];
    imp.user_id = users[i];
    imp.session_id = sessions[i];
    d.impressions.push_back(imp);
  }
  return d;
}

TEST(EvaluatePredictions, PerfectAndConstantScores) {
  const Dataset d = labelled({2, 0, 1, 0, 2, 1, 0, 0}, {4, 1, 3, 2, 5, 2, 1, 0}, {1, 1, 1, 1, 2, 2, 2, 2},
                             {10, 10, 10, 10, 11, 11, 11, 11});
  models::Predictions oracle;
  for (const Impression& imp : d.impressions) {
    oracle.pctr.push_back(imp.y > 0 ? 0.9 : 0.1);
    oracle.pcvr.push_back(imp.y == 2 ? 0.8 : 0.2);
    oracle.pctcvr.push_back(0.1 * imp.z + (imp.y == 2 ? 1.0 : 0.0));
  }
  const MetricsReport r = evaluate_predictions(oracle, d);
  EXPECT_EQ(r.ctr_auc, 1.0);
  EXPECT_EQ(r.cvr_auc, 1.0);
  EXPECT_EQ(r.ctcvr_auc, 1.0);
  EXPECT_EQ(r.ctcvr_gauc, 1.0);
  EXPECT_EQ(r.clicked, 4u);
  EXPECT_EQ(r.sessions, 2u);
  EXPECT_EQ(r.cvr_gauc_users, 2u);

  models::Predictions flat;
  flat.pctr.assign(d.size(), 0.3);
  flat.pcvr.assign(d.size(), 0.3);
  flat.pctcvr.assign(d.size(), 0.09);
  const MetricsReport c = evaluate_predictions(flat, d);
  for (const auto& v : {c.ctr_auc, c.cvr_auc, c.ctcvr_auc, c.ctr_gauc, c.cvr_gauc, c.ctcvr_gauc}) EXPECT_EQ(v, 0.5);

  models::Predictions short_pred = flat;
  short_pred.pctr.pop_back();
  EXPECT_THROW(evaluate_predictions(short_pred, d), Error);
}

TEST(MetricsReport, JsonRoundTripAndCsv) {
  MetricsReport r;
  r.ctr_auc = 0.1;
  r.cvr_auc = std::nullopt;
  r.ctcvr_auc = 2.0 / 3.0;
  r.ctr_gauc = 0.7000000000000001;
  r.ndcg = {0.25, 1.0 / 3.0, 0.9};
  r.wndcg = {0.5, 0.6, 0.7};
  r.impressions = 10;
  r.clicked = 3;
  r.sessions = 2;
  const MetricsReport back = MetricsReport::from_json(nlohmann::json::parse(r.to_json().dump()));
  EXPECT_EQ(back, r);
  const auto cols = MetricsReport::csv_columns();
  const auto vals = r.csv_values();
  ASSERT_EQ(cols.size(), vals.size());
  EXPECT_EQ(cols[0], "ctr_auc");
  EXPECT_EQ(vals[0], "0.1");
  EXPECT_EQ(vals[1], "");
  EXPECT_EQ(std::stod(vals[2]), 2.0 / 3.0);
  EXPECT_THROW(MetricsReport::from_json(nlohmann::json::object()), Error);
}

}  // namespace
}  // namespace merit::metrics
