#include "merit/objectives.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "merit/error.hpp"
#include "merit/rng.hpp"
#include "test_util.hpp"

namespace merit::objectives {
namespace {

using ad::Tensor;
using layers::GraphParams;
using layers::ParamStore;
using merit::testing::random_tensor;
using merit::testing::store_grad_check;

std::set<std::pair<std::uint32_t, std::uint32_t>> as_set(const std::vector<Pair>& pairs) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> s;
  for (const Pair& p : pairs) s.emplace(p.i, p.j);
  return s;
}

using PairList = std::set<std::pair<std::uint32_t, std::uint32_t>>;

PairSet pairs_of(const std::vector<int>& y, const std::vector<double>& z, std::size_t cap = kDefaultPairCap) {
  std::mt19937_64 rng(0);
  return enumerate_session_pairs(y, z, cap, rng);
}

// Oracle: -ln sigmoid(d), evaluated directly.
double neg_log_sigmoid(double d) { return -std::log(1.0 / (1.0 + std::exp(-d))); }

TEST(EnumeratePairs, ConflictPairIsMasked) {
  const PairSet p = pairs_of({2, 0}, {1.0, 4.0});
  EXPECT_EQ(as_set(p.with(kYPair)), (PairList{{0, 1}}));
  EXPECT_TRUE(p.with(kZPair).empty());
  EXPECT_EQ(as_set(p.with(kMciPair)), (PairList{{1, 0}}));
}

TEST(EnumeratePairs, EqualLabelsAdmitMciOrdering) {
  const PairSet p = pairs_of({1, 1}, {3.0, 2.0});
  EXPECT_TRUE(p.with(kYPair).empty());
  EXPECT_EQ(as_set(p.with(kZPair)), (PairList{{0, 1}}));
}

TEST(EnumeratePairs, MciTiesGiveNoZPairs) {
  const PairSet p = pairs_of({0, 1, 2}, {2.5, 2.5, 2.5 + 1e-12});
  EXPECT_EQ(as_set(p.with(kYPair)), (PairList{{1, 0}, {2, 0}, {2, 1}}));
  EXPECT_TRUE(p.with(kZPair).empty());
  EXPECT_TRUE(p.with(kMciPair).empty());
}

TEST(EnumeratePairs, RejectsShortOrMismatchedSessions) {
  std::mt19937_64 rng(0);
  EXPECT_THROW(enumerate_session_pairs(std::vector<int>{1}, std::vector<double>{1.0}, 10, rng), Error);
  EXPECT_THROW(enumerate_session_pairs(std::vector<int>{1, 0}, std::vector<double>{1.0}, 10, rng), Error);
}

TEST(EnumeratePairs, CapSubsamplesWithoutReplacement) {
  std::vector<int> y(30);
  std::vector<double> z(30);
  for (std::size_t i = 0; i < 30; ++i) {
    y[i] = static_cast<int>(i % 3);
    z[i] = static_cast<double>(i) * 0.1;
  }
  const PairSet all = pairs_of(y, z, 100000);
  ASSERT_GT(all.pairs.size(), 200u);
  std::mt19937_64 rng_a(5);
  std::mt19937_64 rng_b(5);
  const PairSet a = enumerate_session_pairs(y, z, 200, rng_a);
  const PairSet b = enumerate_session_pairs(y, z, 200, rng_b);
  EXPECT_EQ(a.pairs, b.pairs);
  EXPECT_EQ(a.pairs.size(), 200u);
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (const Pair& p : a.pairs) {
    EXPECT_TRUE(seen.emplace(p.i, p.j).second);
    EXPECT_NE(std::find(all.pairs.begin(), all.pairs.end(), p), all.pairs.end());
  }
  // Each pair survives with probability cap / total.
  std::vector<int> hits(all.pairs.size(), 0);
  std::mt19937_64 rng(9);
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    const PairSet s = enumerate_session_pairs(y, z, 200, rng);
    for (const Pair& p : s.pairs) hits[std::find(all.pairs.begin(), all.pairs.end(), p) - all.pairs.begin()]++;
  }
  const double expected = trials * 200.0 / static_cast<double>(all.pairs.size());
  for (int h : hits) EXPECT_NEAR(h, expected, 6 * std::sqrt(expected));
}

TEST(EnumeratePairs, StratifiedPairsAreSubsetOfUnstratified) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + uniform_below(rng, 20);
    std::vector<int> y(n);
    std::vector<double> z(n);
    const bool constant_y = trial % 4 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = constant_y ? 1 : static_cast<int>(uniform_below(rng, 3));
      z[i] = std::round(uniform01(rng) * 10.0) / 2.0;  // deliberate ties
    }
    const PairSet p = pairs_of(y, z, 100000);
    const auto mspl = as_set(p.with(kZPair));
    const auto mpl = as_set(p.with(kMciPair));
    EXPECT_TRUE(std::includes(mpl.begin(), mpl.end(), mspl.begin(), mspl.end()));
    if (constant_y) EXPECT_EQ(mspl, mpl);
    for (const Pair& q : p.pairs) {
      EXPECT_NE(q.i, q.j);
      if (q.tags & kYPair) EXPECT_GT(y[q.i], y[q.j]);
      if (q.tags & kZPair) EXPECT_TRUE(y[q.i] >= y[q.j] && z[q.i] > z[q.j]);
    }
  }
}

// Evaluates a loss built on scores in a fresh graph.
template <typename Fn>
double eval_scores(const std::vector<double>& s, Fn&& fn) {
  ad::Graph g;
  const ad::NodeId node = g.constant(Tensor({s.size(), 1}, s));
  return g.value(fn(g, node)).item();
}

TEST(EsmmLoss, Examples) {
  auto esmm = [](std::vector<double> ctr, std::vector<double> ctcvr, std::vector<int> y) {
    ad::Graph g;
    const auto a = g.constant(Tensor({ctr.size(), 1}, ctr));
    const auto b = g.constant(Tensor({ctcvr.size(), 1}, ctcvr));
    return g.value(esmm_loss(g, a, b, y)).item();
  };
  EXPECT_NEAR(esmm({0.5}, {0.5}, {2}), 1.386294, 1e-6);
  EXPECT_NEAR(esmm({0.5}, {0.25}, {0}), 0.980829, 1e-6);
  EXPECT_NEAR(esmm({0.5, 0.5}, {0.5, 0.25}, {2, 0}), 1.183562, 1e-6);
  // Clamping keeps saturated probabilities finite.
  EXPECT_NEAR(esmm({1.0}, {0.0}, {0}), -std::log(1e-7) - std::log1p(-1e-7), 1e-9);
  EXPECT_THROW(esmm({0.5}, {0.5}, {1, 0}), Error);
}

TEST(PairLoss, Examples) {
  const PairSet one = pairs_of({1, 0}, {0.0, 0.0});
  auto y_loss = [&](const std::vector<double>& s) {
    return eval_scores(s, [&](ad::Graph& g, ad::NodeId n) { return pairwise_ctrcvr_loss(g, n, one); });
  };
  EXPECT_NEAR(y_loss({0.4, 0.4}), std::log(2.0), 1e-15);
  EXPECT_LT(y_loss({60.0, -60.0}), 1e-25);
  EXPECT_NEAR(y_loss({0.9, 0.1}), 0.371101, 1e-6);
  EXPECT_NEAR(y_loss({0.9, 0.1}), neg_log_sigmoid(0.8), 1e-15);
  EXPECT_EQ(eval_scores({0.1, 0.2}, [&](ad::Graph& g, ad::NodeId n) { return pairwise_ctrcvr_loss(g, n, PairSet{}); }), 0.0);
}

TEST(StratifiedLoss, Examples) {
  const PairSet conflict = pairs_of({2, 0}, {1.0, 4.0});
  EXPECT_EQ(eval_scores({0.6, 0.4}, [&](ad::Graph& g, ad::NodeId n) { return stratified_pairwise_loss(g, n, conflict); }), 0.0);

  const PairSet tie = pairs_of({1, 1}, {3.0, 1.0});
  EXPECT_NEAR(eval_scores({0.5, 0.5}, [&](ad::Graph& g, ad::NodeId n) { return stratified_pairwise_loss(g, n, tie); }),
              std::log(2.0), 1e-15);

  const PairSet strat = pairs_of({2, 1}, {5.0, 1.0});
  const double v = eval_scores({0.3, 0.7}, [&](ad::Graph& g, ad::NodeId n) { return stratified_pairwise_loss(g, n, strat); });
  EXPECT_NEAR(v, 0.913015, 1e-6);
  EXPECT_NEAR(v, neg_log_sigmoid(-0.4), 1e-15);
}

TEST(UnstratifiedLoss, Examples) {
  const PairSet conflict = pairs_of({2, 0}, {1.0, 4.0});
  const double mpl = eval_scores({0.6, 0.4}, [&](ad::Graph& g, ad::NodeId n) { return unstratified_pairwise_loss(g, n, conflict); });
  EXPECT_NEAR(mpl, 0.798139, 1e-6);
  EXPECT_NEAR(mpl, neg_log_sigmoid(-0.2), 1e-15);

  const PairSet flat = pairs_of({0, 1, 2}, {1.0, 1.0, 1.0});
  EXPECT_EQ(eval_scores({0.1, 0.2, 0.3}, [&](ad::Graph& g, ad::NodeId n) { return unstratified_pairwise_loss(g, n, flat); }), 0.0);

  const PairSet ordered = pairs_of({0, 0, 0, 0}, {4.0, 3.0, 2.0, 1.0});
  ASSERT_EQ(ordered.count(kMciPair), 6u);
  const double per_pair =
      eval_scores({0.9, 0.7, 0.4, 0.1}, [&](ad::Graph& g, ad::NodeId n) { return unstratified_pairwise_loss(g, n, ordered); });
  EXPECT_LT(per_pair, std::log(2.0));
}

TEST(ConflictMasking, GradientSigns) {
  // y = [2, 0], z = [1, 4]: the order term wants s0 up, the MCI term wants s1 up.
  const PairSet pairs = pairs_of({2, 0}, {1.0, 4.0});
  auto grad = [&](auto&& loss_fn) {
    ad::Graph g;
    const ad::NodeId s = g.parameter(Tensor({2, 1}, {0.6, 0.4}));
    return g.backward(loss_fn(g, s)).at(s);
  };
  const Tensor y_term = grad([&](ad::Graph& g, ad::NodeId s) { return pairwise_ctrcvr_loss(g, s, pairs); });
  const Tensor mspl = grad([&](ad::Graph& g, ad::NodeId s) { return stratified_pairwise_loss(g, s, pairs); });
  const Tensor mpl = grad([&](ad::Graph& g, ad::NodeId s) { return unstratified_pairwise_loss(g, s, pairs); });
  EXPECT_EQ(mspl[0], 0.0);
  EXPECT_EQ(mspl[1], 0.0);
  EXPECT_LT(y_term[0], 0.0);  // descent raises s0
  EXPECT_GT(mpl[0], 0.0);     // descent lowers s0
  EXPECT_LT(y_term[0] * mpl[0], 0.0);
}

TEST(PairLoss, PermutationInvariant) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 8;
    std::vector<int> y(n);
    std::vector<double> z(n);
    std::vector<double> s(n);
    std::vector<double> ctr(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(uniform_below(rng, 3));
      z[i] = uniform01(rng) * 5.0;
      s[i] = uniform01(rng);
      ctr[i] = std::max(s[i], uniform01(rng));
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> py(n);
    std::vector<double> pz(n), ps(n), pctr(n);
    for (std::size_t i = 0; i < n; ++i) {
      py[i] = y[perm[i]];
      pz[i] = z[perm[i]];
      ps[i] = s[perm[i]];
      pctr[i] = ctr[perm[i]];
    }
    const PairSet a = pairs_of(y, z, 100000);
    const PairSet b = pairs_of(py, pz, 100000);
    auto total = [](const std::vector<double>& sc, const std::vector<double>& c, const std::vector<int>& labels,
                    const PairSet& p) {
      ad::Graph g;
      const auto sn = g.constant(Tensor({sc.size(), 1}, sc));
      const auto cn = g.constant(Tensor({c.size(), 1}, c));
      return std::array{g.value(pairwise_ctrcvr_loss(g, sn, p)).item(), g.value(stratified_pairwise_loss(g, sn, p)).item(),
                        g.value(unstratified_pairwise_loss(g, sn, p)).item(), g.value(esmm_loss(g, cn, sn, labels)).item()};
    };
    const auto va = total(s, ctr, y, a);
    const auto vb = total(ps, pctr, py, b);
    for (std::size_t k = 0; k < va.size(); ++k) EXPECT_NEAR(va[k], vb[k], 1e-12);
  }
}

TEST(MonotonicPenalty, ScalarExamples) {
  {
    ad::Graph g;
    const ad::NodeId x = g.variable(Tensor({3, 1}, {0.1, 0.5, 0.9}));
    const Tensor grad = g.backward(ad::sum(g, ad::neg(g, x))).at(x);
    EXPECT_EQ(monotonic_penalty(grad), 1.0);
  }
  {
    ad::Graph g;
    const ad::NodeId x = g.variable(Tensor({2, 2}, {0.1, 0.2, 0.3, 0.4}));
    const ad::NodeId w = g.constant(Tensor({2, 1}, {1.0, -2.0}));
    const Tensor grad = g.backward(ad::sum(g, ad::matmul(g, x, w))).at(x);
    EXPECT_EQ(monotonic_penalty(grad), 1.0);
  }
}

SimulatedLog small_log() {
  WorldConfig c;
  c.n_users = 40;
  c.n_hotels = 30;
  c.n_sessions = 10;
  c.hotels_per_session = 10;
  c.n_cities = 3;
  c.seed = 31;
  return simulate_impressions(generate_world(c), c);
}

models::ModelSpec small_spec(models::Architecture arch, const SimulatedLog& log) {
  models::ModelSpec s;
  s.arch = arch;
  s.tower_sizes = {8, 4, 1};
  s.monotone_sizes = {6, 3, 1};
  s.minmax_groups = 3;
  s.minmax_units = 3;
  s.schema = log.train.schema;
  return s;
}

TEST(MonotonicPenalty, ZeroOnStructurallyMonotoneModels) {
  const SimulatedLog log = small_log();
  const models::Batch batch = models::make_batch(log.train, 0, log.train.size());
  for (auto arch : {models::Architecture::kMerit, models::Architecture::kMeritMinMax}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      models::Model m(small_spec(arch, log), seed);
      std::mt19937_64 rng(seed);
      for (auto& e : m.params().entries()) e.value = random_tensor(rng, e.value.shape(), -2.0, 2.0);
      EXPECT_LT(pointwise_monotonic_penalty(m, batch), 1e-12);
    }
  }
}

// MERIT_PML whose merchant MLP decreases in every MCI input.
models::Model planted_anti_monotone(const SimulatedLog& log) {
  models::Model m(small_spec(models::Architecture::kMeritPml, log), 3);
  const std::size_t d = m.embedding_width();
  for (auto& e : m.params().entries()) {
    if (e.name.rfind("phi.", 0) != 0 || e.name.back() != 'w') continue;
    if (e.name.find(".l0.") != std::string::npos) {
      for (std::size_t r = d; r < e.value.dim(0); ++r) {
        for (std::size_t c = 0; c < e.value.dim(1); ++c) e.value.at(r, c) = -1.0;
      }
    } else {
      for (double& v : e.value.data()) v = std::abs(v) + 0.1;
    }
  }
  return m;
}

TEST(MonotonicPenalty, PositiveOnPlantedAntiMonotoneModel) {
  const SimulatedLog log = small_log();
  const models::Batch batch = models::make_batch(log.train, 0, log.train.size());
  const models::Model m = planted_anti_monotone(log);
  const double backward_penalty = pointwise_monotonic_penalty(m, batch);
  EXPECT_GT(backward_penalty, 0.0);

  // The in-graph tangent form used for training agrees.
  ad::Graph g;
  GraphParams p(g, m.params());
  models::ForwardOptions o;
  o.mci_tangents = true;
  const models::Outputs out = m.forward(p, batch, o);
  EXPECT_NEAR(g.value(monotonic_penalty(g, out.score_tangents)).item(), backward_penalty, 1e-15 + 1e-10 * backward_penalty);
}

TEST(CombineLosses, Examples) {
  EXPECT_NEAR(combine_losses(1.0, 0.5, 0.2, LossWeights{1.0, 0.1}), 1.52, 1e-15);
  EXPECT_EQ(combine_losses(0.8, 0.5, 0.2, LossWeights{0.0, 0.0}), 0.8);
  const double a = combine_losses(1.0, 0.5, 0.2, LossWeights{1.0, 0.1});
  const double b = combine_losses(1.0, 0.5, 0.2, LossWeights{1.0, 0.2});
  EXPECT_NEAR(b - a, 0.1 * 0.2, 1e-15);
  EXPECT_THROW(combine_losses(1.0, 0.5, 0.2, LossWeights{-1.0, 0.1}), Error);
  EXPECT_THROW(combine_losses(NAN, 0.5, 0.2, LossWeights{}), Error);

  ad::Graph g;
  const auto e = g.constant(Tensor::scalar(1.0));
  const auto y = g.constant(Tensor::scalar(0.5));
  const auto z = g.constant(Tensor::scalar(0.2));
  EXPECT_EQ(g.value(combine_losses(g, e, y, z, LossWeights{1.0, 0.1})).item(), combine_losses(1.0, 0.5, 0.2, LossWeights{}));
}

TEST(Objectives, GradCheckEveryLoss) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 9;
    std::vector<int> y(n);
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(uniform_below(rng, 3));
      z[i] = std::round(uniform01(rng) * 8.0) / 2.0;
    }
    const PairSet pairs = pairs_of(y, z);
    ParamStore s;
    s.add("ctr_logit", random_tensor(rng, {n, 1}, -2.0, 2.0));
    s.add("cvr_logit", random_tensor(rng, {n, 1}, -2.0, 2.0));
    s.add("tangent", random_tensor(rng, {n, 1}, -1.0, 1.0));
    s.add("tangent2", random_tensor(rng, {n, 1}, -1.0, 1.0));
    const LossWeights w{0.5 + uniform01(rng), uniform01(rng)};

    auto scores = [](GraphParams& p) {
      ad::Graph& g = p.graph();
      const auto ctr = ad::sigmoid(g, p("ctr_logit"));
      return std::pair{ctr, ad::mul(g, ctr, ad::sigmoid(g, p("cvr_logit")))};
    };
    const std::vector<std::function<ad::NodeId(GraphParams&)>> losses = {
        [&](GraphParams& p) {
          auto [ctr, ctcvr] = scores(p);
          return esmm_loss(p.graph(), ctr, ctcvr, y);
        },
        [&](GraphParams& p) { return pairwise_ctrcvr_loss(p.graph(), scores(p).second, pairs); },
        [&](GraphParams& p) { return stratified_pairwise_loss(p.graph(), scores(p).second, pairs); },
        [&](GraphParams& p) { return unstratified_pairwise_loss(p.graph(), scores(p).second, pairs); },
        [&](GraphParams& p) {
          const std::array t{p("tangent"), p("tangent2")};
          return monotonic_penalty(p.graph(), t);
        },
        [&](GraphParams& p) {
          ad::Graph& g = p.graph();
          auto [ctr, ctcvr] = scores(p);
          return combine_losses(g, esmm_loss(g, ctr, ctcvr, y), pairwise_ctrcvr_loss(g, ctcvr, pairs),
                                stratified_pairwise_loss(g, ctcvr, pairs), w);
        },
    };
    for (std::size_t k = 0; k < losses.size(); ++k) {
      EXPECT_LT(store_grad_check(s, losses[k]), 1e-4) << "loss " << k << " seed " << seed;
    }
  }
}

}  // namespace
}  // namespace merit::objectives
