#include "merit/verify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "merit/metrics.hpp"
#include "merit/objectives.hpp"
#include "merit/rng.hpp"

namespace merit::verify {

using ad::Graph;
using ad::NodeId;
using ad::Tensor;
using layers::GraphParams;
using layers::ParamStore;

nlohmann::json CheckResult::to_json() const {
  return {{"name", name},         {"passed", passed()}, {"cases", cases}, {"checks", checks},
          {"failures", failures}, {"worst", worst},     {"detail", detail}};
}

double store_grad_check(ParamStore& store, const std::function<NodeId(GraphParams&)>& loss_fn, double eps,
                        double floor, double retry_eps) {
  Graph g;
  GraphParams p(g, store);
  const NodeId loss = loss_fn(p);
  const ad::GradientMap grads = g.backward(loss);
  auto eval = [&] {
    Graph h;
    GraphParams q(h, store);
    return h.value(loss_fn(q)).item();
  };
  double worst = 0.0;
  for (const auto& [index, node] : p.bound()) {
    const Tensor analytic = grads.at(node);
    Tensor& value = store.entries()[index].value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      auto rel_error = [&](double h) {
        value[i] = saved + h;
        const double up = eval();
        value[i] = saved - h;
        const double down = eval();
        value[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
        return std::abs(analytic[i] - numeric) / denom;
      };
      double err = rel_error(eps);
      if (retry_eps > 0.0 && err > 1e-6) err = std::min(err, rel_error(retry_eps));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

namespace {

CheckResult named(std::string name) {
  CheckResult r;
  r.name = std::move(name);
  return r;
}

Tensor random_tensor(std::mt19937_64& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

// Scalar loss weighting every output entry differently.
NodeId weighted_sum(Graph& g, NodeId out, std::mt19937_64& rng) {
  return ad::sum(g, ad::mul(g, out, g.constant(random_tensor(rng, g.value(out).shape()))));
}

void note_failure(CheckResult& r, const std::string& what) {
  ++r.failures;
  if (r.detail.empty()) r.detail = what;
}

// Runs `make(seed, store)` for each configuration and grad-checks the loss it returns.
CheckResult grad_suite(const std::string& name, std::uint64_t seed, std::size_t configs,
                       const std::function<std::function<NodeId(GraphParams&)>(std::mt19937_64&, ParamStore&)>& make) {
  CheckResult r = named(name);
  for (std::size_t c = 0; c < configs; ++c) {
    std::mt19937_64 rng(rng_stream(seed, c));
    ParamStore store;
    const auto loss_fn = make(rng, store);
    const double err = store_grad_check(store, loss_fn);
    ++r.cases;
    for (const auto& e : store.entries()) r.checks += e.value.size();
    r.worst = std::max(r.worst, err);
    if (!(err < kGradTolerance)) note_failure(r, "configuration " + std::to_string(c) + ": error " + std::to_string(err));
  }
  return r;
}

}  // namespace

std::vector<CheckResult> gradient_checks(std::uint64_t seed, std::size_t configs) {
  using namespace layers;
  std::vector<CheckResult> out;

  out.push_back(grad_suite("grad.embedding", seed, configs, [](std::mt19937_64& rng, ParamStore& s) {
    auto t = std::make_shared<EmbeddingTable>(EmbeddingTable{"emb", 7, 4});
    t->init(s, rng);
    const std::vector<std::size_t> idx{0, 6, 3, 3, 1};
    const std::uint64_t w = rng();
    return [t, idx, w](GraphParams& p) {
      std::mt19937_64 wr(w);
      return weighted_sum(p.graph(), ad::tanh(p.graph(), t->lookup(p, idx)), wr);
    };
  }));

  out.push_back(grad_suite("grad.cross_network", seed, configs, [](std::mt19937_64& rng, ParamStore& s) {
    auto net = std::make_shared<CrossNetwork>(CrossNetwork{"dcn", 8, 2});
    net->init(s, rng);
    for (std::size_t l = 0; l < 2; ++l) s.get(net->bias(l)) = random_tensor(rng, {1, 8}, -0.5, 0.5);
    s.add("x", random_tensor(rng, {3, 8}));
    const std::uint64_t w = rng();
    return [net, w](GraphParams& p) {
      std::mt19937_64 wr(w);
      return weighted_sum(p.graph(), net->forward(p, p("x")), wr);
    };
  }));

  for (const Activation act : {Activation::kRelu, Activation::kTanh}) {
    const std::string name = act == Activation::kRelu ? "grad.mlp_relu" : "grad.mlp_tanh";
    out.push_back(grad_suite(name, seed, configs, [act](std::mt19937_64& rng, ParamStore& s) {
      auto t = std::make_shared<MlpTower>(MlpTower{"psi", 6, {8, 5, 1}, act});
      t->init(s, rng);
      for (std::size_t l = 0; l < 3; ++l) s.get(t->bias(l)) = random_tensor(rng, s.get(t->bias(l)).shape(), -0.3, 0.3);
      s.add("x", random_tensor(rng, {4, 6}));
      const std::uint64_t w = rng();
      return [t, w](GraphParams& p) {
        std::mt19937_64 wr(w);
        return weighted_sum(p.graph(), t->forward(p, p("x"), false), wr);
      };
    }));
  }

  out.push_back(grad_suite("grad.monotone_tower", seed, configs, [](std::mt19937_64& rng, ParamStore& s) {
    auto t = std::make_shared<MonotoneTower>(MonotoneTower{"phi", 4, 9, {6, 3, 1}});
    t->init(s, rng);
    // Free weights well negative keep the tanh units away from saturation.
    for (auto& e : s.entries()) {
      const bool free = e.name.back() == 'v';
      e.value = random_tensor(rng, e.value.shape(), free ? -3.0 : -0.5, free ? -1.0 : 0.5);
    }
    s.add("e", random_tensor(rng, {3, 4}));
    s.add("x", random_tensor(rng, {3, 9}, 0.0, 1.0));
    const std::uint64_t w = rng();
    return [t, w](GraphParams& p) {
      std::mt19937_64 wr(w);
      return weighted_sum(p.graph(), t->forward(p, p("e"), p("x")), wr);
    };
  }));

  out.push_back(grad_suite("grad.minmax", seed, configs, [](std::mt19937_64& rng, ParamStore& s) {
    auto net = std::make_shared<MinMaxNet>(MinMaxNet{"mm", 9, 3, 4});
    net->init(s, rng);
    for (auto& e : s.entries()) e.value = random_tensor(rng, e.value.shape(), -1.5, 1.5);
    s.add("x", random_tensor(rng, {5, 9}, 0.0, 1.0));
    const std::uint64_t w = rng();
    return [net, w](GraphParams& p) {
      std::mt19937_64 wr(w);
      return weighted_sum(p.graph(), net->forward(p, p("x")), wr);
    };
  }));

  out.push_back(grad_suite("grad.expert_gate", seed, configs, [](std::mt19937_64& rng, ParamStore& s) {
    auto gate = std::make_shared<ExpertGate>(ExpertGate{"gate", 4, 3});
    auto expert = std::make_shared<MlpTower>(MlpTower{"ex", 4, {5, 2}, Activation::kTanh, Activation::kTanh, 0.0});
    gate->init(s, rng);
    expert->init(s, rng);
    s.add("x", random_tensor(rng, {3, 4}));
    s.add("e1", random_tensor(rng, {3, 2}));
    s.add("e2", random_tensor(rng, {3, 2}));
    const std::uint64_t w = rng();
    return [gate, expert, w](GraphParams& p) {
      std::mt19937_64 wr(w);
      const NodeId x = p("x");
      return weighted_sum(p.graph(), gate->forward(p, x, {expert->forward(p, x, false), p("e1"), p("e2")}).output, wr);
    };
  }));

  // Losses over a session of nine impressions with random labels and MCI.
  using namespace objectives;
  struct LossCase {
    std::vector<int> y;
    PairSet pairs;
    LossWeights w;
  };
  auto loss_case = [](std::mt19937_64& rng, ParamStore& s) {
    auto c = std::make_shared<LossCase>();
    const std::size_t n = 9;
    std::vector<double> z(n);
    c->y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      c->y[i] = static_cast<int>(uniform_below(rng, 3));
      z[i] = std::round(uniform01(rng) * 8.0) / 2.0;
    }
    std::mt19937_64 pair_rng(rng());
    c->pairs = enumerate_session_pairs(c->y, z, kDefaultPairCap, pair_rng);
    c->w = LossWeights{0.5 + uniform01(rng), uniform01(rng)};
    s.add("ctr_logit", random_tensor(rng, {n, 1}, -2.0, 2.0));
    s.add("cvr_logit", random_tensor(rng, {n, 1}, -2.0, 2.0));
    s.add("tangent", random_tensor(rng, {n, 1}));
    s.add("tangent2", random_tensor(rng, {n, 1}));
    return c;
  };
  auto probs = [](GraphParams& p) {
    Graph& g = p.graph();
    const NodeId ctr = ad::sigmoid(g, p("ctr_logit"));
    return std::pair{ctr, ad::mul(g, ctr, ad::sigmoid(g, p("cvr_logit")))};
  };
  using LossFn = std::function<NodeId(const LossCase&, GraphParams&)>;
  const std::vector<std::pair<std::string, LossFn>> losses = {
      {"grad.loss_esmm",
       [probs](const LossCase& c, GraphParams& p) {
         auto [ctr, ctcvr] = probs(p);
         return esmm_loss(p.graph(), ctr, ctcvr, c.y);
       }},
      {"grad.loss_pair_ctrcvr",
       [probs](const LossCase& c, GraphParams& p) { return pairwise_ctrcvr_loss(p.graph(), probs(p).second, c.pairs); }},
      {"grad.loss_mspl",
       [probs](const LossCase& c, GraphParams& p) { return stratified_pairwise_loss(p.graph(), probs(p).second, c.pairs); }},
      {"grad.loss_mpl",
       [probs](const LossCase& c, GraphParams& p) {
         return unstratified_pairwise_loss(p.graph(), probs(p).second, c.pairs);
       }},
      {"grad.loss_monotonic_penalty",
       [](const LossCase&, GraphParams& p) {
         const std::array t{p("tangent"), p("tangent2")};
         return monotonic_penalty(p.graph(), t);
       }},
      {"grad.loss_combined",
       [probs](const LossCase& c, GraphParams& p) {
         Graph& g = p.graph();
         auto [ctr, ctcvr] = probs(p);
         return combine_losses(g, esmm_loss(g, ctr, ctcvr, c.y), pairwise_ctrcvr_loss(g, ctcvr, c.pairs),
                               stratified_pairwise_loss(g, ctcvr, c.pairs), c.w);
       }},
  };
  for (const auto& [name, fn] : losses) {
    out.push_back(grad_suite(name, seed, configs, [&loss_case, fn](std::mt19937_64& rng, ParamStore& s) {
      auto c = loss_case(rng, s);
      return [c, fn](GraphParams& p) { return fn(*c, p); };
    }));
  }
  return out;
}

CheckResult monotonicity_check(const models::Model& model, const models::Batch& batch, double step) {
  CheckResult r = named("monotonicity");
  r.cases = 1;
  const models::Predictions base = model.predict(batch);
  for (std::size_t k = 0; k < kMciDim; ++k) {
    models::Batch up = batch;
    for (std::size_t row = 0; row < up.rows; ++row) up.mci.at(row, k) += step;
    const models::Predictions moved = model.predict(up);
    for (std::size_t row = 0; row < up.rows; ++row) {
      const std::array<double, 3> delta = {moved.pctr[row] - base.pctr[row], moved.pcvr[row] - base.pcvr[row],
                                           moved.pctcvr[row] - base.pctcvr[row]};
      for (double d : delta) {
        ++r.checks;
        if (d < kMonotoneSlack) {
          r.worst = std::max(r.worst, -d);
          note_failure(r, "row " + std::to_string(row) + " coordinate " + std::to_string(k));
        }
      }
    }
  }
  return r;
}

namespace {

SimulatedLog small_world(std::uint64_t seed) {
  WorldConfig c;
  c.n_users = 80;
  c.n_hotels = 120;
  c.n_sessions = 60;
  c.hotels_per_session = 10;
  c.n_cities = 4;
  c.seed = seed;
  return simulate_impressions(generate_world(c), c);
}

void merge(CheckResult& into, const CheckResult& part, const std::string& label) {
  into.cases += part.cases;
  into.checks += part.checks;
  into.worst = std::max(into.worst, part.worst);
  if (part.failures > 0) {
    into.failures += part.failures;
    if (into.detail.empty()) into.detail = label + ": " + part.detail;
  }
}

}  // namespace

models::Batch random_batch(const std::shared_ptr<const FeatureSchema>& schema, const Dataset& source, std::size_t rows,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<const Impression*> picked;
  picked.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) picked.push_back(&source.impressions[uniform_below(rng, source.size())]);
  models::Batch batch = models::make_batch(*schema, picked);
  batch.mci = random_tensor(rng, {rows, kMciDim}, 0.0, 1.0);
  return batch;
}

CheckResult random_model_monotonicity(std::uint64_t seed, std::size_t models_per_arch, std::size_t rows) {
  CheckResult r = named("monotonicity.random_models");
  const SimulatedLog log = small_world(seed);
  for (const auto arch : {models::Architecture::kMerit, models::Architecture::kMeritMinMax}) {
    for (std::size_t m = 0; m < models_per_arch; ++m) {
      const std::uint64_t s = rng_stream(seed, m)();
      models::ModelSpec spec;
      spec.arch = arch;
      spec.schema = log.train.schema;
      models::Model model(spec, s);
      std::mt19937_64 rng(s);
      for (auto& e : model.params().entries()) e.value = random_tensor(rng, e.value.shape(), -2.0, 2.0);
      const models::Batch batch = random_batch(log.train.schema, log.train, rows, s + 1);
      merge(r, monotonicity_check(model, batch), std::string(models::to_string(arch)) + " model " + std::to_string(m));
    }
  }
  return r;
}

namespace {

// O(n^2) pair count: concordant pairs score 1, ties 1/2.
std::optional<double> brute_auc(const std::vector<double>& s, const std::vector<int>& l) {
  double pos = 0.0;
  double neg = 0.0;
  for (int label : l) (label ? pos : neg) += 1.0;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  double twice = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!l[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!l[j]) twice += s[i] > s[j] ? 2.0 : (s[i] == s[j] ? 1.0 : 0.0);
    }
  }
  return twice / (2.0 * pos * neg);
}

std::optional<double> brute_gauc(const std::vector<double>& s, const std::vector<int>& l,
                                 const std::vector<std::uint64_t>& users) {
  std::map<std::uint64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < s.size(); ++i) groups[users[i]].push_back(i);
  double weighted = 0.0;
  double total = 0.0;
  for (const auto& [user, idx] : groups) {
    std::vector<double> gs;
    std::vector<int> gl;
    for (std::size_t i : idx) {
      gs.push_back(s[i]);
      gl.push_back(l[i]);
    }
    const auto a = brute_auc(gs, gl);
    if (!a) continue;
    weighted += static_cast<double>(idx.size()) * *a;
    total += static_cast<double>(idx.size());
  }
  if (total == 0.0) return std::nullopt;
  return weighted / total;
}

// Rank by repeated selection of the best remaining item (lowest index wins ties).
double brute_ndcg(const std::vector<double>& s, const std::vector<double>& z, std::size_t k) {
  const std::size_t n = s.size();
  std::vector<bool> used(n, false);
  double dcg = 0.0;
  for (std::size_t rank = 1; rank <= std::min(k, n); ++rank) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!used[i] && (best == n || s[i] > s[best])) best = i;
    }
    used[best] = true;
    dcg += z[best] / std::log2(rank + 1.0);
  }
  std::vector<double> ideal = z;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t rank = 1; rank <= std::min(k, n); ++rank) idcg += ideal[rank - 1] / std::log2(rank + 1.0);
  if (idcg == 0.0) return 1.0;
  return std::min(1.0, dcg / idcg);
}

double brute_wndcg(const std::vector<double>& s, const std::vector<double>& z,
                   const std::vector<std::uint64_t>& sessions, std::size_t k) {
  std::map<std::uint64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < s.size(); ++i) groups[sessions[i]].push_back(i);
  double weighted = 0.0;
  double total = 0.0;
  for (const auto& [id, idx] : groups) {
    std::vector<double> gs;
    std::vector<double> gz;
    for (std::size_t i : idx) {
      gs.push_back(s[i]);
      gz.push_back(z[i]);
    }
    weighted += static_cast<double>(idx.size()) * brute_ndcg(gs, gz, k);
    total += static_cast<double>(idx.size());
  }
  return total == 0.0 ? 0.0 : weighted / total;
}

bool same(const std::optional<double>& a, const std::optional<double>& b) {
  return a.has_value() == b.has_value() && (!a || *a == *b);
}

}  // namespace

CheckResult metric_oracles(std::uint64_t seed, std::size_t instances, std::size_t threads) {
  CheckResult r = named("metric_oracles");
  for (std::size_t inst = 0; inst < instances; ++inst) {
    std::mt19937_64 rng(rng_stream(seed, inst));
    const std::size_t n = 1 + uniform_below(rng, 50);
    const std::size_t levels = 2 + uniform_below(rng, 6);  // coarse scores force ties
    const std::size_t groups = 1 + uniform_below(rng, 6);
    std::vector<double> s(n);
    std::vector<double> z(n);
    std::vector<int> l(n);
    std::vector<std::uint64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(uniform_below(rng, levels)) / static_cast<double>(levels);
      z[i] = std::round(uniform01(rng) * 10.0) / 2.0;
      l[i] = uniform01(rng) < 0.3 ? 1 : 0;
      ids[i] = 100 + uniform_below(rng, groups);
    }
    ++r.cases;
    auto check = [&](bool ok, const std::string& what) {
      ++r.checks;
      if (!ok) note_failure(r, "instance " + std::to_string(inst) + ": " + what);
    };
    check(same(metrics::auc(s, l), brute_auc(s, l)), "auc");
    check(same(metrics::gauc(s, l, ids, threads).value, brute_gauc(s, l, ids)), "gauc");
    for (std::size_t k : {1UL, 5UL, 10UL, 20UL, 60UL}) {
      check(metrics::ndcg_at_k(s, z, k) == brute_ndcg(s, z, k), "ndcg@" + std::to_string(k));
      check(metrics::wndcg_at_k(s, z, ids, k, threads) == brute_wndcg(s, z, ids, k), "wndcg@" + std::to_string(k));
    }
  }
  return r;
}

CheckResult entire_space_identity(std::uint64_t seed) {
  CheckResult r = named("entire_space_identity");
  const SimulatedLog log = small_world(seed);
  const models::Batch batch = models::make_batch(log.train, 0, std::min<std::size_t>(log.train.size(), 300));
  for (const auto arch : models::all_architectures()) {
    models::ModelSpec spec;
    spec.arch = arch;
    spec.tower_sizes = {32, 16, 1};
    spec.trunk_sizes = {32, 16};
    spec.head_sizes = {8, 1};
    spec.schema = log.train.schema;
    const models::Model model(spec, seed);
    for (const bool training : {false, true}) {
      Graph g;
      GraphParams p(g, model.params());
      std::mt19937_64 rng(seed);
      models::ForwardOptions o;
      o.training = training;
      o.rng = &rng;
      o.mci_tangents = arch == models::Architecture::kMeritPml;
      const models::Outputs out = model.forward(p, batch, o);
      const Tensor& ctr = g.value(out.pctr);
      const Tensor& cvr = g.value(out.pcvr);
      const Tensor& ctcvr = g.value(out.pctcvr);
      ++r.cases;
      for (std::size_t i = 0; i < ctcvr.size(); ++i) {
        ++r.checks;
        if (ctcvr[i] != ctr[i] * cvr[i]) note_failure(r, std::string(models::to_string(arch)) + " row " + std::to_string(i));
      }
    }
    const models::Predictions pred = model.predict(batch);
    for (std::size_t i = 0; i < pred.pctcvr.size(); ++i) {
      ++r.checks;
      if (pred.pctcvr[i] != pred.pctr[i] * pred.pcvr[i]) {
        note_failure(r, std::string(models::to_string(arch)) + " predict row " + std::to_string(i));
      }
    }
  }
  return r;
}

CheckResult conflict_masking() {
  using namespace objectives;
  CheckResult r = named("conflict_masking");
  std::mt19937_64 rng(0);
  const std::vector<int> y{2, 0};
  const std::vector<double> z{1.0, 4.0};
  const PairSet pairs = enumerate_session_pairs(y, z, kDefaultPairCap, rng);
  auto grad = [&](NodeId (*loss)(Graph&, NodeId, const PairSet&)) {
    Graph g;
    const NodeId s = g.parameter(Tensor({2, 1}, {0.6, 0.4}));
    return g.backward(loss(g, s, pairs)).at(s);
  };
  const Tensor y_term = grad(&pairwise_ctrcvr_loss);
  const Tensor mspl = grad(&stratified_pairwise_loss);
  const Tensor mpl = grad(&unstratified_pairwise_loss);
  r.cases = 1;
  auto check = [&](bool ok, const std::string& what) {
    ++r.checks;
    if (!ok) note_failure(r, what);
  };
  check(mspl[0] == 0.0 && mspl[1] == 0.0, "stratified gradient is not exactly zero");
  check(y_term[0] * mpl[0] < 0.0, "unstratified gradient on the ordered item does not oppose the order term");
  check(y_term[1] * mpl[1] < 0.0, "unstratified gradient on the other item does not oppose the order term");
  r.worst = std::max(std::abs(mspl[0]), std::abs(mspl[1]));
  return r;
}

CheckResult penalty_consistency(std::uint64_t seed) {
  CheckResult r = named("penalty_consistency");
  const SimulatedLog log = small_world(seed);
  const models::Batch batch = models::make_batch(log.train, 0, std::min<std::size_t>(log.train.size(), 400));
  auto spec_for = [&](models::Architecture arch) {
    models::ModelSpec spec;
    spec.arch = arch;
    spec.tower_sizes = {16, 8, 1};
    spec.monotone_sizes = {8, 4, 1};
    spec.minmax_groups = 4;
    spec.minmax_units = 3;
    spec.schema = log.train.schema;
    return spec;
  };
  for (const auto arch : {models::Architecture::kMerit, models::Architecture::kMeritMinMax}) {
    for (std::uint64_t m = 0; m < 5; ++m) {
      models::Model model(spec_for(arch), rng_stream(seed, m)());
      std::mt19937_64 rng(rng_stream(seed, 100 + m));
      for (auto& e : model.params().entries()) e.value = random_tensor(rng, e.value.shape(), -2.0, 2.0);
      const double penalty = objectives::pointwise_monotonic_penalty(model, batch);
      ++r.cases;
      ++r.checks;
      r.worst = std::max(r.worst, penalty);
      if (!(penalty < 1e-12)) note_failure(r, std::string(models::to_string(arch)) + " penalty " + std::to_string(penalty));
    }
  }
  // MERIT_PML whose merchant MLP decreases in every MCI input: MCI rows of
  // the first layer are negative, every later weight a small positive value
  // (large ones would saturate tanh and flatten the response).
  models::Model planted(spec_for(models::Architecture::kMeritPml), seed);
  const std::size_t width = planted.embedding_width();
  for (auto& e : planted.params().entries()) {
    if (e.name.rfind("phi.", 0) != 0 || e.name.back() != 'w') continue;
    if (e.name.find(".l0.") != std::string::npos) {
      for (std::size_t row = width; row < e.value.dim(0); ++row) {
        for (std::size_t c = 0; c < e.value.dim(1); ++c) e.value.at(row, c) = -0.3;
      }
    } else {
      std::fill(e.value.data().begin(), e.value.data().end(), 0.05);
    }
  }
  const double penalty = objectives::pointwise_monotonic_penalty(planted, batch);
  ++r.cases;
  ++r.checks;
  if (!(penalty > 0.0)) note_failure(r, "planted anti-monotone model has penalty " + std::to_string(penalty));
  return r;
}

std::vector<CheckResult> run_all(std::uint64_t seed, std::size_t threads) {
  std::vector<CheckResult> out = gradient_checks(seed);
  out.push_back(random_model_monotonicity(seed));
  out.push_back(metric_oracles(seed, 200, threads));
  out.push_back(entire_space_identity(seed));
  out.push_back(conflict_masking());
  out.push_back(penalty_consistency(seed));
  return out;
}

}  // namespace merit::verify
