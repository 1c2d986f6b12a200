#include "merit/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "merit/error.hpp"
#include "merit/rng.hpp"

namespace merit::objectives {

std::vector<Pair> PairSet::with(PairTag tag) const {
  std::vector<Pair> out;
  for (const Pair& p : pairs) {
    if (p.tags & tag) out.push_back(p);
  }
  return out;
}

std::size_t PairSet::count(PairTag tag) const {
  return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [&](const Pair& p) { return p.tags & tag; }));
}

void enumerate_session_pairs(std::span<const int> y, std::span<const double> z, std::uint32_t offset,
                             std::size_t cap, std::mt19937_64& rng, PairSet& out) {
  if (y.size() != z.size()) fail(ErrorKind::kShape, "enumerate_session_pairs: y and z lengths differ");
  if (y.size() < 2) fail(ErrorKind::kInvalidArgument, "enumerate_session_pairs: session needs at least 2 impressions");
  std::vector<Pair> found;
  const auto n = static_cast<std::uint32_t>(y.size());
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < n; ++j) {
      if (i == j) continue;
      std::uint8_t tags = 0;
      const bool z_greater = z[i] > z[j] + kZTieTolerance;
      if (y[i] > y[j]) tags |= kYPair;
      if (z_greater && y[i] >= y[j]) tags |= kZPair;
      if (z_greater) tags |= kMciPair;
      if (tags) found.push_back({offset + i, offset + j, tags});
    }
  }
  if (found.size() > cap) {
    // Selection sampling (Knuth's algorithm S): keeps order, exactly `cap`.
    std::vector<Pair> kept;
    kept.reserve(cap);
    std::size_t remaining = found.size();
    for (const Pair& p : found) {
      const std::size_t need = cap - kept.size();
      if (need == 0) break;
      if (uniform_below(rng, remaining) < need) kept.push_back(p);
      --remaining;
    }
    found = std::move(kept);
  }
  out.pairs.insert(out.pairs.end(), found.begin(), found.end());
}

PairSet enumerate_session_pairs(std::span<const int> y, std::span<const double> z, std::size_t cap,
                                std::mt19937_64& rng) {
  PairSet out;
  enumerate_session_pairs(y, z, 0, cap, rng, out);
  return out;
}

NodeId esmm_loss(Graph& g, NodeId pctr, NodeId pctcvr, std::span<const int> y) {
  const ad::Tensor& p = g.value(pctr);
  if (p.rows() != y.size() || g.value(pctcvr).rows() != y.size()) {
    fail(ErrorKind::kShape, "esmm_loss: " + std::to_string(y.size()) + " labels for " + std::to_string(p.rows()) + " rows");
  }
  ad::Tensor click({y.size(), 1});
  ad::Tensor order({y.size(), 1});
  for (std::size_t k = 0; k < y.size(); ++k) {
    click[k] = y[k] > 0 ? 1.0 : 0.0;
    order[k] = y[k] == 2 ? 1.0 : 0.0;
  }
  auto bce = [&](NodeId prob, ad::Tensor target) {
    const NodeId q = ad::clamp(g, prob, kProbClamp, 1.0 - kProbClamp);
    ad::Tensor complement = target;
    for (double& v : complement.data()) v = 1.0 - v;
    const NodeId pos = ad::mul(g, g.constant(std::move(target)), ad::log(g, q));
    const NodeId neg = ad::mul(g, g.constant(std::move(complement)), ad::log(g, ad::add_scalar(g, ad::neg(g, q), 1.0)));
    return ad::neg(g, ad::add(g, pos, neg));
  };
  const NodeId loss = ad::mean(g, ad::add(g, bce(pctr, std::move(click)), bce(pctcvr, std::move(order))));
  if (!std::isfinite(g.value(loss).item())) fail(ErrorKind::kNonFinite, "esmm_loss: non-finite loss");
  return loss;
}

NodeId pair_logistic_loss(Graph& g, NodeId scores, std::span<const Pair> pairs) {
  if (pairs.empty()) return g.constant(ad::Tensor::scalar(0.0));
  std::vector<std::size_t> left;
  std::vector<std::size_t> right;
  left.reserve(pairs.size());
  right.reserve(pairs.size());
  for (const Pair& p : pairs) {
    left.push_back(p.i);
    right.push_back(p.j);
  }
  const NodeId diff = ad::sub(g, ad::gather_rows(g, scores, std::move(left)), ad::gather_rows(g, scores, std::move(right)));
  return ad::mean(g, ad::softplus(g, ad::neg(g, diff)));
}

NodeId pairwise_ctrcvr_loss(Graph& g, NodeId scores, const PairSet& pairs) {
  return pair_logistic_loss(g, scores, pairs.with(kYPair));
}

NodeId stratified_pairwise_loss(Graph& g, NodeId scores, const PairSet& pairs) {
  return pair_logistic_loss(g, scores, pairs.with(kZPair));
}

NodeId unstratified_pairwise_loss(Graph& g, NodeId scores, const PairSet& pairs) {
  return pair_logistic_loss(g, scores, pairs.with(kMciPair));
}

NodeId monotonic_penalty(Graph& g, std::span<const NodeId> score_derivatives) {
  if (score_derivatives.empty()) fail(ErrorKind::kInvalidArgument, "monotonic_penalty: no derivatives");
  const NodeId joined = ad::concat(g, score_derivatives);  // [rows, k]
  return ad::mean(g, ad::relu(g, ad::neg(g, joined)));
}

double pointwise_monotonic_penalty(const models::Model& model, const models::Batch& batch) {
  Graph g;
  layers::GraphParams p(g, model.params());
  models::ForwardOptions o;
  o.mci_variable = true;
  const models::Outputs out = model.forward(p, batch, o);
  return monotonic_penalty(g.backward(ad::sum(g, out.pctcvr)).at(out.mci));
}

double monotonic_penalty(const ad::Tensor& score_gradients) {
  double total = 0.0;
  for (double v : score_gradients.data()) total += std::max(0.0, -v);
  return total / static_cast<double>(score_gradients.size());
}

void LossWeights::validate() const {
  if (!(std::isfinite(lambda1) && lambda1 >= 0.0 && std::isfinite(lambda2) && lambda2 >= 0.0)) {
    fail(ErrorKind::kInvalidArgument, "loss weights must be finite and nonnegative");
  }
}

double combine_losses(double esmm, double pair_ctrcvr, double pair_mci, const LossWeights& w) {
  w.validate();
  if (!(std::isfinite(esmm) && std::isfinite(pair_ctrcvr) && std::isfinite(pair_mci))) {
    fail(ErrorKind::kNonFinite, "combine_losses: non-finite component");
  }
  return esmm + w.lambda1 * pair_ctrcvr + w.lambda2 * pair_mci;
}

NodeId combine_losses(Graph& g, NodeId esmm, NodeId pair_ctrcvr, NodeId pair_mci, const LossWeights& w) {
  w.validate();
  NodeId total = esmm;
  if (w.lambda1 != 0.0) total = ad::add(g, total, ad::scale(g, pair_ctrcvr, w.lambda1));
  if (w.lambda2 != 0.0) total = ad::add(g, total, ad::scale(g, pair_mci, w.lambda2));
  return total;
}

}  // namespace merit::objectives
