#pragma once

// Training losses: the entire-space pointwise loss, pairwise ranking losses
// over within-session pairs, and the pointwise monotonicity penalty.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "merit/autodiff.hpp"
#include "merit/models.hpp"

namespace merit::objectives {

using ad::Graph;
using ad::NodeId;

enum PairTag : std::uint8_t {
  kYPair = 1,    // y_i > y_j
  kZPair = 2,    // y_i >= y_j and z_i > z_j (stratified)
  kMciPair = 4,  // z_i > z_j regardless of y (unstratified)
};

struct Pair {
  std::uint32_t i = 0;  // preferred impression
  std::uint32_t j = 0;
  std::uint8_t tags = 0;

  friend bool operator==(const Pair&, const Pair&) = default;
};

struct PairSet {
  std::vector<Pair> pairs;

  std::vector<Pair> with(PairTag tag) const;
  std::size_t count(PairTag tag) const;
};

constexpr double kZTieTolerance = 1e-9;
constexpr std::size_t kDefaultPairCap = 200;

// Ordered greater-relation pairs within one session. Indices are offset by
// `offset` (the session's position inside the batch). When more than `cap`
// tagged pairs exist, a uniform subsample of `cap` is kept, in enumeration
// order.
void enumerate_session_pairs(std::span<const int> y, std::span<const double> z, std::uint32_t offset,
                             std::size_t cap, std::mt19937_64& rng, PairSet& out);
PairSet enumerate_session_pairs(std::span<const int> y, std::span<const double> z, std::size_t cap,
                                std::mt19937_64& rng);

constexpr double kProbClamp = 1e-7;

// mean_k [BCE(pctr_k, y_k > 0) + BCE(pctcvr_k, y_k == 2)], probabilities
// clamped to [1e-7, 1 - 1e-7].
NodeId esmm_loss(Graph& g, NodeId pctr, NodeId pctcvr, std::span<const int> y);

// mean over pairs of -ln sigmoid(s_i - s_j); 0 for no pairs.
NodeId pair_logistic_loss(Graph& g, NodeId scores, std::span<const Pair> pairs);

NodeId pairwise_ctrcvr_loss(Graph& g, NodeId scores, const PairSet& pairs);
NodeId stratified_pairwise_loss(Graph& g, NodeId scores, const PairSet& pairs);    // MSPL
NodeId unstratified_pairwise_loss(Graph& g, NodeId scores, const PairSet& pairs);  // MPL

// mean over rows and MCI coordinates of relu(-d score / d x_s), from
// derivative nodes each [rows, 1].
NodeId monotonic_penalty(Graph& g, std::span<const NodeId> score_derivatives);

// Same reduction over a [rows, k] matrix of d score / d x_s values.
double monotonic_penalty(const ad::Tensor& score_gradients);

// Same quantity for any model, with the derivatives taken by a backward pass
// into the MCI inputs. Inference mode; rows are independent, so the
// gradient of the summed score gives per-row derivatives.
double pointwise_monotonic_penalty(const models::Model& model, const models::Batch& batch);

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 0.1;

  void validate() const;
};

double combine_losses(double esmm, double pair_ctrcvr, double pair_mci, const LossWeights& w);
NodeId combine_losses(Graph& g, NodeId esmm, NodeId pair_ctrcvr, NodeId pair_mci, const LossWeights& w);

}  // namespace merit::objectives
