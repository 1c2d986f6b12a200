#pragma once

// Self-checks shared by the `verify` command and the acceptance runner:
// finite-difference gradient checks, monotonicity perturbation sweeps,
// brute-force metric oracles and the loss/penalty contracts.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merit/layers.hpp"
#include "merit/models.hpp"

namespace merit::verify {

struct CheckResult {
  std::string name;
  std::size_t cases = 0;     // configurations or instances examined
  std::size_t checks = 0;    // individual comparisons
  std::size_t failures = 0;  // comparisons that broke the contract
  double worst = 0.0;        // largest error statistic seen (relative error, or violation size)
  std::string detail;        // first failure, if any

  bool passed() const { return cases > 0 && failures == 0; }
  nlohmann::json to_json() const;
};

// Central-difference check over every scalar of every entry in `store`.
// Returns the largest relative error with denominator max(|a|, |n|, floor).
// With retry_eps > 0, a coordinate whose error exceeds 1e-6 is re-measured at
// that step and keeps the better value (a ReLU or min/max kink inside the
// stencil spoils only one of the two).
double store_grad_check(layers::ParamStore& store, const std::function<ad::NodeId(layers::GraphParams&)>& loss_fn,
                        double eps = 1e-5, double floor = 1e-12, double retry_eps = 0.0);

constexpr double kGradTolerance = 1e-4;
constexpr double kMonotoneSlack = -1e-9;

// One result per layer type and per loss, each over `configs` seeded random
// configurations at eps 1e-5.
std::vector<CheckResult> gradient_checks(std::uint64_t seed, std::size_t configs = 20);

// Raises each MCI coordinate of every row by `step` and counts output drops
// (pCTR, pCVR, pCTCVR) below the slack.
CheckResult monotonicity_check(const models::Model& model, const models::Batch& batch, double step = 0.1);

// A batch of `rows` impressions from a small world with MCI drawn uniformly
// from [0, 1].
models::Batch random_batch(const std::shared_ptr<const FeatureSchema>& schema, const Dataset& source, std::size_t rows,
                           std::uint64_t seed);

// `models_per_arch` randomly parameterized MERIT and MERIT_MINMAX models,
// `rows` random inputs each.
CheckResult random_model_monotonicity(std::uint64_t seed, std::size_t models_per_arch = 100, std::size_t rows = 1000);

// AUC, GAUC, NDCG@K and wNDCG@K against brute-force implementations, exact
// equality, on `instances` seeded instances of at most 50 items.
CheckResult metric_oracles(std::uint64_t seed, std::size_t instances = 200, std::size_t threads = 1);

// pCTCVR == pCTR * pCVR bitwise for every architecture, in training and
// inference mode.
CheckResult entire_space_identity(std::uint64_t seed);

// Two-impression conflict session y = [2, 0], z = [1, 4]: the stratified MCI
// gradient is exactly zero and the unstratified one opposes the order term.
CheckResult conflict_masking();

// The pointwise penalty is below 1e-12 on monotone models and positive on a
// MERIT_PML model planted to decrease in every MCI input.
CheckResult penalty_consistency(std::uint64_t seed);

// Everything above.
std::vector<CheckResult> run_all(std::uint64_t seed, std::size_t threads = 1);

}  // namespace merit::verify
