#pragma once

// Training loop, evaluation, the (lambda1, lambda2) sweep and report files.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "merit/datagen.hpp"
#include "merit/metrics.hpp"
#include "merit/models.hpp"
#include "merit/objectives.hpp"

namespace merit::harness {

// Which MCI pairwise term enters the loss with weight lambda2.
enum class MciLoss { kNone, kStratified, kUnstratified };

const char* to_string(MciLoss loss);  // "none", "MSPL", "MPL"
MciLoss mci_loss_from_string(const std::string& name);

struct TrainConfig {
  models::ModelSpec model;  // schema is attached from the training data
  MciLoss mci_loss = MciLoss::kStratified;
  double penalty_weight = 0.0;  // pointwise monotonic penalty; MERIT_PML only
  double learning_rate = 0.001;
  std::size_t batch_size = 512;  // target impressions per batch, whole sessions
  double l2 = 1e-5;
  objectives::LossWeights lambdas;
  std::size_t epochs = 5;
  std::size_t pair_cap = objectives::kDefaultPairCap;
  std::uint64_t seed = 1;
  std::size_t threads = 1;  // evaluation and sweep workers; training itself is sequential
  std::string train_path;
  std::string test_path;
  std::string schema_path;

  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys are rejected. The model schema is left empty.
  static TrainConfig from_json(const nlohmann::json& doc);
};

// Named presets: DNN, SharedBottom, MMoE, CGC and MERIT use no MCI term;
// MERIT+MSPL and MERIT+MPL add one; MERIT_MINMAX uses MSPL; MERIT_PML adds
// the pointwise penalty instead.
TrainConfig preset(const std::string& tag);
std::vector<std::string> preset_names();

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;
};

// One Adam update. `grads` is aligned with `store.entries()`; entries without
// a gradient (unused in this batch) still get weight decay. Decay-flagged
// entries receive 2 * l2 * w added to their gradient.
void adam_step(layers::ParamStore& store, const std::vector<std::optional<ad::Tensor>>& grads, double learning_rate,
               double l2, AdamState& state);

// l2 * sum of squares over decay-flagged entries.
double l2_term(const layers::ParamStore& store, double l2);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t batches = 0;
  double loss = 0.0;  // batch-mean total including the L2 term
  double esmm = 0.0;
  double pair_ctrcvr = 0.0;
  double pair_mci = 0.0;
  double penalty = 0.0;
  double l2 = 0.0;
  std::optional<double> ctcvr_auc;  // when a monitor dataset is given
  std::optional<double> ndcg20;
};

struct TrainResult {
  models::Model model;
  std::vector<EpochRecord> history;
};

// Sessions are packed into batches of about `batch_size` impressions in an
// order shuffled per epoch. A non-finite loss aborts with the batch's
// location.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset* monitor = nullptr);

metrics::MetricsReport evaluate(const models::Model& model, const Dataset& test_set, std::size_t threads = 1);

struct SweepPoint {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  metrics::MetricsReport report;
  bool feasible = false;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::size_t chosen = 0;
  double auc_floor = 0.005;
  std::string warning;
};

constexpr double kDefaultAucFloor = 0.005;

std::vector<std::pair<double, double>> default_lambda_grid();

// Marks feasibility (ctcvr_auc within auc_floor of the best) and picks the
// feasible point with the largest ndcg@20; ties go to larger lambda2, then
// larger lambda1.
void select_point(SweepResult& result);

// Trains one model per grid point (in parallel over config.threads), all
// from the same seed.
SweepResult sweep_lambdas(const TrainConfig& base, const std::vector<std::pair<double, double>>& grid,
                          double auc_floor, const Dataset& train_set, const Dataset& test_set);

void write_json(const nlohmann::json& doc, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

void write_report_json(const metrics::MetricsReport& report, const std::filesystem::path& path);
void write_report_csv(const std::vector<metrics::MetricsReport>& reports, const std::filesystem::path& path);
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);
nlohmann::json sweep_to_json(const SweepResult& result);
void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path);

}  // namespace merit::harness
