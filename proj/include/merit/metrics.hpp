#pragma once

// Ranking and classification metrics. Undefined values (a label set with a
// single class, no eligible user) are std::nullopt and serialize as null.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merit/datagen.hpp"
#include "merit/models.hpp"

namespace merit::metrics {

// Pair-counting AUC over binary labels (0/1); ties count one half.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);

struct GroupedAuc {
  std::optional<double> value;
  std::size_t groups = 0;  // users with both classes
};

// Sample-size-weighted mean of per-user AUC over users having both classes.
GroupedAuc gauc(std::span<const double> scores, std::span<const int> labels, std::span<const std::uint64_t> user_ids,
                std::size_t threads = 1);

// Linear-gain NDCG@k with score ties broken by original index. A list whose
// ideal DCG is 0 scores 1.
double ndcg_at_k(std::span<const double> scores, std::span<const double> z, std::size_t k);

// Session-length-weighted mean of per-session NDCG@k. Sessions are grouped by
// id and reduced in ascending id order.
double wndcg_at_k(std::span<const double> scores, std::span<const double> z, std::span<const std::uint64_t> session_ids,
                  std::size_t k, std::size_t threads = 1);

inline constexpr std::array<std::size_t, 3> kCutoffs = {5, 10, 20};

struct MetricsReport {
  std::optional<double> ctr_auc, cvr_auc, ctcvr_auc;
  std::optional<double> ctr_gauc, cvr_gauc, ctcvr_gauc;
  std::array<double, 3> ndcg{};   // @5, @10, @20
  std::array<double, 3> wndcg{};  // @5, @10, @20
  std::size_t impressions = 0;
  std::size_t clicked = 0;
  std::size_t sessions = 0;
  std::size_t ctr_gauc_users = 0;
  std::size_t cvr_gauc_users = 0;
  std::size_t ctcvr_gauc_users = 0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& doc);
  static std::vector<std::string> csv_columns();
  std::vector<std::string> csv_values() const;  // shortest round-trip text; empty for undefined

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// Full report for predictions aligned with `dataset.impressions`. CVR metrics
// use clicked impressions only; NDCG ranks the whole set globally.
MetricsReport evaluate_predictions(const models::Predictions& predictions, const Dataset& dataset,
                                   std::size_t threads = 1);

// Double formatted as the shortest text that parses back to the same value.
std::string format_double(double v);

}  // namespace merit::metrics
