#pragma once

// Seeded synthetic hotel search world: merchants with latent quality, MCI
// factors that track that quality, users, search sessions, and simulated
// click/order labels.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merit/features.hpp"

namespace merit {

struct ClickModel {
  double affinity_weight = 1.0;
  double position_weight = 0.35;  // multiplies -ln(position); 0 disables position bias
  double intercept = -1.75;
};

struct OrderModel {
  double affinity_weight = 0.5;
  double quality_weight = 1.5;  // beta: how strongly latent quality drives conversion
  double intercept = -3.2;
};

struct WorldConfig {
  std::size_t n_users = 2000;
  std::size_t n_hotels = 1000;
  std::size_t n_sessions = 3000;
  std::size_t hotels_per_session = 20;
  std::size_t n_cities = 8;
  double quality_noise = 0.08;       // sigma_q on every MCI factor
  double conflict_fraction = 0.15;   // share of popular but low-MCI hotels
  double rated_fraction = 0.95;      // hotels with consumer ratings
  double train_fraction = 5.0 / 6.0; // leading share of sessions (by time) used for training
  std::size_t price_bins = 10;
  ClickModel click;
  OrderModel order;
  MciNormalizers normalizers;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static WorldConfig from_json(const nlohmann::json& doc);
};

struct Hotel {
  double quality = 0.0;     // latent q_h in [0,1]
  double popularity = 0.0;  // latent click appeal
  bool conflict = false;    // planted popular-but-low-quality merchant
  bool has_ratings = true;
  std::uint32_t city = 0;
  std::uint32_t price_tier = 0;
  std::uint32_t style = 0;
  double price = 0.0;
  std::array<double, 4> style_vector{};
  MciFactors factors;
  double z = 0.0;  // compute_mci of the oriented factors
};

struct User {
  std::uint32_t age_bucket = 0;
  std::uint32_t purchase_level = 0;
  std::uint32_t preferred_tier = 0;
  std::uint32_t preferred_city = 0;
  std::uint32_t style = 0;
  std::array<double, 4> style_vector{};
};

struct World {
  std::vector<Hotel> hotels;
  std::vector<User> users;
  std::shared_ptr<const FeatureSchema> schema;
};

World generate_world(const WorldConfig& config);

enum class Split { kTrain, kTest };

const char* to_string(Split split);

struct SessionRange {
  std::uint64_t session_id = 0;
  std::int64_t timestamp = 0;
  std::size_t begin = 0;  // impression offsets, [begin, end)
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const SessionRange&, const SessionRange&) = default;
};

struct Dataset {
  Split split = Split::kTrain;
  std::shared_ptr<const FeatureSchema> schema;
  std::vector<Impression> impressions;  // sessions are contiguous

  // Derived from impressions (contiguous runs of session_id).
  std::vector<SessionRange> sessions() const;
  std::size_t size() const { return impressions.size(); }
  bool empty() const { return impressions.empty(); }
};

bool operator==(const Dataset& a, const Dataset& b);

struct SimulatedLog {
  Dataset train;
  Dataset test;
};

// Click probability before the Bernoulli draw; exposed so callers can
// compare empirical rates against the generator's analytic average.
double click_probability(const World& world, const WorldConfig& config, std::size_t user, std::size_t hotel,
                         std::uint32_t position);
double order_probability(const World& world, const WorldConfig& config, std::size_t user, std::size_t hotel);

struct SimulationTrace {
  double expected_clicks = 0.0;  // sum of click probabilities over all impressions
  double expected_orders = 0.0;  // sum of click * order probabilities
};

SimulatedLog simulate_impressions(const World& world, const WorldConfig& config, SimulationTrace* trace = nullptr);

// Dataset file: a version/split line, a header, then one row per impression.
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path, std::shared_ptr<const FeatureSchema> schema);

void write_schema(const FeatureSchema& schema, const std::filesystem::path& path);
std::shared_ptr<const FeatureSchema> read_schema(const std::filesystem::path& path);

// FNV-1a over the file bytes.
std::uint64_t file_checksum(const std::filesystem::path& path);

}  // namespace merit
