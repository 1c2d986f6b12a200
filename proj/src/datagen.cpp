#include "merit/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "merit/autodiff.hpp"
#include "merit/error.hpp"
#include "merit/parallel.hpp"
#include "merit/rng.hpp"

namespace merit {

namespace {

constexpr std::uint64_t kWorldStream = 0;
constexpr std::uint64_t kSessionStreamBase = 1'000'000;
constexpr std::int64_t kEpochStart = 1'700'000'000;
constexpr std::size_t kAgeBuckets = 6;
constexpr std::size_t kPriceTiers = 5;
constexpr std::size_t kStyles = 4;
constexpr std::size_t kHours = 6;
constexpr std::size_t kPlatforms = 3;
constexpr std::size_t kScenes = 4;
constexpr std::array<double, kPriceTiers> kTierBasePrice{150.0, 250.0, 400.0, 700.0, 1200.0};

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

std::vector<std::string> labels(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

std::size_t argmax(const std::array<double, 4>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

FeatureSchema build_schema(const WorldConfig& c, const std::vector<Hotel>& hotels) {
  std::vector<double> prices;
  prices.reserve(hotels.size());
  for (const Hotel& h : hotels) prices.push_back(h.price);
  const QuantileBins bins = quantile_discretize(prices, c.price_bins);

  const auto cities = labels("c", c.n_cities);
  using K = FieldKind;
  using G = FieldGroup;
  std::vector<FieldSpec> fields{
      {"age_bucket", K::kCategorical, G::kProfile, labels("a", kAgeBuckets), {}},
      {"purchase_level", K::kCategorical, G::kProfile, labels("p", kPriceTiers), {}},
      {"preferred_tier", K::kCategorical, G::kBehavior, labels("t", kPriceTiers), {}},
      {"preferred_city", K::kCategorical, G::kBehavior, cities, {}},
      {"user_style", K::kCategorical, G::kBehavior, labels("s", kStyles), {}},
      {"hour_bucket", K::kCategorical, G::kContext, labels("h", kHours), {}},
      {"platform", K::kCategorical, G::kContext, labels("pf", kPlatforms), {}},
      {"query_city", K::kCategorical, G::kQuery, cities, {}},
      {"scene", K::kCategorical, G::kQuery, labels("sc", kScenes), {}},
      {"hotel_id", K::kCategorical, G::kHotel, labels("hotel", c.n_hotels), {}},
      {"hotel_city", K::kCategorical, G::kHotel, cities, {}},
      {"price_tier", K::kCategorical, G::kHotel, labels("t", kPriceTiers), {}},
      {"hotel_style", K::kCategorical, G::kHotel, labels("s", kStyles), {}},
      {"price", K::kContinuous, G::kHotel, {}, bins.edges},
  };
  return FeatureSchema(std::move(fields), c.normalizers, uniform_mci_weights());
}

// User-hotel match, independent of merchant quality.
double match(const User& u, const Hotel& h) {
  double dot = 0.0;
  for (std::size_t k = 0; k < 4; ++k) dot += u.style_vector[k] * h.style_vector[k];
  const double tier_gap = std::abs(static_cast<double>(u.preferred_tier) - static_cast<double>(h.price_tier));
  return 0.25 * dot + (u.style == h.style ? 0.4 : 0.0) - 0.35 * tier_gap;
}

struct SessionDraw {
  std::vector<Impression> impressions;
  double expected_clicks = 0.0;
  double expected_orders = 0.0;
};

SessionDraw simulate_session(const World& world, const WorldConfig& c,
                             const std::vector<std::vector<std::size_t>>& by_city, std::size_t s) {
  std::mt19937_64 rng = rng_stream(c.seed, kSessionStreamBase + s);
  const std::size_t u = uniform_below(rng, c.n_users);
  const User& user = world.users[u];
  const std::size_t city = uniform01(rng) < 0.6 ? user.preferred_city : uniform_below(rng, c.n_cities);
  const std::size_t scene = uniform_below(rng, kScenes);
  const std::size_t hour = uniform_below(rng, kHours);
  const std::size_t platform = uniform_below(rng, kPlatforms);

  // Candidates from the queried city first, topped up from the whole pool.
  std::vector<std::size_t> pool = by_city[city];
  std::vector<std::size_t> picked;
  picked.reserve(c.hotels_per_session);
  for (std::size_t i = 0; i < pool.size() && picked.size() < c.hotels_per_session; ++i) {
    const std::size_t j = i + uniform_below(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
    picked.push_back(pool[i]);
  }
  while (picked.size() < c.hotels_per_session) {
    const std::size_t h = uniform_below(rng, c.n_hotels);
    if (std::find(picked.begin(), picked.end(), h) == picked.end()) picked.push_back(h);
  }

  const FeatureSchema& schema = *world.schema;
  SessionDraw out;
  out.impressions.reserve(picked.size());
  for (std::size_t pos = 0; pos < picked.size(); ++pos) {
    const std::size_t h = picked[pos];
    const Hotel& hotel = world.hotels[h];
    const auto position = static_cast<std::uint32_t>(pos + 1);
    const double pc = click_probability(world, c, u, h, position);
    const double po = order_probability(world, c, u, h);
    const bool clicked = uniform01(rng) < pc;
    const bool ordered = clicked && uniform01(rng) < po;
    out.expected_clicks += pc;
    out.expected_orders += pc * po;

    RawRecord r;
    r.categorical = {
        {"age_bucket", "a" + std::to_string(user.age_bucket)},
        {"purchase_level", "p" + std::to_string(user.purchase_level)},
        {"preferred_tier", "t" + std::to_string(user.preferred_tier)},
        {"preferred_city", "c" + std::to_string(user.preferred_city)},
        {"user_style", "s" + std::to_string(user.style)},
        {"hour_bucket", "h" + std::to_string(hour)},
        {"platform", "pf" + std::to_string(platform)},
        {"query_city", "c" + std::to_string(city)},
        {"scene", "sc" + std::to_string(scene)},
        {"hotel_id", "hotel" + std::to_string(h)},
        {"hotel_city", "c" + std::to_string(hotel.city)},
        {"price_tier", "t" + std::to_string(hotel.price_tier)},
        {"hotel_style", "s" + std::to_string(hotel.style)},
    };
    r.continuous = {{"price", hotel.price}};

    Impression imp;
    imp.session_id = s;
    imp.user_id = u;
    imp.hotel_id = h;
    imp.position = position;
    imp.timestamp = kEpochStart + static_cast<std::int64_t>(s) * 60;
    imp.encoded = encode_sample(schema, r, hotel.factors);
    imp.y = ordered ? 2 : (clicked ? 1 : 0);
    imp.z = hotel.z;
    out.impressions.push_back(std::move(imp));
  }
  return out;
}

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

template <typename T>
T parse_number(std::string_view token, std::size_t line, const char* column) {
  T value{};
  auto res = std::from_chars(token.data(), token.data() + token.size(), value);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
    fail(ErrorKind::kParse, "dataset line " + std::to_string(line) + ": bad value '" + std::string(token) +
                                "' in column " + column);
  }
  return value;
}

std::vector<std::string> header_columns(const FeatureSchema& schema) {
  std::vector<std::string> cols{"session_id", "user_id", "hotel_id", "position", "y", "z", "timestamp"};
  for (const FieldSpec& f : schema.fields()) cols.push_back(f.name);
  for (std::size_t k = 0; k < kMciDim; ++k) cols.push_back("mci_" + std::to_string(k));
  return cols;
}

}  // namespace

void WorldConfig::validate() const {
  require(n_users >= 1 && n_hotels >= 1 && n_sessions >= 1 && n_cities >= 1, ErrorKind::kInvalidArgument,
          "world config: counts must be >= 1");
  require(hotels_per_session >= 2, ErrorKind::kInvalidArgument, "world config: hotels_per_session must be >= 2");
  require(hotels_per_session <= n_hotels, ErrorKind::kInvalidArgument,
          "world config: hotels_per_session exceeds n_hotels");
  require(quality_noise >= 0.0, ErrorKind::kInvalidArgument, "world config: quality_noise must be >= 0");
  require(conflict_fraction >= 0.0 && conflict_fraction <= 1.0, ErrorKind::kInvalidArgument,
          "world config: conflict_fraction must lie in [0,1]");
  require(rated_fraction >= 0.0 && rated_fraction <= 1.0, ErrorKind::kInvalidArgument,
          "world config: rated_fraction must lie in [0,1]");
  require(train_fraction > 0.0 && train_fraction <= 1.0, ErrorKind::kInvalidArgument,
          "world config: train_fraction must lie in (0,1]");
  require(price_bins >= 2, ErrorKind::kInvalidArgument, "world config: price_bins must be >= 2");
  for (double v : {click.affinity_weight, click.position_weight, click.intercept, order.affinity_weight,
                   order.quality_weight, order.intercept}) {
    require(!std::isnan(v), ErrorKind::kInvalidArgument, "world config: NaN coefficient");
  }
  require(threads >= 1, ErrorKind::kInvalidArgument, "world config: threads must be >= 1");
}

nlohmann::json WorldConfig::to_json() const {
  return {
      {"n_users", n_users},
      {"n_hotels", n_hotels},
      {"n_sessions", n_sessions},
      {"hotels_per_session", hotels_per_session},
      {"n_cities", n_cities},
      {"quality_noise", quality_noise},
      {"conflict_fraction", conflict_fraction},
      {"rated_fraction", rated_fraction},
      {"train_fraction", train_fraction},
      {"price_bins", price_bins},
      {"click",
       {{"affinity_weight", click.affinity_weight},
        {"position_weight", click.position_weight},
        {"intercept", click.intercept}}},
      {"order",
       {{"affinity_weight", order.affinity_weight},
        {"quality_weight", order.quality_weight},
        {"intercept", order.intercept}}},
      {"normalizers", {{"gmv", normalizers.gmv}, {"online_inventory", normalizers.online_inventory}}},
      {"seed", seed},
  };
}

WorldConfig WorldConfig::from_json(const nlohmann::json& doc) {
  WorldConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (doc.contains(key)) field = doc.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("n_users", c.n_users);
    get("n_hotels", c.n_hotels);
    get("n_sessions", c.n_sessions);
    get("hotels_per_session", c.hotels_per_session);
    get("n_cities", c.n_cities);
    get("quality_noise", c.quality_noise);
    get("conflict_fraction", c.conflict_fraction);
    get("rated_fraction", c.rated_fraction);
    get("train_fraction", c.train_fraction);
    get("price_bins", c.price_bins);
    get("seed", c.seed);
    get("threads", c.threads);
    if (doc.contains("click")) {
      const auto& k = doc.at("click");
      if (k.contains("affinity_weight")) c.click.affinity_weight = k.at("affinity_weight").get<double>();
      if (k.contains("position_weight")) c.click.position_weight = k.at("position_weight").get<double>();
      if (k.contains("intercept")) c.click.intercept = k.at("intercept").get<double>();
    }
    if (doc.contains("order")) {
      const auto& k = doc.at("order");
      if (k.contains("affinity_weight")) c.order.affinity_weight = k.at("affinity_weight").get<double>();
      if (k.contains("quality_weight")) c.order.quality_weight = k.at("quality_weight").get<double>();
      if (k.contains("intercept")) c.order.intercept = k.at("intercept").get<double>();
    }
    if (doc.contains("normalizers")) {
      const auto& k = doc.at("normalizers");
      if (k.contains("gmv")) c.normalizers.gmv = k.at("gmv").get<double>();
      if (k.contains("online_inventory")) c.normalizers.online_inventory = k.at("online_inventory").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, std::string("world config: ") + e.what());
  }
  c.validate();
  return c;
}

World generate_world(const WorldConfig& c) {
  c.validate();
  std::mt19937_64 rng = rng_stream(c.seed, kWorldStream);
  const double sigma = c.quality_noise;
  auto noisy = [&](double v) { return clip01(v + sigma * standard_normal(rng)); };

  World world;
  world.hotels.resize(c.n_hotels);
  for (Hotel& h : world.hotels) {
    h.conflict = uniform01(rng) < c.conflict_fraction;
    if (h.conflict) {
      h.quality = 0.3 * uniform01(rng);
      h.popularity = 1.5 + 0.2 * standard_normal(rng);
    } else {
      h.quality = uniform01(rng);
      h.popularity = 0.4 * standard_normal(rng);
    }
    h.has_ratings = uniform01(rng) < c.rated_fraction;
    h.city = static_cast<std::uint32_t>(uniform_below(rng, c.n_cities));
    h.price_tier = static_cast<std::uint32_t>(uniform_below(rng, kPriceTiers));
    h.price = kTierBasePrice[h.price_tier] * std::exp(0.2 * standard_normal(rng));
    for (double& v : h.style_vector) v = standard_normal(rng);
    h.style = static_cast<std::uint32_t>(argmax(h.style_vector));

    // Every indicator is an increasing affine map of quality (refusal rates
    // decreasing) plus noise.
    const double q = h.quality;
    MciFactors& f = h.factors;
    f.inventory_to_sales_ratio = noisy(0.1 + 0.8 * q);
    f.gmv = c.normalizers.gmv * noisy(0.05 + 0.9 * q);
    f.historical_cvr = noisy(0.02 + 0.25 * q);
    f.online_inventory = c.normalizers.online_inventory * noisy(0.1 + 0.8 * q);
    f.hot_selling_room_ratio = noisy(0.1 + 0.7 * q);
    f.service_refusal_rate = clip01(0.2 * (1.0 - q) + 0.5 * sigma * standard_normal(rng));
    f.order_refusal_rate = clip01(0.15 * (1.0 - q) + 0.5 * sigma * standard_normal(rng));
    f.picture_quality = noisy(0.2 + 0.75 * q);
    f.info_completeness = noisy(0.3 + 0.65 * q);
  }

  world.users.resize(c.n_users);
  for (User& u : world.users) {
    u.age_bucket = static_cast<std::uint32_t>(uniform_below(rng, kAgeBuckets));
    u.purchase_level = static_cast<std::uint32_t>(uniform_below(rng, kPriceTiers));
    const double tier = static_cast<double>(u.purchase_level) + std::round(0.7 * standard_normal(rng));
    u.preferred_tier = static_cast<std::uint32_t>(std::clamp(tier, 0.0, static_cast<double>(kPriceTiers - 1)));
    u.preferred_city = static_cast<std::uint32_t>(uniform_below(rng, c.n_cities));
    for (double& v : u.style_vector) v = standard_normal(rng);
    u.style = static_cast<std::uint32_t>(argmax(u.style_vector));
  }

  auto schema = std::make_shared<const FeatureSchema>(build_schema(c, world.hotels));
  for (Hotel& h : world.hotels) h.z = compute_mci(orient_mci(h.factors, schema->normalizers()), schema->weights());
  world.schema = std::move(schema);
  return world;
}

double click_probability(const World& world, const WorldConfig& c, std::size_t user, std::size_t hotel,
                         std::uint32_t position) {
  const Hotel& h = world.hotels.at(hotel);
  // Popularity is click appeal only; conversion depends on match and quality.
  const double a = match(world.users.at(user), h) + h.popularity;
  const double logit = c.click.intercept + c.click.affinity_weight * a -
                       c.click.position_weight * std::log(static_cast<double>(position));
  return ad::sigmoid(logit);
}

double order_probability(const World& world, const WorldConfig& c, std::size_t user, std::size_t hotel) {
  const Hotel& h = world.hotels.at(hotel);
  const double a = match(world.users.at(user), h);
  return ad::sigmoid(c.order.intercept + c.order.affinity_weight * a + c.order.quality_weight * h.quality);
}

const char* to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

SimulatedLog simulate_impressions(const World& world, const WorldConfig& c, SimulationTrace* trace) {
  c.validate();
  require(world.schema != nullptr, ErrorKind::kInvalidArgument, "simulate_impressions: world has no schema");
  require(world.hotels.size() == c.n_hotels && world.users.size() == c.n_users, ErrorKind::kInvalidArgument,
          "simulate_impressions: world does not match config");

  std::vector<std::vector<std::size_t>> by_city(c.n_cities);
  for (std::size_t h = 0; h < world.hotels.size(); ++h) by_city[world.hotels[h].city].push_back(h);

  std::vector<SessionDraw> draws(c.n_sessions);
  parallel_for(c.n_sessions, c.threads, [&](std::size_t s) { draws[s] = simulate_session(world, c, by_city, s); });

  const auto n_train = static_cast<std::size_t>(std::floor(c.train_fraction * static_cast<double>(c.n_sessions)));
  SimulatedLog log;
  log.train.split = Split::kTrain;
  log.test.split = Split::kTest;
  log.train.schema = log.test.schema = world.schema;
  SimulationTrace totals;
  for (std::size_t s = 0; s < c.n_sessions; ++s) {
    Dataset& target = s < n_train ? log.train : log.test;
    for (Impression& imp : draws[s].impressions) target.impressions.push_back(std::move(imp));
    totals.expected_clicks += draws[s].expected_clicks;
    totals.expected_orders += draws[s].expected_orders;
  }
  if (trace != nullptr) *trace = totals;
  return log;
}

std::vector<SessionRange> Dataset::sessions() const {
  std::vector<SessionRange> out;
  for (std::size_t i = 0; i < impressions.size(); ++i) {
    if (out.empty() || impressions[i].session_id != out.back().session_id) {
      out.push_back(SessionRange{impressions[i].session_id, impressions[i].timestamp, i, i + 1});
    } else {
      out.back().end = i + 1;
    }
  }
  return out;
}

bool operator==(const Dataset& a, const Dataset& b) {
  if (a.split != b.split || a.impressions != b.impressions) return false;
  if (a.schema == b.schema) return true;
  return a.schema && b.schema && *a.schema == *b.schema;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  require(dataset.schema != nullptr, ErrorKind::kInvalidArgument, "write_dataset: dataset has no schema");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::kIo, "write_dataset: cannot open " + path.string());

  std::string buf = std::string("# merit-dataset v1 split=") + to_string(dataset.split) + "\n";
  const auto cols = header_columns(*dataset.schema);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    buf += cols[i];
    buf += i + 1 < cols.size() ? ',' : '\n';
  }
  const std::size_t n_fields = dataset.schema->fields().size();
  for (const Impression& imp : dataset.impressions) {
    require(imp.encoded.indices.size() == n_fields, ErrorKind::kSchema, "write_dataset: impression/schema mismatch");
    buf += std::to_string(imp.session_id) + ',' + std::to_string(imp.user_id) + ',' + std::to_string(imp.hotel_id) +
           ',' + std::to_string(imp.position) + ',' + std::to_string(imp.y) + ',';
    append_double(buf, imp.z);
    buf += ',' + std::to_string(imp.timestamp);
    for (std::uint32_t idx : imp.encoded.indices) buf += ',' + std::to_string(idx);
    for (double v : imp.encoded.mci.values) {
      buf += ',';
      append_double(buf, v);
    }
    buf += '\n';
  }
  out << buf;
  require(out.good(), ErrorKind::kIo, "write_dataset: write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path, std::shared_ptr<const FeatureSchema> schema) {
  require(schema != nullptr, ErrorKind::kInvalidArgument, "read_dataset: schema required");
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "read_dataset: cannot open " + path.string());

  Dataset ds;
  ds.schema = schema;
  std::string line;
  std::size_t lineno = 1;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kParse, "dataset line 1: missing version line");
  if (line == "# merit-dataset v1 split=train") {
    ds.split = Split::kTrain;
  } else if (line == "# merit-dataset v1 split=test") {
    ds.split = Split::kTest;
  } else {
    fail(ErrorKind::kParse, "dataset line 1: unrecognised version line '" + line + "'");
  }

  ++lineno;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kParse, "dataset line 2: missing header");
  const auto cols = header_columns(*schema);
  {
    std::string expected;
    for (std::size_t i = 0; i < cols.size(); ++i) expected += (i ? "," : "") + cols[i];
    require(line == expected, ErrorKind::kSchema, "dataset line 2: header does not match schema");
  }

  const std::size_t n_fields = schema->fields().size();
  std::vector<std::string_view> tokens;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    tokens.clear();
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        tokens.emplace_back(line.data() + start, i - start);
        start = i + 1;
      }
    }
    require(tokens.size() == cols.size(), ErrorKind::kParse,
            "dataset line " + std::to_string(lineno) + ": expected " + std::to_string(cols.size()) + " columns, got " +
                std::to_string(tokens.size()));
    Impression imp;
    imp.session_id = parse_number<std::uint64_t>(tokens[0], lineno, "session_id");
    imp.user_id = parse_number<std::uint64_t>(tokens[1], lineno, "user_id");
    imp.hotel_id = parse_number<std::uint64_t>(tokens[2], lineno, "hotel_id");
    imp.position = parse_number<std::uint32_t>(tokens[3], lineno, "position");
    imp.y = parse_number<int>(tokens[4], lineno, "y");
    imp.z = parse_number<double>(tokens[5], lineno, "z");
    imp.timestamp = parse_number<std::int64_t>(tokens[6], lineno, "timestamp");
    require(imp.y >= 0 && imp.y <= 2, ErrorKind::kParse, "dataset line " + std::to_string(lineno) + ": y must be 0, 1 or 2");
    require(imp.position >= 1, ErrorKind::kParse, "dataset line " + std::to_string(lineno) + ": position must be >= 1");
    require(imp.z >= 0.0 && imp.z <= 5.0, ErrorKind::kParse, "dataset line " + std::to_string(lineno) + ": z outside [0,5]");
    imp.encoded.indices.resize(n_fields);
    for (std::size_t f = 0; f < n_fields; ++f) {
      const auto idx = parse_number<std::uint32_t>(tokens[7 + f], lineno, schema->fields()[f].name.c_str());
      require(idx < schema->fields()[f].cardinality(), ErrorKind::kParse,
              "dataset line " + std::to_string(lineno) + ": index out of vocabulary for " + schema->fields()[f].name);
      imp.encoded.indices[f] = idx;
    }
    for (std::size_t k = 0; k < kMciDim; ++k) {
      const double v = parse_number<double>(tokens[7 + n_fields + k], lineno, "mci");
      require(v >= 0.0 && v <= 1.0, ErrorKind::kParse, "dataset line " + std::to_string(lineno) + ": mci value outside [0,1]");
      imp.encoded.mci[k] = v;
    }
    ds.impressions.push_back(std::move(imp));
  }
  return ds;
}

void write_schema(const FeatureSchema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::kIo, "write_schema: cannot open " + path.string());
  out << schema.to_json().dump(2) << '\n';
}

std::shared_ptr<const FeatureSchema> read_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "read_schema: cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, "read_schema: " + std::string(e.what()));
  }
  return std::make_shared<const FeatureSchema>(FeatureSchema::from_json(doc));
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "file_checksum: cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace merit
