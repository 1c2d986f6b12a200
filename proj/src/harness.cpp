#include "merit/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "merit/error.hpp"
#include "merit/parallel.hpp"
#include "merit/rng.hpp"

namespace merit::harness {
namespace {

constexpr std::uint64_t kShuffleStream = 0x7368756600000000ULL;
constexpr std::uint64_t kDropoutStream = 0x64726f7000000000ULL;
constexpr std::uint64_t kPairStream = 0x7061697200000000ULL;

// Fisher-Yates on our own uniform draw, so the order does not depend on the
// standard library's distribution implementation.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_below(rng, i)]);
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
  out << '\n';
}

std::string optional_text(const std::optional<double>& v) { return v ? metrics::format_double(*v) : std::string(); }

struct BatchLosses {
  double total = 0.0;
  double esmm = 0.0;
  double pair_ctrcvr = 0.0;
  double pair_mci = 0.0;
  double penalty = 0.0;
};

}  // namespace

const char* to_string(MciLoss loss) {
  switch (loss) {
    case MciLoss::kNone: return "none";
    case MciLoss::kStratified: return "MSPL";
    case MciLoss::kUnstratified: return "MPL";
  }
  return "?";
}

MciLoss mci_loss_from_string(const std::string& name) {
  for (MciLoss l : {MciLoss::kNone, MciLoss::kStratified, MciLoss::kUnstratified}) {
    if (name == to_string(l)) return l;
  }
  fail(ErrorKind::kInvalidArgument, "unknown mci_loss '" + name + "' (expected none, MSPL or MPL)");
}

void TrainConfig::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(learning_rate)) fail(ErrorKind::kInvalidArgument, "train config: learning_rate must be positive");
  if (batch_size == 0) fail(ErrorKind::kInvalidArgument, "train config: batch_size must be positive");
  if (!(std::isfinite(l2) && l2 >= 0.0)) fail(ErrorKind::kInvalidArgument, "train config: l2 must be >= 0");
  if (epochs == 0) fail(ErrorKind::kInvalidArgument, "train config: epochs must be positive");
  if (pair_cap == 0) fail(ErrorKind::kInvalidArgument, "train config: pair_cap must be positive");
  lambdas.validate();
  if (!(std::isfinite(penalty_weight) && penalty_weight >= 0.0)) {
    fail(ErrorKind::kInvalidArgument, "train config: penalty_weight must be >= 0");
  }
  if (penalty_weight > 0.0 && model.arch != models::Architecture::kMeritPml) {
    fail(ErrorKind::kInvalidArgument, "train config: penalty_weight applies to MERIT_PML only");
  }
  if (!(model.dropout >= 0.0 && model.dropout < 1.0)) fail(ErrorKind::kInvalidArgument, "train config: dropout must be in [0,1)");
}

nlohmann::json TrainConfig::to_json() const {
  return {
      {"model", model.to_json()},
      {"mci_loss", to_string(mci_loss)},
      {"penalty_weight", penalty_weight},
      {"learning_rate", learning_rate},
      {"batch_size", batch_size},
      {"l2", l2},
      {"lambda1", lambdas.lambda1},
      {"lambda2", lambdas.lambda2},
      {"epochs", epochs},
      {"pair_cap", pair_cap},
      {"seed", seed},
      {"threads", threads},
      {"train_path", train_path},
      {"test_path", test_path},
      {"schema_path", schema_path},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) fail(ErrorKind::kSchema, "train config: expected a JSON object");
  static const char* known[] = {"preset",    "model",    "mci_loss", "penalty_weight", "learning_rate", "batch_size",
                                "l2",        "lambda1",  "lambda2",  "epochs",         "pair_cap",      "seed",
                                "threads",   "train_path", "test_path", "schema_path"};
  for (const auto& [key, _] : doc.items()) {
    if (std::none_of(std::begin(known), std::end(known), [&](const char* k) { return key == k; })) {
      fail(ErrorKind::kSchema, "train config: unknown key '" + key + "'");
    }
  }
  try {
    TrainConfig c = doc.contains("preset") ? preset(doc.at("preset").get<std::string>()) : TrainConfig{};
    if (doc.contains("model")) {
      // Keys given here override the preset's model spec.
      nlohmann::json merged = c.model.to_json();
      merged.merge_patch(doc.at("model"));
      c.model = models::ModelSpec::from_json(merged, nullptr);
    }
    auto get = [&](const char* key, auto& field) {
      if (doc.contains(key)) doc.at(key).get_to(field);
    };
    if (doc.contains("mci_loss")) c.mci_loss = mci_loss_from_string(doc.at("mci_loss").get<std::string>());
    get("penalty_weight", c.penalty_weight);
    get("learning_rate", c.learning_rate);
    get("batch_size", c.batch_size);
    get("l2", c.l2);
    get("lambda1", c.lambdas.lambda1);
    get("lambda2", c.lambdas.lambda2);
    get("epochs", c.epochs);
    get("pair_cap", c.pair_cap);
    get("seed", c.seed);
    get("threads", c.threads);
    get("train_path", c.train_path);
    get("test_path", c.test_path);
    get("schema_path", c.schema_path);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kSchema, std::string("train config: ") + e.what());
  }
}

TrainConfig preset(const std::string& tag) {
  TrainConfig c;
  using models::Architecture;
  if (tag == "DNN" || tag == "SharedBottom" || tag == "MMoE" || tag == "CGC" || tag == "MERIT") {
    c.model.arch = models::architecture_from_string(tag);
    c.mci_loss = MciLoss::kNone;
  } else if (tag == "MERIT+MSPL") {
    c.model.arch = Architecture::kMerit;
    c.mci_loss = MciLoss::kStratified;
  } else if (tag == "MERIT+MPL") {
    c.model.arch = Architecture::kMerit;
    c.mci_loss = MciLoss::kUnstratified;
  } else if (tag == "MERIT_MINMAX") {
    c.model.arch = Architecture::kMeritMinMax;
    c.mci_loss = MciLoss::kStratified;
  } else if (tag == "MERIT_PML") {
    c.model.arch = Architecture::kMeritPml;
    c.mci_loss = MciLoss::kStratified;
    c.penalty_weight = 1.0;
  } else {
    fail(ErrorKind::kInvalidArgument, "unknown preset '" + tag + "'");
  }
  return c;
}

std::vector<std::string> preset_names() {
  return {"DNN", "SharedBottom", "MMoE", "CGC", "MERIT", "MERIT+MSPL", "MERIT+MPL", "MERIT_MINMAX", "MERIT_PML"};
}

void adam_step(layers::ParamStore& store, const std::vector<std::optional<ad::Tensor>>& grads, double learning_rate,
               double l2, AdamState& state) {
  auto& entries = store.entries();
  if (grads.size() != entries.size()) fail(ErrorKind::kShape, "adam_step: gradient list does not match the store");
  if (state.m.empty()) {
    for (const auto& e : entries) {
      state.m.push_back(ad::Tensor::zeros_like(e.value));
      state.v.push_back(ad::Tensor::zeros_like(e.value));
    }
  }
  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const bool decay = entries[k].decay && l2 > 0.0;
    if (!grads[k] && !decay) continue;
    auto w = entries[k].value.data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double g = grads[k] ? (*grads[k])[i] : 0.0;
      if (decay) g += 2.0 * l2 * w[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      w[i] -= learning_rate * (m[i] / correction1) / (std::sqrt(v[i] / correction2) + state.epsilon);
    }
  }
}

double l2_term(const layers::ParamStore& store, double l2) {
  double total = 0.0;
  for (const auto& e : store.entries()) {
    if (!e.decay) continue;
    for (double w : e.value.data()) total += w * w;
  }
  return l2 * total;
}

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset* monitor) {
  config.validate();
  if (train_set.empty()) fail(ErrorKind::kInvalidArgument, "train: empty training set");
  models::ModelSpec spec = config.model;
  spec.schema = train_set.schema;
  TrainResult result{models::Model(spec, config.seed), {}};
  models::Model& model = result.model;
  const std::vector<SessionRange> sessions = train_set.sessions();
  const bool want_tangents = config.penalty_weight > 0.0;

  AdamState adam;
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(sessions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng = rng_stream(config.seed, kShuffleStream + epoch);
    shuffle(order, shuffle_rng);

    EpochRecord record;
    record.epoch = epoch;
    BatchLosses sums;
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      std::vector<const Impression*> rows;
      std::vector<std::pair<std::size_t, std::size_t>> spans;  // offset, length per session
      const std::size_t first_session = cursor;
      while (cursor < order.size() && rows.size() < config.batch_size) {
        const SessionRange& s = sessions[order[cursor++]];
        spans.emplace_back(rows.size(), s.size());
        for (std::size_t i = s.begin; i < s.end; ++i) rows.push_back(&train_set.impressions[i]);
      }
      std::vector<int> y(rows.size());
      std::vector<double> z(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        y[i] = rows[i]->y;
        z[i] = rows[i]->z;
      }
      objectives::PairSet pairs;
      std::mt19937_64 pair_rng = rng_stream(config.seed, kPairStream + step);
      for (const auto& [offset, length] : spans) {
        if (length < 2) continue;
        objectives::enumerate_session_pairs(std::span<const int>(y).subspan(offset, length),
                                            std::span<const double>(z).subspan(offset, length),
                                            static_cast<std::uint32_t>(offset), config.pair_cap, pair_rng, pairs);
      }

      const models::Batch batch = models::make_batch(*train_set.schema, rows);
      ad::Graph g;
      layers::GraphParams p(g, model.params());
      std::mt19937_64 dropout_rng = rng_stream(config.seed, kDropoutStream + step);
      models::ForwardOptions options;
      options.training = true;
      options.rng = &dropout_rng;
      options.mci_tangents = want_tangents;
      const models::Outputs out = model.forward(p, batch, options);

      auto where = [&] {
        return "epoch " + std::to_string(epoch) + ", batch " + std::to_string(record.batches + 1) + " (sessions " +
               std::to_string(sessions[order[first_session]].session_id) + ".." +
               std::to_string(sessions[order[cursor - 1]].session_id) + ", " + std::to_string(rows.size()) + " rows)";
      };
      ad::NodeId esmm;
      try {
        esmm = objectives::esmm_loss(g, out.pctr, out.pctcvr, y);
      } catch (const Error& e) {
        fail(e.kind(), std::string(e.what()) + " at " + where());
      }
      const ad::NodeId pair_ctrcvr = objectives::pairwise_ctrcvr_loss(g, out.pctcvr, pairs);
      ad::NodeId pair_mci = g.constant(ad::Tensor::scalar(0.0));
      if (config.mci_loss == MciLoss::kStratified) pair_mci = objectives::stratified_pairwise_loss(g, out.pctcvr, pairs);
      if (config.mci_loss == MciLoss::kUnstratified) pair_mci = objectives::unstratified_pairwise_loss(g, out.pctcvr, pairs);
      ad::NodeId total = objectives::combine_losses(g, esmm, pair_ctrcvr, pair_mci, config.lambdas);
      double penalty = 0.0;
      if (want_tangents) {
        const ad::NodeId pen = objectives::monotonic_penalty(g, out.score_tangents);
        penalty = g.value(pen).item();
        total = ad::add(g, total, ad::scale(g, pen, config.penalty_weight));
      }
      const double total_value = g.value(total).item();
      if (!std::isfinite(total_value)) fail(ErrorKind::kNonFinite, "non-finite loss at " + where());

      const ad::GradientMap grads = g.backward(total);
      std::vector<std::optional<ad::Tensor>> aligned(model.params().size());
      for (const auto& [index, node] : p.bound()) {
        if (grads.contains(node)) aligned[index] = grads.at(node);
      }
      adam_step(model.params(), aligned, config.learning_rate, config.l2, adam);
      ++step;

      sums.total += total_value;
      sums.esmm += g.value(esmm).item();
      sums.pair_ctrcvr += g.value(pair_ctrcvr).item();
      sums.pair_mci += g.value(pair_mci).item();
      sums.penalty += penalty;
      ++record.batches;
    }
    const auto n = static_cast<double>(record.batches);
    record.l2 = l2_term(model.params(), config.l2);
    record.loss = sums.total / n + record.l2;
    record.esmm = sums.esmm / n;
    record.pair_ctrcvr = sums.pair_ctrcvr / n;
    record.pair_mci = sums.pair_mci / n;
    record.penalty = sums.penalty / n;
    if (monitor != nullptr && !monitor->empty()) {
      const metrics::MetricsReport r = evaluate(model, *monitor, config.threads);
      record.ctcvr_auc = r.ctcvr_auc;
      record.ndcg20 = r.ndcg[2];
    }
    result.history.push_back(record);
  }
  return result;
}

metrics::MetricsReport evaluate(const models::Model& model, const Dataset& test_set, std::size_t threads) {
  if (!test_set.schema || !model.spec().schema || !(*test_set.schema == *model.spec().schema)) {
    fail(ErrorKind::kSchema, "evaluate: dataset schema does not match the model");
  }
  return metrics::evaluate_predictions(model.predict(test_set, threads), test_set, threads);
}

std::vector<std::pair<double, double>> default_lambda_grid() {
  std::vector<std::pair<double, double>> grid;
  for (double l1 : {0.1, 0.5, 1.0}) {
    for (double l2 : {0.01, 0.05, 0.1, 0.2}) grid.emplace_back(l1, l2);
  }
  return grid;
}

void select_point(SweepResult& result) {
  result.warning.clear();
  if (result.points.empty()) fail(ErrorKind::kInvalidArgument, "sweep: empty grid");
  double best_auc = -std::numeric_limits<double>::infinity();
  for (const SweepPoint& p : result.points) {
    if (p.report.ctcvr_auc) best_auc = std::max(best_auc, *p.report.ctcvr_auc);
  }
  std::optional<std::size_t> chosen;
  for (std::size_t i = 0; i < result.points.size(); ++i) {
    SweepPoint& p = result.points[i];
    p.feasible = p.report.ctcvr_auc && *p.report.ctcvr_auc >= best_auc - result.auc_floor;
    if (!p.feasible) continue;
    if (!chosen) {
      chosen = i;
      continue;
    }
    const SweepPoint& c = result.points[*chosen];
    const double pn = p.report.ndcg[2];
    const double cn = c.report.ndcg[2];
    if (pn > cn || (pn == cn && (p.lambda2 > c.lambda2 || (p.lambda2 == c.lambda2 && p.lambda1 > c.lambda1)))) chosen = i;
  }
  if (!chosen) {
    result.warning = "no point has a defined CTCVR AUC; falling back to the first grid point";
    chosen = 0;
  }
  result.chosen = *chosen;
}

SweepResult sweep_lambdas(const TrainConfig& base, const std::vector<std::pair<double, double>>& grid, double auc_floor,
                          const Dataset& train_set, const Dataset& test_set) {
  if (grid.empty()) fail(ErrorKind::kInvalidArgument, "sweep: empty grid");
  if (!(std::isfinite(auc_floor) && auc_floor >= 0.0)) fail(ErrorKind::kInvalidArgument, "sweep: auc_floor must be >= 0");
  SweepResult result;
  result.auc_floor = auc_floor;
  result.points.resize(grid.size());
  parallel_for(grid.size(), base.threads, [&](std::size_t i) {
    TrainConfig c = base;
    c.lambdas = {grid[i].first, grid[i].second};
    c.threads = 1;
    const TrainResult r = train(c, train_set);
    result.points[i] = {grid[i].first, grid[i].second, evaluate(r.model, test_set), false};
  });
  select_point(result);
  return result;
}

void write_json(const nlohmann::json& doc, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << doc.dump(2) << '\n';
  close_out(out, path);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

void write_report_json(const metrics::MetricsReport& report, const std::filesystem::path& path) {
  write_json(report.to_json(), path);
}

void write_report_csv(const std::vector<metrics::MetricsReport>& reports, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  write_csv_row(out, metrics::MetricsReport::csv_columns());
  for (const auto& r : reports) write_csv_row(out, r.csv_values());
  close_out(out, path);
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  write_csv_row(out, {"epoch", "batches", "loss", "esmm", "pair_ctrcvr", "pair_mci", "penalty", "l2", "ctcvr_auc", "ndcg@20"});
  for (const EpochRecord& r : history) {
    using metrics::format_double;
    write_csv_row(out, {std::to_string(r.epoch), std::to_string(r.batches), format_double(r.loss), format_double(r.esmm),
                        format_double(r.pair_ctrcvr), format_double(r.pair_mci), format_double(r.penalty),
                        format_double(r.l2), optional_text(r.ctcvr_auc), optional_text(r.ndcg20)});
  }
  close_out(out, path);
}

nlohmann::json sweep_to_json(const SweepResult& result) {
  nlohmann::json points = nlohmann::json::array();
  for (const SweepPoint& p : result.points) {
    points.push_back({{"lambda1", p.lambda1}, {"lambda2", p.lambda2}, {"feasible", p.feasible}, {"report", p.report.to_json()}});
  }
  nlohmann::json doc = {{"auc_floor", result.auc_floor}, {"points", points}};
  if (!result.points.empty()) {
    doc["chosen"] = {{"index", result.chosen},
                     {"lambda1", result.points[result.chosen].lambda1},
                     {"lambda2", result.points[result.chosen].lambda2}};
  }
  if (!result.warning.empty()) doc["warning"] = result.warning;
  return doc;
}

void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  std::vector<std::string> header = {"lambda1", "lambda2", "feasible", "chosen"};
  for (auto& c : metrics::MetricsReport::csv_columns()) header.push_back(c);
  write_csv_row(out, header);
  for (std::size_t i = 0; i < result.points.size(); ++i) {
    const SweepPoint& p = result.points[i];
    std::vector<std::string> row = {metrics::format_double(p.lambda1), metrics::format_double(p.lambda2),
                                    p.feasible ? "1" : "0", i == result.chosen ? "1" : "0"};
    for (auto& v : p.report.csv_values()) row.push_back(v);
    write_csv_row(out, row);
  }
  close_out(out, path);
}

}  // namespace merit::harness
