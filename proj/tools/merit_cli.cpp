// merit command-line tool: gen, train, eval, sweep, verify.
//
// Success prints a JSON summary on stdout and exits 0. Failure prints
// {"error": {"kind", "message"}} on stderr: exit 1 for a library error,
// 2 for bad usage, 3 when a verification check fails.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "merit/datagen.hpp"
#include "merit/error.hpp"
#include "merit/harness.hpp"
#include "merit/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace merit;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitVerifyFailed = 3;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<std::size_t> threads;
};

void add_flags(CLI::App* cmd, Flags& f, bool config_required) {
  auto* c = cmd->add_option("--config", f.config, "JSON config file");
  if (config_required) c->required();
  cmd->add_option("--seed", f.seed, "RNG seed (overrides the config)");
  cmd->add_option("--out", f.out, "output directory")->capture_default_str();
  cmd->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
}

// Relative paths inside a config are taken from the config's directory.
std::string resolve(const fs::path& base, const std::string& path) {
  if (path.empty()) return path;
  const fs::path p(path);
  return p.is_absolute() ? p.string() : (base / p).lexically_normal().string();
}

fs::path config_dir(const std::string& config) { return fs::absolute(fs::path(config)).parent_path(); }

fs::path make_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  require(!ec, ErrorKind::kIo, "cannot create output directory " + out + ": " + ec.message());
  return fs::path(out);
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json run_gen(const Flags& f) {
  WorldConfig wc = f.config.empty() ? WorldConfig{} : WorldConfig::from_json(harness::read_json(f.config));
  if (f.seed) wc.seed = *f.seed;
  if (f.threads) wc.threads = *f.threads;
  wc.validate();
  const fs::path out = make_out_dir(f.out);
  const SimulatedLog log = simulate_impressions(generate_world(wc), wc);
  write_dataset(log.train, out / "train.tsv");
  write_dataset(log.test, out / "test.tsv");
  write_schema(*log.train.schema, out / "schema.json");
  json world = wc.to_json();
  world.erase("threads");
  harness::write_json(world, out / "world.json");
  json files;
  for (const char* name : {"train.tsv", "test.tsv", "schema.json", "world.json"}) files[name] = hex(file_checksum(out / name));
  const json summary = {{"command", "gen"},
                        {"train_impressions", log.train.size()},
                        {"test_impressions", log.test.size()},
                        {"files", files}};
  harness::write_json(summary, out / "manifest.json");
  return summary;
}

struct LoadedData {
  Dataset train;
  std::optional<Dataset> test;
};

harness::TrainConfig load_train_config(const json& doc, const fs::path& base, const Flags& f) {
  harness::TrainConfig c = harness::TrainConfig::from_json(doc);
  c.train_path = resolve(base, c.train_path);
  c.test_path = resolve(base, c.test_path);
  c.schema_path = resolve(base, c.schema_path);
  if (f.seed) c.seed = *f.seed;
  if (f.threads) c.threads = *f.threads;
  require(!c.train_path.empty(), ErrorKind::kInvalidArgument, "train config: train_path is required");
  require(!c.schema_path.empty(), ErrorKind::kInvalidArgument, "train config: schema_path is required");
  return c;
}

LoadedData load_data(const harness::TrainConfig& c, bool need_test) {
  const auto schema = read_schema(c.schema_path);
  LoadedData d{read_dataset(c.train_path, schema), std::nullopt};
  if (!c.test_path.empty()) d.test = read_dataset(c.test_path, schema);
  require(!need_test || d.test.has_value(), ErrorKind::kInvalidArgument, "config: test_path is required");
  return d;
}

json run_train(const Flags& f) {
  const harness::TrainConfig c = load_train_config(harness::read_json(f.config), config_dir(f.config), f);
  const LoadedData data = load_data(c, false);
  const fs::path out = make_out_dir(f.out);
  const harness::TrainResult r = harness::train(c, data.train, data.test ? &*data.test : nullptr);
  models::save_checkpoint(r.model, out / "checkpoint.txt");
  harness::write_history_csv(r.history, out / "history.csv");
  json effective = c.to_json();
  effective.erase("threads");  // does not affect results
  harness::write_json(effective, out / "config.json");
  json summary = {{"command", "train"}, {"epochs", r.history.size()}, {"final_loss", r.history.back().loss}};
  if (data.test) {
    const metrics::MetricsReport report = harness::evaluate(r.model, *data.test, c.threads);
    harness::write_report_json(report, out / "report.json");
    harness::write_report_csv({report}, out / "report.csv");
    summary["report"] = report.to_json();
  }
  return summary;
}

json run_eval(const Flags& f) {
  const json doc = harness::read_json(f.config);
  const fs::path base = config_dir(f.config);
  require(doc.is_object(), ErrorKind::kSchema, "eval config: expected a JSON object");
  for (const auto& [key, _] : doc.items()) {
    require(key == "checkpoint" || key == "test_path", ErrorKind::kSchema, "eval config: unknown key '" + key + "'");
  }
  require(doc.contains("checkpoint") && doc.contains("test_path"), ErrorKind::kSchema,
          "eval config: needs checkpoint and test_path");
  const models::Model model = models::load_checkpoint(resolve(base, doc.at("checkpoint").get<std::string>()));
  const Dataset test = read_dataset(resolve(base, doc.at("test_path").get<std::string>()), model.spec().schema);
  const metrics::MetricsReport report = harness::evaluate(model, test, f.threads.value_or(1));
  const fs::path out = make_out_dir(f.out);
  harness::write_report_json(report, out / "report.json");
  harness::write_report_csv({report}, out / "report.csv");
  return {{"command", "eval"}, {"report", report.to_json()}};
}

json run_sweep(const Flags& f) {
  const json doc = harness::read_json(f.config);
  require(doc.is_object() && doc.contains("base"), ErrorKind::kSchema, "sweep config: needs a base train config");
  for (const auto& [key, _] : doc.items()) {
    require(key == "base" || key == "grid" || key == "auc_floor", ErrorKind::kSchema,
            "sweep config: unknown key '" + key + "'");
  }
  const harness::TrainConfig base = load_train_config(doc.at("base"), config_dir(f.config), f);
  std::vector<std::pair<double, double>> grid = harness::default_lambda_grid();
  double floor = harness::kDefaultAucFloor;
  try {
    if (doc.contains("grid")) grid = doc.at("grid").get<std::vector<std::pair<double, double>>>();
    if (doc.contains("auc_floor")) floor = doc.at("auc_floor").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kSchema, std::string("sweep config: ") + e.what());
  }
  const LoadedData data = load_data(base, true);
  const harness::SweepResult r = harness::sweep_lambdas(base, grid, floor, data.train, *data.test);
  const fs::path out = make_out_dir(f.out);
  const json result = harness::sweep_to_json(r);
  harness::write_json(result, out / "sweep.json");
  harness::write_sweep_csv(r, out / "sweep.csv");
  return {{"command", "sweep"}, {"result", result}};
}

// Returns the summary and whether every check passed.
std::pair<json, bool> run_verify(const Flags& f) {
  const std::vector<verify::CheckResult> results = verify::run_all(f.seed.value_or(1), f.threads.value_or(1));
  json checks = json::array();
  bool ok = true;
  for (const auto& r : results) {
    checks.push_back(r.to_json());
    ok = ok && r.passed();
  }
  const json summary = {{"command", "verify"}, {"passed", ok}, {"checks", checks}};
  if (f.out != ".") harness::write_json(summary, make_out_dir(f.out) / "verify.json");
  return {summary, ok};
}

int report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MERIT merchant-incentive ranking toolkit"};
  app.require_subcommand(1);
  Flags flags;
  add_flags(app.add_subcommand("gen", "generate a synthetic dataset"), flags, false);
  add_flags(app.add_subcommand("train", "train a model"), flags, true);
  add_flags(app.add_subcommand("eval", "evaluate a checkpoint"), flags, true);
  add_flags(app.add_subcommand("sweep", "sweep the pairwise loss weights"), flags, true);
  add_flags(app.add_subcommand("verify", "run the property checks"), flags, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kExitUsage);
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    json summary;
    if (cmd == "gen") summary = run_gen(flags);
    if (cmd == "train") summary = run_train(flags);
    if (cmd == "eval") summary = run_eval(flags);
    if (cmd == "sweep") summary = run_sweep(flags);
    if (cmd == "verify") {
      auto [s, ok] = run_verify(flags);
      std::cout << s.dump(2) << "\n";
      if (!ok) return report_error("verification_failed", "one or more checks failed", kExitVerifyFailed);
      return 0;
    }
    std::cout << summary.dump(2) << "\n";
    return 0;
  } catch (const Error& e) {
    return report_error(to_string(e.kind()), e.what(), kExitError);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), kExitError);
  }
}
