// Acceptance runner: one PASS/FAIL line per criterion, evidence indented
// below it. `--criterion N` runs one; without it all nine run. Exit status
// is nonzero when any selected criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "merit/harness.hpp"
#include "merit/verify.hpp"

namespace fs = std::filesystem;
using namespace merit;

namespace {

struct Outcome {
  bool pass = false;
  std::vector<std::string> evidence;
};

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string summarize(const verify::CheckResult& r) {
  std::string s = r.name + ": " + (r.passed() ? "ok" : "FAILED") + ", cases " + std::to_string(r.cases) + ", checks " +
                  std::to_string(r.checks) + ", failures " + std::to_string(r.failures) + ", worst " + fmt(r.worst, 12);
  if (!r.detail.empty()) s += ", first failure: " + r.detail;
  return s;
}

SimulatedLog default_world(std::uint64_t seed) {
  WorldConfig c;
  c.seed = seed;
  return simulate_impressions(generate_world(c), c);
}

struct Run {
  metrics::MetricsReport report;
  double seconds = 0.0;
};

Run train_and_evaluate(const std::string& tag, std::uint64_t seed, const SimulatedLog& log,
                       std::function<void(harness::TrainConfig&)> adjust = {}) {
  harness::TrainConfig c = harness::preset(tag);
  c.seed = seed;
  if (adjust) adjust(c);
  const auto t0 = std::chrono::steady_clock::now();
  const harness::TrainResult r = harness::train(c, log.train);
  return {harness::evaluate(r.model, log.test), seconds_since(t0)};
}

// 1. Finite-difference gradient checks of every layer and loss.
Outcome criterion1() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = verify::gradient_checks(1, 20);
  const double elapsed = seconds_since(t0);
  o.pass = elapsed < 60.0;
  for (const auto& r : results) {
    o.pass = o.pass && r.passed() && r.cases >= 20;
    o.evidence.push_back(summarize(r));
  }
  o.evidence.push_back("runtime " + fmt(elapsed, 1) + " s (limit 60 s), tolerance " + fmt(verify::kGradTolerance, 6));
  return o;
}

// 2. Structural monotonicity of random and trained MERIT / MERIT_MINMAX models.
Outcome criterion2() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const verify::CheckResult random = verify::random_model_monotonicity(2, 100, 1000);
  o.evidence.push_back(summarize(random) + " (100 models per architecture)");
  o.pass = random.passed();

  const SimulatedLog log = default_world(2);
  const std::vector<std::string> tags = {"MERIT", "MERIT+MSPL", "MERIT_MINMAX"};
  for (std::size_t i = 0; i < tags.size(); ++i) {
    harness::TrainConfig c = harness::preset(tags[i]);
    c.epochs = 1;
    c.seed = 2;
    const harness::TrainResult r = harness::train(c, log.train);
    const models::Batch batch = verify::random_batch(log.train.schema, log.test, 1000, 20 + i);
    const verify::CheckResult trained = verify::monotonicity_check(r.model, batch);
    o.pass = o.pass && trained.passed();
    o.evidence.push_back("trained " + tags[i] + " (1 epoch, default data): " + summarize(trained));
  }
  const double elapsed = seconds_since(t0);
  o.pass = o.pass && elapsed < 120.0;
  o.evidence.push_back("runtime " + fmt(elapsed, 1) + " s (limit 120 s)");
  return o;
}

// 3. pCTCVR == pCTR * pCVR bitwise on every forward pass.
Outcome criterion3() {
  Outcome o;
  o.pass = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    const verify::CheckResult r = verify::entire_space_identity(seed);
    o.pass = o.pass && r.passed();
    o.evidence.push_back("seed " + std::to_string(seed) + ": " + summarize(r));
  }
  return o;
}

// 4. Metric implementations agree exactly with brute-force oracles.
Outcome criterion4() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const verify::CheckResult single = verify::metric_oracles(4, 200, 1);
  const verify::CheckResult threaded = verify::metric_oracles(4, 200, 4);
  const double elapsed = seconds_since(t0);
  o.pass = single.passed() && threaded.passed() && single.cases == 200 && elapsed < 30.0;
  o.evidence.push_back("threads 1: " + summarize(single));
  o.evidence.push_back("threads 4: " + summarize(threaded));
  o.evidence.push_back("runtime " + fmt(elapsed, 2) + " s (limit 30 s)");
  return o;
}

// 5. Stratified loss masks the conflicting pair; the unstratified one opposes the order term.
Outcome criterion5() {
  const verify::CheckResult r = verify::conflict_masking();
  return {r.passed(), {summarize(r)}};
}

// 6. Pointwise penalty: zero on monotone models, positive on a planted violation.
Outcome criterion6() {
  const verify::CheckResult r = verify::penalty_consistency(6);
  return {r.passed(), {summarize(r)}};
}

// 7. MERIT+MSPL vs DNN and MERIT+MPL on five seeded default worlds.
Outcome criterion7() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  int holds = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SimulatedLog log = default_world(seed);
    const Run dnn = train_and_evaluate("DNN", seed, log);
    const Run mspl = train_and_evaluate("MERIT+MSPL", seed, log);
    const Run mpl = train_and_evaluate("MERIT+MPL", seed, log);
    const double gain = mspl.report.ndcg[2] - dnn.report.ndcg[2];
    const double auc_drop = *dnn.report.ctcvr_auc - *mspl.report.ctcvr_auc;
    const bool ok = gain >= 0.01 && auc_drop <= 0.01 && mspl.report.ndcg[2] >= mpl.report.ndcg[2];
    holds += ok;
    o.evidence.push_back("seed " + std::to_string(seed) + ": ndcg@20 DNN " + fmt(dnn.report.ndcg[2]) + ", MSPL " +
                         fmt(mspl.report.ndcg[2]) + ", MPL " + fmt(mpl.report.ndcg[2]) + "; ctcvr auc DNN " +
                         fmt(*dnn.report.ctcvr_auc) + ", MSPL " + fmt(*mspl.report.ctcvr_auc) + ", MPL " +
                         fmt(*mpl.report.ctcvr_auc) + "; gain " + fmt(gain) + ", auc drop " + fmt(auc_drop) + " -> " +
                         (ok ? "holds" : "does not hold"));
  }
  const double elapsed = seconds_since(t0);
  o.pass = holds >= 4 && elapsed < 900.0;
  o.evidence.push_back("holds on " + std::to_string(holds) + " of 5 seeds (need 4); runtime " + fmt(elapsed, 0) +
                       " s (limit 900 s)");
  return o;
}

// 8. lambda2 trend at lambda1 = 1 and the selection rule over the full grid.
Outcome criterion8() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const SimulatedLog log = default_world(1);
  harness::TrainConfig base = harness::preset("MERIT+MSPL");
  base.seed = 1;
  const harness::SweepResult sweep =
      harness::sweep_lambdas(base, harness::default_lambda_grid(), harness::kDefaultAucFloor, log.train, log.test);

  std::vector<const harness::SweepPoint*> row;
  for (const auto& p : sweep.points) {
    if (p.lambda1 == 1.0) row.push_back(&p);
  }
  std::sort(row.begin(), row.end(), [](auto* a, auto* b) { return a->lambda2 < b->lambda2; });
  constexpr double kNoise = 0.002;
  bool ndcg_ok = row.size() == 4;
  bool auc_ok = row.size() == 4;
  for (std::size_t i = 0; i < row.size(); ++i) {
    o.evidence.push_back("lambda1 1, lambda2 " + fmt(row[i]->lambda2, 2) + ": ndcg@20 " + fmt(row[i]->report.ndcg[2]) +
                         ", ctcvr auc " + fmt(*row[i]->report.ctcvr_auc));
    if (i == 0) continue;
    ndcg_ok = ndcg_ok && row[i]->report.ndcg[2] >= row[i - 1]->report.ndcg[2] - kNoise;
    auc_ok = auc_ok && *row[i]->report.ctcvr_auc <= *row[i - 1]->report.ctcvr_auc + kNoise;
  }
  o.evidence.push_back(std::string("ndcg@20 non-decreasing within 0.002: ") + (ndcg_ok ? "yes" : "no"));
  o.evidence.push_back(std::string("ctcvr auc non-increasing within 0.002: ") + (auc_ok ? "yes" : "no"));

  std::size_t feasible = 0;
  std::size_t at_max = 0;
  const harness::SweepPoint& chosen = sweep.points[sweep.chosen];
  for (const auto& p : sweep.points) {
    feasible += p.feasible;
    at_max += p.feasible && p.report.ndcg[2] == chosen.report.ndcg[2];
  }
  const bool unique = feasible > 0 && chosen.feasible && sweep.warning.empty();
  o.evidence.push_back("selection over " + std::to_string(sweep.points.size()) + " points: " + std::to_string(feasible) +
                       " feasible, chosen (" + fmt(chosen.lambda1, 2) + ", " + fmt(chosen.lambda2, 2) + ") ndcg@20 " +
                       fmt(chosen.report.ndcg[2]) + ", ctcvr auc " + fmt(*chosen.report.ctcvr_auc) +
                       (at_max > 1 ? ", tie broken by rule" : ", no tie"));
  const double elapsed = seconds_since(t0);
  o.pass = ndcg_ok && auc_ok && unique && elapsed < 1800.0;
  o.evidence.push_back("runtime " + fmt(elapsed, 0) + " s (limit 1800 s)");
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_tool(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null").c_str());
  return status;
}

// 9. The train command is bitwise reproducible, including across thread counts.
Outcome criterion9(const std::string& tool) {
  Outcome o;
  if (tool.empty() || !fs::exists(tool)) {
    o.evidence.push_back("merit tool not found at '" + tool + "'");
    return o;
  }
  const fs::path work = fs::temp_directory_path() / ("merit_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string q = "'" + tool + "'";
  bool ok = run_tool(q + " gen --seed 9 --out '" + (work / "data").string() + "'") == 0;
  for (const std::string tag : {"MERIT+MSPL", "MERIT_PML"}) {
    std::ofstream(work / "train.json") << R"({"preset": ")" << tag << R"(", "epochs": 2,
      "train_path": "data/train.tsv", "test_path": "data/test.tsv", "schema_path": "data/schema.json"})";
    const std::vector<std::pair<std::string, int>> runs = {{"a", 1}, {"b", 1}, {"c", 4}};
    for (const auto& [name, threads] : runs) {
      ok = ok && run_tool(q + " train --config '" + (work / "train.json").string() + "' --seed 9 --threads " +
                          std::to_string(threads) + " --out '" + (work / (tag + name)).string() + "'") == 0;
    }
    for (const std::string file : {"checkpoint.txt", "report.json", "report.csv", "history.csv"}) {
      const std::string a = slurp(work / (tag + "a") / file);
      const bool same = !a.empty() && a == slurp(work / (tag + "b") / file) && a == slurp(work / (tag + "c") / file);
      ok = ok && same;
      o.evidence.push_back(tag + " " + file + " (" + std::to_string(a.size()) + " bytes): threads 1, 1, 4 " +
                           (same ? "identical" : "DIFFER"));
    }
  }
  fs::remove_all(work);
  o.pass = ok;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MERIT acceptance criteria"};
  int only = 0;
  std::string tool;
  app.add_option("--criterion", only, "run a single criterion (1-9)")->check(CLI::Range(1, 9));
  app.add_option("--merit", tool, "path to the merit command-line tool (criterion 9)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Outcome()>> criteria = {
      criterion1, criterion2, criterion3, criterion4, criterion5,
      criterion6, criterion7, criterion8, [&] { return criterion9(tool); },
  };
  bool all = true;
  for (int i = 1; i <= 9; ++i) {
    if (only != 0 && i != only) continue;
    Outcome o;
    try {
      o = criteria[i - 1]();
    } catch (const std::exception& e) {
      o.evidence.push_back(std::string("error: ") + e.what());
    }
    std::cout << "CRITERION " << i << ": " << (o.pass ? "PASS" : "FAIL") << "\n";
    for (const auto& line : o.evidence) std::cout << "    " << line << "\n";
    std::cout.flush();
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
