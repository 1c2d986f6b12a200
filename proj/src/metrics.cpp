#include "merit/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>

#include "merit/error.hpp"
#include "merit/parallel.hpp"

namespace merit::metrics {
namespace {

void check_scores(std::span<const double> scores, std::size_t n, const char* what) {
  if (scores.size() != n) {
    fail(ErrorKind::kShape, std::string(what) + ": " + std::to_string(scores.size()) + " scores for " + std::to_string(n) +
                                " labels");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) fail(ErrorKind::kNonFinite, std::string(what) + ": non-finite score");
  }
}

std::optional<double> auc_unchecked(std::span<const double> scores, std::span<const int> labels) {
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });
  std::uint64_t concordant = 0;
  std::uint64_t tied = 0;
  std::uint64_t neg_below = 0;
  std::uint64_t pos_total = 0;
  for (std::size_t g = 0; g < order.size();) {
    std::size_t end = g;
    std::uint64_t pos = 0;
    std::uint64_t neg = 0;
    while (end < order.size() && scores[order[end]] == scores[order[g]]) {
      (labels[order[end]] != 0 ? pos : neg) += 1;
      ++end;
    }
    concordant += pos * neg_below;
    tied += pos * neg;
    neg_below += neg;
    pos_total += pos;
    g = end;
  }
  if (pos_total == 0 || neg_below == 0) return std::nullopt;
  // Numerator and denominator are exact integers in double, so this equals
  // (concordant + tied / 2) / (P * N) correctly rounded.
  return static_cast<double>(2 * concordant + tied) / (2.0 * static_cast<double>(pos_total) * static_cast<double>(neg_below));
}

// Indices of each id's members, ids ascending.
std::vector<std::vector<std::uint32_t>> group_by(std::span<const std::uint64_t> ids) {
  std::map<std::uint64_t, std::vector<std::uint32_t>> groups;
  for (std::uint32_t i = 0; i < ids.size(); ++i) groups[ids[i]].push_back(i);
  std::vector<std::vector<std::uint32_t>> out;
  out.reserve(groups.size());
  for (auto& [id, members] : groups) out.push_back(std::move(members));
  return out;
}

double dcg(std::span<const double> z, std::span<const std::uint32_t> ranked, std::size_t k) {
  double total = 0.0;
  const std::size_t depth = std::min(k, ranked.size());
  for (std::size_t r = 1; r <= depth; ++r) total += z[ranked[r - 1]] / std::log2(static_cast<double>(r) + 1.0);
  return total;
}

double ndcg_unchecked(std::span<const double> scores, std::span<const double> z, std::size_t k) {
  std::vector<std::uint32_t> by_score(scores.size());
  std::iota(by_score.begin(), by_score.end(), 0u);
  std::vector<std::uint32_t> ideal = by_score;
  const std::size_t depth = std::min(k, scores.size());
  auto score_desc = [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  auto z_desc = [&](std::uint32_t a, std::uint32_t b) { return z[a] > z[b] || (z[a] == z[b] && a < b); };
  std::partial_sort(by_score.begin(), by_score.begin() + static_cast<std::ptrdiff_t>(depth), by_score.end(), score_desc);
  std::partial_sort(ideal.begin(), ideal.begin() + static_cast<std::ptrdiff_t>(depth), ideal.end(), z_desc);
  const double idcg = dcg(z, ideal, k);
  if (idcg == 0.0) return 1.0;
  return std::min(1.0, dcg(z, by_score, k) / idcg);
}

}  // namespace

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  check_scores(scores, labels.size(), "auc");
  return auc_unchecked(scores, labels);
}

GroupedAuc gauc(std::span<const double> scores, std::span<const int> labels, std::span<const std::uint64_t> user_ids,
                std::size_t threads) {
  check_scores(scores, labels.size(), "gauc");
  if (user_ids.size() != labels.size()) fail(ErrorKind::kShape, "gauc: user ids and labels differ in length");
  const auto groups = group_by(user_ids);
  std::vector<std::optional<double>> per_user(groups.size());
  parallel_for(groups.size(), threads, [&](std::size_t u) {
    std::vector<double> s;
    std::vector<int> l;
    for (std::uint32_t i : groups[u]) {
      s.push_back(scores[i]);
      l.push_back(labels[i]);
    }
    per_user[u] = auc_unchecked(s, l);
  });
  double weighted = 0.0;
  double weight = 0.0;
  GroupedAuc out;
  for (std::size_t u = 0; u < groups.size(); ++u) {
    if (!per_user[u]) continue;
    const auto w = static_cast<double>(groups[u].size());
    weighted += w * *per_user[u];
    weight += w;
    ++out.groups;
  }
  if (out.groups > 0) out.value = weighted / weight;
  return out;
}

double ndcg_at_k(std::span<const double> scores, std::span<const double> z, std::size_t k) {
  check_scores(scores, z.size(), "ndcg_at_k");
  if (k == 0) fail(ErrorKind::kInvalidArgument, "ndcg_at_k: k must be at least 1");
  if (scores.empty()) fail(ErrorKind::kInvalidArgument, "ndcg_at_k: empty list");
  return ndcg_unchecked(scores, z, k);
}

double wndcg_at_k(std::span<const double> scores, std::span<const double> z, std::span<const std::uint64_t> session_ids,
                  std::size_t k, std::size_t threads) {
  check_scores(scores, z.size(), "wndcg_at_k");
  if (session_ids.size() != z.size()) fail(ErrorKind::kShape, "wndcg_at_k: session ids and relevance differ in length");
  if (k == 0) fail(ErrorKind::kInvalidArgument, "wndcg_at_k: k must be at least 1");
  if (scores.empty()) fail(ErrorKind::kInvalidArgument, "wndcg_at_k: no sessions");
  const auto groups = group_by(session_ids);
  std::vector<double> per_session(groups.size());
  parallel_for(groups.size(), threads, [&](std::size_t s) {
    std::vector<double> sc;
    std::vector<double> rel;
    for (std::uint32_t i : groups[s]) {
      sc.push_back(scores[i]);
      rel.push_back(z[i]);
    }
    per_session[s] = ndcg_unchecked(sc, rel, k);
  });
  double weighted = 0.0;
  double weight = 0.0;
  for (std::size_t s = 0; s < groups.size(); ++s) {
    const auto w = static_cast<double>(groups[s].size());
    weighted += w * per_session[s];
    weight += w;
  }
  return weighted / weight;
}

MetricsReport evaluate_predictions(const models::Predictions& predictions, const Dataset& dataset, std::size_t threads) {
  const std::size_t n = dataset.size();
  if (predictions.pctr.size() != n || predictions.pcvr.size() != n || predictions.pctcvr.size() != n) {
    fail(ErrorKind::kShape, "evaluate: predictions do not match the dataset size");
  }
  if (n == 0) fail(ErrorKind::kInvalidArgument, "evaluate: empty dataset");
  std::vector<int> click(n);
  std::vector<int> order(n);
  std::vector<double> z(n);
  std::vector<std::uint64_t> users(n);
  std::vector<std::uint64_t> sessions(n);
  std::vector<double> clicked_pcvr;
  std::vector<int> clicked_order;
  std::vector<std::uint64_t> clicked_users;
  for (std::size_t i = 0; i < n; ++i) {
    const Impression& imp = dataset.impressions[i];
    click[i] = imp.y > 0;
    order[i] = imp.y == 2;
    z[i] = imp.z;
    users[i] = imp.user_id;
    sessions[i] = imp.session_id;
    if (imp.y > 0) {
      clicked_pcvr.push_back(predictions.pcvr[i]);
      clicked_order.push_back(order[i]);
      clicked_users.push_back(imp.user_id);
    }
  }
  MetricsReport r;
  r.impressions = n;
  r.clicked = clicked_pcvr.size();
  r.sessions = group_by(sessions).size();
  r.ctr_auc = auc(predictions.pctr, click);
  r.cvr_auc = auc(clicked_pcvr, clicked_order);
  r.ctcvr_auc = auc(predictions.pctcvr, order);
  const GroupedAuc g_ctr = gauc(predictions.pctr, click, users, threads);
  const GroupedAuc g_cvr = gauc(clicked_pcvr, clicked_order, clicked_users, threads);
  const GroupedAuc g_ctcvr = gauc(predictions.pctcvr, order, users, threads);
  r.ctr_gauc = g_ctr.value;
  r.cvr_gauc = g_cvr.value;
  r.ctcvr_gauc = g_ctcvr.value;
  r.ctr_gauc_users = g_ctr.groups;
  r.cvr_gauc_users = g_cvr.groups;
  r.ctcvr_gauc_users = g_ctcvr.groups;
  for (std::size_t c = 0; c < kCutoffs.size(); ++c) {
    r.ndcg[c] = ndcg_at_k(predictions.pctcvr, z, kCutoffs[c]);
    r.wndcg[c] = wndcg_at_k(predictions.pctcvr, z, sessions, kCutoffs[c], threads);
  }
  return r;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> optional_from(const nlohmann::json& doc, const char* key) {
  const auto& v = doc.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

std::string optional_text(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json doc;
  doc["ctr_auc"] = optional_json(ctr_auc);
  doc["cvr_auc"] = optional_json(cvr_auc);
  doc["ctcvr_auc"] = optional_json(ctcvr_auc);
  doc["ctr_gauc"] = optional_json(ctr_gauc);
  doc["cvr_gauc"] = optional_json(cvr_gauc);
  doc["ctcvr_gauc"] = optional_json(ctcvr_gauc);
  for (std::size_t c = 0; c < kCutoffs.size(); ++c) {
    doc["ndcg@" + std::to_string(kCutoffs[c])] = ndcg[c];
    doc["wndcg@" + std::to_string(kCutoffs[c])] = wndcg[c];
  }
  doc["impressions"] = impressions;
  doc["clicked"] = clicked;
  doc["sessions"] = sessions;
  doc["ctr_gauc_users"] = ctr_gauc_users;
  doc["cvr_gauc_users"] = cvr_gauc_users;
  doc["ctcvr_gauc_users"] = ctcvr_gauc_users;
  return doc;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& doc) {
  try {
    MetricsReport r;
    r.ctr_auc = optional_from(doc, "ctr_auc");
    r.cvr_auc = optional_from(doc, "cvr_auc");
    r.ctcvr_auc = optional_from(doc, "ctcvr_auc");
    r.ctr_gauc = optional_from(doc, "ctr_gauc");
    r.cvr_gauc = optional_from(doc, "cvr_gauc");
    r.ctcvr_gauc = optional_from(doc, "ctcvr_gauc");
    for (std::size_t c = 0; c < kCutoffs.size(); ++c) {
      r.ndcg[c] = doc.at("ndcg@" + std::to_string(kCutoffs[c])).get<double>();
      r.wndcg[c] = doc.at("wndcg@" + std::to_string(kCutoffs[c])).get<double>();
    }
    r.impressions = doc.at("impressions").get<std::size_t>();
    r.clicked = doc.at("clicked").get<std::size_t>();
    r.sessions = doc.at("sessions").get<std::size_t>();
    r.ctr_gauc_users = doc.at("ctr_gauc_users").get<std::size_t>();
    r.cvr_gauc_users = doc.at("cvr_gauc_users").get<std::size_t>();
    r.ctcvr_gauc_users = doc.at("ctcvr_gauc_users").get<std::size_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kSchema, std::string("metrics report: ") + e.what());
  }
}

std::vector<std::string> MetricsReport::csv_columns() {
  std::vector<std::string> cols = {"ctr_auc", "cvr_auc", "ctcvr_auc", "ctr_gauc", "cvr_gauc", "ctcvr_gauc"};
  for (std::size_t k : kCutoffs) cols.push_back("ndcg@" + std::to_string(k));
  for (std::size_t k : kCutoffs) cols.push_back("wndcg@" + std::to_string(k));
  for (const char* c : {"impressions", "clicked", "sessions", "ctr_gauc_users", "cvr_gauc_users", "ctcvr_gauc_users"}) {
    cols.emplace_back(c);
  }
  return cols;
}

std::vector<std::string> MetricsReport::csv_values() const {
  std::vector<std::string> v = {optional_text(ctr_auc),  optional_text(cvr_auc),  optional_text(ctcvr_auc),
                                optional_text(ctr_gauc), optional_text(cvr_gauc), optional_text(ctcvr_gauc)};
  for (double x : ndcg) v.push_back(format_double(x));
  for (double x : wndcg) v.push_back(format_double(x));
  for (std::size_t c : {impressions, clicked, sessions, ctr_gauc_users, cvr_gauc_users, ctcvr_gauc_users}) {
    v.push_back(std::to_string(c));
  }
  return v;
}

}  // namespace merit::metrics
