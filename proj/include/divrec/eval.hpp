#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "divrec/csv.hpp"
#include "divrec/data.hpp"
#include "divrec/model.hpp"

namespace divrec {

struct Representations {
  Matrix user;  // M x d
  Matrix item;  // N x d
};

// Deterministic full-graph propagation: every layer aggregates over the
// complete neighborhood plus self, with no sampling and no dropout.
inline Representations infer_all(const BipartiteGraph& graph, const ModelParameters& params) {
  if (graph.num_users != params.num_users || graph.num_items != params.num_items)
    throw std::runtime_error("infer_all: graph has " + std::to_string(graph.num_users) + "x" +
                             std::to_string(graph.num_items) + " nodes but model was trained for " +
                             std::to_string(params.num_users) + "x" + std::to_string(params.num_items));
  const int d = params.dim;
  const int32_t total = graph.num_nodes();

  Matrix prev = params.embeddings;
  Matrix cur(total, d);
  std::vector<double> agg(d);
  for (int l = 1; l <= params.depth; ++l) {
    for (int32_t v = 0; v < total; ++v) {
      std::fill(agg.begin(), agg.end(), 0.0);
      const double* self = prev.row(v);
      for (int c = 0; c < d; ++c) agg[c] += self[c];
      std::size_t count = 1;
      if (graph.is_user_node(v)) {
        for (int32_t i : graph.user_adj[v]) {
          const double* src = prev.row(graph.item_node(i));
          for (int c = 0; c < d; ++c) agg[c] += src[c];
        }
        count += graph.user_adj[v].size();
      } else {
        for (int32_t u : graph.item_adj[v - graph.num_users]) {
          const double* src = prev.row(u);
          for (int c = 0; c < d; ++c) agg[c] += src[c];
        }
        count += graph.item_adj[v - graph.num_users].size();
      }
      double inv = 1.0 / static_cast<double>(count);
      for (int c = 0; c < d; ++c) agg[c] *= inv;
      matvec(params.conv[l - 1], agg.data(), cur.row(v));
      for (int c = 0; c < d; ++c) cur(v, c) = std::tanh(cur(v, c));
    }
    std::swap(prev, cur);
  }

  Representations reps;
  reps.user = Matrix(graph.num_users, d);
  reps.item = Matrix(graph.num_items, d);
  std::copy(prev.row(0), prev.row(0) + static_cast<std::size_t>(graph.num_users) * d,
            reps.user.a.begin());
  std::copy(prev.row(graph.num_users),
            prev.row(graph.num_users) + static_cast<std::size_t>(graph.num_items) * d,
            reps.item.a.begin());
  return reps;
}

struct RecommendationList {
  int32_t user = 0;
  std::vector<int32_t> items;  // ranked, scores nonincreasing
  std::vector<double> scores;
};

// Exact brute-force top-k by inner product for every user, with per-user
// excluded items removed from the candidate pool. Ties go to the lower item
// index.
inline std::vector<RecommendationList> retrieve_topk(
    const Representations& reps, int keval,
    const std::vector<std::unordered_set<int32_t>>& exclusions) {
  const int32_t M = reps.user.rows;
  const int32_t N = reps.item.rows;
  const int d = reps.user.cols;
  if (keval < 1) throw std::invalid_argument("retrieve_topk: k must be >= 1");
  if (!exclusions.empty() && static_cast<int32_t>(exclusions.size()) != M)
    throw std::invalid_argument("retrieve_topk: exclusion sets do not match user count");

  std::vector<RecommendationList> out(M);
  std::vector<double> scores(N);
  std::vector<int32_t> eligible;
  for (int32_t u = 0; u < M; ++u) {
    const double* hu = reps.user.row(u);
    for (int32_t i = 0; i < N; ++i) scores[i] = dot(hu, reps.item.row(i), d);

    eligible.clear();
    const std::unordered_set<int32_t>* excl = exclusions.empty() ? nullptr : &exclusions[u];
    for (int32_t i = 0; i < N; ++i)
      if (!excl || excl->count(i) == 0) eligible.push_back(i);
    if (static_cast<int>(eligible.size()) < keval)
      throw std::runtime_error("retrieve_topk: k=" + std::to_string(keval) +
                               " infeasible for user " + std::to_string(u) + " with only " +
                               std::to_string(eligible.size()) + " candidate items");

    auto better = [&scores](int32_t a, int32_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return a < b;
    };
    std::partial_sort(eligible.begin(), eligible.begin() + keval, eligible.end(), better);
    eligible.resize(keval);

    out[u].user = u;
    out[u].items = eligible;
    out[u].scores.resize(keval);
    for (int j = 0; j < keval; ++j) out[u].scores[j] = scores[eligible[j]];
  }
  return out;
}

struct AccuracyStats {
  double recall = 0.0;
  double hit = 0.0;
};

inline AccuracyStats accuracy_of(const RecommendationList& rec,
                                 const std::unordered_set<int32_t>& test_items) {
  if (test_items.empty()) throw std::invalid_argument("accuracy_of: empty test set");
  std::size_t matched = 0;
  for (int32_t i : rec.items) matched += test_items.count(i);
  AccuracyStats s;
  s.recall = static_cast<double>(matched) / static_cast<double>(test_items.size());
  s.hit = matched > 0 ? 1.0 : 0.0;
  return s;
}

struct DiversityStats {
  double coverage = 0.0;
  double entropy = 0.0;
  double gini = 0.0;
};

// Coverage counts distinct categories; entropy is Shannon entropy (natural
// log) of the list's category proportions; gini runs over the whole category
// vocabulary, zero counts included, so narrow lists read as unequal.
inline DiversityStats diversity_of(const std::vector<int32_t>& items,
                                   const ItemCategoryTable& table) {
  if (items.empty()) throw std::invalid_argument("diversity_of: empty recommendation list");
  std::vector<int64_t> counts(table.num_categories, 0);
  for (int32_t i : items) ++counts[table.at(i)];

  DiversityStats s;
  const double n = static_cast<double>(items.size());
  for (int64_t c : counts) {
    if (c == 0) continue;
    s.coverage += 1.0;
    double p = static_cast<double>(c) / n;
    s.entropy -= p * std::log(p);
  }

  std::vector<int64_t> sorted = counts;
  std::sort(sorted.begin(), sorted.end());
  const double C = static_cast<double>(table.num_categories);
  double weighted = 0.0;
  for (std::size_t r = 0; r < sorted.size(); ++r)
    weighted += static_cast<double>(r + 1) * static_cast<double>(sorted[r]);
  s.gini = 2.0 * weighted / (C * n) - (C + 1.0) / C;
  return s;
}

struct UserMetrics {
  int32_t user = -1;
  double recall = 0.0;
  double hit = 0.0;
  double coverage = 0.0;
  double entropy = 0.0;
  double gini = 0.0;
};

struct MetricsReport {
  int keval = 0;
  std::vector<UserMetrics> users;  // evaluated users only
  UserMetrics mean;                // user field stays -1
};

// Joins retrieval output with the held-out interactions. Users without any
// test item in the index are skipped, and the mean row averages over the
// users that remain.
inline MetricsReport make_report(const std::vector<RecommendationList>& recs,
                                 const std::vector<std::unordered_set<int32_t>>& test_sets,
                                 const ItemCategoryTable& table, int keval) {
  if (test_sets.size() != recs.size())
    throw std::invalid_argument("make_report: test sets do not match recommendation lists");
  MetricsReport report;
  report.keval = keval;
  for (std::size_t u = 0; u < recs.size(); ++u) {
    if (test_sets[u].empty()) continue;
    UserMetrics m;
    m.user = recs[u].user;
    auto acc = accuracy_of(recs[u], test_sets[u]);
    auto div = diversity_of(recs[u].items, table);
    m.recall = acc.recall;
    m.hit = acc.hit;
    m.coverage = div.coverage;
    m.entropy = div.entropy;
    m.gini = div.gini;
    report.users.push_back(m);
  }
  if (report.users.empty()) throw std::runtime_error("make_report: no users with test items");
  for (const auto& m : report.users) {
    report.mean.recall += m.recall;
    report.mean.hit += m.hit;
    report.mean.coverage += m.coverage;
    report.mean.entropy += m.entropy;
    report.mean.gini += m.gini;
  }
  const double n = static_cast<double>(report.users.size());
  report.mean.recall /= n;
  report.mean.hit /= n;
  report.mean.coverage /= n;
  report.mean.entropy /= n;
  report.mean.gini /= n;
  return report;
}

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_metrics_csv(const MetricsReport& report, const std::string& path) {
  auto out = open_output(path);
  out << "user,recall,hit,coverage,entropy,gini\n";
  auto row = [&out](const std::string& user, const UserMetrics& m) {
    out << user << ',' << format_metric(m.recall) << ',' << format_metric(m.hit) << ','
        << format_metric(m.coverage) << ',' << format_metric(m.entropy) << ','
        << format_metric(m.gini) << '\n';
  };
  for (const auto& m : report.users) row(std::to_string(m.user), m);
  row("__mean__", report.mean);
}

inline void write_metrics_json(const MetricsReport& report, const std::string& path) {
  nlohmann::json j;
  j["keval"] = report.keval;
  auto fill = [](const UserMetrics& m) {
    return nlohmann::json{{"recall", m.recall},
                          {"hit", m.hit},
                          {"coverage", m.coverage},
                          {"entropy", m.entropy},
                          {"gini", m.gini}};
  };
  j["users"] = nlohmann::json::array();
  for (const auto& m : report.users) {
    auto row = fill(m);
    row["user"] = m.user;
    j["users"].push_back(row);
  }
  j["mean"] = fill(report.mean);
  auto out = open_output(path);
  out << j.dump(2) << "\n";
}

// Reads a file produced by write_metrics_csv.
inline MetricsReport read_metrics_csv(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line) ||
      split_csv(line) != std::vector<std::string>{"user", "recall", "hit", "coverage", "entropy", "gini"})
    throw std::runtime_error("metrics csv: bad header in " + path);
  MetricsReport report;
  bool saw_mean = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 6) throw std::runtime_error("metrics csv: malformed row in " + path);
    UserMetrics m;
    m.recall = parse_double(f[1], "recall");
    m.hit = parse_double(f[2], "hit");
    m.coverage = parse_double(f[3], "coverage");
    m.entropy = parse_double(f[4], "entropy");
    m.gini = parse_double(f[5], "gini");
    if (f[0] == "__mean__") {
      report.mean = m;
      saw_mean = true;
    } else {
      m.user = static_cast<int32_t>(parse_int64(f[0], "user"));
      report.users.push_back(m);
    }
  }
  if (!saw_mean) throw std::runtime_error("metrics csv: missing __mean__ row in " + path);
  return report;
}

// Per-user held-out item sets, index form.
inline std::vector<std::unordered_set<int32_t>> test_sets_by_user(
    const std::vector<std::pair<int32_t, int32_t>>& pairs, int32_t num_users) {
  std::vector<std::unordered_set<int32_t>> sets(num_users);
  for (const auto& [u, i] : pairs) sets[u].insert(i);
  return sets;
}

}  // namespace divrec
