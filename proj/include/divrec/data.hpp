#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "divrec/csv.hpp"

namespace divrec {

// One implicit-feedback event. Ids are opaque strings until re-indexing.
struct Interaction {
  std::string user;
  std::string item;
  int64_t timestamp = 0;
};

struct DatasetSplit {
  std::vector<Interaction> train;
  std::vector<Interaction> validation;
  std::vector<Interaction> test;
};

struct SplitRatios {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

// Contiguous re-indexing of the raw ids that appear in the training split.
struct IndexMaps {
  std::vector<std::string> user_ids;  // index -> raw id
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, int32_t> user_index;  // raw id -> index
  std::unordered_map<std::string, int32_t> item_index;
};

// Undirected user-item graph. Users are indexed [0, num_users), items
// [0, num_items). Node ids used by the sampler and the model place users
// at [0, M) and items at [M, M+N).
struct BipartiteGraph {
  int32_t num_users = 0;
  int32_t num_items = 0;
  std::vector<std::vector<int32_t>> user_adj;  // user index -> sorted distinct item indices
  std::vector<std::vector<int32_t>> item_adj;  // item index -> sorted distinct user indices

  int32_t num_nodes() const { return num_users + num_items; }
  int32_t item_node(int32_t item) const { return num_users + item; }
  bool is_user_node(int32_t node) const { return node < num_users; }
};

// item index -> dense category index in [0, num_categories)
struct ItemCategoryTable {
  std::vector<int32_t> category;
  int32_t num_categories = 0;
  std::vector<std::string> category_ids;  // dense index -> raw category id

  int32_t at(int32_t item) const {
    if (item < 0 || item >= static_cast<int32_t>(category.size()))
      throw std::out_of_range("item " + std::to_string(item) + " has no category");
    return category[item];
  }
};

// Parses `user_id,item_id,timestamp` rows. Duplicate (user,item) pairs are
// kept; they are distinct events.
inline std::vector<Interaction> ingest_interactions(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("interactions: missing header");
  auto header = split_csv(line);
  if (header != std::vector<std::string>{"user_id", "item_id", "timestamp"})
    throw std::runtime_error("interactions: expected header user_id,item_id,timestamp");

  std::vector<Interaction> out;
  int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty())
      throw std::runtime_error("interactions: malformed row at line " + std::to_string(line_no));
    Interaction ev;
    ev.user = fields[0];
    ev.item = fields[1];
    try {
      ev.timestamp = parse_int64(fields[2], "timestamp");
    } catch (const std::exception&) {
      throw std::runtime_error("interactions: bad timestamp at line " + std::to_string(line_no));
    }
    out.push_back(std::move(ev));
  }
  return out;
}

// Parses `item_id,category_id` rows into a raw-id map.
inline std::unordered_map<std::string, std::string> ingest_categories(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("categories: missing header");
  auto header = split_csv(line);
  if (header != std::vector<std::string>{"item_id", "category_id"})
    throw std::runtime_error("categories: expected header item_id,category_id");

  std::unordered_map<std::string, std::string> out;
  int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv(line);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty())
      throw std::runtime_error("categories: malformed row at line " + std::to_string(line_no));
    out[fields[0]] = fields[1];
  }
  return out;
}

inline void require_categories_cover(const std::vector<Interaction>& interactions,
                                     const std::unordered_map<std::string, std::string>& categories) {
  for (const auto& ev : interactions)
    if (categories.find(ev.item) == categories.end())
      throw std::runtime_error("item without category mapping: " + ev.item);
}

// Iteratively removes users and items with fewer than k interactions until
// every survivor has at least k (or nothing is left). Degree counts events,
// not distinct partners.
inline std::vector<Interaction> k_core_filter(const std::vector<Interaction>& interactions, int k) {
  if (k < 1) throw std::invalid_argument("k_core_filter: k must be >= 1");
  std::vector<Interaction> cur = interactions;
  while (true) {
    std::unordered_map<std::string, int> user_deg, item_deg;
    for (const auto& ev : cur) {
      ++user_deg[ev.user];
      ++item_deg[ev.item];
    }
    std::vector<Interaction> next;
    next.reserve(cur.size());
    for (const auto& ev : cur)
      if (user_deg[ev.user] >= k && item_deg[ev.item] >= k) next.push_back(ev);
    if (next.size() == cur.size()) return cur;
    cur = std::move(next);
  }
}

// Stable sort by timestamp, then floor(r1*n) / floor(r2*n) / remainder.
inline DatasetSplit temporal_split(const std::vector<Interaction>& interactions,
                                   const SplitRatios& ratios = SplitRatios{}) {
  if (interactions.empty()) throw std::invalid_argument("temporal_split: empty interaction list");
  double sum = ratios.train + ratios.validation + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("temporal_split: ratios must sum to 1");

  std::vector<Interaction> sorted = interactions;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });

  const std::size_t n = sorted.size();
  const std::size_t n_train = static_cast<std::size_t>(ratios.train * static_cast<double>(n));
  const std::size_t n_val = static_cast<std::size_t>(ratios.validation * static_cast<double>(n));

  DatasetSplit split;
  split.train.assign(sorted.begin(), sorted.begin() + n_train);
  split.validation.assign(sorted.begin() + n_train, sorted.begin() + n_train + n_val);
  split.test.assign(sorted.begin() + n_train + n_val, sorted.end());
  return split;
}

struct GraphBuild {
  BipartiteGraph graph;
  IndexMaps maps;
};

// One undirected edge per distinct (user, item) pair; indices assigned in
// first-appearance order over the training list.
inline GraphBuild build_graph(const std::vector<Interaction>& train) {
  if (train.empty()) throw std::invalid_argument("build_graph: empty training split");
  GraphBuild out;
  auto& maps = out.maps;
  auto& g = out.graph;

  for (const auto& ev : train) {
    if (maps.user_index.find(ev.user) == maps.user_index.end()) {
      maps.user_index.emplace(ev.user, static_cast<int32_t>(maps.user_ids.size()));
      maps.user_ids.push_back(ev.user);
    }
    if (maps.item_index.find(ev.item) == maps.item_index.end()) {
      maps.item_index.emplace(ev.item, static_cast<int32_t>(maps.item_ids.size()));
      maps.item_ids.push_back(ev.item);
    }
  }
  g.num_users = static_cast<int32_t>(maps.user_ids.size());
  g.num_items = static_cast<int32_t>(maps.item_ids.size());
  g.user_adj.assign(g.num_users, {});
  g.item_adj.assign(g.num_items, {});
  for (const auto& ev : train) {
    g.user_adj[maps.user_index.at(ev.user)].push_back(maps.item_index.at(ev.item));
  }
  for (auto& adj : g.user_adj) {
    std::sort(adj.begin(), adj.end());
    adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
  }
  for (int32_t u = 0; u < g.num_users; ++u)
    for (int32_t i : g.user_adj[u]) g.item_adj[i].push_back(u);
  // item_adj ends up sorted because users are visited in ascending order
  return out;
}

// Dense category indices assigned in item-index order; errors on any item
// missing from the raw map.
inline ItemCategoryTable build_category_table(
    const IndexMaps& maps, const std::unordered_map<std::string, std::string>& raw_categories) {
  ItemCategoryTable table;
  table.category.resize(maps.item_ids.size());
  std::unordered_map<std::string, int32_t> dense;
  for (std::size_t i = 0; i < maps.item_ids.size(); ++i) {
    auto it = raw_categories.find(maps.item_ids[i]);
    if (it == raw_categories.end())
      throw std::runtime_error("item without category mapping: " + maps.item_ids[i]);
    auto [pos, inserted] = dense.emplace(it->second, static_cast<int32_t>(table.category_ids.size()));
    if (inserted) table.category_ids.push_back(it->second);
    table.category[i] = pos->second;
  }
  table.num_categories = static_cast<int32_t>(table.category_ids.size());
  return table;
}

// (user index, item index) pairs for interactions that survive re-indexing.
// With drop_unmapped=false an unmapped id is an error.
inline std::vector<std::pair<int32_t, int32_t>> to_index_pairs(
    const std::vector<Interaction>& interactions, const IndexMaps& maps, bool drop_unmapped) {
  std::vector<std::pair<int32_t, int32_t>> out;
  out.reserve(interactions.size());
  for (const auto& ev : interactions) {
    auto u = maps.user_index.find(ev.user);
    auto i = maps.item_index.find(ev.item);
    if (u == maps.user_index.end() || i == maps.item_index.end()) {
      if (drop_unmapped) continue;
      throw std::runtime_error("interaction references unindexed id: " + ev.user + "," + ev.item);
    }
    out.emplace_back(u->second, i->second);
  }
  return out;
}

}  // namespace divrec
