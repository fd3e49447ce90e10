#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "divrec/csv.hpp"
#include "divrec/data.hpp"
#include "divrec/synth.hpp"

namespace divrec {

// A processed dataset directory holds the three splits as raw-id CSVs, the
// re-index maps (raw_id,index), the per-item categories, and stats.json.

struct PreparedDataset {
  DatasetSplit split;
  GraphBuild gb;
  ItemCategoryTable table;
};

inline PreparedDataset prepare_dataset(const std::vector<Interaction>& raw,
                                       const std::unordered_map<std::string, std::string>& categories,
                                       int kcore, const SplitRatios& ratios = SplitRatios{}) {
  if (raw.empty()) throw std::runtime_error("prepare: no interactions");
  require_categories_cover(raw, categories);
  auto filtered = k_core_filter(raw, kcore);
  if (filtered.empty())
    throw std::runtime_error("prepare: dataset empty after k-core (k=" + std::to_string(kcore) + ")");
  PreparedDataset out;
  out.split = temporal_split(filtered, ratios);
  out.gb = build_graph(out.split.train);
  out.table = build_category_table(out.gb.maps, categories);
  return out;
}

namespace detail {

inline void write_index_map(const std::vector<std::string>& ids, const std::string& path) {
  auto out = open_output(path);
  out << "raw_id,index\n";
  for (std::size_t j = 0; j < ids.size(); ++j) out << ids[j] << ',' << j << '\n';
}

inline std::vector<std::string> read_index_map(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line) || split_csv(line) != std::vector<std::string>{"raw_id", "index"})
    throw std::runtime_error("index map: bad header in " + path);
  std::vector<std::string> ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 2) throw std::runtime_error("index map: malformed row in " + path);
    auto idx = parse_int64(f[1], "index");
    if (idx != static_cast<int64_t>(ids.size()))
      throw std::runtime_error("index map: non-contiguous index in " + path);
    ids.push_back(f[0]);
  }
  return ids;
}

}  // namespace detail

inline void save_prepared(const PreparedDataset& d, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto path = [&dir](const char* name) { return (std::filesystem::path(dir) / name).string(); };

  write_interactions_csv(d.split.train, path("train.csv"));
  write_interactions_csv(d.split.validation, path("validation.csv"));
  write_interactions_csv(d.split.test, path("test.csv"));
  detail::write_index_map(d.gb.maps.user_ids, path("user_map.csv"));
  detail::write_index_map(d.gb.maps.item_ids, path("item_map.csv"));
  detail::write_index_map(d.table.category_ids, path("category_map.csv"));

  {
    auto out = open_output(path("item_categories.csv"));
    out << "item_id,category_id\n";
    for (std::size_t j = 0; j < d.gb.maps.item_ids.size(); ++j)
      out << d.gb.maps.item_ids[j] << ',' << d.table.category_ids[d.table.category[j]] << '\n';
  }

  nlohmann::json stats;
  stats["users"] = d.gb.graph.num_users;
  stats["items"] = d.gb.graph.num_items;
  stats["categories"] = d.table.num_categories;
  stats["interactions"] = d.split.train.size() + d.split.validation.size() + d.split.test.size();
  stats["train"] = d.split.train.size();
  stats["validation"] = d.split.validation.size();
  stats["test"] = d.split.test.size();
  auto out = open_output(path("stats.json"));
  out << stats.dump(2) << "\n";
}

struct LoadedDataset {
  BipartiteGraph graph;
  IndexMaps maps;
  ItemCategoryTable table;
  std::vector<std::pair<int32_t, int32_t>> train_pairs;
  std::vector<std::pair<int32_t, int32_t>> val_pairs;   // unmapped rows dropped
  std::vector<std::pair<int32_t, int32_t>> test_pairs;  // unmapped rows dropped
};

inline LoadedDataset load_prepared(const std::string& dir) {
  auto path = [&dir](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  LoadedDataset d;

  d.maps.user_ids = detail::read_index_map(path("user_map.csv"));
  d.maps.item_ids = detail::read_index_map(path("item_map.csv"));
  for (std::size_t j = 0; j < d.maps.user_ids.size(); ++j)
    d.maps.user_index.emplace(d.maps.user_ids[j], static_cast<int32_t>(j));
  for (std::size_t j = 0; j < d.maps.item_ids.size(); ++j)
    d.maps.item_index.emplace(d.maps.item_ids[j], static_cast<int32_t>(j));

  d.table.category_ids = detail::read_index_map(path("category_map.csv"));
  d.table.num_categories = static_cast<int32_t>(d.table.category_ids.size());
  std::unordered_map<std::string, int32_t> cat_index;
  for (std::size_t j = 0; j < d.table.category_ids.size(); ++j)
    cat_index.emplace(d.table.category_ids[j], static_cast<int32_t>(j));
  {
    auto in = open_input(path("item_categories.csv"));
    auto raw = ingest_categories(in);
    d.table.category.assign(d.maps.item_ids.size(), -1);
    for (const auto& [item, cat] : raw) {
      auto it = d.maps.item_index.find(item);
      if (it == d.maps.item_index.end()) continue;
      auto ct = cat_index.find(cat);
      if (ct == cat_index.end())
        throw std::runtime_error("load: unknown category id " + cat + " in item_categories.csv");
      d.table.category[it->second] = ct->second;
    }
    for (std::size_t j = 0; j < d.table.category.size(); ++j)
      if (d.table.category[j] < 0)
        throw std::runtime_error("load: item without category mapping: " + d.maps.item_ids[j]);
  }

  auto read_split = [&](const char* name) {
    auto in = open_input(path(name));
    return ingest_interactions(in);
  };
  auto train = read_split("train.csv");
  d.train_pairs = to_index_pairs(train, d.maps, false);
  d.val_pairs = to_index_pairs(read_split("validation.csv"), d.maps, true);
  d.test_pairs = to_index_pairs(read_split("test.csv"), d.maps, true);

  d.graph.num_users = static_cast<int32_t>(d.maps.user_ids.size());
  d.graph.num_items = static_cast<int32_t>(d.maps.item_ids.size());
  d.graph.user_adj.assign(d.graph.num_users, {});
  d.graph.item_adj.assign(d.graph.num_items, {});
  for (const auto& [u, i] : d.train_pairs) d.graph.user_adj[u].push_back(i);
  for (auto& adj : d.graph.user_adj) {
    std::sort(adj.begin(), adj.end());
    adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
  }
  for (int32_t u = 0; u < d.graph.num_users; ++u)
    for (int32_t i : d.graph.user_adj[u]) d.graph.item_adj[i].push_back(u);
  return d;
}

}  // namespace divrec
