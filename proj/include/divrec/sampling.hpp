#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "divrec/data.hpp"
#include "divrec/rng.hpp"

namespace divrec {

struct TrainingSample {
  int32_t user = 0;      // user index
  int32_t item = 0;      // item index
  double label = 0.0;    // 1 observed, 0 sampled negative
  int32_t category = 0;  // category of item
};

// Sampled computation graph for a minibatch. layers[0] holds the seed nodes,
// layers[depth] the widest receptive field. blocks[k].lists is aligned with
// layers[k]; each list is the aggregation set for that node ({v} first, then
// its sampled neighbors) and every entry appears in layers[k+1].
struct NodeFlowBlock {
  std::vector<std::vector<int32_t>> lists;
};

struct NodeFlow {
  int depth = 0;
  std::vector<std::vector<int32_t>> layers;  // depth+1 sorted distinct node-id sets
  std::vector<NodeFlowBlock> blocks;         // depth blocks
};

// Neighbor weights that push against over-represented categories. For a user
// whose neighbor items have categories with histogram H, item i gets weight
// (1/H[C(i)])^alpha, normalized over the neighbor list.
inline std::vector<double> histogram_and_rebalance(const std::vector<int32_t>& neighbor_items,
                                                   const ItemCategoryTable& table, double alpha) {
  if (neighbor_items.empty())
    throw std::invalid_argument("histogram_and_rebalance: empty neighbor list");
  std::vector<double> p(neighbor_items.size(), 0.0);
  std::vector<int32_t> hist(table.num_categories, 0);
  for (int32_t i : neighbor_items) ++hist[table.at(i)];
  double sum = 0.0;
  for (std::size_t j = 0; j < neighbor_items.size(); ++j) {
    p[j] = std::pow(1.0 / static_cast<double>(hist[table.at(neighbor_items[j])]), alpha);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace detail {

// Sequential draws proportional to the remaining weights.
inline std::vector<int32_t> weighted_sample_without_replacement(const std::vector<int32_t>& items,
                                                                std::vector<double> weights, int n,
                                                                Rng& rng) {
  std::vector<int32_t> pool = items;
  std::vector<int32_t> out;
  out.reserve(n);
  for (int t = 0; t < n; ++t) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = rng.uniform() * total;
    std::size_t pick = weights.size() - 1;
    double acc = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
      acc += weights[j];
      if (r < acc) {
        pick = j;
        break;
      }
    }
    out.push_back(pool[pick]);
    pool.erase(pool.begin() + pick);
    weights.erase(weights.begin() + pick);
  }
  return out;
}

// Partial Fisher-Yates over a copy.
inline std::vector<int32_t> uniform_sample_without_replacement(const std::vector<int32_t>& items,
                                                               int n, Rng& rng) {
  std::vector<int32_t> pool = items;
  std::vector<int32_t> out;
  out.reserve(n);
  for (int t = 0; t < n; ++t) {
    int64_t j = t + rng.uniform_int(static_cast<int64_t>(pool.size()) - t);
    std::swap(pool[t], pool[j]);
    out.push_back(pool[t]);
  }
  return out;
}

}  // namespace detail

// Expands seed nodes into a depth-layer NodeFlow. Every node keeps itself in
// its aggregation list; beyond that, user nodes draw up to `fanout` item
// neighbors under rebalanced weights and item nodes draw user neighbors
// uniformly, both without replacement.
inline NodeFlow discover_neighbors(const BipartiteGraph& graph, const std::vector<int32_t>& seeds,
                                   int depth, int fanout, const ItemCategoryTable& table,
                                   double alpha, Rng& rng) {
  if (seeds.empty()) throw std::invalid_argument("discover_neighbors: empty seed set");
  if (depth < 1) throw std::invalid_argument("discover_neighbors: depth must be >= 1");
  if (fanout < 1) throw std::invalid_argument("discover_neighbors: fanout must be >= 1");
  if (alpha < 0.0) throw std::invalid_argument("discover_neighbors: alpha must be >= 0");
  for (int32_t v : seeds)
    if (v < 0 || v >= graph.num_nodes())
      throw std::out_of_range("discover_neighbors: node id " + std::to_string(v) + " out of range");

  NodeFlow flow;
  flow.depth = depth;
  flow.layers.resize(depth + 1);
  flow.blocks.resize(depth);

  flow.layers[0] = seeds;
  std::sort(flow.layers[0].begin(), flow.layers[0].end());
  flow.layers[0].erase(std::unique(flow.layers[0].begin(), flow.layers[0].end()),
                       flow.layers[0].end());

  for (int k = 0; k < depth; ++k) {
    auto& lists = flow.blocks[k].lists;
    lists.resize(flow.layers[k].size());
    std::vector<int32_t> next;
    for (std::size_t j = 0; j < flow.layers[k].size(); ++j) {
      int32_t v = flow.layers[k][j];
      std::vector<int32_t> sampled;
      if (graph.is_user_node(v)) {
        const auto& items = graph.user_adj[v];
        int n = std::min<int>(fanout, static_cast<int>(items.size()));
        if (n > 0) {
          auto weights = histogram_and_rebalance(items, table, alpha);
          sampled = detail::weighted_sample_without_replacement(items, std::move(weights), n, rng);
          for (int32_t& s : sampled) s = graph.item_node(s);
        }
      } else {
        const auto& users = graph.item_adj[v - graph.num_users];
        int n = std::min<int>(fanout, static_cast<int>(users.size()));
        if (n > 0) sampled = detail::uniform_sample_without_replacement(users, n, rng);
      }
      lists[j].push_back(v);
      lists[j].insert(lists[j].end(), sampled.begin(), sampled.end());
      next.insert(next.end(), lists[j].begin(), lists[j].end());
    }
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    flow.layers[k + 1] = std::move(next);
  }
  return flow;
}

inline std::vector<TrainingSample> make_positive_samples(
    const std::vector<std::pair<int32_t, int32_t>>& pairs, const ItemCategoryTable& table) {
  std::vector<TrainingSample> out;
  out.reserve(pairs.size());
  for (const auto& [u, i] : pairs) out.push_back({u, i, 1.0, table.at(i)});
  return out;
}

// Draws T negatives per positive. With probability beta the draw is uniform
// over items sharing the positive's category (excluding the positive itself,
// falling back to the whole universe when that set is empty), otherwise
// uniform over the universe minus the positive. Output keeps the positives
// first, then each positive's negatives as a contiguous group. When
// exclude_items is non-null, items in exclude_items[u] are rejected too.
inline std::vector<TrainingSample> boosted_negative_sampling(
    const std::vector<TrainingSample>& positives, const std::vector<int32_t>& item_universe,
    int negative_rate, const ItemCategoryTable& table, double beta, Rng& rng,
    const std::vector<std::unordered_set<int32_t>>* exclude_items = nullptr) {
  if (item_universe.size() < 2)
    throw std::invalid_argument("boosted_negative_sampling: need at least 2 items");
  if (negative_rate < 1) throw std::invalid_argument("boosted_negative_sampling: negative rate must be >= 1");
  if (beta < 0.0 || beta > 1.0)
    throw std::invalid_argument("boosted_negative_sampling: beta must be in [0,1]");

  std::vector<std::vector<int32_t>> by_category(table.num_categories);
  for (int32_t i : item_universe) by_category[table.at(i)].push_back(i);

  auto excluded = [&](int32_t u, int32_t cand) {
    if (!exclude_items) return false;
    const auto& set = (*exclude_items)[u];
    return set.count(cand) > 0;
  };

  // Uniform over `pool` minus the positive (and any excluded items), by
  // rejection. Returns -1 when the pool cannot yield anything.
  auto draw_from = [&](const std::vector<int32_t>& pool, int32_t u, int32_t pos) -> int32_t {
    for (int attempt = 0; attempt < 100000; ++attempt) {
      int32_t cand = pool[rng.uniform_int(static_cast<int64_t>(pool.size()))];
      if (cand != pos && !excluded(u, cand)) return cand;
    }
    return -1;
  };

  std::vector<TrainingSample> out = positives;
  out.reserve(positives.size() * (1 + negative_rate));
  for (const auto& p : positives) {
    for (int t = 0; t < negative_rate; ++t) {
      int32_t neg = -1;
      if (rng.uniform() < beta) {
        const auto& same = by_category[p.category];
        if (same.size() > 1) neg = draw_from(same, p.user, p.item);
      }
      if (neg < 0) neg = draw_from(item_universe, p.user, p.item);
      if (neg < 0)
        throw std::runtime_error("boosted_negative_sampling: no eligible negative for user " +
                                 std::to_string(p.user));
      out.push_back({p.user, neg, 0.0, table.at(neg)});
    }
  }
  return out;
}

// Sorted distinct node ids covering every user and item in the batch.
inline std::vector<int32_t> collect_seed_nodes(const std::vector<TrainingSample>& batch,
                                               const BipartiteGraph& graph) {
  std::vector<int32_t> seeds;
  seeds.reserve(batch.size() * 2);
  for (const auto& s : batch) {
    seeds.push_back(s.user);
    seeds.push_back(graph.item_node(s.item));
  }
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  return seeds;
}

}  // namespace divrec
