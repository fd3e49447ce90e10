#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "divrec/csv.hpp"
#include "divrec/data.hpp"
#include "divrec/rng.hpp"

namespace divrec {

// Synthetic implicit-feedback log with a controllable category skew: each
// user gets a dominant category and draws that category's items with
// probability `dominant_bias`, otherwise a uniform item from the rest of the
// catalog. Item j belongs to category j mod `categories`.
struct SynthConfig {
  int users = 200;
  int items = 500;
  int categories = 10;
  double dominant_bias = 0.7;
  int events_per_user = 40;
  uint64_t seed = 0;
};

struct SynthData {
  std::vector<Interaction> interactions;
  std::unordered_map<std::string, std::string> categories;  // raw item id -> raw category id
};

inline SynthData make_synth(const SynthConfig& c) {
  if (c.users < 1 || c.items < 1 || c.events_per_user < 1)
    throw std::invalid_argument("synth: users, items and events must be >= 1");
  if (c.categories < 1 || c.categories > c.items)
    throw std::invalid_argument("synth: categories must be in [1, items]");
  if (c.dominant_bias < 0.0 || c.dominant_bias > 1.0)
    throw std::invalid_argument("synth: dominant bias must be in [0,1]");

  std::vector<std::vector<int32_t>> by_cat(c.categories);
  std::vector<std::vector<int32_t>> rest(c.categories);
  for (int32_t j = 0; j < c.items; ++j) by_cat[j % c.categories].push_back(j);
  for (int32_t cat = 0; cat < c.categories; ++cat)
    for (int32_t j = 0; j < c.items; ++j)
      if (j % c.categories != cat) rest[cat].push_back(j);

  Rng rng(c.seed);
  SynthData data;
  data.interactions.reserve(static_cast<std::size_t>(c.users) * c.events_per_user);
  for (int32_t j = 0; j < c.items; ++j)
    data.categories["i" + std::to_string(j)] = "c" + std::to_string(j % c.categories);

  for (int32_t u = 0; u < c.users; ++u) {
    int32_t dominant = static_cast<int32_t>(rng.uniform_int(c.categories));
    for (int e = 0; e < c.events_per_user; ++e) {
      int32_t item;
      const bool in_dominant = rng.uniform() < c.dominant_bias || rest[dominant].empty();
      if (in_dominant) {
        const auto& pool = by_cat[dominant];
        item = pool[rng.uniform_int(static_cast<int64_t>(pool.size()))];
      } else {
        const auto& pool = rest[dominant];
        item = pool[rng.uniform_int(static_cast<int64_t>(pool.size()))];
      }
      Interaction ev;
      ev.user = "u" + std::to_string(u);
      ev.item = "i" + std::to_string(item);
      ev.timestamp = rng.uniform_int(1000000000);
      data.interactions.push_back(std::move(ev));
    }
  }
  return data;
}

inline void write_interactions_csv(const std::vector<Interaction>& interactions,
                                   const std::string& path) {
  auto out = open_output(path);
  out << "user_id,item_id,timestamp\n";
  for (const auto& ev : interactions)
    out << ev.user << ',' << ev.item << ',' << ev.timestamp << '\n';
}

inline void write_categories_csv(const std::unordered_map<std::string, std::string>& categories,
                                 const std::string& path) {
  // sorted for reproducible files
  std::vector<std::pair<std::string, std::string>> rows(categories.begin(), categories.end());
  std::sort(rows.begin(), rows.end());
  auto out = open_output(path);
  out << "item_id,category_id\n";
  for (const auto& [item, cat] : rows) out << item << ',' << cat << '\n';
}

}  // namespace divrec
