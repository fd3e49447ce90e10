#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace divrec {

struct Candidate {
  int32_t item = 0;
  double relevance = 0.0;
  int32_t category = 0;
};

using SimilarityFn = std::function<double(const Candidate&, const Candidate&)>;

inline double category_similarity(const Candidate& a, const Candidate& b) {
  return a.category == b.category ? 1.0 : 0.0;
}

namespace detail {

inline void check_candidates(const std::vector<Candidate>& candidates, int kout,
                             const char* where) {
  if (candidates.empty()) throw std::invalid_argument(std::string(where) + ": empty candidate list");
  if (kout < 1 || kout > static_cast<int>(candidates.size()))
    throw std::invalid_argument(std::string(where) + ": output length " + std::to_string(kout) +
                                " not in [1, " + std::to_string(candidates.size()) + "]");
  for (const auto& c : candidates) {
    if (!std::isfinite(c.relevance))
      throw std::invalid_argument(std::string(where) + ": non-finite relevance for item " +
                                  std::to_string(c.item));
    if (c.category < 0)
      throw std::invalid_argument(std::string(where) + ": negative category for item " +
                                  std::to_string(c.item));
  }
}

}  // namespace detail

// Greedy maximal marginal relevance. The first pick is the most relevant
// candidate; every later pick maximizes
// lambda * relevance - (1 - lambda) * max similarity to the selected set.
// Ties go to the lower item index.
inline std::vector<int32_t> mmr_rerank(const std::vector<Candidate>& candidates, double lambda,
                                       int kout, const SimilarityFn& sim) {
  detail::check_candidates(candidates, kout, "mmr_rerank");
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("mmr_rerank: lambda must be in [0,1]");

  std::vector<bool> taken(candidates.size(), false);
  std::vector<std::size_t> selected;
  std::vector<int32_t> out;
  out.reserve(kout);
  for (int step = 0; step < kout; ++step) {
    std::size_t best = candidates.size();
    double best_score = 0.0;
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      if (taken[j]) continue;
      double score;
      if (selected.empty()) {
        score = candidates[j].relevance;
      } else {
        double max_sim = 0.0;
        for (std::size_t s : selected)
          max_sim = std::max(max_sim, sim(candidates[j], candidates[s]));
        score = lambda * candidates[j].relevance - (1.0 - lambda) * max_sim;
      }
      if (best == candidates.size() || score > best_score ||
          (score == best_score && candidates[j].item < candidates[best].item)) {
        best = j;
        best_score = score;
      }
    }
    taken[best] = true;
    selected.push_back(best);
    out.push_back(candidates[best].item);
  }
  return out;
}

inline std::vector<int32_t> mmr_rerank(const std::vector<Candidate>& candidates, double lambda,
                                       int kout) {
  return mmr_rerank(candidates, lambda, kout, category_similarity);
}

// Greedy, parameter-free: prefer the most relevant candidate whose category
// is not yet covered; once every remaining category is covered, fall back to
// plain relevance. Ties go to the lower item index.
inline std::vector<int32_t> dum_rerank(const std::vector<Candidate>& candidates, int kout) {
  detail::check_candidates(candidates, kout, "dum_rerank");

  std::vector<bool> taken(candidates.size(), false);
  std::vector<bool> covered;
  int32_t max_cat = 0;
  for (const auto& c : candidates) max_cat = std::max(max_cat, c.category);
  covered.assign(static_cast<std::size_t>(max_cat) + 1, false);

  std::vector<int32_t> out;
  out.reserve(kout);
  for (int step = 0; step < kout; ++step) {
    auto pick_best = [&](bool uncovered_only) {
      std::size_t best = candidates.size();
      for (std::size_t j = 0; j < candidates.size(); ++j) {
        if (taken[j]) continue;
        if (uncovered_only && covered[candidates[j].category]) continue;
        if (best == candidates.size() || candidates[j].relevance > candidates[best].relevance ||
            (candidates[j].relevance == candidates[best].relevance &&
             candidates[j].item < candidates[best].item))
          best = j;
      }
      return best;
    };
    std::size_t best = pick_best(true);
    if (best == candidates.size()) best = pick_best(false);
    taken[best] = true;
    covered[candidates[best].category] = true;
    out.push_back(candidates[best].item);
  }
  return out;
}

}  // namespace divrec
