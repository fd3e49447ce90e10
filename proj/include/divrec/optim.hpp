#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "divrec/csv.hpp"
#include "divrec/data.hpp"
#include "divrec/eval.hpp"
#include "divrec/model.hpp"
#include "divrec/rng.hpp"
#include "divrec/sampling.hpp"

namespace divrec {

struct AmsGradHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment estimates plus the running max of the second moment.
// Embedding moments are kept per touched row so untouched rows cost nothing.
struct AmsGradState {
  AmsGradHyper hyper;
  int64_t step = 0;
  std::vector<Matrix> conv_m, conv_v, conv_vhat;
  Matrix cls_m, cls_v, cls_vhat;
  std::unordered_map<int32_t, std::vector<double>> emb_m, emb_v, emb_vhat;
};

inline AmsGradState make_amsgrad_state(const ModelParameters& params, const AmsGradHyper& hyper) {
  AmsGradState s;
  s.hyper = hyper;
  s.conv_m.resize(params.depth);
  s.conv_v.resize(params.depth);
  s.conv_vhat.resize(params.depth);
  for (int l = 0; l < params.depth; ++l) {
    s.conv_m[l] = Matrix(params.dim, params.dim);
    s.conv_v[l] = Matrix(params.dim, params.dim);
    s.conv_vhat[l] = Matrix(params.dim, params.dim);
  }
  s.cls_m = Matrix(params.num_categories, params.dim);
  s.cls_v = Matrix(params.num_categories, params.dim);
  s.cls_vhat = Matrix(params.num_categories, params.dim);
  return s;
}

namespace detail {

inline void amsgrad_span(double* theta, const double* g, double* m, double* v, double* vhat,
                         std::size_t n, const AmsGradHyper& h, const std::string& tensor) {
  for (std::size_t j = 0; j < n; ++j) {
    if (!std::isfinite(g[j]))
      throw std::runtime_error("amsgrad_step: non-finite gradient in " + tensor);
    m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
    v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
    if (v[j] > vhat[j]) vhat[j] = v[j];
    theta[j] -= h.lr * m[j] / (std::sqrt(vhat[j]) + h.epsilon);
  }
}

}  // namespace detail

// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; vhat <- max(vhat, v);
// theta <- theta - lr m / (sqrt(vhat) + eps). No bias correction. Embedding
// rows absent from the gradient are skipped entirely.
inline void amsgrad_step(AmsGradState& state, ModelParameters& params, const Gradients& grads) {
  const auto& h = state.hyper;
  for (int l = 0; l < params.depth; ++l)
    detail::amsgrad_span(params.conv[l].a.data(), grads.conv[l].a.data(), state.conv_m[l].a.data(),
                         state.conv_v[l].a.data(), state.conv_vhat[l].a.data(),
                         params.conv[l].a.size(), h, "conv[" + std::to_string(l) + "]");
  detail::amsgrad_span(params.classifier.a.data(), grads.classifier.a.data(), state.cls_m.a.data(),
                       state.cls_v.a.data(), state.cls_vhat.a.data(), params.classifier.a.size(), h,
                       "classifier");
  const std::size_t d = static_cast<std::size_t>(params.dim);
  for (const auto& [node, grow] : grads.embedding) {
    auto m = state.emb_m.try_emplace(node, std::vector<double>(d, 0.0)).first;
    auto v = state.emb_v.try_emplace(node, std::vector<double>(d, 0.0)).first;
    auto vh = state.emb_vhat.try_emplace(node, std::vector<double>(d, 0.0)).first;
    detail::amsgrad_span(params.embeddings.row(node), grow.data(), m->second.data(),
                         v->second.data(), vh->second.data(), d,
                         h, "embeddings[row " + std::to_string(node) + "]");
  }
  ++state.step;
}

// Improvement means strictly greater; stop once the run of non-improving
// observations exceeds the patience.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {
    if (patience < 0) throw std::invalid_argument("EarlyStopper: patience must be >= 0");
  }

  bool observe(double value) {
    if (value > best_) {
      best_ = value;
      bad_ = 0;
      return true;
    }
    ++bad_;
    return false;
  }

  bool should_stop() const { return bad_ > patience_; }
  double best() const { return best_; }

 private:
  int patience_;
  int bad_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct TrainConfig {
  int batch_size = 1024;  // positives per batch; negatives ride along
  int epochs = 200;
  int patience = 10;
  double lr = 1e-3;
  double dropout_p = 0.1;
  double alpha = 0.0;      // rebalance exponent for user-side neighbor sampling
  double beta = 0.0;       // same-category negative boost
  double gamma = 0.0;      // gradient reversal strength
  int negative_rate = 4;   // negatives per positive
  int fanout = 10;         // sampled neighbors per node per hop
  int depth = 2;           // graph conv layers
  int dim = 32;
  uint64_t seed = 0;
  int eval_k = 300;        // list length for validation metrics
  bool exclude_train_negatives = false;  // also reject the user's train items as negatives
  bool exclude_train_items = true;       // drop train items from retrieval candidates
};

inline void validate(const TrainConfig& c) {
  if (c.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (c.epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (c.patience < 0) throw std::invalid_argument("config: patience must be >= 0");
  if (!(c.lr > 0.0)) throw std::invalid_argument("config: lr must be > 0");
  if (c.dropout_p < 0.0 || c.dropout_p >= 1.0)
    throw std::invalid_argument("config: dropout_p must be in [0,1)");
  if (c.alpha < 0.0) throw std::invalid_argument("config: alpha must be >= 0");
  if (c.beta < 0.0 || c.beta > 1.0) throw std::invalid_argument("config: beta must be in [0,1]");
  if (c.gamma < 0.0) throw std::invalid_argument("config: gamma must be >= 0");
  if (c.negative_rate < 1) throw std::invalid_argument("config: negative_rate must be >= 1");
  if (c.fanout < 1) throw std::invalid_argument("config: fanout must be >= 1");
  if (c.depth < 1) throw std::invalid_argument("config: depth must be >= 1");
  if (c.dim < 1) throw std::invalid_argument("config: dim must be >= 1");
  if (c.eval_k < 1) throw std::invalid_argument("config: eval_k must be >= 1");
}

struct EpochLog {
  int epoch = 0;
  double loss_r = 0.0;
  double loss_c = 0.0;
  double val_recall = 0.0;
  double val_coverage = 0.0;
  double seconds = 0.0;
};

struct FitResult {
  ModelParameters params;  // best validation epoch
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_recall = 0.0;
};

// One training run: per epoch, shuffle the positives, draw boosted negatives
// per batch, build a NodeFlow over the batch nodes, run forward/backward and
// an AMSGrad step; then score recall on the validation split and early-stop
// on it. Returns the parameters from the best validation epoch.
inline FitResult fit(const BipartiteGraph& graph, const ItemCategoryTable& table,
                     const std::vector<std::pair<int32_t, int32_t>>& train_pairs,
                     const std::vector<std::pair<int32_t, int32_t>>& val_pairs,
                     const TrainConfig& config) {
  validate(config);
  if (train_pairs.empty()) throw std::invalid_argument("fit: no training interactions");
  if (table.num_categories < 1) throw std::invalid_argument("fit: empty category table");

  Rng rng(config.seed);
  ModelParameters params = init_parameters(graph.num_users, graph.num_items, config.dim,
                                           config.depth, table.num_categories, rng);
  AmsGradState state = make_amsgrad_state(params, AmsGradHyper{config.lr, 0.9, 0.999, 1e-8});

  auto positives = make_positive_samples(train_pairs, table);
  std::vector<int32_t> universe(graph.num_items);
  for (int32_t i = 0; i < graph.num_items; ++i) universe[i] = i;

  std::vector<std::unordered_set<int32_t>> train_sets(graph.num_users);
  for (const auto& [u, i] : train_pairs) train_sets[u].insert(i);
  const auto* negative_excl = config.exclude_train_negatives ? &train_sets : nullptr;

  auto val_sets = test_sets_by_user(val_pairs, graph.num_users);
  bool have_val = false;
  for (const auto& s : val_sets)
    if (!s.empty()) have_val = true;

  static const std::vector<std::unordered_set<int32_t>> kNoExclusions;
  const auto& retrieval_excl = config.exclude_train_items ? train_sets : kNoExclusions;

  FitResult result;
  EarlyStopper stopper(config.patience);
  std::vector<std::size_t> order(positives.size());
  for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);

    double sum_lr = 0.0, sum_lc = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<TrainingSample> chunk;
      chunk.reserve(stop - start);
      for (std::size_t j = start; j < stop; ++j) chunk.push_back(positives[order[j]]);

      auto batch = boosted_negative_sampling(chunk, universe, config.negative_rate, table,
                                             config.beta, rng, negative_excl);
      auto seeds = collect_seed_nodes(batch, graph);
      auto flow = discover_neighbors(graph, seeds, config.depth, config.fanout, table,
                                     config.alpha, rng);
      auto trace = forward(params, flow, Mode::kTrain, config.dropout_p, &rng);
      Gradients grads;
      LossReport losses = backward(params, trace, batch, table, config.gamma, grads);
      amsgrad_step(state, params, grads);
      sum_lr += losses.rec;
      sum_lc += losses.cls;
      ++batches;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.loss_r = sum_lr / batches;
    entry.loss_c = sum_lc / batches;
    if (have_val) {
      auto reps = infer_all(graph, params);
      auto recs = retrieve_topk(reps, config.eval_k, retrieval_excl);
      auto report = make_report(recs, val_sets, table, config.eval_k);
      entry.val_recall = report.mean.recall;
      entry.val_coverage = report.mean.coverage;
    }
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(entry);

    if (stopper.observe(entry.val_recall)) {
      result.params = params;
      result.best_epoch = epoch;
      result.best_recall = entry.val_recall;
    }
    if (stopper.should_stop()) break;
  }
  return result;
}

inline void write_training_log(const std::vector<EpochLog>& log, const std::string& path) {
  auto out = open_output(path);
  out << "epoch,loss_r,loss_c,val_recall,val_coverage,seconds\n";
  for (const auto& e : log)
    out << e.epoch << ',' << format_metric(e.loss_r) << ',' << format_metric(e.loss_c) << ','
        << format_metric(e.val_recall) << ',' << format_metric(e.val_coverage) << ','
        << format_metric(e.seconds) << '\n';
}

}  // namespace divrec
