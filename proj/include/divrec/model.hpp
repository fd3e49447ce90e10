#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "divrec/data.hpp"
#include "divrec/matrix.hpp"
#include "divrec/rng.hpp"
#include "divrec/sampling.hpp"

namespace divrec {

enum class Mode { kTrain, kEval };

// Node embeddings for users [0, M) and items [M, M+N), one conv weight per
// hop, and a linear category classifier over final item representations.
struct ModelParameters {
  int32_t num_users = 0;
  int32_t num_items = 0;
  int dim = 0;
  int depth = 0;
  int32_t num_categories = 0;
  Matrix embeddings;         // (M+N) x d
  std::vector<Matrix> conv;  // depth matrices, d x d
  Matrix classifier;         // C x d

  int32_t num_nodes() const { return num_users + num_items; }
};

inline ModelParameters init_parameters(int32_t num_users, int32_t num_items, int dim, int depth,
                                       int32_t num_categories, Rng& rng) {
  if (num_users < 1 || num_items < 1) throw std::invalid_argument("init_parameters: empty graph");
  if (dim < 1 || depth < 1) throw std::invalid_argument("init_parameters: dim and depth must be >= 1");
  if (num_categories < 1) throw std::invalid_argument("init_parameters: need at least one category");

  ModelParameters p;
  p.num_users = num_users;
  p.num_items = num_items;
  p.dim = dim;
  p.depth = depth;
  p.num_categories = num_categories;

  auto fill = [&rng](Matrix& m, int rows, int cols, double lo, double hi) {
    m = Matrix(rows, cols);
    for (double& v : m.a) v = lo + rng.uniform() * (hi - lo);
  };
  fill(p.embeddings, num_users + num_items, dim, -0.05, 0.05);
  double s = 1.0 / std::sqrt(static_cast<double>(dim));
  p.conv.resize(depth);
  for (auto& w : p.conv) fill(w, dim, dim, -s, s);
  fill(p.classifier, num_categories, dim, -s, s);
  return p;
}

// Everything backward needs. Representations h^l are indexed so that reps[l]
// sits on flow.layers[depth - l]: raw embeddings cover the widest layer and
// the final representations cover the seeds.
struct ForwardTrace {
  NodeFlow flow;
  Mode mode = Mode::kEval;
  double dropout_p = 0.0;
  std::vector<Matrix> reps;   // depth+1 levels, post-tanh (level 0 = embeddings)
  std::vector<Matrix> aggs;   // aggs[l] for l in 1..depth, mean inputs to conv l
  std::vector<Matrix> masks;  // masks[l] for l in 1..depth-1, dropout scales (0 or 1/(1-p))
};

inline int row_in_layer(const std::vector<int32_t>& layer, int32_t node) {
  auto it = std::lower_bound(layer.begin(), layer.end(), node);
  if (it == layer.end() || *it != node)
    throw std::out_of_range("node " + std::to_string(node) + " not present in layer");
  return static_cast<int>(it - layer.begin());
}

// Runs the sampled graph convolutions bottom-up. Training mode applies
// inverted dropout to the intermediate representations (never to the raw
// embeddings or the final output); eval mode must not be given an rng.
inline ForwardTrace forward(const ModelParameters& params, const NodeFlow& flow, Mode mode,
                            double dropout_p, Rng* rng) {
  if (flow.depth != params.depth)
    throw std::invalid_argument("forward: flow depth " + std::to_string(flow.depth) +
                                " does not match model depth " + std::to_string(params.depth));
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw std::invalid_argument("forward: dropout must be in [0,1)");
  const bool use_dropout = mode == Mode::kTrain && dropout_p > 0.0 && params.depth > 1;
  if (use_dropout && rng == nullptr)
    throw std::invalid_argument("forward: training with dropout requires an rng");

  const int K = params.depth;
  const int d = params.dim;

  ForwardTrace trace;
  trace.flow = flow;
  trace.mode = mode;
  trace.dropout_p = dropout_p;
  trace.reps.resize(K + 1);
  trace.aggs.resize(K + 1);
  trace.masks.resize(std::max(K, 1));

  const auto& base = trace.flow.layers[K];
  trace.reps[0] = Matrix(static_cast<int>(base.size()), d);
  for (std::size_t j = 0; j < base.size(); ++j) {
    if (base[j] < 0 || base[j] >= params.num_nodes())
      throw std::out_of_range("forward: node id " + std::to_string(base[j]) + " out of range");
    const double* src = params.embeddings.row(base[j]);
    std::copy(src, src + d, trace.reps[0].row(static_cast<int>(j)));
  }

  Matrix input = trace.reps[0];  // possibly dropped copy fed into the next conv
  for (int l = 1; l <= K; ++l) {
    const int b = K - l;  // block connecting layers[b] -> layers[b+1]
    const auto& out_nodes = trace.flow.layers[b];
    const auto& in_nodes = trace.flow.layers[b + 1];
    const auto& lists = trace.flow.blocks[b].lists;

    Matrix& agg = trace.aggs[l];
    agg = Matrix(static_cast<int>(out_nodes.size()), d);
    for (std::size_t j = 0; j < out_nodes.size(); ++j) {
      const auto& list = lists[j];
      double* dst = agg.row(static_cast<int>(j));
      for (int32_t id : list) {
        const double* src = input.row(row_in_layer(in_nodes, id));
        for (int c = 0; c < d; ++c) dst[c] += src[c];
      }
      double inv = 1.0 / static_cast<double>(list.size());
      for (int c = 0; c < d; ++c) dst[c] *= inv;
    }

    Matrix& h = trace.reps[l];
    h = Matrix(static_cast<int>(out_nodes.size()), d);
    for (int j = 0; j < agg.rows; ++j) {
      matvec(params.conv[l - 1], agg.row(j), h.row(j));
      for (int c = 0; c < d; ++c) h(j, c) = std::tanh(h(j, c));
    }

    if (l < K) {
      input = h;
      if (use_dropout) {
        Matrix& mask = trace.masks[l];
        mask = Matrix(h.rows, d);
        const double scale = 1.0 / (1.0 - dropout_p);
        for (double& v : mask.a) v = rng->uniform() >= dropout_p ? scale : 0.0;
        for (std::size_t t = 0; t < input.a.size(); ++t) input.a[t] *= mask.a[t];
      }
    }
  }
  return trace;
}

// Interaction score is the plain inner product.
inline double score(const std::vector<double>& h_user, const std::vector<double>& h_item) {
  if (h_user.size() != h_item.size())
    throw std::invalid_argument("score: dimension mismatch " + std::to_string(h_user.size()) +
                                " vs " + std::to_string(h_item.size()));
  return dot(h_user.data(), h_item.data(), static_cast<int>(h_user.size()));
}

// Inner product of the final representations of two seed nodes.
inline double score_pair(const ForwardTrace& trace, int32_t node_a, int32_t node_b) {
  const auto& seeds = trace.flow.layers[0];
  const Matrix& fin = trace.reps[trace.flow.depth];
  return dot(fin.row(row_in_layer(seeds, node_a)), fin.row(row_in_layer(seeds, node_b)), fin.cols);
}

// Binary cross entropy on a logit, in the overflow-safe form.
inline double rec_loss(double logit, double label) {
  return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

inline double rec_loss_grad(double logit, double label) {
  double sig = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit)) : std::exp(logit) / (1.0 + std::exp(logit));
  return sig - label;
}

// Softmax cross entropy against a single target class.
inline double cls_loss(const std::vector<double>& logits, int32_t target) {
  if (target < 0 || target >= static_cast<int32_t>(logits.size()))
    throw std::out_of_range("cls_loss: target class " + std::to_string(target) + " out of range");
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  return mx + std::log(sum) - logits[target];
}

// softmax(logits) - onehot(target)
inline std::vector<double> cls_loss_grad(const std::vector<double>& logits, int32_t target) {
  if (target < 0 || target >= static_cast<int32_t>(logits.size()))
    throw std::out_of_range("cls_loss_grad: target class " + std::to_string(target) + " out of range");
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  std::vector<double> g(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    g[j] = std::exp(logits[j] - mx);
    sum += g[j];
  }
  for (double& v : g) v /= sum;
  g[target] -= 1.0;
  return g;
}

// Gradient reversal: identity on the way up, -gamma on the way down.
inline std::vector<double> grl_backward(const std::vector<double>& upstream, double gamma) {
  std::vector<double> out(upstream.size());
  for (std::size_t j = 0; j < upstream.size(); ++j) out[j] = -gamma * upstream[j];
  return out;
}

struct Gradients {
  std::unordered_map<int32_t, std::vector<double>> embedding;  // node id -> d values
  std::vector<Matrix> conv;
  Matrix classifier;
};

struct LossReport {
  double rec = 0.0;
  double cls = 0.0;
};

namespace detail {

inline Gradients zero_like(const ModelParameters& params) {
  Gradients g;
  g.conv.resize(params.depth);
  for (int l = 0; l < params.depth; ++l) g.conv[l] = Matrix(params.dim, params.dim);
  g.classifier = Matrix(params.num_categories, params.dim);
  return g;
}

// Propagates d(loss)/d(final reps) down through the trace, accumulating conv
// gradients and scattering embedding-row gradients. `seed` is aligned with
// flow.layers[0].
inline void backprop_from_final(const ModelParameters& params, const ForwardTrace& trace,
                                const Matrix& seed, Gradients& out) {
  const int K = params.depth;
  const int d = params.dim;
  Matrix g = seed;  // d(loss)/d(h^l) on layers[K-l], starting at l = K

  std::vector<double> gz(d), ga(d);
  for (int l = K; l >= 1; --l) {
    const int b = K - l;
    const auto& in_nodes = trace.flow.layers[b + 1];
    const auto& lists = trace.flow.blocks[b].lists;
    const Matrix& h = trace.reps[l];
    const Matrix& agg = trace.aggs[l];

    Matrix gin(static_cast<int>(in_nodes.size()), d);
    for (int j = 0; j < g.rows; ++j) {
      for (int c = 0; c < d; ++c) gz[c] = g(j, c) * (1.0 - h(j, c) * h(j, c));
      // dL/dW^l += gz (outer) agg_j
      Matrix& dW = out.conv[l - 1];
      const double* arow = agg.row(j);
      for (int r = 0; r < d; ++r) {
        double* wrow = dW.row(r);
        for (int c = 0; c < d; ++c) wrow[c] += gz[r] * arow[c];
      }
      matTvec(params.conv[l - 1], gz.data(), ga.data());
      const auto& list = lists[j];
      double inv = 1.0 / static_cast<double>(list.size());
      for (int32_t id : list) {
        double* dst = gin.row(row_in_layer(in_nodes, id));
        for (int c = 0; c < d; ++c) dst[c] += ga[c] * inv;
      }
    }

    if (l - 1 >= 1) {
      const Matrix& mask = trace.masks[l - 1];
      if (mask.rows > 0)
        for (std::size_t t = 0; t < gin.a.size(); ++t) gin.a[t] *= mask.a[t];
      g = std::move(gin);
    } else {
      const auto& base = trace.flow.layers[K];
      for (std::size_t j = 0; j < base.size(); ++j) {
        auto [it, inserted] = out.embedding.try_emplace(base[j], std::vector<double>(d, 0.0));
        double* dst = it->second.data();
        const double* src = gin.row(static_cast<int>(j));
        for (int c = 0; c < d; ++c) dst[c] += src[c];
      }
    }
  }
}

}  // namespace detail

// Gradients of the two objectives, kept separate: `rec` holds d(mean BCE over
// the batch)/d(embeddings, conv); `cls` holds d(mean category cross entropy
// over the distinct item nodes in the batch)/d(embeddings, conv, classifier).
inline LossReport backward_paths(const ModelParameters& params, const ForwardTrace& trace,
                                 const std::vector<TrainingSample>& batch,
                                 const ItemCategoryTable& table, Gradients& rec, Gradients& cls) {
  if (batch.empty()) throw std::invalid_argument("backward: empty batch");
  const int d = params.dim;
  const auto& seeds = trace.flow.layers[0];
  const Matrix& fin = trace.reps[params.depth];

  rec = detail::zero_like(params);
  cls = detail::zero_like(params);
  LossReport report;

  // rec path: seed gradient on final representations
  Matrix seed_rec(fin.rows, d);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    int ur = row_in_layer(seeds, s.user);
    int ir = row_in_layer(seeds, params.num_users + s.item);
    double z = dot(fin.row(ur), fin.row(ir), d);
    report.rec += rec_loss(z, s.label) * inv_b;
    double gz = rec_loss_grad(z, s.label) * inv_b;
    const double* hu = fin.row(ur);
    const double* hi = fin.row(ir);
    double* su = seed_rec.row(ur);
    double* si = seed_rec.row(ir);
    for (int c = 0; c < d; ++c) {
      su[c] += gz * hi[c];
      si[c] += gz * hu[c];
    }
  }
  detail::backprop_from_final(params, trace, seed_rec, rec);

  // cls path: over distinct item nodes in the batch
  std::vector<int32_t> item_nodes;
  item_nodes.reserve(batch.size());
  for (const auto& s : batch) item_nodes.push_back(params.num_users + s.item);
  std::sort(item_nodes.begin(), item_nodes.end());
  item_nodes.erase(std::unique(item_nodes.begin(), item_nodes.end()), item_nodes.end());

  Matrix seed_cls(fin.rows, d);
  const double inv_n = 1.0 / static_cast<double>(item_nodes.size());
  std::vector<double> logits(params.num_categories);
  for (int32_t node : item_nodes) {
    int r = row_in_layer(seeds, node);
    const double* h = fin.row(r);
    for (int32_t c = 0; c < params.num_categories; ++c)
      logits[c] = dot(params.classifier.row(c), h, d);
    int32_t target = table.at(node - params.num_users);
    report.cls += cls_loss(logits, target) * inv_n;
    auto gl = cls_loss_grad(logits, target);
    for (double& v : gl) v *= inv_n;
    double* sh = seed_cls.row(r);
    for (int32_t c = 0; c < params.num_categories; ++c) {
      double* crow = cls.classifier.row(c);
      for (int k = 0; k < d; ++k) crow[k] += gl[c] * h[k];
      const double* w = params.classifier.row(c);
      for (int k = 0; k < d; ++k) sh[k] += gl[c] * w[k];
    }
  }
  detail::backprop_from_final(params, trace, seed_cls, cls);

  return report;
}

// Combined training gradients. The classifier descends on its own loss; the
// reversal layer feeds -gamma times the category gradient into everything
// below it. gamma = 0 leaves the rec-path gradients untouched.
inline LossReport backward(const ModelParameters& params, const ForwardTrace& trace,
                           const std::vector<TrainingSample>& batch, const ItemCategoryTable& table,
                           double gamma, Gradients& out) {
  Gradients cls;
  LossReport report = backward_paths(params, trace, batch, table, out, cls);
  if (gamma != 0.0) {
    for (auto& [node, row] : out.embedding) {
      const auto& crow = cls.embedding.at(node);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += -gamma * crow[c];
    }
    for (int l = 0; l < params.depth; ++l)
      for (std::size_t t = 0; t < out.conv[l].a.size(); ++t)
        out.conv[l].a[t] += -gamma * cls.conv[l].a[t];
  }
  out.classifier = std::move(cls.classifier);
  return report;
}

}  // namespace divrec
