#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "divrec/model.hpp"
#include "divrec/rng.hpp"
#include "divrec/sampling.hpp"
#include "support/finite_diff.hpp"
#include "support/tiny_world.hpp"

using namespace divrec;
using namespace divrec::testing;

namespace {

// Independent recomputation of both batch losses from a forward pass, used to
// cross-check the values backward() reports and as the finite-difference
// objective. A fresh rng seeded with `dropout_seed` makes the masks (and so
// the loss itself) a deterministic function of the parameters.
LossReport eval_losses(const ModelParameters& params, const NodeFlow& flow,
                       const std::vector<TrainingSample>& batch, const ItemCategoryTable& table,
                       Mode mode, double dropout_p, uint64_t dropout_seed) {
  Rng rng(dropout_seed);
  ForwardTrace trace = forward(params, flow, mode, dropout_p, &rng);
  const Matrix& fin = trace.reps[params.depth];
  const auto& seeds = trace.flow.layers[0];

  LossReport report;
  for (const auto& s : batch) {
    int ur = row_in_layer(seeds, s.user);
    int ir = row_in_layer(seeds, params.num_users + s.item);
    double z = dot(fin.row(ur), fin.row(ir), params.dim);
    report.rec += rec_loss(z, s.label);
  }
  report.rec /= static_cast<double>(batch.size());

  std::vector<int32_t> item_nodes;
  for (const auto& s : batch) item_nodes.push_back(params.num_users + s.item);
  std::sort(item_nodes.begin(), item_nodes.end());
  item_nodes.erase(std::unique(item_nodes.begin(), item_nodes.end()), item_nodes.end());
  std::vector<double> logits(params.num_categories);
  for (int32_t node : item_nodes) {
    const double* h = fin.row(row_in_layer(seeds, node));
    for (int32_t c = 0; c < params.num_categories; ++c)
      logits[c] = dot(params.classifier.row(c), h, params.dim);
    report.cls += cls_loss(logits, table.at(node - params.num_users));
  }
  report.cls /= static_cast<double>(item_nodes.size());
  return report;
}

struct FdCase {
  TinyWorld world;
  NodeFlow flow;
  ModelParameters params;
  double gamma = 0.0;
  double dropout_p = 0.0;
  uint64_t dropout_seed = 0;
};

FdCase make_fd_case(uint64_t seed, double gamma, double dropout_p) {
  Rng rng(seed);
  FdCase fc;
  fc.world = make_tiny_world(rng);
  fc.gamma = gamma;
  fc.dropout_p = dropout_p;
  fc.dropout_seed = seed * 7919 + 13;

  const int dim = 2 + static_cast<int>(rng.uniform_int(3));  // 2..4
  const int depth = 1 + static_cast<int>(rng.uniform_int(2));
  fc.params = init_parameters(fc.world.graph.num_users, fc.world.graph.num_items, dim, depth,
                              fc.world.table.num_categories, rng);

  auto seeds = collect_seed_nodes(fc.world.batch, fc.world.graph);
  const int fanout = 1 + static_cast<int>(rng.uniform_int(4));
  const double alpha = rng.uniform();
  fc.flow = discover_neighbors(fc.world.graph, seeds, depth, fanout, fc.world.table, alpha, rng);
  return fc;
}

// Runs backward on one case and compares every parameter gradient against
// central finite differences of the matching objective.
double fd_check(FdCase& fc, FdMismatch* worst) {
  const Mode mode = fc.dropout_p > 0.0 ? Mode::kTrain : Mode::kEval;
  Rng fwd_rng(fc.dropout_seed);
  ForwardTrace trace = forward(fc.params, fc.flow, mode, fc.dropout_p, &fwd_rng);

  Gradients grads;
  LossReport report = backward(fc.params, trace, fc.world.batch, fc.world.table, fc.gamma, grads);

  LossReport direct = eval_losses(fc.params, fc.flow, fc.world.batch, fc.world.table, mode,
                                  fc.dropout_p, fc.dropout_seed);
  REQUIRE(report.rec == Catch::Approx(direct.rec).epsilon(1e-12));
  REQUIRE(report.cls == Catch::Approx(direct.cls).epsilon(1e-12));

  auto gcn_loss = [&]() {
    LossReport r = eval_losses(fc.params, fc.flow, fc.world.batch, fc.world.table, mode,
                               fc.dropout_p, fc.dropout_seed);
    return r.rec - fc.gamma * r.cls;
  };
  auto cls_loss_fn = [&]() {
    return eval_losses(fc.params, fc.flow, fc.world.batch, fc.world.table, mode, fc.dropout_p,
                       fc.dropout_seed)
        .cls;
  };
  return max_grad_rel_err(fc.params, grads, gcn_loss, cls_loss_fn, 1e-5, worst);
}

}  // namespace

TEST_CASE("logistic loss matches hand values") {
  REQUIRE(rec_loss(0.0, 1.0) == Catch::Approx(std::log(2.0)).margin(1e-12));
  REQUIRE(rec_loss_grad(0.0, 1.0) == Catch::Approx(-0.5).margin(1e-12));
  REQUIRE(rec_loss(0.0, 0.0) == Catch::Approx(std::log(2.0)).margin(1e-12));
  REQUIRE(rec_loss_grad(0.0, 0.0) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(rec_loss(2.0, 1.0) == Catch::Approx(std::log1p(std::exp(-2.0))).margin(1e-12));
  REQUIRE(rec_loss(2.0, 1.0) == Catch::Approx(0.126928).margin(1e-6));
  REQUIRE(rec_loss_grad(2.0, 1.0) == Catch::Approx(-0.119203).margin(1e-6));
}

TEST_CASE("logistic loss gradient matches finite differences") {
  for (double z : {-3.0, -0.7, 0.0, 0.4, 2.0, 5.0}) {
    for (double y : {0.0, 1.0}) {
      double h = 1e-6;
      double numeric = (rec_loss(z + h, y) - rec_loss(z - h, y)) / (2.0 * h);
      REQUIRE(rec_loss_grad(z, y) == Catch::Approx(numeric).margin(1e-6));
    }
  }
}

TEST_CASE("logistic loss stays finite at extreme logits") {
  REQUIRE(rec_loss(750.0, 0.0) == Catch::Approx(750.0).margin(1e-9));
  REQUIRE(rec_loss(-750.0, 1.0) == Catch::Approx(750.0).margin(1e-9));
  REQUIRE(std::isfinite(rec_loss(750.0, 1.0)));
  REQUIRE(std::isfinite(rec_loss_grad(-750.0, 0.0)));
}

TEST_CASE("softmax cross-entropy matches hand values") {
  auto g = cls_loss_grad({0.0, 0.0}, 0);
  REQUIRE(cls_loss({0.0, 0.0}, 0) == Catch::Approx(std::log(2.0)).margin(1e-12));
  REQUIRE(g[0] == Catch::Approx(-0.5).margin(1e-12));
  REQUIRE(g[1] == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(cls_loss({10.0, 0.0, 0.0}, 0) ==
          Catch::Approx(std::log1p(2.0 * std::exp(-10.0))).margin(1e-12));
  REQUIRE(cls_loss({10.0, 0.0, 0.0}, 0) == Catch::Approx(9.08e-5).margin(1e-7));
}

TEST_CASE("softmax cross-entropy gradient matches finite differences") {
  Rng rng(42);
  std::vector<double> logits(5);
  for (double& v : logits) v = rng.uniform() * 6.0 - 3.0;
  for (int32_t target = 0; target < 5; ++target) {
    auto g = cls_loss_grad(logits, target);
    for (std::size_t j = 0; j < logits.size(); ++j) {
      double h = 1e-6;
      auto bumped = logits;
      bumped[j] += h;
      double up = cls_loss(bumped, target);
      bumped[j] -= 2.0 * h;
      double down = cls_loss(bumped, target);
      REQUIRE(g[j] == Catch::Approx((up - down) / (2.0 * h)).margin(1e-6));
    }
  }
}

TEST_CASE("softmax cross-entropy rejects out-of-range targets") {
  REQUIRE_THROWS_AS(cls_loss({0.0, 0.0}, 2), std::out_of_range);
  REQUIRE_THROWS_AS(cls_loss({0.0, 0.0}, -1), std::out_of_range);
}

TEST_CASE("gradient reversal scales and negates") {
  auto zero = grl_backward({2.0, -4.0}, 0.0);
  REQUIRE(zero[0] == 0.0);
  REQUIRE(zero[1] == 0.0);
  auto neg = grl_backward({2.0, -4.0}, 1.0);
  REQUIRE(neg[0] == -2.0);
  REQUIRE(neg[1] == 4.0);
  auto half = grl_backward({2.0, -4.0}, 0.5);
  REQUIRE(half[0] == -1.0);
  REQUIRE(half[1] == 2.0);
}

TEST_CASE("inner-product score") {
  REQUIRE(score({1.0, 0.0}, {0.0, 1.0}) == 0.0);
  REQUIRE(score({0.0, 1.0, 0.0}, {0.0, 1.0, 0.0}) == 1.0);
  REQUIRE(score({0.5, -1.0}, {2.0, 0.25}) == Catch::Approx(0.75).margin(1e-15));
  REQUIRE_THROWS_AS(score({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("forward maps zero embeddings to zero representations") {
  BipartiteGraph g;
  g.num_users = 1;
  g.num_items = 1;
  g.user_adj = {{0}};
  g.item_adj = {{0}};
  ItemCategoryTable table;
  table.num_categories = 1;
  table.category = {0};
  table.category_ids = {"c0"};
  Rng rng(3);
  auto params = init_parameters(1, 1, 3, 2, 1, rng);
  params.embeddings.zero();

  auto flow = discover_neighbors(g, {0, 1}, 2, 4, table, 0.0, rng);
  auto trace = forward(params, flow, Mode::kEval, 0.0, nullptr);
  for (int l = 0; l <= 2; ++l)
    for (double v : trace.reps[l].a) REQUIRE(v == 0.0);
}

TEST_CASE("forward single layer with identity weights") {
  // User node 0 with embedding (0,0); its only neighbor is item node 1 with
  // embedding (2,0). Mean of self and neighbor is (1,0), so the layer output
  // for the user is (tanh 1, 0).
  BipartiteGraph g;
  g.num_users = 1;
  g.num_items = 1;
  g.user_adj = {{0}};
  g.item_adj = {{0}};
  ItemCategoryTable table;
  table.num_categories = 1;
  table.category = {0};
  table.category_ids = {"c0"};
  Rng rng(7);
  auto params = init_parameters(1, 1, 2, 1, 1, rng);
  params.embeddings.zero();
  params.embeddings(1, 0) = 2.0;
  params.conv[0].zero();
  params.conv[0](0, 0) = 1.0;
  params.conv[0](1, 1) = 1.0;

  auto flow = discover_neighbors(g, {0}, 1, 1, table, 0.0, rng);
  auto trace = forward(params, flow, Mode::kEval, 0.0, nullptr);
  int r = row_in_layer(trace.flow.layers[0], 0);
  REQUIRE(trace.reps[1](r, 0) == Catch::Approx(std::tanh(1.0)).margin(1e-12));
  REQUIRE(trace.reps[1](r, 0) == Catch::Approx(0.761594).margin(1e-6));
  REQUIRE(trace.reps[1](r, 1) == 0.0);
}

TEST_CASE("forward in eval mode is bitwise repeatable") {
  Rng rng(11);
  auto w = make_tiny_world(rng);
  auto params = init_parameters(w.graph.num_users, w.graph.num_items, 4, 2,
                                w.table.num_categories, rng);
  auto seeds = collect_seed_nodes(w.batch, w.graph);
  auto flow = discover_neighbors(w.graph, seeds, 2, 3, w.table, 0.5, rng);

  auto a = forward(params, flow, Mode::kEval, 0.0, nullptr);
  auto b = forward(params, flow, Mode::kEval, 0.0, nullptr);
  for (int l = 0; l <= 2; ++l) {
    REQUIRE(a.reps[l].a.size() == b.reps[l].a.size());
    REQUIRE(std::memcmp(a.reps[l].a.data(), b.reps[l].a.data(),
                        a.reps[l].a.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("forward rejects depth mismatch and missing rng") {
  Rng rng(5);
  auto w = make_tiny_world(rng);
  auto params = init_parameters(w.graph.num_users, w.graph.num_items, 2, 2,
                                w.table.num_categories, rng);
  auto seeds = collect_seed_nodes(w.batch, w.graph);
  auto flow1 = discover_neighbors(w.graph, seeds, 1, 2, w.table, 0.0, rng);
  REQUIRE_THROWS_AS(forward(params, flow1, Mode::kEval, 0.0, nullptr), std::invalid_argument);

  auto flow2 = discover_neighbors(w.graph, seeds, 2, 2, w.table, 0.0, rng);
  REQUIRE_THROWS_AS(forward(params, flow2, Mode::kTrain, 0.3, nullptr), std::invalid_argument);
}

TEST_CASE("layer outputs stay inside the tanh range") {
  Rng rng(19);
  auto w = make_tiny_world(rng);
  auto params = init_parameters(w.graph.num_users, w.graph.num_items, 4, 2,
                                w.table.num_categories, rng);
  for (double& v : params.embeddings.a) v *= 100.0;  // exaggerate inputs
  auto seeds = collect_seed_nodes(w.batch, w.graph);
  auto flow = discover_neighbors(w.graph, seeds, 2, 3, w.table, 1.0, rng);
  auto trace = forward(params, flow, Mode::kEval, 0.0, nullptr);
  for (int l = 1; l <= 2; ++l)
    for (double v : trace.reps[l].a) {
      REQUIRE(v > -1.0);
      REQUIRE(v < 1.0);
    }
}

TEST_CASE("dropout masks scale kept entries and average out") {
  Rng rng(23);
  auto w = make_tiny_world(rng);
  auto params = init_parameters(w.graph.num_users, w.graph.num_items, 3, 2,
                                w.table.num_categories, rng);
  auto seeds = collect_seed_nodes(w.batch, w.graph);
  auto flow = discover_neighbors(w.graph, seeds, 2, 3, w.table, 0.0, rng);

  const double p = 0.3;
  const double scale = 1.0 / (1.0 - p);
  auto eval_trace = forward(params, flow, Mode::kEval, 0.0, nullptr);
  const Matrix& h1 = eval_trace.reps[1];

  // Pick the largest-magnitude intermediate entry and average its dropped
  // value over many masks; the inverted scaling makes the mean unbiased.
  std::size_t pick = 0;
  for (std::size_t t = 0; t < h1.a.size(); ++t)
    if (std::abs(h1.a[t]) > std::abs(h1.a[pick])) pick = t;
  REQUIRE(std::abs(h1.a[pick]) > 1e-6);

  const int trials = 10000;
  double sum = 0.0;
  Rng drop_rng(777);
  for (int t = 0; t < trials; ++t) {
    auto trace = forward(params, flow, Mode::kTrain, p, &drop_rng);
    double mask = trace.masks[1].a[pick];
    REQUIRE((mask == 0.0 || mask == Catch::Approx(scale).margin(1e-15)));
    REQUIRE(trace.reps[1].a[pick] == h1.a[pick]);  // mask applies to a copy
    sum += trace.reps[1].a[pick] * mask;
  }
  double mean = sum / trials;
  double sigma = std::abs(h1.a[pick]) * std::sqrt(p / (1.0 - p) / trials);
  REQUIRE(std::abs(mean - h1.a[pick]) <= 3.0 * sigma);
}

TEST_CASE("backward matches finite differences on random instances") {
  struct Setup {
    uint64_t seed;
    double gamma;
    double dropout;
  };
  const Setup setups[] = {
      {101, 0.0, 0.0}, {202, 0.5, 0.0}, {303, 0.5, 0.0},
      {404, 0.0, 0.25}, {505, 0.5, 0.25}, {606, 1.0, 0.0},
  };
  for (const auto& s : setups) {
    CAPTURE(s.seed, s.gamma, s.dropout);
    auto fc = make_fd_case(s.seed, s.gamma, s.dropout);
    FdMismatch worst;
    double err = fd_check(fc, &worst);
    CAPTURE(worst.tensor, worst.index, worst.analytic, worst.numeric);
    REQUIRE(err <= 1e-4);
  }
}

TEST_CASE("backward matches finite differences on a fixed 2x3 instance") {
  TinyWorld w;
  w.graph.num_users = 2;
  w.graph.num_items = 3;
  w.graph.user_adj = {{0, 1}, {1, 2}};
  w.graph.item_adj = {{0}, {0, 1}, {1}};
  w.table.num_categories = 2;
  w.table.category = {0, 1, 0};
  w.table.category_ids = {"c0", "c1"};
  w.batch = {{0, 0, 1.0, 0}, {0, 2, 0.0, 0}, {1, 2, 1.0, 0}, {1, 0, 0.0, 0}};

  Rng rng(9);
  FdCase fc;
  fc.world = w;
  fc.gamma = 0.5;
  fc.params = init_parameters(2, 3, 2, 1, 2, rng);
  auto seeds = collect_seed_nodes(w.batch, w.graph);
  fc.flow = discover_neighbors(w.graph, seeds, 1, 3, w.table, 0.0, rng);
  FdMismatch worst;
  double err = fd_check(fc, &worst);
  CAPTURE(worst.tensor, worst.index, worst.analytic, worst.numeric);
  REQUIRE(err <= 1e-4);
}

TEST_CASE("gamma zero leaves rec-path gradients untouched") {
  auto fc = make_fd_case(881, 0.0, 0.0);
  Rng fwd_rng(fc.dropout_seed);
  auto trace = forward(fc.params, fc.flow, Mode::kEval, 0.0, nullptr);

  Gradients combined;
  backward(fc.params, trace, fc.world.batch, fc.world.table, 0.0, combined);
  Gradients rec, cls;
  backward_paths(fc.params, trace, fc.world.batch, fc.world.table, rec, cls);

  for (const auto& [node, row] : combined.embedding) {
    const auto& ref = rec.embedding.at(node);
    for (std::size_t c = 0; c < row.size(); ++c) REQUIRE(row[c] == ref[c]);
  }
  for (int l = 0; l < fc.params.depth; ++l)
    for (std::size_t t = 0; t < combined.conv[l].a.size(); ++t)
      REQUIRE(combined.conv[l].a[t] == rec.conv[l].a[t]);
}

TEST_CASE("classification path enters GCN gradients as minus gamma times its gradient") {
  auto fc = make_fd_case(991, 0.0, 0.0);
  auto trace = forward(fc.params, fc.flow, Mode::kEval, 0.0, nullptr);
  Gradients rec, cls;
  backward_paths(fc.params, trace, fc.world.batch, fc.world.table, rec, cls);

  for (double gamma : {1.0, 0.5, 2.0}) {
    Gradients combined;
    backward(fc.params, trace, fc.world.batch, fc.world.table, gamma, combined);
    for (const auto& [node, row] : combined.embedding) {
      const auto& r = rec.embedding.at(node);
      const auto& c = cls.embedding.at(node);
      for (std::size_t t = 0; t < row.size(); ++t) {
        double expected = r[t] + -gamma * c[t];
        if (gamma == 1.0)
          REQUIRE(row[t] == expected);
        else
          REQUIRE(std::abs(row[t] - expected) <= 1e-12);
      }
    }
    for (int l = 0; l < fc.params.depth; ++l)
      for (std::size_t t = 0; t < combined.conv[l].a.size(); ++t) {
        double expected = rec.conv[l].a[t] + -gamma * cls.conv[l].a[t];
        if (gamma == 1.0)
          REQUIRE(combined.conv[l].a[t] == expected);
        else
          REQUIRE(std::abs(combined.conv[l].a[t] - expected) <= 1e-12);
      }
    for (std::size_t t = 0; t < combined.classifier.a.size(); ++t)
      REQUIRE(combined.classifier.a[t] == cls.classifier.a[t]);
  }
}

TEST_CASE("one classifier step decreases the classification loss") {
  auto fc = make_fd_case(313, 0.5, 0.0);
  auto trace = forward(fc.params, fc.flow, Mode::kEval, 0.0, nullptr);
  Gradients grads;
  LossReport before = backward(fc.params, trace, fc.world.batch, fc.world.table, 0.5, grads);

  const double lr = 1e-3;
  for (std::size_t t = 0; t < fc.params.classifier.a.size(); ++t)
    fc.params.classifier.a[t] -= lr * grads.classifier.a[t];

  LossReport after = eval_losses(fc.params, fc.flow, fc.world.batch, fc.world.table, Mode::kEval,
                                 0.0, fc.dropout_seed);
  REQUIRE(after.cls < before.cls);
}

TEST_CASE("backward rejects empty batches and foreign samples") {
  auto fc = make_fd_case(717, 0.0, 0.0);
  auto trace = forward(fc.params, fc.flow, Mode::kEval, 0.0, nullptr);
  Gradients grads;
  std::vector<TrainingSample> empty;
  REQUIRE_THROWS_AS(backward(fc.params, trace, empty, fc.world.table, 0.0, grads),
                    std::invalid_argument);

  // A sample whose user never made it into the seed layer cannot be scored.
  std::vector<TrainingSample> foreign = fc.world.batch;
  foreign.push_back({static_cast<int32_t>(fc.params.num_users - 1),
                     static_cast<int32_t>(fc.params.num_items - 1), 1.0, 0});
  bool seed_has_pair = false;
  const auto& seeds = trace.flow.layers[0];
  seed_has_pair = std::binary_search(seeds.begin(), seeds.end(), foreign.back().user) &&
                  std::binary_search(seeds.begin(), seeds.end(),
                                     fc.params.num_users + foreign.back().item);
  if (!seed_has_pair)
    REQUIRE_THROWS_AS(backward(fc.params, trace, foreign, fc.world.table, 0.0, grads),
                      std::out_of_range);
}
