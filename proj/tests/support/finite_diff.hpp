#pragma once

// Central finite differences over every model parameter, used to cross-check
// the hand-written backward pass. The loss closure must be deterministic for
// fixed parameters (re-seed any rng inside it).

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "divrec/model.hpp"

namespace divrec::testing {

struct FdMismatch {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

// The floor keeps near-zero gradients from being compared against central
// difference roundoff (about eps * |loss| / step, i.e. ~1e-11 at step 1e-5):
// below the floor the check effectively becomes |a - b| <= tol * 1e-6.
inline double rel_err(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

// Perturbs every entry of every tensor in `params` and compares central
// differences against `grads`. Embeddings and conv weights are probed with
// `gcn_loss` (the objective they descend, L_r - gamma L_c); the classifier is
// probed with `cls_loss` (it descends plain L_c). Returns the worst relative
// error and fills `worst` with its location.
inline double max_grad_rel_err(ModelParameters& params, const Gradients& grads,
                               const std::function<double()>& gcn_loss,
                               const std::function<double()>& cls_loss, double step,
                               FdMismatch* worst = nullptr) {
  double max_err = 0.0;
  auto probe = [&](double& theta, double analytic, const std::function<double()>& loss,
                   const std::string& tensor, std::size_t idx) {
    const double saved = theta;
    theta = saved + step;
    double up = loss();
    theta = saved - step;
    double down = loss();
    theta = saved;
    double numeric = (up - down) / (2.0 * step);
    double err = rel_err(analytic, numeric);
    if (err > max_err) {
      max_err = err;
      if (worst) *worst = {tensor, idx, analytic, numeric, err};
    }
  };

  for (int32_t node = 0; node < params.num_nodes(); ++node) {
    const std::vector<double>* grow = nullptr;
    auto it = grads.embedding.find(node);
    if (it != grads.embedding.end()) grow = &it->second;
    for (int c = 0; c < params.dim; ++c) {
      double analytic = grow ? (*grow)[c] : 0.0;
      probe(params.embeddings(node, c), analytic, gcn_loss,
            "embeddings[" + std::to_string(node) + "]", static_cast<std::size_t>(c));
    }
  }
  for (int l = 0; l < params.depth; ++l)
    for (std::size_t t = 0; t < params.conv[l].a.size(); ++t)
      probe(params.conv[l].a[t], grads.conv[l].a[t], gcn_loss, "conv[" + std::to_string(l) + "]",
            t);
  for (std::size_t t = 0; t < params.classifier.a.size(); ++t)
    probe(params.classifier.a[t], grads.classifier.a[t], cls_loss, "classifier", t);
  return max_err;
}

}  // namespace divrec::testing
