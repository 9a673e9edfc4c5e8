#pragma once

// First-order MAML and Proto-MAML.
//
// Inner loop: plain gradient descent on the support cross-entropy, updating
// the embedding copy theta' and the linear head jointly. Meta-gradient: the
// query-loss gradient at (theta', head') is applied to theta as if every inner
// update had identity Jacobian. Proto-MAML additionally back-propagates the
// head gradient through W = 2c, b = -||c||^2 to the support embeddings at theta.

#include <cmath>
#include <cstddef>
#include <vector>

#include "fewshot/error.hpp"
#include "fewshot/learners/heads.hpp"
#include "fewshot/learners/network.hpp"
#include "fewshot/learners/task_family.hpp"

namespace fewshot {

struct MamlOptions {
  bool proto_init = false;
  double inner_lr = 0.1;
  std::size_t inner_steps = 5;
};

struct AdaptedModel {
  Mlp embedding;
  ClassifierHead head;
  std::vector<double> support_losses;  // before each step, then after the last
};

inline ClassifierHead maml_initial_head(const Mlp& theta, const EpisodeBatch& ep, bool proto_init) {
  if (!proto_init) return ClassifierHead::zeros(ep.ways, theta.output_dim());
  return proto_maml_head_init(class_prototypes(theta.forward(ep.support_x), ep.support_y, ep.ways));
}

inline AdaptedModel maml_adapt(const Mlp& theta, const EpisodeBatch& ep, const MamlOptions& opt) {
  AdaptedModel m{theta, maml_initial_head(theta, ep, opt.proto_init), {}};
  const HeadOptions linear;
  for (std::size_t step = 0; step <= opt.inner_steps; ++step) {
    const auto cache = m.embedding.forward_cached(ep.support_x);
    auto out = classifier_head(m.head, linear, cache.output, ep.support_y);
    if (!std::isfinite(out.loss)) throw NumericError("inner-loop support loss is not finite");
    m.support_losses.push_back(out.loss);
    if (step == opt.inner_steps) break;
    Mlp grad = Mlp::zeros_like(m.embedding);
    m.embedding.backward(cache, out.d_input, grad);
    m.embedding.axpy(-opt.inner_lr, grad);
    m.head.axpy(-opt.inner_lr, out.d_head);
  }
  return m;
}

struct MetaGradient {
  Mlp grad;
  double query_loss = 0.0;
  Matrix query_probs;
};

inline MetaGradient meta_gradient(const Mlp& theta, const EpisodeBatch& ep, const MamlOptions& opt) {
  const auto adapted = maml_adapt(theta, ep, opt);
  const auto qcache = adapted.embedding.forward_cached(ep.query_x);
  const auto out = classifier_head(adapted.head, HeadOptions{}, qcache.output, ep.query_y);
  if (!std::isfinite(out.loss)) throw NumericError("query loss is not finite");
  MetaGradient mg{Mlp::zeros_like(theta), out.loss, out.probs};
  adapted.embedding.backward(qcache, out.d_input, mg.grad);

  if (opt.proto_init) {
    // Inner updates pass d(head') straight through to d(head_init).
    const auto scache = theta.forward_cached(ep.support_x);
    const Matrix protos = class_prototypes(scache.output, ep.support_y, ep.ways);
    const Matrix d_protos = proto_maml_head_backward(protos, out.d_head);
    Matrix d_support = Matrix::Zero(scache.output.rows(), scache.output.cols());
    prototype_backward(d_protos, ep.support_y, d_support);
    theta.backward(scache, d_support, mg.grad);
  }
  return mg;
}

}  // namespace fewshot
