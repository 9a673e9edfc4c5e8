#pragma once

// Within-episode training of a fresh output layer on the support set, with
// the embedding optionally trained alongside it.

#include <cmath>
#include <cstddef>

#include "fewshot/error.hpp"
#include "fewshot/learners/heads.hpp"
#include "fewshot/learners/network.hpp"
#include "fewshot/learners/optim.hpp"
#include "fewshot/learners/task_family.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

struct FinetuneOptions {
  std::size_t steps = 100;
  double lr = 0.01;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  HeadOptions head{};
  bool train_embedding = false;
  /// Uniform init range of the head; the linear head starts at zero when 0.
  double init_scale = 0.0;
};

struct FinetuneResult {
  Mlp embedding;
  ClassifierHead head;
  Matrix query_probs;
  double support_accuracy = 0.0;
  double final_support_loss = 0.0;
};

namespace detail {

inline Vector flatten_head(const ClassifierHead& h) {
  Vector v(h.weight.size() + h.bias.size() + h.gain.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < h.weight.rows(); ++r)
    for (Eigen::Index c = 0; c < h.weight.cols(); ++c) v(k++) = h.weight(r, c);
  v.segment(k, h.bias.size()) = h.bias;
  k += h.bias.size();
  v.segment(k, h.gain.size()) = h.gain;
  return v;
}

inline void assign_head(ClassifierHead& h, const Vector& v) {
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < h.weight.rows(); ++r)
    for (Eigen::Index c = 0; c < h.weight.cols(); ++c) h.weight(r, c) = v(k++);
  h.bias = v.segment(k, h.bias.size());
  k += h.bias.size();
  h.gain = v.segment(k, h.gain.size());
}

}  // namespace detail

inline FinetuneResult finetune_fit(const Mlp& theta, const EpisodeBatch& ep, const FinetuneOptions& opt,
                                   CounterRng& rng) {
  const bool needs_direction = opt.head.cosine || opt.head.weight_norm;
  const double scale = opt.init_scale > 0.0 ? opt.init_scale : (needs_direction ? 0.01 : 0.0);
  FinetuneResult r{theta,
                   scale > 0.0 ? ClassifierHead::random(ep.ways, theta.output_dim(), rng, scale)
                               : ClassifierHead::zeros(ep.ways, theta.output_dim()),
                   {}, 0.0, 0.0};
  Optimizer head_opt(opt.optimizer, opt.lr);
  Optimizer emb_opt(opt.optimizer, opt.lr);
  Vector head_params = detail::flatten_head(r.head);
  Vector emb_params = r.embedding.flatten();
  Matrix support_emb = r.embedding.forward(ep.support_x);

  for (std::size_t step = 0; step < opt.steps; ++step) {
    const auto cache = r.embedding.forward_cached(ep.support_x);
    const auto out = classifier_head(r.head, opt.head, cache.output, ep.support_y);
    if (!std::isfinite(out.loss)) throw NumericError("finetune support loss is not finite");
    head_opt.step(head_params, detail::flatten_head(out.d_head));
    detail::assign_head(r.head, head_params);
    if (opt.train_embedding) {
      Mlp grad = Mlp::zeros_like(r.embedding);
      r.embedding.backward(cache, out.d_input, grad);
      emb_opt.step(emb_params, grad.flatten());
      r.embedding.assign(emb_params);
    }
  }
  if (opt.train_embedding) support_emb = r.embedding.forward(ep.support_x);
  const auto fit = classifier_head(r.head, opt.head, support_emb, ep.support_y);
  r.final_support_loss = fit.loss;
  const auto pred = argmax_rows(fit.probs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == ep.support_y[i];
  r.support_accuracy = pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
  r.query_probs = classifier_head(r.head, opt.head, r.embedding.forward(ep.query_x), {}).probs;
  return r;
}

}  // namespace fewshot
