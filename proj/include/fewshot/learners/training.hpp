#pragma once

// Learners, their per-episode gradients and predictions, and the two
// training loops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/catalog.hpp"
#include "fewshot/error.hpp"
#include "fewshot/eval.hpp"
#include "fewshot/learners/config.hpp"
#include "fewshot/learners/finetune.hpp"
#include "fewshot/learners/heads.hpp"
#include "fewshot/learners/maml.hpp"
#include "fewshot/learners/network.hpp"
#include "fewshot/learners/optim.hpp"
#include "fewshot/learners/snapshot.hpp"
#include "fewshot/learners/task_family.hpp"
#include "fewshot/parallel.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/sampler.hpp"

namespace fewshot {

struct Learner {
  LearnerConfig config;
  Mlp embedding;
  Mlp relation;  // relationnet only

  bool has_relation() const { return !relation.layers().empty(); }

  Vector flatten() const {
    const Vector e = embedding.flatten();
    if (!has_relation()) return e;
    const Vector r = relation.flatten();
    Vector v(e.size() + r.size());
    v << e, r;
    return v;
  }

  void assign(const Vector& v) {
    const auto ne = static_cast<Eigen::Index>(embedding.parameter_count());
    embedding.assign(v.head(ne));
    if (has_relation()) relation.assign(v.tail(v.size() - ne));
  }

  std::string arch() const {
    std::string a = "mlp " + detail::join_counts(embedding.dims());
    if (has_relation()) a += " relation " + detail::join_counts(relation.dims());
    return a + " kind " + config.kind_name();
  }
};

inline std::vector<std::size_t> embedding_dims(const LearnerConfig& cfg, std::size_t input_dim) {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(cfg.embedding_dim);
  return dims;
}

inline Learner make_learner(const LearnerConfig& cfg, std::size_t input_dim, std::uint64_t seed) {
  cfg.validate();
  CounterRng rng(SeedContext{seed, 0}, StreamTag::kInit);
  Learner l{cfg, Mlp::random(embedding_dims(cfg, input_dim), rng), Mlp{}};
  if (cfg.kind == LearnerKind::kRelationNet) {
    const std::vector<std::size_t> rdims{2 * cfg.embedding_dim, cfg.relation_hidden, 1};
    l.relation = Mlp::random(rdims, rng);
  }
  return l;
}

inline Snapshot learner_snapshot(const Learner& l, std::uint64_t config_hash, std::string producer = {}) {
  Snapshot s{l.arch(), config_hash, std::move(producer), {}};
  add_network(s, "embedding", l.embedding);
  if (l.has_relation()) add_network(s, "relation", l.relation);
  return s;
}

/// Replaces the embedding with the one stored in `s`; shapes must agree.
inline void load_embedding(Learner& l, const Snapshot& s) {
  auto net = extract_network(s, "embedding");
  if (net.dims() != l.embedding.dims())
    throw ValidationError("snapshot embedding " + detail::join_counts(net.dims()) + " does not match configured " +
                          detail::join_counts(l.embedding.dims()));
  l.embedding = std::move(net);
  if (l.has_relation() && s.has("relation.0.weight")) {
    auto rel = extract_network(s, "relation");
    if (rel.dims() != l.relation.dims()) throw ValidationError("snapshot relation module shape mismatch");
    l.relation = std::move(rel);
  }
}

inline MamlOptions maml_options(const LearnerConfig& cfg, bool evaluation) {
  return {cfg.kind == LearnerKind::kFoProtoMaml, cfg.effective_inner_lr(),
          cfg.inner_steps + (evaluation ? cfg.extra_eval_steps : 0)};
}

inline FinetuneOptions finetune_options(const LearnerConfig& cfg) {
  FinetuneOptions o;
  o.steps = cfg.finetune_steps;
  o.lr = cfg.finetune_lr;
  o.optimizer = cfg.finetune_optimizer;
  o.head = {cfg.cosine_classifier, cfg.weight_norm, 10.0};
  o.train_embedding = cfg.finetune_embedding;
  return o;
}

struct EpisodeGradient {
  double loss = 0.0;
  Vector grad;  // aligned with Learner::flatten()
};

/// Query loss and its gradient for the episodic learners.
inline EpisodeGradient episode_gradient(const Learner& l, const EpisodeBatch& ep) {
  const auto kind = l.config.kind;
  if (is_baseline(kind)) throw ValidationError(std::string(to_string(kind)) + " is not trained episodically");
  if (is_maml_family(kind)) {
    auto mg = meta_gradient(l.embedding, ep, maml_options(l.config, false));
    return {mg.query_loss, mg.grad.flatten()};
  }
  const auto sc = l.embedding.forward_cached(ep.support_x);
  const auto qc = l.embedding.forward_cached(ep.query_x);
  Mlp grad = Mlp::zeros_like(l.embedding);
  EpisodeGradient out;
  Matrix d_support, d_query;
  Mlp d_relation;
  if (kind == LearnerKind::kProtoNet) {
    auto h = protonet_head(sc.output, ep.support_y, qc.output, ep.query_y, ep.ways);
    out.loss = h.loss;
    d_support = std::move(h.d_support);
    d_query = std::move(h.d_query);
  } else if (kind == LearnerKind::kMatchingNet) {
    auto h = matchingnet_head(sc.output, ep.support_y, qc.output, ep.query_y, ep.ways);
    out.loss = h.loss;
    d_support = std::move(h.d_support);
    d_query = std::move(h.d_query);
  } else {
    auto h = relationnet_head(l.relation, sc.output, ep.support_y, qc.output, ep.query_y, ep.ways);
    out.loss = h.loss;
    d_support = std::move(h.d_support);
    d_query = std::move(h.d_query);
    d_relation = std::move(h.d_relation);
  }
  if (!std::isfinite(out.loss)) throw NumericError("episode loss is not finite");
  l.embedding.backward(sc, d_support, grad);
  l.embedding.backward(qc, d_query, grad);
  out.grad = grad.flatten();
  if (l.has_relation()) {
    const Vector r = d_relation.flatten();
    Vector all(out.grad.size() + r.size());
    all << out.grad, r;
    out.grad = std::move(all);
  }
  return out;
}

/// Query predictions under the learner's inference rule. `rng` seeds the
/// finetune head.
inline std::vector<int> predict(const Learner& l, const EpisodeBatch& ep, CounterRng& rng) {
  const auto& cfg = l.config;
  switch (cfg.kind) {
    case LearnerKind::kKnn:
      return knn_predict(l.embedding.forward(ep.support_x), ep.support_y, l.embedding.forward(ep.query_x),
                         cfg.distance);
    case LearnerKind::kFinetune:
      return argmax_rows(finetune_fit(l.embedding, ep, finetune_options(cfg), rng).query_probs);
    case LearnerKind::kProtoNet:
      return argmax_rows(
          protonet_head(l.embedding.forward(ep.support_x), ep.support_y, l.embedding.forward(ep.query_x), {}, ep.ways)
              .probs);
    case LearnerKind::kMatchingNet:
      return argmax_rows(matchingnet_head(l.embedding.forward(ep.support_x), ep.support_y,
                                          l.embedding.forward(ep.query_x), {}, ep.ways)
                             .probs);
    case LearnerKind::kRelationNet:
      return argmax_rows(relationnet_head(l.relation, l.embedding.forward(ep.support_x), ep.support_y,
                                          l.embedding.forward(ep.query_x), {}, ep.ways)
                             .scores);
    case LearnerKind::kFoMaml:
    case LearnerKind::kFoProtoMaml: {
      const auto a = maml_adapt(l.embedding, ep, maml_options(cfg, true));
      return argmax_rows(classifier_head(a.head, {}, a.embedding.forward(ep.query_x), {}).probs);
    }
  }
  return {};
}

inline EpisodeResult evaluate_episode(const Learner& l, const EpisodeSpec& spec, const Catalog& catalog,
                                      const FeatureProvider& features, const SeedContext& ctx) {
  const auto batch = make_batch(spec, catalog, features);
  CounterRng rng(ctx, StreamTag::kEvaluation);
  const auto pred = predict(l, batch, rng);
  auto r = make_episode_result(spec.dataset_id, spec.shots, batch.query_y, pred);
  r.method = l.config.kind_name();
  return r;
}

// ---------------------------------------------------------------------------
// Training loops

inline SamplerConfig sampler_config(const EvalShape& shape) {
  SamplerConfig c;
  c.fixed_ways = shape.ways;
  c.fixed_shots = shape.shots;
  c.fixed_query = shape.query;
  return c;
}

/// The catalog restricted to one dataset.
inline Catalog dataset_subcatalog(const Catalog& catalog, const std::string& dataset_id) {
  Catalog sub;
  const auto* ds = catalog.find_dataset(dataset_id);
  if (!ds) throw ValidationError("unknown dataset '" + dataset_id + "'");
  sub.datasets.push_back(*ds);
  for (const auto& c : catalog.classes)
    if (c.dataset_id == dataset_id) sub.classes.push_back(c);
  for (const auto& e : catalog.hierarchy_edges)
    if (e.dataset_id == dataset_id) sub.hierarchy_edges.push_back(e);
  return sub;
}

struct TrainOptions {
  std::uint64_t seed = 0;
  EvalShape train_shape;
  EvalShape valid_shape;
  std::string proxy_dataset;
  std::size_t threads = 1;
};

struct Checkpoint {
  std::size_t episodes = 0;  // training episodes seen
  double valid_accuracy = 0.0;
};

struct TrainLog {
  std::vector<double> losses;
  std::vector<Checkpoint> checkpoints;
  Checkpoint best;
};

/// Mean accuracy (fraction) over `count` episodes of the sampler.
inline double mean_accuracy(const Learner& l, const EpisodeSampler& sampler, const FeatureProvider& features,
                            std::uint64_t seed, std::size_t count, std::size_t threads) {
  std::vector<double> acc(count);
  parallel_for(count, threads, [&](std::size_t i) {
    const SeedContext ctx{seed, i};
    acc[i] = evaluate_episode(l, sampler.sample_episode(ctx), sampler.catalog(), features, ctx).accuracy();
  });
  double s = 0.0;
  for (double a : acc) s += a;
  return count ? s / static_cast<double>(count) : 0.0;
}

inline std::uint64_t validation_seed(std::uint64_t seed) { return splitmix64_mix(seed ^ 0x76616c6964617465ULL); }

/// Adam on the per-episode query loss. Validation runs on the proxy dataset's
/// valid split every `validate_every` episodes and after the last one; the
/// learner ends at the best checkpoint (earliest on ties).
inline TrainLog episodic_train(Learner& l, const Catalog& catalog, const FeatureProvider& features,
                               const TrainOptions& opt) {
  const auto& cfg = l.config;
  const EpisodeSampler train(catalog, sampler_config(opt.train_shape), Split::kTrain);
  if (train.plans().empty()) throw ValidationError("no dataset can form a training episode");
  const Catalog proxy = dataset_subcatalog(catalog, opt.proxy_dataset);
  const EpisodeSampler valid(proxy, sampler_config(opt.valid_shape), Split::kValid);
  if (valid.plans().empty()) throw ValidationError("proxy dataset '" + opt.proxy_dataset + "' cannot form a validation episode");

  Optimizer adam(OptimizerKind::kAdam, cfg.outer_lr);
  Vector params = l.flatten();
  Vector best_params = params;
  TrainLog log;
  log.best.valid_accuracy = -1.0;
  const auto vseed = validation_seed(opt.seed);
  for (std::size_t e = 0; e < cfg.train_episodes; ++e) {
    const auto spec = train.sample_episode(SeedContext{opt.seed, e});
    const auto step = episode_gradient(l, make_batch(spec, catalog, features));
    log.losses.push_back(step.loss);
    adam.step(params, step.grad);
    l.assign(params);
    if ((e + 1) % cfg.validate_every == 0 || e + 1 == cfg.train_episodes) {
      const Checkpoint cp{e + 1, mean_accuracy(l, valid, features, vseed, cfg.valid_episodes, opt.threads)};
      log.checkpoints.push_back(cp);
      if (cp.valid_accuracy > log.best.valid_accuracy) {
        log.best = cp;
        best_params = params;
      }
    }
  }
  if (!log.checkpoints.empty()) l.assign(best_params);
  return log;
}

struct PretrainResult {
  std::vector<double> losses;
  double train_accuracy = 0.0;  // on a fixed sample of training examples
};

/// Mini-batch classification over the union of training classes of every
/// non-reserved dataset. Examples are drawn uniformly over all training
/// examples. Only the embedding is kept.
inline PretrainResult nonepisodic_train(Learner& l, const Catalog& catalog, const FeatureProvider& features,
                                        std::uint64_t seed) {
  const auto& cfg = l.config;
  std::vector<std::size_t> classes;
  std::vector<std::size_t> cumulative;
  std::size_t total = 0;
  for (std::size_t i = 0; i < catalog.classes.size(); ++i) {
    const auto& c = catalog.classes[i];
    const auto* ds = catalog.find_dataset(c.dataset_id);
    if (c.split != Split::kTrain || (ds && ds->reserved_for_eval)) continue;
    classes.push_back(i);
    total += c.example_count;
    cumulative.push_back(total);
  }
  if (classes.empty()) throw ValidationError("no training classes for non-episodic training");

  const HeadOptions head_opt{cfg.cosine_classifier, cfg.weight_norm, 10.0};
  CounterRng init(SeedContext{seed, 1}, StreamTag::kInit);
  ClassifierHead head = ClassifierHead::random(classes.size(), cfg.embedding_dim, init, 0.01);
  const auto n_emb = static_cast<Eigen::Index>(l.embedding.parameter_count());
  Vector params(n_emb + detail::flatten_head(head).size());
  params << l.embedding.flatten(), detail::flatten_head(head);
  Optimizer adam(OptimizerKind::kAdam, cfg.pretrain_lr);

  const auto dim = static_cast<Eigen::Index>(features.dim());
  auto draw_batch = [&](CounterRng& rng, std::size_t b, Matrix& x, Labels& y) {
    x.resize(static_cast<Eigen::Index>(b), dim);
    y.resize(b);
    Vector row(dim);
    for (std::size_t i = 0; i < b; ++i) {
      const auto g = static_cast<std::size_t>(rng.uniform_index(total));
      const auto k = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), g) -
                                              cumulative.begin());
      const std::size_t example = g - (k == 0 ? 0 : cumulative[k - 1]);
      features.write(catalog.classes[classes[k]], example, row);
      x.row(static_cast<Eigen::Index>(i)) = row.transpose();
      y[i] = static_cast<int>(k);
    }
  };

  PretrainResult res;
  Matrix x;
  Labels y;
  for (std::size_t s = 0; s < cfg.pretrain_steps; ++s) {
    CounterRng rng(SeedContext{seed, s}, StreamTag::kTraining);
    draw_batch(rng, cfg.pretrain_batch, x, y);
    const auto cache = l.embedding.forward_cached(x);
    const auto out = classifier_head(head, head_opt, cache.output, y);
    if (!std::isfinite(out.loss)) throw NumericError("pre-training loss is not finite");
    res.losses.push_back(out.loss);
    Mlp grad = Mlp::zeros_like(l.embedding);
    l.embedding.backward(cache, out.d_input, grad);
    Vector g(params.size());
    g << grad.flatten(), detail::flatten_head(out.d_head);
    adam.step(params, g);
    l.embedding.assign(params.head(n_emb));
    detail::assign_head(head, params.tail(params.size() - n_emb));
  }

  CounterRng eval_rng(SeedContext{seed, 0}, StreamTag::kEvaluation);
  draw_batch(eval_rng, 2000, x, y);
  const auto pred = argmax_rows(classifier_head(head, head_opt, l.embedding.forward(x), {}).probs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += pred[i] == y[i];
  res.train_accuracy = static_cast<double>(hit) / static_cast<double>(y.size());
  return res;
}

}  // namespace fewshot
