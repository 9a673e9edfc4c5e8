#pragma once

// Episode-level inference rules on top of embeddings, each with its loss and
// the gradient of that loss with respect to the support and query embeddings.
// Labels are 0-based class indices into the episode's class list.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "fewshot/error.hpp"
#include "fewshot/learners/network.hpp"

namespace fewshot {

using Labels = std::vector<int>;

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

/// Mean negative log-likelihood and d(loss)/d(logits) for softmax outputs.
inline double cross_entropy(const Matrix& probs, std::span<const int> labels, Matrix* d_logits) {
  const auto n = static_cast<double>(labels.size());
  double loss = 0.0;
  if (d_logits) *d_logits = probs / n;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    loss -= std::log(std::max(probs(r, labels[i]), std::numeric_limits<double>::min()));
    if (d_logits) (*d_logits)(r, labels[i]) -= 1.0 / n;
  }
  return loss / n;
}

inline std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    scores.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

/// Class means of the support embeddings (N x E).
inline Matrix class_prototypes(const Matrix& support, std::span<const int> labels, std::size_t ways) {
  Matrix protos = Matrix::Zero(static_cast<Eigen::Index>(ways), support.cols());
  std::vector<double> count(ways, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    protos.row(labels[i]) += support.row(static_cast<Eigen::Index>(i));
    count[static_cast<std::size_t>(labels[i])] += 1.0;
  }
  for (std::size_t k = 0; k < ways; ++k) {
    if (count[k] == 0.0) throw ValidationError("class " + std::to_string(k) + " has no support example");
    protos.row(static_cast<Eigen::Index>(k)) /= count[k];
  }
  return protos;
}

/// Adds the support-embedding gradient implied by d(loss)/d(prototypes).
inline void prototype_backward(const Matrix& d_protos, std::span<const int> labels, Matrix& d_support) {
  std::vector<double> count(static_cast<std::size_t>(d_protos.rows()), 0.0);
  for (int y : labels) count[static_cast<std::size_t>(y)] += 1.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    d_support.row(static_cast<Eigen::Index>(i)) += d_protos.row(labels[i]) / count[static_cast<std::size_t>(labels[i])];
}

struct HeadOutput {
  Matrix probs;  // queries x ways
  double loss = 0.0;
  Matrix d_support;
  Matrix d_query;
};

/// p(y = k | x) = softmax_k(-||g(x) - c_k||^2).
inline HeadOutput protonet_head(const Matrix& support, std::span<const int> support_labels, const Matrix& query,
                                std::span<const int> query_labels, std::size_t ways) {
  const Matrix protos = class_prototypes(support, support_labels, ways);
  Matrix logits(query.rows(), protos.rows());
  for (Eigen::Index q = 0; q < query.rows(); ++q)
    for (Eigen::Index k = 0; k < protos.rows(); ++k) logits(q, k) = -(query.row(q) - protos.row(k)).squaredNorm();
  HeadOutput out;
  out.probs = softmax_rows(logits);
  if (query_labels.empty()) return out;
  Matrix dl;
  out.loss = cross_entropy(out.probs, query_labels, &dl);
  // d logit_qk / d e_q = -2 (e_q - c_k);  d logit_qk / d c_k = 2 (e_q - c_k)
  out.d_query = Matrix::Zero(query.rows(), query.cols());
  Matrix d_protos = Matrix::Zero(protos.rows(), protos.cols());
  for (Eigen::Index q = 0; q < query.rows(); ++q)
    for (Eigen::Index k = 0; k < protos.rows(); ++k) {
      const auto diff = (query.row(q) - protos.row(k)).eval();
      out.d_query.row(q) -= 2.0 * dl(q, k) * diff;
      d_protos.row(k) += 2.0 * dl(q, k) * diff;
    }
  out.d_support = Matrix::Zero(support.rows(), support.cols());
  prototype_backward(d_protos, support_labels, out.d_support);
  return out;
}

namespace detail {

inline Matrix normalize_rows(const Matrix& m, Vector& norms) {
  norms = m.rowwise().norm();
  Matrix out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (norms(i) == 0.0) throw NumericError("zero-norm embedding in cosine similarity");
    out.row(i) /= norms(i);
  }
  return out;
}

/// Gradient through u = x / ||x|| given du.
inline Matrix normalize_rows_backward(const Matrix& unit, const Vector& norms, const Matrix& d_unit) {
  Matrix dx(unit.rows(), unit.cols());
  for (Eigen::Index i = 0; i < unit.rows(); ++i)
    dx.row(i) = (d_unit.row(i) - unit.row(i) * unit.row(i).dot(d_unit.row(i))) / norms(i);
  return dx;
}

}  // namespace detail

/// p(y = k | x) = sum_i softmax_i(cos(g(x), g(x_i))) 1[y_i = k].
inline HeadOutput matchingnet_head(const Matrix& support, std::span<const int> support_labels, const Matrix& query,
                                   std::span<const int> query_labels, std::size_t ways) {
  Vector s_norm, q_norm;
  const Matrix su = detail::normalize_rows(support, s_norm);
  const Matrix qu = detail::normalize_rows(query, q_norm);
  const Matrix attention = softmax_rows(qu * su.transpose());  // queries x support
  HeadOutput out;
  out.probs = Matrix::Zero(query.rows(), static_cast<Eigen::Index>(ways));
  for (Eigen::Index q = 0; q < query.rows(); ++q)
    for (std::size_t i = 0; i < support_labels.size(); ++i)
      out.probs(q, support_labels[i]) += attention(q, static_cast<Eigen::Index>(i));
  if (query_labels.empty()) return out;

  const auto n = static_cast<double>(query_labels.size());
  Matrix d_sim(query.rows(), support.rows());
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    const int y = query_labels[static_cast<std::size_t>(q)];
    const double p = out.probs(q, y);
    out.loss -= std::log(p);
    for (Eigen::Index i = 0; i < support.rows(); ++i) {
      const double a = attention(q, i);
      const double own = support_labels[static_cast<std::size_t>(i)] == y ? a / p : 0.0;
      d_sim(q, i) = (a - own) / n;
    }
  }
  out.loss /= n;
  out.d_query = detail::normalize_rows_backward(qu, q_norm, d_sim * su);
  out.d_support = detail::normalize_rows_backward(su, s_norm, d_sim.transpose() * qu);
  return out;
}

/// Mean over (query, class) pairs of (score - 1[y = k])^2.
inline double relation_mse(const Matrix& scores, std::span<const int> labels) {
  double loss = 0.0;
  for (Eigen::Index q = 0; q < scores.rows(); ++q)
    for (Eigen::Index k = 0; k < scores.cols(); ++k) {
      const double t = labels[static_cast<std::size_t>(q)] == k ? 1.0 : 0.0;
      loss += (scores(q, k) - t) * (scores(q, k) - t);
    }
  return loss / static_cast<double>(scores.size());
}

struct RelationOutput {
  Matrix scores;  // queries x ways, in [0, 1]
  double loss = 0.0;
  Matrix d_support;
  Matrix d_query;
  Mlp d_relation;
};

/// Relation module r([c_k, g(x)]) -> sigmoid score; loss is the mean squared
/// error against one-hot targets over every (query, class) pair.
inline RelationOutput relationnet_head(const Mlp& relation, const Matrix& support, std::span<const int> support_labels,
                                       const Matrix& query, std::span<const int> query_labels, std::size_t ways) {
  const Matrix protos = class_prototypes(support, support_labels, ways);
  const Eigen::Index nq = query.rows();
  const auto nk = static_cast<Eigen::Index>(ways);
  const Eigen::Index e = query.cols();
  Matrix pairs(nq * nk, 2 * e);
  for (Eigen::Index q = 0; q < nq; ++q)
    for (Eigen::Index k = 0; k < nk; ++k) {
      pairs.block(q * nk + k, 0, 1, e) = protos.row(k);
      pairs.block(q * nk + k, e, 1, e) = query.row(q);
    }
  const auto cache = relation.forward_cached(pairs);
  RelationOutput out;
  out.scores.resize(nq, nk);
  for (Eigen::Index q = 0; q < nq; ++q)
    for (Eigen::Index k = 0; k < nk; ++k) out.scores(q, k) = 1.0 / (1.0 + std::exp(-cache.output(q * nk + k, 0)));
  if (query_labels.empty()) return out;

  const auto pairs_n = static_cast<double>(nq * nk);
  Matrix d_out(nq * nk, 1);
  for (Eigen::Index q = 0; q < nq; ++q)
    for (Eigen::Index k = 0; k < nk; ++k) {
      const double s = out.scores(q, k);
      const double t = query_labels[static_cast<std::size_t>(q)] == k ? 1.0 : 0.0;
      d_out(q * nk + k, 0) = 2.0 * (s - t) * s * (1.0 - s) / pairs_n;
    }
  out.loss = relation_mse(out.scores, query_labels);
  out.d_relation = Mlp::zeros_like(relation);
  const Matrix d_pairs = relation.backward(cache, d_out, out.d_relation);
  out.d_query = Matrix::Zero(nq, e);
  Matrix d_protos = Matrix::Zero(nk, e);
  for (Eigen::Index q = 0; q < nq; ++q)
    for (Eigen::Index k = 0; k < nk; ++k) {
      d_protos.row(k) += d_pairs.block(q * nk + k, 0, 1, e);
      out.d_query.row(q) += d_pairs.block(q * nk + k, e, 1, e);
    }
  out.d_support = Matrix::Zero(support.rows(), e);
  prototype_backward(d_protos, support_labels, out.d_support);
  return out;
}

enum class Distance { kEuclidean, kCosine };

/// 1-nearest-neighbour labels; ties go to the lowest support index.
inline std::vector<int> knn_predict(const Matrix& support, std::span<const int> support_labels, const Matrix& query,
                                    Distance distance) {
  if (support.rows() == 0) throw ValidationError("knn needs a nonempty support set");
  std::vector<int> out(static_cast<std::size_t>(query.rows()));
  Vector s_norm = support.rowwise().norm();
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    const double q_norm = query.row(q).norm();
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index i = 0; i < support.rows(); ++i) {
      double d;
      if (distance == Distance::kEuclidean) {
        d = (query.row(q) - support.row(i)).squaredNorm();
      } else {
        const double denom = q_norm * s_norm(i);
        d = 1.0 - (denom > 0.0 ? query.row(q).dot(support.row(i)) / denom : 0.0);
      }
      if (d < best) {
        best = d;
        arg = i;
      }
    }
    out[static_cast<std::size_t>(q)] = support_labels[static_cast<std::size_t>(arg)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear / cosine classifier layer.

struct HeadOptions {
  bool cosine = false;       // l2-normalize embeddings and weight rows, scale by cosine_scale
  bool weight_norm = false;  // weight row k = gain_k * v_k / ||v_k||
  double cosine_scale = 10.0;
};

struct ClassifierHead {
  Matrix weight;  // N x E (the direction v when weight_norm is on)
  Vector bias;    // N, unused by the cosine classifier
  Vector gain;    // N, used only with weight_norm

  static ClassifierHead zeros(std::size_t ways, std::size_t dim) {
    const auto n = static_cast<Eigen::Index>(ways);
    return {Matrix::Zero(n, static_cast<Eigen::Index>(dim)), Vector::Zero(n), Vector::Ones(n)};
  }

  static ClassifierHead random(std::size_t ways, std::size_t dim, CounterRng& rng, double scale) {
    auto h = zeros(ways, dim);
    for (Eigen::Index i = 0; i < h.weight.size(); ++i) h.weight.data()[i] = scale * (2.0 * rng.uniform_unit() - 1.0);
    return h;
  }

  void axpy(double s, const ClassifierHead& o) {
    weight += s * o.weight;
    bias += s * o.bias;
    gain += s * o.gain;
  }
};

/// W row k = 2 c_k, b_k = -||c_k||^2.
inline ClassifierHead proto_maml_head_init(const Matrix& prototypes) {
  ClassifierHead h = ClassifierHead::zeros(static_cast<std::size_t>(prototypes.rows()),
                                           static_cast<std::size_t>(prototypes.cols()));
  h.weight = 2.0 * prototypes;
  h.bias = -prototypes.rowwise().squaredNorm();
  return h;
}

/// Gradient of the loss with respect to the prototypes given the gradient
/// with respect to the head produced by proto_maml_head_init.
inline Matrix proto_maml_head_backward(const Matrix& prototypes, const ClassifierHead& d_head) {
  Matrix d = 2.0 * d_head.weight;
  for (Eigen::Index k = 0; k < prototypes.rows(); ++k) d.row(k) -= 2.0 * d_head.bias(k) * prototypes.row(k);
  return d;
}

struct ClassifierOutput {
  Matrix probs;
  double loss = 0.0;
  Matrix d_input;
  ClassifierHead d_head;
};

inline ClassifierOutput classifier_head(const ClassifierHead& head, const HeadOptions& opt, const Matrix& input,
                                        std::span<const int> labels) {
  // Effective weight rows.
  Matrix w = head.weight;
  Vector v_norm;
  Matrix v_unit;
  if (opt.weight_norm) {
    v_norm = head.weight.rowwise().norm();
    v_unit = head.weight;
    for (Eigen::Index k = 0; k < w.rows(); ++k) {
      if (v_norm(k) == 0.0) throw NumericError("weight-normalized row has zero norm");
      v_unit.row(k) /= v_norm(k);
      w.row(k) = head.gain(k) * v_unit.row(k);
    }
  }
  Matrix logits;
  Matrix w_unit, x_unit;
  Vector w_norm, x_norm;
  if (opt.cosine) {
    w_norm = w.rowwise().norm();
    x_norm = input.rowwise().norm();
    w_unit = w;
    x_unit = input;
    for (Eigen::Index k = 0; k < w.rows(); ++k) w_unit.row(k) = w_norm(k) > 0 ? Matrix(w.row(k) / w_norm(k)) : Matrix(w.row(k) * 0.0);
    for (Eigen::Index i = 0; i < input.rows(); ++i)
      x_unit.row(i) = x_norm(i) > 0 ? Matrix(input.row(i) / x_norm(i)) : Matrix(input.row(i) * 0.0);
    logits = opt.cosine_scale * x_unit * w_unit.transpose();
  } else {
    logits = input * w.transpose();
    logits.rowwise() += head.bias.transpose();
  }
  ClassifierOutput out;
  out.probs = softmax_rows(logits);
  if (labels.empty()) return out;
  Matrix dl;
  out.loss = cross_entropy(out.probs, labels, &dl);

  Matrix d_w;
  out.d_head = ClassifierHead::zeros(static_cast<std::size_t>(w.rows()), static_cast<std::size_t>(w.cols()));
  out.d_head.gain.setZero();
  if (opt.cosine) {
    const Matrix d_w_unit = opt.cosine_scale * dl.transpose() * x_unit;
    const Matrix d_x_unit = opt.cosine_scale * dl * w_unit;
    d_w.resize(w.rows(), w.cols());
    for (Eigen::Index k = 0; k < w.rows(); ++k)
      d_w.row(k) = w_norm(k) > 0 ? Matrix((d_w_unit.row(k) - w_unit.row(k) * w_unit.row(k).dot(d_w_unit.row(k))) / w_norm(k))
                                 : Matrix(d_w_unit.row(k) * 0.0);
    out.d_input.resize(input.rows(), input.cols());
    for (Eigen::Index i = 0; i < input.rows(); ++i)
      out.d_input.row(i) = x_norm(i) > 0 ? Matrix((d_x_unit.row(i) - x_unit.row(i) * x_unit.row(i).dot(d_x_unit.row(i))) / x_norm(i))
                                         : Matrix(d_x_unit.row(i) * 0.0);
  } else {
    d_w = dl.transpose() * input;
    out.d_head.bias = dl.colwise().sum().transpose();
    out.d_input = dl * w;
  }
  if (opt.weight_norm) {
    for (Eigen::Index k = 0; k < w.rows(); ++k) {
      const double along = v_unit.row(k).dot(d_w.row(k));
      out.d_head.gain(k) = along;
      out.d_head.weight.row(k) = head.gain(k) / v_norm(k) * (d_w.row(k) - v_unit.row(k) * along);
    }
  } else {
    out.d_head.weight = d_w;
  }
  require_finite(out.d_input, "classifier backward pass");
  return out;
}

}  // namespace fewshot
