#pragma once

#include <cmath>
#include <string_view>

#include "fewshot/error.hpp"
#include "fewshot/learners/network.hpp"

namespace fewshot {

enum class OptimizerKind { kSgd, kAdam };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

/// Plain gradient descent or Adam over a flat parameter vector. Adam moments
/// are sized lazily on the first step.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {
    if (!(lr >= 0.0)) throw ValidationError("learning rate must be nonnegative");
  }

  void step(Vector& params, const Vector& grad) {
    if (!grad.allFinite()) throw NumericError("non-finite gradient");
    if (kind_ == OptimizerKind::kSgd) {
      params -= lr_ * grad;
      return;
    }
    if (m_.size() != params.size()) {
      m_ = Vector::Zero(params.size());
      v_ = Vector::Zero(params.size());
      t_ = 0;
    }
    ++t_;
    m_ = kBeta1 * m_ + (1.0 - kBeta1) * grad;
    v_ = kBeta2 * v_ + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + kEps);
  }

  OptimizerKind kind() const { return kind_; }
  double lr() const { return lr_; }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  OptimizerKind kind_;
  double lr_;
  Vector m_, v_;
  long t_ = 0;
};

}  // namespace fewshot
