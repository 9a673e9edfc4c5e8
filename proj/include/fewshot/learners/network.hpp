#pragma once

// Fully connected rectifier network with hand-written backward pass.
// Rows of every batch matrix are examples.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fewshot/error.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

/// Per-layer activations kept by forward() for the backward pass.
struct MlpCache {
  std::vector<Matrix> inputs;       // input to layer l
  std::vector<Matrix> preactivation;  // output of layer l before the rectifier
  Matrix output;
};

/// g(x; theta): dense layers with a rectifier between consecutive layers and a
/// linear final layer.
class Mlp {
 public:
  Mlp() = default;

  /// dims = {input, hidden..., output}; weights zero.
  explicit Mlp(std::span<const std::size_t> dims) {
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      layers_.push_back({Matrix::Zero(static_cast<Eigen::Index>(dims[l + 1]), static_cast<Eigen::Index>(dims[l])),
                         Vector::Zero(static_cast<Eigen::Index>(dims[l + 1]))});
    }
  }

  /// He-uniform weights, zero biases.
  static Mlp random(std::span<const std::size_t> dims, CounterRng& rng) {
    Mlp net(dims);
    for (auto& layer : net.layers_) {
      const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.cols()));
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
          layer.weight(r, c) = bound * (2.0 * rng.uniform_unit() - 1.0);
    }
    return net;
  }

  static Mlp zeros_like(const Mlp& other) {
    Mlp z;
    for (const auto& l : other.layers_)
      z.layers_.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    return z;
  }

  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d;
    if (layers_.empty()) return d;
    d.push_back(static_cast<std::size_t>(layers_.front().weight.cols()));
    for (const auto& l : layers_) d.push_back(static_cast<std::size_t>(l.weight.rows()));
    return d;
  }

  std::size_t input_dim() const { return static_cast<std::size_t>(layers_.front().weight.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers_.back().weight.rows()); }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  MlpCache forward_cached(const Matrix& x) const {
    MlpCache cache;
    Matrix h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      cache.inputs.push_back(h);
      Matrix z = h * layers_[l].weight.transpose();
      z.rowwise() += layers_[l].bias.transpose();
      cache.preactivation.push_back(z);
      h = (l + 1 < layers_.size()) ? Matrix(z.cwiseMax(0.0)) : z;
    }
    require_finite(h, "embedding forward pass");
    cache.output = std::move(h);
    return cache;
  }

  Matrix forward(const Matrix& x) const { return forward_cached(x).output; }

  /// Back-propagates d(loss)/d(output). Accumulates into `grad` (same shape
  /// as this network) and returns d(loss)/d(input).
  Matrix backward(const MlpCache& cache, const Matrix& d_output, Mlp& grad) const {
    Matrix delta = d_output;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size()) delta = delta.cwiseProduct((cache.preactivation[l].array() > 0.0).cast<double>().matrix());
      grad.layers_[l].weight.noalias() += delta.transpose() * cache.inputs[l];
      grad.layers_[l].bias += delta.colwise().sum().transpose();
      delta = delta * layers_[l].weight;
    }
    require_finite(delta, "embedding backward pass");
    return delta;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  /// Parameters in a fixed order: for each layer, weight row-major then bias.
  Vector flatten() const {
    Vector v(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (const auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) v(k++) = l.weight(r, c);
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) v(k++) = l.bias(r);
    }
    return v;
  }

  void assign(const Vector& v) {
    if (static_cast<std::size_t>(v.size()) != parameter_count()) throw ValidationError("parameter vector size mismatch");
    Eigen::Index k = 0;
    for (auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = v(k++);
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = v(k++);
    }
  }

  /// this += scale * other
  void axpy(double scale, const Mlp& other) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].weight += scale * other.layers_[l].weight;
      layers_[l].bias += scale * other.layers_[l].bias;
    }
  }

  bool operator==(const Mlp& o) const {
    if (layers_.size() != o.layers_.size()) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l)
      if (layers_[l].weight != o.layers_[l].weight || layers_[l].bias != o.layers_[l].bias) return false;
    return true;
  }

 private:
  std::vector<DenseLayer> layers_;
};

/// Rectifier on/off pattern of a forward pass; used by finite-difference
/// checks to skip perturbations that cross a kink.
inline std::vector<bool> activation_pattern(const MlpCache& cache) {
  std::vector<bool> out;
  for (std::size_t l = 0; l + 1 < cache.preactivation.size(); ++l) {
    const auto& z = cache.preactivation[l];
    for (Eigen::Index i = 0; i < z.size(); ++i) out.push_back(z.data()[i] > 0.0);
  }
  return out;
}

}  // namespace fewshot
