#pragma once

#include <cmath>

#include "vqa/errors.hpp"
#include "vqa/types.hpp"

// Adaptive-moment optimizer over flat parameter vectors, plus global-norm
// gradient clipping. Models flatten into a vector, step, and unflatten.

namespace vqa {

template <class Scalar = double>
struct AdamConfig {
  Scalar learning_rate = Scalar(1e-5);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);

  void validate() const {
    if (learning_rate < 0) throw ConfigError("adam: learning rate must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
      throw ConfigError("adam: betas must lie in [0, 1)");
    if (!(epsilon > 0)) throw ConfigError("adam: epsilon must be positive");
  }
};

/// First/second-moment recursion with bias correction:
///   m <- b1 m + (1-b1) g        v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <class Scalar = double>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(Index size, AdamConfig<Scalar> cfg = {})
      : cfg_(cfg), m_(VectorX<Scalar>::Zero(size)), v_(VectorX<Scalar>::Zero(size)) {
    cfg_.validate();
  }

  void step(VectorX<Scalar>& params, const VectorX<Scalar>& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw ShapeError("adam: parameter / gradient size mismatch");
    ++steps_;
    m_ = cfg_.beta1 * m_ + (Scalar(1) - cfg_.beta1) * grad;
    v_.array() = cfg_.beta2 * v_.array() +
                 (Scalar(1) - cfg_.beta2) * grad.array().square();
    const Scalar fix1 = Scalar(1) - std::pow(cfg_.beta1, Scalar(steps_));
    const Scalar fix2 = Scalar(1) - std::pow(cfg_.beta2, Scalar(steps_));
    params.array() -= cfg_.learning_rate * (m_.array() / fix1) /
                      ((v_.array() / fix2).sqrt() + cfg_.epsilon);
  }

  Index steps() const { return steps_; }
  const AdamConfig<Scalar>& config() const { return cfg_; }

 private:
  AdamConfig<Scalar> cfg_;
  VectorX<Scalar> m_, v_;
  Index steps_ = 0;
};

/// Rescales `grad` onto the max_norm ball when it lies outside; true when it
/// actually shrank anything.
template <class Scalar>
bool clip_global_norm(VectorX<Scalar>& grad, Scalar max_norm) {
  if (!(max_norm > 0)) throw DomainError("clip_global_norm: max_norm must be positive");
  const Scalar norm = grad.norm();
  if (!(norm > max_norm)) return false;
  grad *= max_norm / norm;
  return true;
}

}  // namespace vqa
