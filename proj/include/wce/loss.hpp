#pragma once

// Softmax and the weighted / focal cross-entropy family.
//
// Every loss here is a special case of
//
//     L(p, y) = w_y * (1 - p_y)^alpha * -log(max(p_y, floor))
//
// with alpha = 0 giving weighted cross entropy and w = 1 giving the plain
// (or focal) form. The static weight is always applied last so that scaling
// w_y scales L exactly.

#include <Eigen/Core>
#include <cmath>
#include <span>
#include <string>

#include "wce/error.hpp"

namespace wce {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct LossConfig {
  /// Per-class static weights, background included. Empty means all ones.
  Vector<Scalar> static_weights;
  Scalar focal_alpha = Scalar(0);
  Scalar prob_floor = Scalar(1e-12);

  void validate() const {
    if (!std::isfinite(static_cast<double>(focal_alpha)) || focal_alpha < Scalar(0)) {
      throw Error(ErrorKind::InvalidConfig, "focal_alpha must be finite and >= 0");
    }
    if (!(prob_floor > Scalar(0) && prob_floor <= Scalar(1e-6))) {
      throw Error(ErrorKind::InvalidConfig, "prob_floor must lie in (0, 1e-6]");
    }
    for (Eigen::Index i = 0; i < static_weights.size(); ++i) {
      if (!std::isfinite(static_cast<double>(static_weights[i])) || static_weights[i] < Scalar(0)) {
        throw Error(ErrorKind::InvalidConfig, "static weights must be finite and >= 0");
      }
    }
  }

  Scalar weight(Eigen::Index cls, Eigen::Index num_classes) const {
    if (static_weights.size() == 0) return Scalar(1);
    if (static_weights.size() != num_classes) {
      throw Error(ErrorKind::InvalidInput, "weight vector length " +
                                               std::to_string(static_weights.size()) +
                                               " does not match " + std::to_string(num_classes) +
                                               " classes");
    }
    return static_weights[cls];
  }
};

using LossConfigd = LossConfig<double>;

namespace detail {

inline void check_target(Eigen::Index target, Eigen::Index size) {
  if (target < 0 || target >= size) {
    throw Error(ErrorKind::InvalidInput, "target class " + std::to_string(target) +
                                             " out of range for " + std::to_string(size) +
                                             " classes");
  }
}

template <typename Derived>
void check_finite(const Eigen::MatrixBase<Derived>& v) {
  if (!v.allFinite()) throw Error(ErrorKind::InvalidInput, "non-finite logit");
}

// 1 - probs[target], computed as the mass of the other classes so that it
// keeps full relative precision when probs[target] is close to one.
template <typename Derived>
typename Derived::Scalar complement(const Eigen::MatrixBase<Derived>& probs, Eigen::Index target) {
  typename Derived::Scalar rest(0);
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    if (k != target) rest += probs[k];
  }
  return rest;
}

template <typename Scalar>
Scalar focal_factor(Scalar one_minus_p, Scalar alpha) {
  using std::pow;
  return alpha == Scalar(0) ? Scalar(1) : pow(one_minus_p, alpha);
}

}  // namespace detail

/// Max-shifted softmax of a logit vector.
template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  if (logits.size() == 0) throw Error(ErrorKind::InvalidInput, "empty logit vector");
  detail::check_finite(logits);
  Vector<Scalar> e = (logits.derived().array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Unweighted cross entropy, -log(max(p_y, floor)).
template <typename Derived>
typename Derived::Scalar cross_entropy(const Eigen::MatrixBase<Derived>& probs, Eigen::Index target,
                                       typename Derived::Scalar prob_floor) {
  using std::log;
  using std::max;
  detail::check_target(target, probs.size());
  return -log(max(probs[target], prob_floor));
}

/// Unified weighted / focal cross entropy evaluated on probabilities.
template <typename Derived>
typename Derived::Scalar loss(const Eigen::MatrixBase<Derived>& probs, Eigen::Index target,
                              const LossConfig<typename Derived::Scalar>& cfg) {
  using Scalar = typename Derived::Scalar;
  detail::check_target(target, probs.size());
  const Scalar w = cfg.weight(target, probs.size());
  const Scalar ce = cross_entropy(probs, target, cfg.prob_floor);
  const Scalar focal = detail::focal_factor(detail::complement(probs, target), cfg.focal_alpha);
  return w * (focal * ce);
}

template <typename Scalar>
struct LossAndGrad {
  Scalar value;
  Vector<Scalar> gradient;
};

/// Loss of softmax(logits) and its gradient with respect to the logits.
///
/// With G = -[alpha (1-p)^(alpha-1) p ce + (1-p)^alpha] the gradient is
/// w_y * G * (onehot - p). When p_y sits below the floor the log term is
/// constant and only the focal part contributes. At p_y == 1 exactly the
/// gradient is zero.
template <typename Derived>
LossAndGrad<typename Derived::Scalar> loss_and_grad(const Eigen::MatrixBase<Derived>& logits,
                                                    Eigen::Index target,
                                                    const LossConfig<typename Derived::Scalar>& cfg) {
  using Scalar = typename Derived::Scalar;
  using std::log;
  using std::pow;
  if (logits.size() == 0) throw Error(ErrorKind::InvalidInput, "empty logit vector");
  detail::check_target(target, logits.size());
  detail::check_finite(logits);
  const Scalar w = cfg.weight(target, logits.size());

  const Vector<Scalar> shifted = (logits.derived().array() - logits.maxCoeff()).matrix();
  const Vector<Scalar> e = shifted.array().exp().matrix();
  const Scalar sum = e.sum();
  const Vector<Scalar> probs = e / sum;
  const Scalar p = probs[target];
  const Scalar one_minus_p = detail::complement(probs, target);
  const Scalar alpha = cfg.focal_alpha;

  const bool floored = p < cfg.prob_floor;
  const Scalar ce = floored ? -log(cfg.prob_floor) : log(sum) - shifted[target];
  const Scalar focal = detail::focal_factor(one_minus_p, alpha);

  Scalar g(0);
  if (one_minus_p > Scalar(0)) {
    if (alpha != Scalar(0)) g -= alpha * pow(one_minus_p, alpha - Scalar(1)) * p * ce;
    if (!floored) g -= focal;
  }

  Vector<Scalar> dir = -probs;
  dir[target] = one_minus_p;
  return {w * (focal * ce), w * (g * dir)};
}

/// Mean loss over a batch; rows of `logits` are proposals. The divisor is
/// the proposal count, not the weight mass.
template <typename Derived>
typename Derived::Scalar batch_loss(const Eigen::MatrixBase<Derived>& logits,
                                    std::span<const Eigen::Index> targets,
                                    const LossConfig<typename Derived::Scalar>& cfg) {
  using Scalar = typename Derived::Scalar;
  if (logits.rows() == 0) throw Error(ErrorKind::InvalidInput, "empty batch");
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw Error(ErrorKind::InvalidInput, "logit rows and targets differ in length");
  }
  Scalar total(0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    total += loss(softmax(logits.row(i).transpose()), targets[i], cfg);
  }
  return total / Scalar(logits.rows());
}

template <typename Scalar>
struct BatchLossAndGrad {
  Scalar value;
  Matrix<Scalar> gradient;  // same shape as the logits
};

/// batch_loss() together with its gradient with respect to every logit.
template <typename Derived>
BatchLossAndGrad<typename Derived::Scalar> batch_loss_and_grad(
    const Eigen::MatrixBase<Derived>& logits, std::span<const Eigen::Index> targets,
    const LossConfig<typename Derived::Scalar>& cfg) {
  using Scalar = typename Derived::Scalar;
  if (logits.rows() == 0) throw Error(ErrorKind::InvalidInput, "empty batch");
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw Error(ErrorKind::InvalidInput, "logit rows and targets differ in length");
  }
  const Scalar n = Scalar(logits.rows());
  BatchLossAndGrad<Scalar> out{Scalar(0), Matrix<Scalar>(logits.rows(), logits.cols())};
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto lg = loss_and_grad(logits.row(i).transpose(), targets[i], cfg);
    out.value += lg.value;
    out.gradient.row(i) = lg.gradient.transpose() / n;
  }
  out.value /= n;
  return out;
}

}  // namespace wce
