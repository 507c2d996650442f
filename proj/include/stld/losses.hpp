#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stld/common.hpp"
#include "stld/heatmap.hpp"

namespace stld {

template <typename Scalar>
struct LossGradT {
  Scalar loss = Scalar(0);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> grad;
};
using LossGrad = LossGradT<double>;

/// Mean over elements of |e|^p / p with e = pred - target, and its gradient
/// sign(e) |e|^(p-1) / count. For p = 1 the subgradient at e = 0 is 0.
/// Targets are expected in normalized units so that |e| <= 1.
template <typename Derived, typename OtherDerived>
LossGradT<typename Derived::Scalar> lp_loss(const Eigen::MatrixBase<Derived>& pred,
                                            const Eigen::MatrixBase<OtherDerived>& target,
                                            typename Derived::Scalar p) {
  using Scalar = typename Derived::Scalar;
  require(p >= Scalar(1), "lp_loss: p must be >= 1");
  require(pred.size() == target.size(), "lp_loss: length mismatch");
  require(pred.size() > 0, "lp_loss: empty input");
  const auto n = static_cast<Scalar>(pred.size());
  LossGradT<Scalar> out;
  out.grad.resize(pred.size());
  Scalar sum = Scalar(0);
  for (Index i = 0; i < pred.size(); ++i) {
    const Scalar e = pred.reshaped()(i) - target.reshaped()(i);
    const Scalar a = std::abs(e);
    if (p == Scalar(1)) {
      sum += a;
      out.grad(i) = (e > 0 ? Scalar(1) : (e < 0 ? Scalar(-1) : Scalar(0))) / n;
    } else if (p == Scalar(2)) {
      sum += Scalar(0.5) * a * a;
      out.grad(i) = e / n;
    } else {
      sum += std::pow(a, p) / p;
      const Scalar w = a == Scalar(0) ? Scalar(0) : std::pow(a, p - Scalar(1));
      out.grad(i) = (e > 0 ? w : -w) / n;
    }
  }
  out.loss = sum / n;
  return out;
}

/// Mean over cells of (pred - target)^2 / 2; gradient (pred - target) / count.
template <typename Scalar>
LossGradT<Scalar> heatmap_mse_loss(const HeatmapStackT<Scalar>& pred, const HeatmapStackT<Scalar>& target) {
  require(pred.same_shape(target), "heatmap_mse_loss: shape mismatch");
  require(pred.values.size() > 0, "heatmap_mse_loss: empty stack");
  const auto n = static_cast<Scalar>(pred.values.size());
  LossGradT<Scalar> out;
  const auto diff = (pred.values - target.values).eval();
  out.loss = Scalar(0.5) * diff.squaredNorm() / n;
  out.grad = diff / n;
  return out;
}

enum class Pathway { Heatmap, Coordinate };

std::string to_string(Pathway p);
Pathway pathway_from_string(const std::string& s);

/// Per-round regression granularity on pseudo-labels, for rounds t = 2..T.
/// Heatmap: Gaussian sigma. Coordinate: the loss power p.
struct Curriculum {
  Pathway kind = Pathway::Heatmap;
  std::vector<double> values{2.2, 1.8, 1.5};
  double sigma_std = 1.5;
  double lambda_sub = 0.1;

  int rounds() const { return static_cast<int>(values.size()) + 1; }
  /// Value used for standard (supervised) regression on this pathway.
  double standard() const { return kind == Pathway::Heatmap ? sigma_std : 1.0; }

  /// Throws unless values strictly decrease to the standard value.
  void validate() const;
  /// True when every value equals the standard value (no coarse-to-fine).
  bool degenerate() const;
  /// Like validate() but also accepts a degenerate constant schedule.
  void validate_allow_degenerate() const;

  static Curriculum heatmap_default();
  static Curriculum coordinate_default();
};

/// Granularity at round t (2 <= t <= T).
double granularity_at(const Curriculum& curr, int t);

/// Pseudo-term weight: 0 at t = 1, lambda_sub for 1 < t < T, 1 at t = T.
double lambda_weight(int t, int T, double lambda_sub);

}  // namespace stld
