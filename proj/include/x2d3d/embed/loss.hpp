#pragma once

#include <cmath>

#include "x2d3d/embed/layers.hpp"

namespace x2d3d {

/// ln(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// Logistic sigmoid, the derivative of softplus.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Weighted soft-margin triplet loss ln(1 + exp(alpha (d_pos - d_neg))).
inline double triplet_loss_from_distances(double d_pos, double d_neg, double alpha) {
  return softplus(alpha * (d_pos - d_neg));
}

inline double triplet_loss(const Descriptor& anchor, const Descriptor& pos, const Descriptor& neg, double alpha) {
  return triplet_loss_from_distances((anchor.values - pos.values).norm(), (anchor.values - neg.values).norm(), alpha);
}

struct TripletLossGrad {
  double loss = 0.0;
  double d_pos = 0.0;
  double d_neg = 0.0;
  Eigen::VectorXd d_anchor, d_positive, d_negative;
};

/// Loss and its gradient with respect to the three descriptors. The distance
/// gradient at exactly zero separation is taken as zero.
inline TripletLossGrad triplet_loss_grad(const Eigen::VectorXd& a, const Eigen::VectorXd& p, const Eigen::VectorXd& n,
                                         double alpha) {
  TripletLossGrad g;
  const Eigen::VectorXd ap = a - p, an = a - n;
  g.d_pos = ap.norm();
  g.d_neg = an.norm();
  const double d = g.d_pos - g.d_neg;
  g.loss = softplus(alpha * d);
  const double dl_dd = alpha * sigmoid(alpha * d);
  const Eigen::VectorXd u_pos = g.d_pos > 0.0 ? Eigen::VectorXd(ap / g.d_pos) : Eigen::VectorXd::Zero(a.size());
  const Eigen::VectorXd u_neg = g.d_neg > 0.0 ? Eigen::VectorXd(an / g.d_neg) : Eigen::VectorXd::Zero(a.size());
  g.d_anchor = dl_dd * (u_pos - u_neg);
  g.d_positive = -dl_dd * u_pos;
  g.d_negative = dl_dd * u_neg;
  return g;
}

}  // namespace x2d3d
