#pragma once

#include <Eigen/Core>

#include "x2d3d/embed/tensor.hpp"

namespace x2d3d {

/// Unit-norm embedding vector.
struct Descriptor {
  Eigen::VectorXd values;

  int dim() const { return static_cast<int>(values.size()); }
};

namespace layers {

/// v / |v|; an exactly-zero vector maps to e1 (and its gradient is zero).
inline Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v, double& norm) {
  norm = v.norm();
  if (norm == 0.0) return Eigen::VectorXd::Unit(v.size(), 0);
  return v / norm;
}

inline Eigen::VectorXd l2_normalize_backward(const Eigen::VectorXd& y, double norm, const Eigen::VectorXd& dy) {
  if (norm == 0.0) return Eigen::VectorXd::Zero(y.size());
  return (dy - y * y.dot(dy)) / norm;
}

template <typename Derived>
void relu_in_place(Eigen::MatrixBase<Derived>& x) {
  x = x.cwiseMax(0.0);
}

/// 3x3 zero-padded patches of a [channels, h*w] feature map, laid out as
/// rows (channel, ky, kx) and columns (y, x).
inline RowMatrix im2col3x3(const RowMatrix& in, int h, int w) {
  const int cin = static_cast<int>(in.rows());
  RowMatrix cols = RowMatrix::Zero(cin * 9, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols.row(c * 9 + ky * 3 + kx).data();
        const double* src = in.row(c).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const int x_lo = std::max(0, 1 - kx), x_hi = std::min(w, w + 1 - kx);
          for (int x = x_lo; x < x_hi; ++x) dst[y * w + x] = src[sy * w + x + kx - 1];
        }
      }
    }
  }
  return cols;
}

inline RowMatrix col2im3x3(const RowMatrix& cols, int cin, int h, int w) {
  RowMatrix out = RowMatrix::Zero(cin, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < cin; ++c) {
    double* dst = out.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols.row(c * 9 + ky * 3 + kx).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const int x_lo = std::max(0, 1 - kx), x_hi = std::min(w, w + 1 - kx);
          for (int x = x_lo; x < x_hi; ++x) dst[sy * w + x + kx - 1] += src[y * w + x];
        }
      }
    }
  }
  return out;
}

/// 2x2 average pooling of a [channels, h*w] map (h, w even).
inline RowMatrix avgpool2(const RowMatrix& x, int h, int w) {
  const int oh = h / 2, ow = w / 2;
  RowMatrix out(x.rows(), static_cast<Eigen::Index>(oh) * ow);
  for (Eigen::Index c = 0; c < x.rows(); ++c) {
    const double* src = x.row(c).data();
    double* dst = out.row(c).data();
    for (int y = 0; y < oh; ++y) {
      const double* r0 = src + (2 * y) * w;
      const double* r1 = r0 + w;
      for (int xx = 0; xx < ow; ++xx) {
        dst[y * ow + xx] = 0.25 * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
      }
    }
  }
  return out;
}

inline RowMatrix avgpool2_backward(const RowMatrix& dy, int h, int w) {
  const int oh = h / 2, ow = w / 2;
  RowMatrix dx(dy.rows(), static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index c = 0; c < dy.rows(); ++c) {
    const double* src = dy.row(c).data();
    double* dst = dx.row(c).data();
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        const double g = 0.25 * src[y * ow + xx];
        double* r0 = dst + (2 * y) * w + 2 * xx;
        r0[0] = g;
        r0[1] = g;
        r0[w] = g;
        r0[w + 1] = g;
      }
    }
  }
  return dx;
}

}  // namespace layers
}  // namespace x2d3d
