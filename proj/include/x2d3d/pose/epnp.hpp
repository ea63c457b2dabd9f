#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "x2d3d/core/geometry.hpp"

namespace x2d3d {

struct Correspondence {
  Pixel2 pixel = Pixel2::Zero();
  Point3 point = Point3::Zero();  // map frame
};

/// Pixel distance between the projection of corr.point and corr.pixel;
/// +infinity when the point is behind the camera.
inline double reprojection_error(const PoseSE3& pose, const Correspondence& corr, const CameraIntrinsics& k) {
  const auto px = project(corr.point, pose, k);
  if (!px) return std::numeric_limits<double>::infinity();
  return (*px - corr.pixel).norm();
}

struct EpnpOptions {
  int gauss_newton_iterations = 10;
  // sigma3 / sigma1 of the centered points below which the planar
  // (three control point) parameterization is also tried.
  double planar_ratio = 0.05;
  // sigma2 / sigma1 below which the points count as collinear.
  double collinear_ratio = 1e-6;
};

namespace detail {

inline Matrix3 horn_rotation(const std::vector<Point3>& from, const std::vector<Point3>& to) {
  Point3 ca = Point3::Zero(), cb = Point3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) ca += from[i], cb += to[i];
  ca /= static_cast<double>(from.size());
  cb /= static_cast<double>(to.size());
  Matrix3 s = Matrix3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) s += (from[i] - ca) * (to[i] - cb).transpose();
  const double sxx = s(0, 0), sxy = s(0, 1), sxz = s(0, 2), syx = s(1, 0), syy = s(1, 1), syz = s(1, 2), szx = s(2, 0),
               szy = s(2, 1), szz = s(2, 2);
  Eigen::Matrix4d n;
  n << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,  //
      syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,   //
      szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,  //
      sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(n);
  const Eigen::Vector4d q = es.eigenvectors().col(3);
  return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).normalized().toRotationMatrix();
}

/// Rigid transform mapping `from` onto `to` (Horn's quaternion method).
inline PoseSE3 horn_align(const std::vector<Point3>& from, const std::vector<Point3>& to) {
  const Matrix3 r = horn_rotation(from, to);
  Point3 ca = Point3::Zero(), cb = Point3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) ca += from[i], cb += to[i];
  ca /= static_cast<double>(from.size());
  cb /= static_cast<double>(to.size());
  return {r, cb - r * ca};
}

struct EpnpCandidate {
  PoseSE3 pose;
  bool valid = false;
  bool centroid_behind = false;
  int behind = 0;      // points that project behind the camera
  double error = 0.0;  // summed reprojection error of the other points

  bool better_than(const EpnpCandidate& o) const {
    if (valid != o.valid) return valid;
    if (behind != o.behind) return behind < o.behind;
    return error < o.error;
  }
};

// Bounded-size storage: at most 4 control points, so 12 unknowns, 6
// control point pairs and 10 beta products. Nothing below touches the heap
// except the per-point barycentric table.
using MatN = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 12, 12>;
using VecN = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 12, 1>;
using MatL = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 6, 10>;
using VecP = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 6, 1>;
using VecB = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 4, 1>;

class EpnpSolver {
 public:
  EpnpSolver(std::span<const Correspondence> corrs, const CameraIntrinsics& k, std::vector<Point3> control,
             const EpnpOptions& opt)
      : corrs_(corrs), k_(k), cw_(std::move(control)), opt_(opt), nc_(static_cast<int>(cw_.size())), nv_(nc_) {}

  EpnpCandidate solve() {
    if (!compute_alphas()) return {};
    const int n = static_cast<int>(corrs_.size());
    const int cols = 3 * nc_;
    // M^T M accumulated row pair by row pair of the 2n x 3nc projection system.
    MatN mtm = MatN::Zero(cols, cols);
    VecN r1(cols), r2(cols);
    for (int i = 0; i < n; ++i) {
      const double u = corrs_[i].pixel.x(), v = corrs_[i].pixel.y();
      for (int j = 0; j < nc_; ++j) {
        const double a = alphas_(i, j);
        r1.segment<3>(3 * j) << a * k_.fx, 0.0, a * (k_.cx - u);
        r2.segment<3>(3 * j) << 0.0, a * k_.fy, a * (k_.cy - v);
      }
      mtm.noalias() += r1 * r1.transpose();
      mtm.noalias() += r2 * r2.transpose();
    }
    Eigen::SelfAdjointEigenSolver<MatN> es(mtm);
    null_ = es.eigenvectors().leftCols(nv_);  // ascending eigenvalues

    build_constraints();
    EpnpCandidate best;
    for (int case_n = 1; case_n <= (nc_ == 4 ? 4 : 2); ++case_n) {
      VecB beta = case_n == 4 ? relinearized_betas() : initial_betas(case_n);
      if (!beta.allFinite()) continue;
      gauss_newton(beta);
      const EpnpCandidate c = pose_from_betas(beta);
      if (c.better_than(best)) best = c;
    }
    return best;
  }

 private:
  bool compute_alphas() {
    const int n = static_cast<int>(corrs_.size());
    alphas_.resize(n, nc_);
    if (nc_ == 4) {
      Matrix3 basis;
      for (int j = 0; j < 3; ++j) basis.col(j) = cw_[j + 1] - cw_[0];
      const Eigen::FullPivLU<Matrix3> lu(basis);
      if (!lu.isInvertible()) return false;
      const Matrix3 inv = lu.inverse();
      for (int i = 0; i < n; ++i) {
        const Point3 a = inv * (corrs_[i].point - cw_[0]);
        alphas_.row(i) << 1.0 - a.sum(), a(0), a(1), a(2);
      }
    } else {
      Eigen::Matrix<double, 3, 2> basis;
      basis.col(0) = cw_[1] - cw_[0];
      basis.col(1) = cw_[2] - cw_[0];
      const Eigen::Matrix2d gram = basis.transpose() * basis;
      if (!(std::abs(gram.determinant()) > 0.0)) return false;
      const Eigen::Matrix<double, 2, 3> pinv = gram.inverse() * basis.transpose();
      for (int i = 0; i < n; ++i) {
        const Eigen::Vector2d a = pinv * (corrs_[i].point - cw_[0]);
        alphas_.row(i) << 1.0 - a.sum(), a(0), a(1);
      }
    }
    return alphas_.allFinite();
  }

  // Distance constraints |c_a - c_b|^2 = rho over control point pairs,
  // linear in the products beta_p * beta_q (p <= q).
  void build_constraints() {
    np_ = 0;
    for (int a = 0; a < nc_; ++a)
      for (int b = a + 1; b < nc_; ++b) pairs_[np_++] = {a, b};
    nb_ = 0;
    for (int p = 0; p < nv_; ++p)
      for (int q = p; q < nv_; ++q) {
        product_index_[p][q] = product_index_[q][p] = nb_;
        products_[nb_++] = {p, q};
      }
    l_.resize(np_, nb_);
    rho_.resize(np_);
    for (int r = 0; r < np_; ++r) {
      const auto [a, b] = pairs_[r];
      std::array<Eigen::Vector3d, 4> dv;
      for (int p = 0; p < nv_; ++p) dv[p] = null_.col(p).segment<3>(3 * a) - null_.col(p).segment<3>(3 * b);
      for (int c = 0; c < nb_; ++c) {
        const auto [p, q] = products_[c];
        l_(r, c) = (p == q ? 1.0 : 2.0) * dv[p].dot(dv[q]);
      }
      rho_(r) = (cw_[a] - cw_[b]).squaredNorm();
    }
  }

  VecB betas_from_products(double b11, const auto& b01) const {
    VecB beta = VecB::Zero(nv_);
    beta(0) = std::sqrt(std::abs(b11));
    if (!(beta(0) > 0.0)) return VecB::Constant(nv_, std::nan(""));
    // Products are invariant to a global sign flip; keep beta_0 positive.
    const double s = b11 < 0 ? -1.0 : 1.0;
    for (int p = 1; p < nv_; ++p) beta(p) = s * b01(p) / beta(0);
    return beta;
  }

  // Linearized solve over the products of the first case_n betas.
  VecB initial_betas(int case_n) const {
    int cols[6];
    int m = 0;
    for (int p = 0; p < case_n; ++p)
      for (int q = p; q < case_n; ++q) cols[m++] = product_index_[p][q];
    if (np_ < m) return VecB::Constant(nv_, std::nan(""));
    MatL a(np_, m);
    for (int c = 0; c < m; ++c) a.col(c) = l_.col(cols[c]);
    const VecP b = a.colPivHouseholderQr().solve(rho_);
    VecB b01 = VecB::Zero(nv_);
    for (int p = 1; p < case_n; ++p) b01(p) = b(p);  // cols[p] is the (0, p) product
    return betas_from_products(b(0), b01);
  }

  // Four null vectors: L b = rho leaves a 4-dimensional family
  // b = b0 + K lambda; the 2x2 minors of the rank-one matrix beta beta^T
  // give equations linear in lambda and its quadratic monomials.
  VecB relinearized_betas() const {
    using Mat10 = Eigen::Matrix<double, 10, 10>;
    const Eigen::Matrix<double, 10, 6> lt = l_.transpose();
    const Eigen::HouseholderQR<Eigen::Matrix<double, 10, 6>> qr(lt);
    const Mat10 q = qr.householderQ();
    const Eigen::Matrix<double, 6, 6> r = qr.matrixQR().topRows<6>().triangularView<Eigen::Upper>();
    if (!(std::abs(r.diagonal().prod()) > 0.0)) return VecB::Constant(nv_, std::nan(""));
    // Minimum-norm particular solution and kernel basis.
    const Eigen::Matrix<double, 6, 1> y = r.transpose().triangularView<Eigen::Lower>().solve(Eigen::Matrix<double, 6, 1>(rho_));
    const Eigen::Matrix<double, 10, 1> b0 = q.leftCols<6>() * y;
    const Eigen::Matrix<double, 10, 4> kern = q.rightCols<4>();

    Eigen::Matrix<double, 14, 14> ata = Eigen::Matrix<double, 14, 14>::Zero();
    Eigen::Matrix<double, 14, 1> atb = Eigen::Matrix<double, 14, 1>::Zero();
    Eigen::Matrix<double, 14, 1> row;
    for (int r1 = 0; r1 < 4; ++r1)
      for (int r2 = r1 + 1; r2 < 4; ++r2)
        for (int c1 = 0; c1 < 4; ++c1)
          for (int c2 = c1 + 1; c2 < 4; ++c2) {
            // B(r1,c1) B(r2,c2) - B(r1,c2) B(r2,c1) = 0, unknowns
            // lambda_0..3 followed by lambda_i lambda_j (i <= j).
            row.setZero();
            double constant = 0.0;
            const int terms[2][2] = {{product_index_[r1][c1], product_index_[r2][c2]},
                                     {product_index_[r1][c2], product_index_[r2][c1]}};
            for (int t = 0; t < 2; ++t) {
              const int u = terms[t][0], v = terms[t][1];
              const double sgn = t == 0 ? 1.0 : -1.0;
              constant += sgn * b0(u) * b0(v);
              for (int k = 0; k < 4; ++k) row(k) += sgn * (b0(u) * kern(v, k) + b0(v) * kern(u, k));
              int m = 4;
              for (int i = 0; i < 4; ++i)
                for (int j = i; j < 4; ++j, ++m)
                  row(m) += sgn * (i == j ? kern(u, i) * kern(v, i) : kern(u, i) * kern(v, j) + kern(u, j) * kern(v, i));
            }
            ata.noalias() += row * row.transpose();
            atb -= constant * row;
          }
    const Eigen::Matrix<double, 14, 1> z = ata.ldlt().solve(atb);
    const Eigen::Matrix<double, 10, 1> b = b0 + kern * z.head<4>();
    VecB b01 = VecB::Zero(nv_);
    for (int p = 1; p < 4; ++p) b01(p) = b(product_index_[0][p]);
    return betas_from_products(b(product_index_[0][0]), b01);
  }

  void gauss_newton(VecB& beta) const {
    for (int it = 0; it < opt_.gauss_newton_iterations; ++it) {
      MatL jac = MatL::Zero(np_, nv_);
      VecP res(np_);
      for (int r = 0; r < np_; ++r) {
        double value = 0.0;
        for (int c = 0; c < nb_; ++c) {
          const auto [p, q] = products_[c];
          const double l = l_(r, c);
          value += l * beta(p) * beta(q);
          jac(r, p) += l * beta(q);
          jac(r, q) += l * beta(p);
        }
        res(r) = rho_(r) - value;
      }
      const VecB step = jac.colPivHouseholderQr().solve(res);
      if (!step.allFinite()) return;
      beta += step;
    }
  }

  EpnpCandidate pose_from_betas(const VecB& beta) const {
    const VecN x = null_ * beta;
    std::vector<Point3> cc(static_cast<std::size_t>(nc_));
    for (int j = 0; j < nc_; ++j) cc[j] = x.segment<3>(3 * j);
    EpnpCandidate out;
    if (!x.allFinite()) return out;
    // The null-space solution is defined up to sign; the control point
    // centroid (= point centroid) must end up in front of the camera.
    Point3 centroid_cam = Point3::Zero();
    for (const auto& c : cc) centroid_cam += c;
    if (centroid_cam.z() < 0)
      for (auto& c : cc) c = -c;
    out.pose = horn_align(cw_, cc);
    out.valid = out.pose.translation().allFinite();
    out.centroid_behind = out.pose(cw_[0]).z() <= kMinDepth;
    for (const auto& c : corrs_) {
      const double e = reprojection_error(out.pose, c, k_);
      if (std::isfinite(e)) {
        out.error += e;
      } else {
        ++out.behind;
      }
    }
    return out;
  }

  std::span<const Correspondence> corrs_;
  CameraIntrinsics k_;
  std::vector<Point3> cw_;
  EpnpOptions opt_;
  int nc_;
  int nv_;
  int np_ = 0;
  int nb_ = 0;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> alphas_;
  MatN null_;
  MatL l_;
  VecP rho_;
  std::array<std::array<int, 2>, 6> pairs_{};
  std::array<std::array<int, 2>, 10> products_{};
  int product_index_[4][4] = {};
};

}  // namespace detail

/// Efficient PnP: world-to-camera pose from n >= 4 correspondences.
inline PoseSE3 epnp(std::span<const Correspondence> corrs, const CameraIntrinsics& k, const EpnpOptions& opt = {}) {
  if (corrs.size() < 4) throw Error(ErrorCode::kDegenerateConfiguration, "EPnP needs at least 4 correspondences");
  Point3 c0 = Point3::Zero();
  for (const auto& c : corrs) {
    if (!c.point.allFinite() || !c.pixel.allFinite()) throw Error(ErrorCode::kDegenerateConfiguration, "non-finite correspondence");
    c0 += c.point;
  }
  c0 /= static_cast<double>(corrs.size());
  Matrix3 scatter = Matrix3::Zero();
  for (const auto& c : corrs) scatter.noalias() += (c.point - c0) * (c.point - c0).transpose();
  // Singular values of the centered point matrix, descending, with their axes.
  const Eigen::SelfAdjointEigenSolver<Matrix3> pca(scatter);
  const Eigen::Vector3d sv = pca.eigenvalues().cwiseMax(0.0).cwiseSqrt().reverse();
  const Matrix3 axes = pca.eigenvectors().rowwise().reverse();
  if (!(sv(0) > 0.0) || sv(1) / sv(0) < opt.collinear_ratio) {
    throw Error(ErrorCode::kDegenerateConfiguration, "3D points are collinear");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(corrs.size()));

  detail::EpnpCandidate best;
  if (sv(2) / sv(0) >= opt.collinear_ratio) {
    std::vector<Point3> cw{c0};
    for (int i = 0; i < 3; ++i) cw.push_back(c0 + sv(i) * scale * axes.col(i));
    best = detail::EpnpSolver(corrs, k, std::move(cw), opt).solve();
  }
  if (sv(2) / sv(0) < opt.planar_ratio) {
    std::vector<Point3> cw{c0};
    for (int i = 0; i < 2; ++i) cw.push_back(c0 + sv(i) * scale * axes.col(i));
    const auto planar = detail::EpnpSolver(corrs, k, std::move(cw), opt).solve();
    if (planar.better_than(best)) best = planar;
  }
  if (!best.valid) throw Error(ErrorCode::kDegenerateConfiguration, "rank-deficient EPnP system");
  if (best.centroid_behind) throw Error(ErrorCode::kBehindCamera, "recovered pose places the points behind the camera");
  return best.pose;
}

inline PoseSE3 epnp(const std::vector<Correspondence>& corrs, const CameraIntrinsics& k, const EpnpOptions& opt = {}) {
  return epnp(std::span<const Correspondence>(corrs), k, opt);
}

}  // namespace x2d3d
