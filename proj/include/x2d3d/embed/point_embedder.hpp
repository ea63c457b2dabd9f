#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "x2d3d/detect3d/volume.hpp"
#include "x2d3d/embed/layers.hpp"

namespace x2d3d {

/// Point branch: shared per-point affine+ReLU layers, symmetric max pool over
/// points, then affine -> ReLU -> affine and L2 normalization.
struct PointNetConfig {
  std::array<int, 3> widths{32, 64, 128};
  int hidden = 64;
  int dim = 128;
};

class PointEmbedder {
 public:
  static constexpr int kLayers = 3;

  struct Cache {
    RowMatrix input;                          // [n, 3]
    std::array<RowMatrix, kLayers> act;       // post-ReLU per-point features
    std::vector<Eigen::Index> argmax;         // winning point per pooled feature
    Eigen::VectorXd pooled, z1, h1, v, y;
    double norm = 0.0;
  };

  PointEmbedder() = default;

  PointEmbedder(const PointNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng = make_rng(seed, 0x9017);
    int in = 3;
    for (int l = 0; l < kLayers; ++l) {
      const std::string name = "point.mlp" + std::to_string(l + 1);
      params_.push_back({name + ".weight", kaiming_uniform({cfg.widths[l], in}, in, rng)});
      params_.push_back({name + ".bias", Tensor({cfg.widths[l]})});
      in = cfg.widths[l];
    }
    params_.push_back({"point.fc1.weight", kaiming_uniform({cfg.hidden, in}, in, rng)});
    params_.push_back({"point.fc1.bias", Tensor({cfg.hidden})});
    params_.push_back({"point.fc2.weight", kaiming_uniform({cfg.dim, cfg.hidden}, cfg.hidden, rng)});
    params_.push_back({"point.fc2.bias", Tensor({cfg.dim})});
  }

  static PointEmbedder from_params(ParamSet params) {
    if (params.size() != 2 * kLayers + 4) throw Error(ErrorCode::kShapeMismatch, "unexpected point tensor count");
    PointEmbedder e;
    for (int l = 0; l < kLayers; ++l) e.cfg_.widths[l] = params[2 * l].value.shape.at(0);
    e.cfg_.hidden = params[2 * kLayers].value.shape.at(0);
    e.cfg_.dim = params[2 * kLayers + 2].value.shape.at(0);
    e.params_ = std::move(params);
    check_same_shapes(e.params_, PointEmbedder(e.cfg_, 0).params_);
    return e;
  }

  const PointNetConfig& config() const { return cfg_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  Descriptor embed(const LocalVolume& vol) const { return forward(vol.points, nullptr); }

  Descriptor forward(const std::vector<Point3>& points, Cache* cache) const {
    if (points.empty()) throw Error(ErrorCode::kShapeMismatch, "empty point volume");
    Cache local;
    Cache& c = cache ? *cache : local;
    const auto n = static_cast<Eigen::Index>(points.size());
    c.input.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) c.input.row(i) = points[static_cast<std::size_t>(i)].transpose();
    if (!c.input.allFinite()) throw Error(ErrorCode::kNonFiniteActivation, "point branch, input");

    const RowMatrix* in = &c.input;
    for (int l = 0; l < kLayers; ++l) {
      shared_layer(*in, params_[2 * l].value, params_[2 * l + 1].value, c.act[l]);
      in = &c.act[l];
    }
    const RowMatrix& top = c.act[kLayers - 1];
    c.pooled.resize(top.cols());
    c.argmax.assign(static_cast<std::size_t>(top.cols()), 0);
    for (Eigen::Index j = 0; j < top.cols(); ++j) {
      Eigen::Index best = 0;
      for (Eigen::Index i = 1; i < n; ++i)
        if (top(i, j) > top(best, j)) best = i;
      c.argmax[static_cast<std::size_t>(j)] = best;
      c.pooled(j) = top(best, j);
    }
    c.z1 = fc_w(0) * c.pooled + fc_b(0);
    c.h1 = c.z1.cwiseMax(0.0);
    c.v = fc_w(1) * c.h1 + fc_b(1);
    if (!c.v.allFinite() || !c.pooled.allFinite()) throw Error(ErrorCode::kNonFiniteActivation, "point branch, head");
    c.y = layers::l2_normalize(c.v, c.norm);
    return {c.y};
  }

  void backward(const Cache& c, const Eigen::VectorXd& d_desc, ParamSet& grads) const {
    const Eigen::VectorXd dv = layers::l2_normalize_backward(c.y, c.norm, d_desc);
    const int fc = 2 * kLayers;
    grads[fc + 2].value.matrix().noalias() += dv * c.h1.transpose();
    grads[fc + 3].value.vector() += dv;
    Eigen::VectorXd dz1 = fc_w(1).transpose() * dv;
    for (Eigen::Index i = 0; i < dz1.size(); ++i)
      if (!(c.z1(i) > 0.0)) dz1(i) = 0.0;
    grads[fc].value.matrix().noalias() += dz1 * c.pooled.transpose();
    grads[fc + 1].value.vector() += dz1;
    const Eigen::VectorXd dpooled = fc_w(0).transpose() * dz1;

    // Only points that won the max pool receive gradient.
    std::vector<Eigen::Index> rows(c.argmax);
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    const auto r = static_cast<Eigen::Index>(rows.size());
    auto gather = [&](const RowMatrix& m) {
      RowMatrix out(r, m.cols());
      for (Eigen::Index k = 0; k < r; ++k) out.row(k) = m.row(rows[static_cast<std::size_t>(k)]);
      return out;
    };
    RowMatrix dact = RowMatrix::Zero(r, c.act[kLayers - 1].cols());
    for (std::size_t j = 0; j < c.argmax.size(); ++j) {
      const auto k = std::lower_bound(rows.begin(), rows.end(), c.argmax[j]) - rows.begin();
      dact(k, static_cast<Eigen::Index>(j)) += dpooled(static_cast<Eigen::Index>(j));
    }
    for (int l = kLayers - 1; l >= 0; --l) {
      const RowMatrix act = gather(c.act[l]);
      dact.array() *= (act.array() > 0.0).cast<double>();
      const RowMatrix in = gather(l > 0 ? c.act[l - 1] : c.input);
      grads[2 * l].value.matrix().noalias() += dact.transpose() * in;
      grads[2 * l + 1].value.vector() += dact.colwise().sum().transpose();
      if (l > 0) dact = dact * params_[2 * l].value.matrix();
    }
  }

 private:
  // out[i, :] = relu(W in[i, :] + b), evaluated point by point with a fixed
  // summation order so each row depends only on its own input row.
  static void shared_layer(const RowMatrix& in, const Tensor& weight, const Tensor& bias, RowMatrix& out) {
    const auto n = in.rows();
    const int k_in = weight.shape[1], k_out = weight.shape[0];
    RowMatrix wt = weight.matrix().transpose();  // [k_in, k_out]
    out.resize(n, k_out);
    for (Eigen::Index i = 0; i < n; ++i) {
      double* o = out.row(i).data();
      const double* x = in.row(i).data();
      for (int j = 0; j < k_out; ++j) o[j] = bias.data[static_cast<std::size_t>(j)];
      for (int k = 0; k < k_in; ++k) {
        const double a = x[k];
        const double* w = wt.row(k).data();
        for (int j = 0; j < k_out; ++j) o[j] += a * w[j];
      }
      for (int j = 0; j < k_out; ++j) o[j] = o[j] > 0.0 ? o[j] : 0.0;
    }
  }

  ConstRowMatrixMap fc_w(int i) const { return params_[2 * kLayers + 2 * i].value.matrix(); }
  Eigen::Map<const Eigen::VectorXd> fc_b(int i) const { return params_[2 * kLayers + 2 * i + 1].value.vector(); }

  PointNetConfig cfg_;
  ParamSet params_;
};

}  // namespace x2d3d
