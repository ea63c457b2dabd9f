#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "x2d3d/detect2d/patch.hpp"
#include "x2d3d/embed/layers.hpp"

namespace x2d3d {

/// Image branch: three {3x3 conv, ReLU, 2x2 average pool} blocks, global
/// average pooling, then affine -> ReLU -> affine and L2 normalization.
struct ImageNetConfig {
  int input_side = kPatchSide;
  std::array<int, 3> channels{16, 32, 64};
  int hidden = 64;
  int dim = 128;
};

class ImageEmbedder {
 public:
  static constexpr int kBlocks = 3;

  struct Cache {
    std::array<RowMatrix, kBlocks> cols;
    std::array<RowMatrix, kBlocks> pre;
    std::array<int, kBlocks> side{};
    Eigen::VectorXd pooled, z1, h1, v, y;
    double norm = 0.0;
  };

  ImageEmbedder() = default;

  ImageEmbedder(const ImageNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.input_side % 8 != 0 || cfg.input_side < 8) {
      throw Error(ErrorCode::kConfigInvalid, "image input side must be a positive multiple of 8");
    }
    Rng rng = make_rng(seed, 0x1a6e);
    int cin = 1;
    for (int b = 0; b < kBlocks; ++b) {
      const int cout = cfg.channels[b];
      const std::string name = "image.conv" + std::to_string(b + 1);
      params_.push_back({name + ".weight", kaiming_uniform({cout, cin, 3, 3}, cin * 9, rng)});
      params_.push_back({name + ".bias", Tensor({cout})});
      cin = cout;
    }
    params_.push_back({"image.fc1.weight", kaiming_uniform({cfg.hidden, cin}, cin, rng)});
    params_.push_back({"image.fc1.bias", Tensor({cfg.hidden})});
    params_.push_back({"image.fc2.weight", kaiming_uniform({cfg.dim, cfg.hidden}, cfg.hidden, rng)});
    params_.push_back({"image.fc2.bias", Tensor({cfg.dim})});
  }

  /// Rebuilds the network from stored tensors; the architecture is read off
  /// the tensor shapes. Input side is not encoded in the weights.
  static ImageEmbedder from_params(ParamSet params, int input_side = kPatchSide) {
    if (params.size() != 2 * kBlocks + 4) throw Error(ErrorCode::kShapeMismatch, "unexpected image tensor count");
    ImageEmbedder e;
    e.cfg_.input_side = input_side;
    for (int b = 0; b < kBlocks; ++b) e.cfg_.channels[b] = params[2 * b].value.shape.at(0);
    e.cfg_.hidden = params[2 * kBlocks].value.shape.at(0);
    e.cfg_.dim = params[2 * kBlocks + 2].value.shape.at(0);
    e.params_ = std::move(params);
    check_same_shapes(e.params_, ImageEmbedder(e.cfg_, 0).params_);
    return e;
  }

  const ImageNetConfig& config() const { return cfg_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  Descriptor embed(const Patch& patch) const { return forward(patch.pixels, nullptr); }

  Descriptor forward(const GrayImage& pixels, Cache* cache) const {
    if (pixels.width != cfg_.input_side || pixels.height != cfg_.input_side) {
      throw Error(ErrorCode::kShapeMismatch, "patch size does not match the image branch input");
    }
    Cache local;
    Cache& c = cache ? *cache : local;
    int side = cfg_.input_side;
    RowMatrix x = ConstRowMatrixMap(pixels.data.data(), 1, static_cast<Eigen::Index>(pixels.data.size()));
    check_finite(x.allFinite(), "input");
    for (int b = 0; b < kBlocks; ++b) {
      c.side[b] = side;
      c.cols[b] = layers::im2col3x3(x, side, side);
      const auto w = params_[2 * b].value.matrix();
      const auto bias = params_[2 * b + 1].value.vector();
      c.pre[b].noalias() = w * c.cols[b];
      c.pre[b].colwise() += bias;
      RowMatrix act = c.pre[b].cwiseMax(0.0);
      x = layers::avgpool2(act, side, side);
      side /= 2;
      check_finite(x.allFinite(), "conv block");
    }
    c.pooled = x.rowwise().mean();
    c.z1 = fc_w(0) * c.pooled + fc_b(0);
    c.h1 = c.z1.cwiseMax(0.0);
    c.v = fc_w(1) * c.h1 + fc_b(1);
    check_finite(c.v.allFinite(), "head");
    c.y = layers::l2_normalize(c.v, c.norm);
    return {c.y};
  }

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(descriptor).
  void backward(const Cache& c, const Eigen::VectorXd& d_desc, ParamSet& grads) const {
    const Eigen::VectorXd dv = layers::l2_normalize_backward(c.y, c.norm, d_desc);
    const int fc = 2 * kBlocks;
    grads[fc + 2].value.matrix().noalias() += dv * c.h1.transpose();
    grads[fc + 3].value.vector() += dv;
    Eigen::VectorXd dz1 = fc_w(1).transpose() * dv;
    for (Eigen::Index i = 0; i < dz1.size(); ++i)
      if (!(c.z1(i) > 0.0)) dz1(i) = 0.0;
    grads[fc].value.matrix().noalias() += dz1 * c.pooled.transpose();
    grads[fc + 1].value.vector() += dz1;
    const Eigen::VectorXd dpooled = fc_w(0).transpose() * dz1;

    const int last_side = c.side[kBlocks - 1] / 2;
    const auto hw = static_cast<Eigen::Index>(last_side) * last_side;
    RowMatrix dx = (dpooled / static_cast<double>(hw)).replicate(1, hw);
    for (int b = kBlocks - 1; b >= 0; --b) {
      const int side = c.side[b];
      RowMatrix dpre = layers::avgpool2_backward(dx, side, side);
      dpre.array() *= (c.pre[b].array() > 0.0).cast<double>();
      grads[2 * b].value.matrix().noalias() += dpre * c.cols[b].transpose();
      grads[2 * b + 1].value.vector() += dpre.rowwise().sum();
      if (b > 0) {
        const auto w = params_[2 * b].value.matrix();
        RowMatrix dcols = w.transpose() * dpre;
        dx = layers::col2im3x3(dcols, static_cast<int>(w.cols() / 9), side, side);
      }
    }
  }

 private:
  ConstRowMatrixMap fc_w(int i) const { return params_[2 * kBlocks + 2 * i].value.matrix(); }
  Eigen::Map<const Eigen::VectorXd> fc_b(int i) const { return params_[2 * kBlocks + 2 * i + 1].value.vector(); }

  static void check_finite(bool ok, const char* where) {
    if (!ok) throw Error(ErrorCode::kNonFiniteActivation, std::string("image branch, ") + where);
  }

  ImageNetConfig cfg_;
  ParamSet params_;
};

}  // namespace x2d3d
