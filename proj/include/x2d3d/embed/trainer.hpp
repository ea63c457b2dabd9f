#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "x2d3d/embed/adam.hpp"
#include "x2d3d/embed/image_embedder.hpp"
#include "x2d3d/embed/loss.hpp"
#include "x2d3d/embed/point_embedder.hpp"

namespace x2d3d {

/// Anchor patch with a matching (positive) and a non-matching (negative)
/// point volume. Non-owning.
struct Triplet {
  const Patch* anchor = nullptr;
  const LocalVolume* positive = nullptr;
  const LocalVolume* negative = nullptr;
};

struct TrainingPair {
  Patch patch;
  LocalVolume volume;
  int keypoint_id = 0;  // pairs sharing an id show the same 3D keypoint
};

struct TrainConfig {
  double alpha = 5.0;
  AdamConfig adam;
  int batch_size = 8;
  int epochs = 50;
  std::uint64_t seed = 1;
  ImageNetConfig image;
  PointNetConfig point;

  int dim() const { return image.dim; }

  void validate() const {
    if (!(alpha > 0.0) || !(adam.learning_rate > 0.0)) throw Error(ErrorCode::kConfigInvalid, "alpha and lr must be positive");
    if (image.dim != point.dim) throw Error(ErrorCode::kConfigInvalid, "branches disagree on descriptor dimension");
    if (batch_size < 1 || epochs < 0) throw Error(ErrorCode::kConfigInvalid, "bad batch size or epoch count");
  }
};

struct BatchGradients {
  double loss = 0.0;
  ParamSet image;
  ParamSet point;
};

/// Per-triplet forward pass plus the loss evaluated on it.
inline double forward_loss(const ImageEmbedder& g, const PointEmbedder& f, const Triplet& t, double alpha) {
  return triplet_loss(g.embed(*t.anchor), f.embed(*t.positive), f.embed(*t.negative), alpha);
}

/// Mean triplet loss over `batch` and its exact gradient with respect to
/// every parameter of both branches (triplets reduced in batch order).
inline BatchGradients backward(const ImageEmbedder& g, const PointEmbedder& f, std::span<const Triplet> batch,
                               double alpha) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyInput, "empty batch");
  BatchGradients out{0.0, zeros_like(g.params()), zeros_like(f.params())};
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  ImageEmbedder::Cache ca;
  PointEmbedder::Cache cp, cn;
  for (const auto& t : batch) {
    const Descriptor a = g.forward(t.anchor->pixels, &ca);
    const Descriptor p = f.forward(t.positive->points, &cp);
    const Descriptor n = f.forward(t.negative->points, &cn);
    const TripletLossGrad lg = triplet_loss_grad(a.values, p.values, n.values, alpha);
    out.loss += lg.loss * inv_b;
    g.backward(ca, lg.d_anchor * inv_b, out.image);
    f.backward(cp, lg.d_positive * inv_b, out.point);
    f.backward(cn, lg.d_negative * inv_b, out.point);
  }
  for (const ParamSet* set : {&out.image, &out.point}) {
    for (const auto& t : *set) {
      if (!t.value.all_finite()) throw Error(ErrorCode::kNonFiniteGradient, t.name);
    }
  }
  return out;
}

struct TrainResult {
  ImageEmbedder image;
  PointEmbedder point;
  std::vector<double> loss_history;  // mean training loss of each epoch
  double initial_loss = 0.0;         // mean loss of the first epoch's triplets before any update
};

/// Negative pair index for every pair: uniform over pairs of a different keypoint.
inline std::vector<std::size_t> sample_negatives(const std::vector<int>& keypoint_ids, Rng& rng) {
  const std::size_t n = keypoint_ids.size();
  std::vector<std::size_t> neg(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j;
    do {
      j = uniform_index(rng, n);
    } while (keypoint_ids[j] == keypoint_ids[i]);
    neg[i] = j;
  }
  return neg;
}

inline void require_two_keypoints(const std::vector<int>& ids) {
  if (ids.size() < 2 || std::all_of(ids.begin(), ids.end(), [&](int id) { return id == ids.front(); })) {
    throw Error(ErrorCode::kDatasetTooSmall, "need at least two pairs from two distinct keypoints");
  }
}

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

inline TrainResult train(const std::vector<TrainingPair>& pairs, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  std::vector<int> ids;
  ids.reserve(pairs.size());
  for (const auto& p : pairs) ids.push_back(p.keypoint_id);
  require_two_keypoints(ids);

  TrainResult result{ImageEmbedder(cfg.image, derive_seed(cfg.seed, 1)), PointEmbedder(cfg.point, derive_seed(cfg.seed, 2)),
                     {}, 0.0};
  AdamState state_i = AdamState::for_params(result.image.params());
  AdamState state_p = AdamState::for_params(result.point.params());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, 0xe90c, static_cast<std::uint64_t>(epoch));
    const std::vector<std::size_t> neg = sample_negatives(ids, rng);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Triplet> triplets;
    triplets.reserve(order.size());
    for (auto i : order) triplets.push_back({&pairs[i].patch, &pairs[i].volume, &pairs[neg[i]].volume});

    if (epoch == 0) {
      double sum = 0.0;
      for (const auto& t : triplets) sum += forward_loss(result.image, result.point, t, cfg.alpha);
      result.initial_loss = sum / static_cast<double>(triplets.size());
    }

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < triplets.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), triplets.size() - start);
      const std::span<const Triplet> batch(triplets.data() + start, len);
      const BatchGradients grads = backward(result.image, result.point, batch, cfg.alpha);
      epoch_loss += grads.loss * static_cast<double>(len);
      adam_step(result.image.params(), grads.image, state_i, cfg.adam);
      adam_step(result.point.params(), grads.point, state_p, cfg.adam);
    }
    epoch_loss /= static_cast<double>(triplets.size());
    result.loss_history.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return result;
}

}  // namespace x2d3d
