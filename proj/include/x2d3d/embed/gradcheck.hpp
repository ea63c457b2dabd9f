#pragma once

#include <cmath>
#include <cstdint>

#include "x2d3d/embed/trainer.hpp"

namespace x2d3d {

struct GradcheckConfig {
  std::uint64_t seed = 1;
  double alpha = 5.0;
  double step = 1e-5;         // central-difference step
  double denom_floor = 1e-6;  // keeps the relative error meaningful for near-zero entries
  ImageNetConfig image{8, {2, 3, 4}, 5, 4};
  PointNetConfig point{{4, 5, 6}, 5, 4};
  int volume_points = 16;
  bool corrupt_one_entry = false;  // fault injection: doubles one analytic entry
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

/// Relative disagreement between backward() and central finite differences
/// of the same mean loss, maximized over every parameter entry of both
/// branches and over `trials` random single-triplet batches.
inline GradcheckResult gradient_check(const GradcheckConfig& cfg, int trials) {
  GradcheckResult res;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng = make_rng(cfg.seed, 0x6c4e, static_cast<std::uint64_t>(trial));
    ImageEmbedder g(cfg.image, rng());
    PointEmbedder f(cfg.point, rng());
    // Random biases so that the check also exercises the bias paths.
    for (ParamSet* set : {&g.params(), &f.params()})
      for (auto& t : *set)
        if (t.value.shape.size() == 1)
          for (auto& v : t.value.data) v = uniform(rng, -0.1, 0.1);

    GrayImage raw(cfg.image.input_side, cfg.image.input_side);
    for (auto& v : raw.data) v = uniform(rng, 0.0, 1.0);
    const Patch patch = preprocess_patch(raw, {}, cfg.image.input_side);
    auto random_volume = [&] {
      LocalVolume vol;
      while (static_cast<int>(vol.points.size()) < cfg.volume_points) {
        const Point3 p(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
        if (p.norm() <= 1.0) vol.points.push_back(p);
      }
      vol.original_count = cfg.volume_points;
      return vol;
    };
    const LocalVolume pos = random_volume();
    const LocalVolume neg = random_volume();
    const Triplet t{&patch, &pos, &neg};
    const std::span<const Triplet> batch(&t, 1);

    BatchGradients analytic = backward(g, f, batch, cfg.alpha);
    if (cfg.corrupt_one_entry) {
      for (auto& v : analytic.image.back().value.data) {
        if (std::abs(v) > 1e-3) {
          v *= 2.0;
          break;
        }
      }
    }

    auto check_set = [&](ParamSet& params, const ParamSet& grads) {
      for (std::size_t ti = 0; ti < params.size(); ++ti) {
        auto& w = params[ti].value.data;
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double saved = w[i];
          w[i] = saved + cfg.step;
          const double up = forward_loss(g, f, t, cfg.alpha);
          w[i] = saved - cfg.step;
          const double down = forward_loss(g, f, t, cfg.alpha);
          w[i] = saved;
          const double numeric = (up - down) / (2.0 * cfg.step);
          const double a = grads[ti].value.data[i];
          const double denom = std::max({std::abs(a), std::abs(numeric), cfg.denom_floor});
          res.max_rel_error = std::max(res.max_rel_error, std::abs(a - numeric) / denom);
          ++res.entries;
        }
      }
    };
    check_set(g.params(), analytic.image);
    check_set(f.params(), analytic.point);
  }
  return res;
}

}  // namespace x2d3d
