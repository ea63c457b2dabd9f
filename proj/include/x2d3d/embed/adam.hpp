#pragma once

#include <cmath>
#include <cstdint>

#include "x2d3d/embed/tensor.hpp"

namespace x2d3d {

struct AdamConfig {
  double learning_rate = 6e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  ParamSet m;
  ParamSet v;
  std::int64_t step = 0;

  static AdamState for_params(const ParamSet& params) { return {zeros_like(params), zeros_like(params), 0}; }
};

/// One bias-corrected Adam update, in place.
inline void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, const AdamConfig& cfg) {
  check_same_shapes(params, grads);
  check_same_shapes(params, state.m);
  check_same_shapes(params, state.v);
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& w = params[t].value.data;
    const auto& g = grads[t].value.data;
    auto& m = state.m[t].value.data;
    auto& v = state.v[t].value.data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace x2d3d
