#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "x2d3d/core/error.hpp"
#include "x2d3d/core/random.hpp"

namespace x2d3d {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;

/// Dense row-major tensor of doubles. Storage is aligned to Eigen's packet
/// size so vectorized reductions over it take the same path on every run.
struct Tensor {
  std::vector<int> shape;
  std::vector<double, Eigen::aligned_allocator<double>> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)), data(count(shape), fill) {}

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }

  /// View as a matrix of shape[0] rows by the product of the remaining dims.
  RowMatrixMap matrix() {
    const auto rows = static_cast<Eigen::Index>(shape.empty() ? 1 : shape[0]);
    return {data.data(), rows, static_cast<Eigen::Index>(data.size()) / rows};
  }
  ConstRowMatrixMap matrix() const {
    const auto rows = static_cast<Eigen::Index>(shape.empty() ? 1 : shape[0]);
    return {data.data(), rows, static_cast<Eigen::Index>(data.size()) / rows};
  }
  Eigen::Map<Eigen::VectorXd> vector() { return {data.data(), static_cast<Eigen::Index>(data.size())}; }
  Eigen::Map<const Eigen::VectorXd> vector() const { return {data.data(), static_cast<Eigen::Index>(data.size())}; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

using ParamSet = std::vector<NamedTensor>;

inline ParamSet zeros_like(const ParamSet& params) {
  ParamSet out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, Tensor(p.value.shape, 0.0)});
  return out;
}

inline void check_same_shapes(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShapeMismatch, "parameter sets differ in tensor count");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].value.shape != b[i].value.shape) {
      throw Error(ErrorCode::kShapeMismatch, "tensor shape mismatch at " + a[i].name);
    }
  }
}

inline void scale_in_place(ParamSet& p, double s) {
  for (auto& t : p)
    for (auto& v : t.value.data) v *= s;
}

inline void add_in_place(ParamSet& acc, const ParamSet& g) {
  check_same_shapes(acc, g);
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i].value.vector() += g[i].value.vector();
}

inline std::size_t parameter_count(const ParamSet& p) {
  std::size_t n = 0;
  for (const auto& t : p) n += t.value.size();
  return n;
}

/// Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in).
inline Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : t.data) v = uniform(rng, -bound, bound);
  return t;
}

}  // namespace x2d3d
