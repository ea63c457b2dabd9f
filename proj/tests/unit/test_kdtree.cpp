#include "x2d3d/core/kdtree.hpp"

#include <gtest/gtest.h>

#include <algorithm>

#include "x2d3d/core/random.hpp"

namespace x2d3d {
namespace {

std::vector<Neighbor> BruteKnn(const std::vector<double>& data, std::size_t dim, const double* q, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < data.size() / dim; ++i) {
    double s = 0;
    for (std::size_t d = 0; d < dim; ++d) s += (q[d] - data[i * dim + d]) * (q[d] - data[i * dim + d]);
    all.push_back({i, s});
  }
  std::sort(all.begin(), all.end());
  all.resize(std::min(k, all.size()));
  return all;
}

class KdTreeParam : public ::testing::TestWithParam<std::size_t> {};

TEST_P(KdTreeParam, KnnMatchesBruteForceIncludingTies) {
  const std::size_t dim = GetParam();
  Rng rng = make_rng(dim);
  std::vector<double> data;
  const std::size_t n = 2000;
  for (std::size_t i = 0; i < n * dim; ++i) data.push_back(static_cast<double>(uniform_index(rng, 4)));  // many ties
  const KdTree tree(data, dim);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> q(dim);
    for (auto& v : q) v = static_cast<double>(uniform_index(rng, 4));
    for (std::size_t k : {1u, 5u, 37u}) {
      EXPECT_EQ(tree.knn(q, k), BruteKnn(data, dim, q.data(), k));
    }
  }
}

TEST_P(KdTreeParam, RadiusMatchesBruteForce) {
  const std::size_t dim = GetParam();
  Rng rng = make_rng(100 + dim);
  std::vector<double> data;
  for (std::size_t i = 0; i < 1500 * dim; ++i) data.push_back(uniform(rng, -1, 1));
  const KdTree tree(data, dim, 4);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> q(dim);
    for (auto& v : q) v = uniform(rng, -1, 1);
    const double r = 0.3 * std::sqrt(static_cast<double>(dim));
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < 1500; ++i)
      if (squared_distance(q.data(), data.data() + i * dim, dim) <= r * r) expect.push_back(i);
    EXPECT_EQ(tree.radius_search(q, r), expect);
  }
}

INSTANTIATE_TEST_SUITE_P(Dims, KdTreeParam, ::testing::Values(1, 2, 3, 8));

TEST(KdTree, EdgeCases) {
  const KdTree empty(std::vector<double>{}, 3);
  const std::vector<double> q{0, 0, 0};
  EXPECT_TRUE(empty.knn(q, 3).empty());
  EXPECT_TRUE(empty.radius_search(q, 1.0).empty());

  const KdTree one({1, 2, 3}, 3);
  const auto r = one.knn(q, 5);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].index, 0u);
  EXPECT_DOUBLE_EQ(r[0].dist2, 14.0);

  // Identical points never split.
  const KdTree same(std::vector<double>(300, 1.0), 3);
  const auto s = same.knn(std::vector<double>{1, 1, 1}, 3);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].index, 0u);
  EXPECT_EQ(s[2].index, 2u);

  EXPECT_THROW(KdTree({1, 2}, 3), Error);
  EXPECT_THROW(one.knn(std::vector<double>{1, 2}, 1), Error);
}

}  // namespace
}  // namespace x2d3d
