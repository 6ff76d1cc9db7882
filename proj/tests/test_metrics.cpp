#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include "sketchcloud/errors.hpp"
#include "sketchcloud/kdtree.hpp"
#include "sketchcloud/losses.hpp"
#include "sketchcloud/metrics.hpp"
#include "sketchcloud/rng.hpp"

using namespace sketchcloud;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud c(n);
  for (auto& p : c) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  return c;
}

double sq(const Point3& a, const Point3& b) {
  return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z);
}

double chamfer_oracle(const PointCloud& s, const PointCloud& t) {
  auto side = [](const PointCloud& a, const PointCloud& b) {
    double acc = 0;
    for (const auto& p : a) {
      double best = INFINITY;
      for (const auto& q : b) best = std::min(best, sq(p, q));
      acc += best;
    }
    return acc / a.size();
  };
  return side(s, t) + side(t, s);
}

double emd_permutation_oracle(const PointCloud& s, const PointCloud& t) {
  std::vector<std::size_t> perm(s.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double acc = 0;
    for (std::size_t i = 0; i < s.size(); ++i) acc += std::sqrt(sq(s[i], t[perm[i]]));
    best = std::min(best, acc / s.size());
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

FeatureSet gaussian(std::size_t n, std::array<double, 3> mean, std::array<double, 3> sd, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> z;
  FeatureSet out(n, std::vector<double>(3));
  for (auto& row : out)
    for (int d = 0; d < 3; ++d) row[d] = mean[d] + sd[d] * z(eng);
  return out;
}

PointCloud transform(const PointCloud& c, double scale, const std::array<double, 9>& r) {
  PointCloud out;
  for (const auto& p : c) {
    out.push_back({scale * (r[0] * p.x + r[1] * p.y + r[2] * p.z), scale * (r[3] * p.x + r[4] * p.y + r[5] * p.z),
                   scale * (r[6] * p.x + r[7] * p.y + r[8] * p.z)});
  }
  return out;
}

std::array<double, 9> rotation(double a, double b) {
  // Rz(a)·Rx(b)
  const double ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b);
  return {ca, -sa * cb, sa * sb, sa, ca * cb, -ca * sb, 0, sb, cb};
}

}  // namespace

TEST(Chamfer, Examples) {
  const auto s = random_cloud(30, 1);
  EXPECT_EQ(chamfer(s, s), 0.0);
  EXPECT_EQ(chamfer({{0, 0, 0}}, {{1, 0, 0}}), 2.0);
  EXPECT_THROW(chamfer({}, s), DataError);
}

TEST(Chamfer, KdTreeMatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = random_cloud(50, 2 * seed + 10), t = random_cloud(60, 2 * seed + 11);
    const double oracle = chamfer_oracle(s, t);
    EXPECT_NEAR(chamfer(s, t, NeighborSearch::kd_tree), oracle, 1e-6);
    EXPECT_NEAR(chamfer(s, t, NeighborSearch::brute_force), oracle, 1e-6);
  }
}

TEST(Chamfer, SymmetricPermutationInvariantAndScales) {
  auto s = random_cloud(40, 3), t = random_cloud(35, 4);
  EXPECT_DOUBLE_EQ(chamfer(s, t), chamfer(t, s));
  auto shuffled = s;
  std::mt19937_64 eng(5);
  std::shuffle(shuffled.begin(), shuffled.end(), eng);
  EXPECT_NEAR(chamfer(shuffled, t), chamfer(s, t), 1e-12);
  const auto id = rotation(0, 0);
  EXPECT_NEAR(chamfer(transform(s, 3.0, id), transform(t, 3.0, id)), 9.0 * chamfer(s, t), 1e-10);
  // Subset relation: zero when each is contained in the other.
  PointCloud doubled = s;
  doubled.insert(doubled.end(), s.begin(), s.end());
  EXPECT_EQ(chamfer(s, doubled), 0.0);
}

TEST(KdTree, MatchesLinearScan) {
  const auto pts = random_cloud(500, 6);
  const KdTree tree(pts);
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const Point3 q{rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)};
    std::size_t best = 0;
    for (std::size_t j = 1; j < pts.size(); ++j)
      if (sq(pts[j], q) < sq(pts[best], q)) best = j;
    const auto nn = tree.nearest(q);
    EXPECT_EQ(nn.index, best);
    EXPECT_EQ(nn.squared_distance, sq(pts[best], q));
  }
}

TEST(KdTree, TiesResolveToLowestIndex) {
  PointCloud pts{{1, 0, 0}, {0, 0, 0}, {-1, 0, 0}, {0, 0, 0}, {1, 0, 0}};
  for (int i = 0; i < 20; ++i) pts.push_back({0.5 * i, 3, 3});
  const KdTree tree(pts);
  EXPECT_EQ(tree.nearest({0, 0, 0}).index, 1u);
  EXPECT_EQ(tree.nearest({0.5, 0, 0}).index, 0u);  // equidistant to 0, 1, 3 and 4
  EXPECT_EQ(brute_force_nearest(pts, {0.5, 0, 0}).index, 0u);
  EXPECT_THROW(KdTree(PointCloud{}), DataError);
}

TEST(DensityL1, Examples) {
  const GridSpec g(2, 2);
  const DensityMap uniform(g, {0.25, 0.25, 0.25, 0.25});
  auto same = Tensor::constant({1, 2, 2}, {0.25f, 0.25f, 0.25f, 0.25f});
  EXPECT_EQ(density_l1(same, uniform).item(), 0.0f);
  auto hot = Tensor::constant({1, 2, 2}, {1, 0, 0, 0});
  EXPECT_FLOAT_EQ(density_l1(hot, uniform).item(), 1.5f);
  EXPECT_THROW(density_l1(Tensor::zeros({1, 3, 2}), uniform), DimensionError);
}

TEST(DensityL1, SignGradient) {
  // Dyadic values so float and double agree exactly at the tie.
  const DensityMap target(GridSpec(2, 2), {0.125, 0.25, 0.25, 0.375});
  auto p = Tensor::parameter({1, 2, 2}, {0.25f, 0.125f, 0.25f, 0.25f});
  backward(density_l1(p, target));
  EXPECT_EQ(std::vector<float>(p.grad().begin(), p.grad().end()), (std::vector<float>{1, -1, 0, -1}));
}

TEST(ChamferLoss, MatchesMetricAndRoutesGradient) {
  const auto target = random_cloud(25, 8);
  const auto pred = random_cloud(20, 9);
  std::vector<float> v;
  PointCloud rounded;
  for (const auto& p : pred) {
    v.insert(v.end(), {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)});
    rounded.push_back({static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)});
  }
  auto x = Tensor::parameter({20, 3}, v);
  auto loss = chamfer_loss(x, target);
  EXPECT_NEAR(loss.item(), chamfer_oracle(rounded, target), 1e-5);
  backward(loss);
  double total = 0;
  for (float g : x.grad()) total += std::abs(g);
  EXPECT_GT(total, 0.0);
  EXPECT_THROW(chamfer_loss(Tensor::zeros({4, 2}), target), DimensionError);
}

TEST(TotalLoss, Examples) {
  const LossWeights paper;
  EXPECT_EQ(paper.chamfer, 1.0);
  EXPECT_EQ(paper.density, 1e4);
  EXPECT_NEAR(total_loss(0.5, 0.001, paper), 10.5, 1e-12);
  EXPECT_EQ(total_loss(0.0, 0.0, paper), 0.0);
  EXPECT_EQ(total_loss(0.7, 3.0, LossWeights{1.0, 0.0}), 0.7);
  auto t = total_loss(Tensor::scalar(0.5f), Tensor::scalar(0.001f), paper);
  EXPECT_NEAR(t.item(), 10.5, 1e-4);
}

TEST(Emd, Examples) {
  const auto s = random_cloud(20, 10);
  EXPECT_EQ(emd(s, s), 0.0);
  EXPECT_EQ(emd({{0, 0, 0}}, {{0, 1, 0}}), 1.0);
  EXPECT_THROW(emd(s, random_cloud(19, 11)), DimensionError);
}

TEST(Emd, MatchesPermutationBruteForce) {
  for (std::size_t n = 1; n <= 7; ++n)
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto s = random_cloud(n, 100 * n + seed), t = random_cloud(n, 100 * n + seed + 50);
      EXPECT_NEAR(emd(s, t), emd_permutation_oracle(s, t), 1e-9) << n;
    }
}

TEST(Emd, SymmetricPermutationInvariantAndScales) {
  const auto s = random_cloud(30, 12), t = random_cloud(30, 13);
  EXPECT_NEAR(emd(s, t), emd(t, s), 1e-12);
  auto shuffled = t;
  std::mt19937_64 eng(14);
  std::shuffle(shuffled.begin(), shuffled.end(), eng);
  EXPECT_NEAR(emd(s, shuffled), emd(s, t), 1e-12);
  const auto id = rotation(0, 0);
  EXPECT_NEAR(emd(transform(s, 2.5, id), transform(t, 2.5, id)), 2.5 * emd(s, t), 1e-10);
}

TEST(Emd, ResampledSelfComparisonIsZero) {
  const auto s = random_cloud(700, 15);
  EXPECT_EQ(emd_resampled(s, s, 128, 16), 0.0);
  EXPECT_EQ(subsample(s, 128, 17).size(), 128u);
  EXPECT_EQ(subsample(s, 128, 17), subsample(s, 128, 17));
  EXPECT_EQ(subsample(s, 1000, 17), s);
  EXPECT_GT(emd_resampled(s, random_cloud(300, 18), 128, 19), 0.0);
}

TEST(VoxelIou, Examples) {
  const auto s = random_cloud(100, 20);
  EXPECT_EQ(voxel_iou(s, s, 16), 1.0);
  PointCloud a, b;
  for (const auto& p : s) {
    a.push_back({std::abs(p.x), std::abs(p.y), std::abs(p.z)});
    b.push_back({-std::abs(p.x) - 1e-3, -std::abs(p.y) - 1e-3, -std::abs(p.z) - 1e-3});
  }
  EXPECT_EQ(voxel_iou(a, b, 8), 0.0);
}

TEST(VoxelIou, MatchesSetOracle) {
  auto cells = [](const PointCloud& c, int res) {
    std::set<std::tuple<int, int, int>> out;
    auto idx = [&](double x) { return std::min(res - 1, static_cast<int>(std::floor((x + 1) / 2 * res))); };
    for (const auto& p : c) out.insert({idx(p.x), idx(p.y), idx(p.z)});
    return out;
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = random_cloud(60, 30 + seed), t = random_cloud(80, 60 + seed);
    const auto a = cells(s, 8), b = cells(t, 8);
    std::size_t both = 0;
    for (const auto& c : a) both += b.count(c);
    const double oracle = static_cast<double>(both) / static_cast<double>(a.size() + b.size() - both);
    EXPECT_EQ(voxel_iou(s, t, 8), oracle);
  }
}

TEST(Frechet, Identical) {
  const auto a = gaussian(1000, {0, 0, 0}, {1, 2, 3}, 21);
  EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-6);
  EXPECT_THROW(frechet_distance({{1.0, 2.0}}, a), DataError);
  EXPECT_THROW(frechet_distance(a, {{1.0, 2.0}, {3.0, 4.0}}), DimensionError);
}

TEST(Frechet, ShiftedIsotropicGaussians) {
  const auto a = gaussian(100000, {0, 0, 0}, {1, 1, 1}, 22);
  const auto b = gaussian(100000, {1, 0, 0}, {1, 1, 1}, 23);
  EXPECT_NEAR(frechet_distance(a, b), 1.0, 0.05);
}

TEST(Frechet, DiagonalCovariances) {
  const auto a = gaussian(100000, {0, 0, 0}, {1, 1, 1}, 24);
  const auto b = gaussian(100000, {0, 0, 0}, {2, 1, 1}, 25);
  EXPECT_NEAR(frechet_distance(a, b), 1.0, 0.05);
}

TEST(Frechet, RotationInvariantAndNonnegative) {
  const auto s = random_cloud(400, 26), t = transform(random_cloud(300, 27), 0.7, rotation(0.3, 0));
  const CoordinateFeatures coords;
  const double base = frechet_point_distance(s, t, coords);
  const auto r = rotation(1.1, -0.4);
  EXPECT_NEAR(frechet_point_distance(transform(s, 1, r), transform(t, 1, r), coords), base, 1e-8);
  EXPECT_GE(base, 0.0);
}

TEST(FeatureExtractors, ShapesAndOrderInvariance) {
  auto s = random_cloud(50, 28);
  const CoordinateFeatures coords;
  const PooledCoordinateStatistics pooled;
  EXPECT_EQ(coords.extract(s).size(), 50u);
  const auto f = pooled.extract(s);
  ASSERT_EQ(f.size(), 1u);
  ASSERT_EQ(f[0].size(), 9u);
  std::reverse(s.begin(), s.end());
  const auto g = pooled.extract(s);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(f[0][i], g[0][i], 1e-12);
  std::vector<PointCloud> many{random_cloud(40, 29), random_cloud(40, 30), random_cloud(40, 31)};
  EXPECT_NEAR(frechet_point_distance(many, many, pooled), 0.0, 1e-6);
}

TEST(Assignment, SolvesSmallMatrix) {
  const std::vector<double> cost{4, 1, 3, 2, 0, 5, 3, 2, 2};
  const auto a = solve_assignment(cost, 3);
  EXPECT_EQ(a, (std::vector<std::size_t>{1, 0, 2}));
}
