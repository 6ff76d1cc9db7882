#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "sketchcloud/errors.hpp"
#include "sketchcloud/geometry.hpp"
#include "sketchcloud/rng.hpp"

using namespace sketchcloud;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  PointCloud c(n);
  for (auto& p : c) p = {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return c;
}

}  // namespace

TEST(Projection, Examples) {
  const auto unit = CameraModel::orthographic(1.0);
  auto a = project_point({0, 0, 0}, unit);
  EXPECT_EQ(a.x, 0.0);
  EXPECT_EQ(a.y, 0.0);
  auto b = project_point({0.5, -0.5, 0.3}, unit);
  EXPECT_EQ(b.x, 0.5);
  EXPECT_EQ(b.y, -0.5);
  auto c = project_point({0.5, 0.25, 0.1}, CameraModel::orthographic(1.5));
  EXPECT_DOUBLE_EQ(c.x, 0.75);
  EXPECT_DOUBLE_EQ(c.y, 0.375);
  EXPECT_THROW(CameraModel::orthographic(0.0), DataError);
}

TEST(Projection, InverseExamples) {
  auto p = invproj({0, 0}, 0.5, CameraModel::orthographic(1.0));
  EXPECT_EQ(p, (Point3{0, 0, 0.5}));
  auto q = invproj({0.75, 0.375}, 0.1, CameraModel::orthographic(1.5));
  EXPECT_DOUBLE_EQ(q.x, 0.5);
  EXPECT_DOUBLE_EQ(q.y, 0.25);
  EXPECT_DOUBLE_EQ(q.z, 0.1);
}

TEST(Projection, RoundTripSweep) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto cam = CameraModel::orthographic(rng.uniform(0.1, 4.0));
    const Point3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto back = invproj(project_point(p, cam), p.z, cam);
    EXPECT_NEAR(back.x, p.x, 1e-6);
    EXPECT_NEAR(back.y, p.y, 1e-6);
    EXPECT_EQ(back.z, p.z);
  }
}

TEST(PixelToImage, Examples) {
  const GridSpec g(64, 64);
  EXPECT_EQ(pixel_to_image(0, 0, g).x, -1.0);
  EXPECT_EQ(pixel_to_image(63, 0, g).x, 1.0);
  EXPECT_NEAR(pixel_to_image(31, 0, g).x, -1.0 / 63.0, 1e-15);
  EXPECT_EQ(pixel_to_image(0, 63, g).y, 1.0);
  EXPECT_THROW(pixel_to_image(64, 0, g), DimensionError);
  EXPECT_THROW(GridSpec(1, 4), DimensionError);
}

TEST(ImageToPixel, EndpointsAndClamping) {
  const GridSpec g(64, 32);
  EXPECT_EQ(image_to_pixel({-1, -1}, g), (PixelIndex{0, 0}));
  EXPECT_EQ(image_to_pixel({1, 1}, g), (PixelIndex{63, 31}));
  EXPECT_EQ(image_to_pixel({-1.5, 2.0}, g), (PixelIndex{0, 31}));
  // (0 + 1)·(2 − 1)/2 = 0.5 rounds away from zero.
  EXPECT_EQ(image_to_pixel({0, 0}, GridSpec(2, 2)), (PixelIndex{1, 1}));
}

TEST(ImageToPixel, RoundTripOnCenters) {
  for (std::size_t w : {2u, 3u, 17u, 64u}) {
    const GridSpec g(w, w + 1);
    for (std::size_t v = 0; v < g.height(); ++v)
      for (std::size_t u = 0; u < g.width(); ++u)
        EXPECT_EQ(image_to_pixel(pixel_to_image(u, v, g), g), (PixelIndex{u, v}));
  }
}

TEST(ImageToPixel, QuantizationBound) {
  Rng rng(12);
  const GridSpec g(64, 48);
  for (int i = 0; i < 2000; ++i) {
    const ImagePoint x{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto px = image_to_pixel(x, g);
    const auto back = pixel_to_image(px.u, px.v, g);
    EXPECT_LE(std::abs(back.x - x.x), 1.0 / 63 + 1e-12);
    EXPECT_LE(std::abs(back.y - x.y), 1.0 / 47 + 1e-12);
  }
}

TEST(RenderDensity, SinglePointOneHot) {
  auto m = render_density({{0, 0, 0}}, GridSpec(2, 2), CameraModel::orthographic());
  EXPECT_EQ(m.at(1, 1), 1.0);
  EXPECT_EQ(m.at(0, 0) + m.at(0, 1) + m.at(1, 0), 0.0);
}

TEST(RenderDensity, Counting) {
  const GridSpec g(4, 4);
  const auto c0 = pixel_to_image(1, 2, g), c1 = pixel_to_image(3, 0, g);
  PointCloud cloud{{c0.x, c0.y, 0.1}, {c0.x, c0.y, 0.7}, {c1.x, c1.y, -0.2}};
  auto m = render_density(cloud, g, CameraModel::orthographic());
  EXPECT_DOUBLE_EQ(m.at(1, 2), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.at(3, 0), 1.0 / 3.0);
  EXPECT_THROW(render_density({}, g, CameraModel::orthographic()), DataError);
}

TEST(RenderDensity, MatchesCountingOracle) {
  const GridSpec g(16, 12);
  const auto cam = CameraModel::orthographic(0.8);
  const auto cloud = random_cloud(500, 13);
  auto m = render_density(cloud, g, cam);
  // Independent counter: floor(t + 0.5) is round-half-up, same as away from
  // zero for the nonnegative t here.
  std::map<std::pair<long, long>, int> counts;
  for (const auto& p : cloud) {
    const double tx = (0.8 * p.x + 1) * 15 / 2, ty = (0.8 * p.y + 1) * 11 / 2;
    const long u = std::clamp<long>(static_cast<long>(std::floor(tx + 0.5)), 0, 15);
    const long v = std::clamp<long>(static_cast<long>(std::floor(ty + 0.5)), 0, 11);
    ++counts[{u, v}];
  }
  for (std::size_t v = 0; v < 12; ++v)
    for (std::size_t u = 0; u < 16; ++u) {
      auto it = counts.find({static_cast<long>(u), static_cast<long>(v)});
      const double expected = it == counts.end() ? 0.0 : it->second / 500.0;
      EXPECT_EQ(m.at(u, v), expected) << u << "," << v;
    }
  EXPECT_NO_THROW(m.validate());
}

TEST(RenderDensity, AlwaysAProbabilityMap) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto m = render_density(random_cloud(1 + s * 37, s, -1.3, 1.3), GridSpec(9, 7), CameraModel::orthographic());
    double total = 0;
    for (double v : m.values()) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(DepthMultisets, Examples) {
  const GridSpec g(8, 8);
  const auto cam = CameraModel::orthographic();
  auto one = render_depth_multisets({{0.2, -0.4, 0.3}}, g, cam);
  EXPECT_EQ(one.total_count(), 1u);
  const auto px = image_to_pixel({0.2, -0.4}, g);
  ASSERT_EQ(one.bin(px.u, px.v).size(), 1u);
  EXPECT_EQ(one.bin(px.u, px.v)[0], 0.3);

  auto two = render_depth_multisets({{0.5, 0.5, 0.1}, {0.5, 0.5, 0.9}}, g, cam);
  const auto q = image_to_pixel({0.5, 0.5}, g);
  EXPECT_EQ(two.bin(q.u, q.v), (std::vector<double>{0.1, 0.9}));
}

TEST(DepthMultisets, MarginalsReproduceDensity) {
  const GridSpec g(20, 20);
  const auto cam = CameraModel::orthographic(0.9);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto cloud = random_cloud(300 + s, 100 + s);
    auto d = render_depth_multisets(cloud, g, cam);
    auto m = render_density(cloud, g, cam);
    EXPECT_EQ(d.total_count(), cloud.size());
    for (std::size_t v = 0; v < 20; ++v)
      for (std::size_t u = 0; u < 20; ++u)
        EXPECT_EQ(static_cast<double>(d.bin(u, v).size()) / cloud.size(), m.at(u, v));
  }
}

TEST(Voxelize, Examples) {
  const Box3 box;
  auto one = voxelize({{0.1, 0.2, 0.3}}, 8, box);
  EXPECT_EQ(one.count(), 1u);
  auto none = voxelize({}, 8, box);
  EXPECT_EQ(none.count(), 0u);
  auto top = voxelize({{1, 1, 1}}, 4, box);
  EXPECT_TRUE(top.occupied(3, 3, 3));
  EXPECT_EQ(voxelize({{2, 0, 0}}, 4, box).count(), 0u);
  EXPECT_THROW(voxelize({}, 4, Box3{{0, 0, 0}, {0, 1, 1}}), DataError);
}

TEST(Voxelize, MatchesNestedLoopOracle) {
  const Box3 box{{-1, -1, -1}, {1, 1, 1}};
  const auto cloud = random_cloud(200, 14);
  auto grid = voxelize(cloud, 8, box);
  const double cell = 2.0 / 8;
  // Every cell tests every point for membership in its half-open interval.
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      for (std::size_t k = 0; k < 8; ++k) {
        bool hit = false;
        for (const auto& p : cloud) {
          auto inside = [&](double c, std::size_t idx) {
            const double lo = -1 + idx * cell, hi = lo + cell;
            return c >= lo && (c < hi || (idx == 7 && c <= hi));
          };
          if (inside(p.x, i) && inside(p.y, j) && inside(p.z, k)) hit = true;
        }
        EXPECT_EQ(grid.occupied(i, j, k), hit);
      }
}
