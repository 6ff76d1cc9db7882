#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "sketchcloud/errors.hpp"
#include "sketchcloud/synthdata.hpp"

using namespace sketchcloud;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("sketchcloud_synth_" + name);
  fs::remove_all(dir);
  return dir;
}

ShapeSpec single(PrimitiveKind kind, Point3 size, double rot = 0.0) {
  ShapeSpec s;
  Primitive p;
  p.kind = kind;
  p.size = size;
  s.primitives = {p};
  s.rotation_z = rot;
  return s;
}

}  // namespace

TEST(SampleSurface, UnitSphereRadius) {
  const auto cloud = sample_surface(single(PrimitiveKind::sphere, {1, 0, 0}), 10000, 3);
  ASSERT_EQ(cloud.size(), 10000u);
  double mean = 0;
  for (const auto& p : cloud) mean += std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
  EXPECT_NEAR(mean / cloud.size(), 1.0, 0.01);
}

TEST(SampleSurface, SphereIsAreaUniform) {
  // Archimedes: z is uniform on [-r, r] for area-uniform sphere samples.
  const auto cloud = sample_surface(single(PrimitiveKind::sphere, {0.8, 0, 0}), 20000, 4);
  std::vector<int> bins(8, 0);
  for (const auto& p : cloud) ++bins[std::min(7, static_cast<int>((p.z / 0.8 + 1) * 4))];
  for (int b : bins) EXPECT_NEAR(b, 2500, 250);
}

TEST(SampleSurface, BoxPointsOnSurface) {
  const auto cloud = sample_surface(single(PrimitiveKind::box, {0.5, 0.5, 0.5}), 5000, 5);
  for (const auto& p : cloud) {
    const double m = std::max({std::abs(p.x), std::abs(p.y), std::abs(p.z)});
    EXPECT_LE(std::abs(p.x), 0.5 + 1e-6);
    EXPECT_LE(std::abs(p.y), 0.5 + 1e-6);
    EXPECT_LE(std::abs(p.z), 0.5 + 1e-6);
    EXPECT_NEAR(m, 0.5, 1e-6);
  }
}

TEST(SampleSurface, DeterministicAndValidated) {
  const auto spec = random_shape(ShapeClass::union_of_primitives, 9);
  EXPECT_EQ(sample_surface(spec, 500, 1), sample_surface(spec, 500, 1));
  EXPECT_NE(sample_surface(spec, 500, 1), sample_surface(spec, 500, 2));
  EXPECT_THROW(sample_surface(single(PrimitiveKind::sphere, {-1, 0, 0}), 10, 1), DataError);
  EXPECT_THROW(sample_surface(spec, 0, 1), DataError);
}

TEST(RandomShape, StaysInsideBoundsUnderRotation) {
  for (auto cls : {ShapeClass::sphere, ShapeClass::box, ShapeClass::cylinder, ShapeClass::union_of_primitives}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto spec = random_shape(cls, seed);
      for (double rot : {0.0, 0.7, 1.9, 3.0}) {
        spec.rotation_z = rot;
        for (const auto& p : sample_surface(spec, 400, seed)) {
          EXPECT_LE(std::abs(p.x), 0.9 + 1e-9);
          EXPECT_LE(std::abs(p.y), 0.9 + 1e-9);
          EXPECT_LE(std::abs(p.z), 0.9 + 1e-9);
        }
      }
    }
  }
}

TEST(RenderSketch, SphereIsCircle) {
  const double r = 0.6;
  const auto img = render_sketch(single(PrimitiveKind::sphere, {r, 0, 0}), CameraModel::orthographic(), 64, 64);
  ASSERT_TRUE(img.valid());
  const double c = 31.5, rpx = r * 31.5;
  // Depth-jump edges also fire on the steep rim: z' = x/sqrt(r² − x²) exceeds
  // τ/h (h = pixel pitch) once x/r > k/sqrt(1 + k²), k = τ/h.
  const double k = 0.05 / (2.0 / 63);
  const double inner = rpx * k / std::sqrt(1 + k * k);
  for (std::size_t row = 0; row < 64; ++row)
    for (std::size_t col = 0; col < 64; ++col) {
      const float v = img.at(col, row);
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
      const double d = std::hypot(col - c, row - c);
      if (v > 0) {
        EXPECT_LE(d, rpx + 1.5);
        EXPECT_GE(d, inner - 1.5);
      }
      if (d > rpx + 1.5) EXPECT_EQ(v, 0.0f);
    }
  // Interior blank.
  for (std::size_t row = 0; row < 64; ++row)
    for (std::size_t col = 0; col < 64; ++col)
      if (std::hypot(col - c, row - c) < inner - 1.5) EXPECT_EQ(img.at(col, row), 0.0f);
}

TEST(RenderSketch, EmptySceneIsInvalid) {
  // Sphere centered far outside the view volume.
  auto spec = single(PrimitiveKind::sphere, {0.2, 0, 0});
  spec.primitives[0].center = {5, 5, 0};
  const auto img = render_sketch(spec, CameraModel::orthographic(), 32, 32);
  EXPECT_EQ(img.stroke_count(), 0u);
  EXPECT_FALSE(img.valid());
}

TEST(RenderSketch, FaceOnBoxPerimeter) {
  const auto img = render_sketch(single(PrimitiveKind::box, {0.5, 0.5, 0.5}), CameraModel::orthographic(), 64, 64);
  const double side_px = 1.0 * 63 / 2;
  const double expected = 4 * side_px;
  EXPECT_NEAR(static_cast<double>(img.stroke_count()), expected, 0.2 * expected);
}

TEST(RenderSketch, CentroidAlignsWithDensity) {
  DatasetOptions opt;
  opt.seed = 21;
  for (auto cls : {ShapeClass::sphere, ShapeClass::box, ShapeClass::cylinder}) {
    opt.classes = {cls};
    for (std::size_t shape = 0; shape < 4; ++shape) {
      const auto s = make_sample(opt, shape, shape % 5);
      double sx = 0, sy = 0, sw = 0;
      for (std::size_t row = 0; row < s.sketch.height; ++row)
        for (std::size_t col = 0; col < s.sketch.width; ++col) {
          const double w = s.sketch.at(col, row);
          sx += w * col;
          sy += w * row;
          sw += w;
        }
      double dx = 0, dy = 0;
      for (std::size_t v = 0; v < opt.grid_size; ++v)
        for (std::size_t u = 0; u < opt.grid_size; ++u) {
          dx += s.gt_density.at(u, v) * u;
          dy += s.gt_density.at(u, v) * v;
        }
      // Both grids are 64 wide with coincident bin centers.
      EXPECT_LT(std::hypot(sx / sw - dx, sy / sw - dy), 0.1 * 64) << to_string(cls) << " " << shape;
    }
  }
}

TEST(MakeSample, DensityMatchesCloud) {
  DatasetOptions opt;
  opt.seed = 3;
  for (std::size_t shape = 0; shape < 3; ++shape) {
    const auto s = make_sample(opt, shape, 2);
    const auto again = render_density(s.gt_cloud, GridSpec(opt.grid_size, opt.grid_size), CameraModel::orthographic());
    EXPECT_EQ(again.values(), s.gt_density.values());
    EXPECT_EQ(s.gt_depths.total_count(), s.gt_cloud.size());
    EXPECT_NO_THROW(s.gt_density.validate());
  }
}

TEST(MakeDataset, SplitAndFiles) {
  DatasetOptions opt;
  opt.n_shapes = 10;
  opt.views_per_shape = 5;
  opt.seed = 7;
  opt.points_per_shape = 512;
  const auto dir = scratch("split");
  const auto m = make_dataset(opt, dir);
  ASSERT_EQ(m.samples.size(), 50u);
  EXPECT_EQ(m.split(true).size(), 40u);
  EXPECT_EQ(m.split(false).size(), 10u);
  for (const auto& e : m.samples) EXPECT_EQ(e.train, !is_test_shape(e.shape_id));

  const auto loaded = load_manifest(dir);
  ASSERT_EQ(loaded.samples.size(), 50u);
  for (const auto& e : loaded.samples) {
    const auto s = load_sample(loaded, e);
    double total = 0;
    for (double v : s.gt_density.values()) total += v;
    EXPECT_NEAR(total, 1.0, 1e-6);
    const auto again = render_density(s.gt_cloud, loaded.grid(), loaded.camera());
    EXPECT_EQ(again.values(), s.gt_density.values()) << e.id;
    for (float px : s.sketch.pixels) {
      EXPECT_GE(px, 0.0f);
      EXPECT_LE(px, 1.0f);
    }
    EXPECT_TRUE(s.sketch.valid());
  }
  fs::remove_all(dir);
}

TEST(MakeDataset, ByteIdenticalManifest) {
  DatasetOptions opt;
  opt.n_shapes = 3;
  opt.views_per_shape = 2;
  opt.seed = 99;
  opt.points_per_shape = 256;
  const auto a = scratch("det_a"), b = scratch("det_b");
  make_dataset(opt, a);
  make_dataset(opt, b);
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  const auto m = load_manifest(a);
  for (const auto& e : m.samples) {
    EXPECT_EQ(slurp(a / e.cloud_path), slurp(b / e.cloud_path));
    EXPECT_EQ(slurp(a / e.sketch_path), slurp(b / e.sketch_path));
    EXPECT_EQ(slurp(a / e.density_path), slurp(b / e.density_path));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(MakeDataset, RejectsBadOptions) {
  DatasetOptions opt;
  opt.n_shapes = 0;
  EXPECT_THROW(make_dataset(opt, scratch("bad")), DataError);
  EXPECT_THROW(shape_class_from_string("torus"), DataError);
  EXPECT_EQ(shape_class_from_string(to_string(ShapeClass::cylinder)), ShapeClass::cylinder);
}
