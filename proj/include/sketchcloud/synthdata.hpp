#pragma once

// Analytic shapes that stand in for a scanned-model corpus: surface point
// sampling, an orthographic depth-buffer line renderer, and the dataset
// writer.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sketchcloud/geometry.hpp"

namespace sketchcloud {

// Single-channel image in [0, 1], 1 = stroke. pixels[row * width + col].
struct SketchImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  float at(std::size_t col, std::size_t row) const { return pixels[row * width + col]; }
  std::size_t stroke_count() const;
  bool valid() const { return stroke_count() > 0; }
};

enum class PrimitiveKind { sphere, box, cylinder };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Point3 center;
  // sphere: {radius, -, -}; box: half-extents; cylinder: {radius, half-length, -}
  Point3 size{0.5, 0.5, 0.5};
  // Cylinder axis (unit); ignored otherwise.
  Point3 axis{0, 0, 1};
};

struct ShapeSpec {
  std::vector<Primitive> primitives;
  double rotation_z = 0.0;  // radians, about the world z axis through the origin
  std::size_t surface_samples = 2048;

  // Throws DataError for non-positive sizes or an empty primitive list.
  void validate() const;
};

enum class ShapeClass { sphere, box, cylinder, union_of_primitives };

std::string to_string(ShapeClass c);
ShapeClass shape_class_from_string(const std::string& name);

struct RenderOptions {
  double edge_threshold = 0.05;  // world-space depth jump that counts as a contour
};

// Random shape of the given class whose surface stays inside [-0.9, 0.9]^3
// for every rotation about z.
ShapeSpec random_shape(ShapeClass shape_class, std::uint64_t seed);

// Area-uniform samples on the union surface, expressed in world coordinates
// (rotation applied).
PointCloud sample_surface(const ShapeSpec& spec, std::size_t n, std::uint64_t seed);

// Nearest surface depth along the viewing ray through image-plane point
// (x^I, y^I); +infinity when the ray misses.
double front_depth(const ShapeSpec& spec, const CameraModel& cam, double image_x, double image_y);

// Occluding contours of an orthographic depth buffer sampled at the pixel
// centers of `height` × `width`.
SketchImage render_sketch(const ShapeSpec& spec, const CameraModel& cam, std::size_t height,
                          std::size_t width, const RenderOptions& options = {});

struct DatasetOptions {
  std::size_t n_shapes = 10;
  std::size_t views_per_shape = 5;
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
  std::size_t grid_size = 64;
  std::size_t points_per_shape = 2048;
  double camera_scale = 1.0;
  std::vector<ShapeClass> classes{ShapeClass::sphere, ShapeClass::box, ShapeClass::cylinder};
  RenderOptions render;
};

struct DatasetEntry {
  std::string id;
  std::size_t shape_id = 0;
  std::size_t view_id = 0;
  ShapeClass shape_class = ShapeClass::sphere;
  bool train = true;
  std::string sketch_path;   // relative to the dataset root
  std::string cloud_path;
  std::string density_path;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::uint64_t seed = 0;
  std::size_t grid_width = 64;
  std::size_t grid_height = 64;
  std::size_t image_width = 64;
  std::size_t image_height = 64;
  double camera_scale = 1.0;
  std::vector<DatasetEntry> samples;

  std::vector<const DatasetEntry*> split(bool train) const;
  GridSpec grid() const { return GridSpec(grid_width, grid_height); }
  CameraModel camera() const { return CameraModel::orthographic(camera_scale); }
};

// Every fifth shape (shape_id % 5 == 4) is held out, so splits are 4/5 and
// 1/5 by object and every view of an object shares its split.
bool is_test_shape(std::size_t shape_id);

struct DatasetSample {
  SketchImage sketch;
  PointCloud gt_cloud;
  DensityMap gt_density;
  DepthMultisetMap gt_depths;
  std::size_t shape_id = 0;
  std::size_t view_id = 0;
};

// In-memory sample for one (shape, view); the cloud is rounded to float
// precision so reading it back from disk reproduces the density exactly.
DatasetSample make_sample(const DatasetOptions& options, std::size_t shape_id, std::size_t view_id);

// Writes every sample and manifest.json under out_dir; returns the manifest.
DatasetManifest make_dataset(const DatasetOptions& options, const std::filesystem::path& out_dir);

DatasetManifest load_manifest(const std::filesystem::path& manifest_or_dir);
DatasetSample load_sample(const DatasetManifest& manifest, const DatasetEntry& entry);

}  // namespace sketchcloud
