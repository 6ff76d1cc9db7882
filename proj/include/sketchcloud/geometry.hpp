#pragma once

// Orthographic camera, pixel <-> image-plane <-> world conversions, the
// ground-truth density and depth renderers, and voxel occupancy.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace sketchcloud {

struct Point3 {
  double x = 0, y = 0, z = 0;
  friend bool operator==(const Point3&, const Point3&) = default;
};

using PointCloud = std::vector<Point3>;

enum class ProjectionKind { orthographic };

// x^I = s·x, y^I = s·y; depth passes through unchanged.
class CameraModel {
 public:
  static CameraModel orthographic(double scale = 1.0);

  ProjectionKind kind() const { return kind_; }
  double scale() const { return scale_; }

 private:
  CameraModel(ProjectionKind kind, double scale) : kind_(kind), scale_(scale) {}
  ProjectionKind kind_;
  double scale_;
};

// Quantization of the image plane into width × height bins.
class GridSpec {
 public:
  GridSpec(std::size_t width, std::size_t height);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return width_ * height_; }
  std::size_t flat(std::size_t u, std::size_t v) const { return v * width_ + u; }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;

 private:
  std::size_t width_;
  std::size_t height_;
};

struct PixelIndex {
  std::size_t u = 0;  // column
  std::size_t v = 0;  // row
  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

struct ImagePoint {
  double x = 0, y = 0;
};

// values[v * W + u] = probability that a projected point lands in bin (u, v).
class DensityMap {
 public:
  static constexpr double kSumTolerance = 1e-6;

  DensityMap(GridSpec grid, std::vector<double> values);

  const GridSpec& grid() const { return grid_; }
  double at(std::size_t u, std::size_t v) const { return values_[grid_.flat(u, v)]; }
  const std::vector<double>& values() const { return values_; }

  // Throws DataError unless entries are finite, nonnegative and sum to 1.
  void validate(double tolerance = kSumTolerance) const;

 private:
  GridSpec grid_;
  std::vector<double> values_;
};

// depths of every cloud point binned at (u, v), kept in cloud order.
class DepthMultisetMap {
 public:
  explicit DepthMultisetMap(GridSpec grid);

  const GridSpec& grid() const { return grid_; }
  const std::vector<double>& bin(std::size_t u, std::size_t v) const { return bins_[grid_.flat(u, v)]; }
  void insert(std::size_t u, std::size_t v, double z) { bins_[grid_.flat(u, v)].push_back(z); }
  std::size_t total_count() const;

 private:
  GridSpec grid_;
  std::vector<std::vector<double>> bins_;
};

struct Box3 {
  Point3 lo{-1, -1, -1};
  Point3 hi{1, 1, 1};
};

class OccupancyGrid {
 public:
  explicit OccupancyGrid(std::size_t resolution);

  std::size_t resolution() const { return resolution_; }
  bool occupied(std::size_t i, std::size_t j, std::size_t k) const { return cells_[index(i, j, k)] != 0; }
  void mark(std::size_t i, std::size_t j, std::size_t k) { cells_[index(i, j, k)] = 1; }
  std::size_t count() const;
  const std::vector<std::uint8_t>& cells() const { return cells_; }

 private:
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * resolution_ + j) * resolution_ + k;
  }
  std::size_t resolution_;
  std::vector<std::uint8_t> cells_;
};

ImagePoint project_point(const Point3& p, const CameraModel& cam);
Point3 invproj(const ImagePoint& image, double depth, const CameraModel& cam);

// x^I = 2u/(W-1) - 1, y^I = 2v/(H-1) - 1.
ImagePoint pixel_to_image(std::size_t u, std::size_t v, const GridSpec& grid);
// Nearest bin center (round half away from zero), clamped to the grid.
PixelIndex image_to_pixel(const ImagePoint& image, const GridSpec& grid);

DensityMap render_density(const PointCloud& cloud, const GridSpec& grid, const CameraModel& cam);
DepthMultisetMap render_depth_multisets(const PointCloud& cloud, const GridSpec& grid,
                                        const CameraModel& cam);

// A point on the upper face of `bounds` belongs to the last voxel; points
// outside the box are ignored.
OccupancyGrid voxelize(const PointCloud& cloud, std::size_t resolution, const Box3& bounds);

}  // namespace sketchcloud
