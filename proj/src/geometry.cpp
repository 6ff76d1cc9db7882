#include "sketchcloud/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sketchcloud/errors.hpp"

namespace sketchcloud {

CameraModel CameraModel::orthographic(double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw DataError("camera: projection scale must be positive, got " + std::to_string(scale));
  }
  return CameraModel(ProjectionKind::orthographic, scale);
}

GridSpec::GridSpec(std::size_t width, std::size_t height) : width_(width), height_(height) {
  if (width < 2 || height < 2) {
    throw DimensionError("grid: width and height must be >= 2, got " + std::to_string(width) + "x" +
                         std::to_string(height));
  }
}

DensityMap::DensityMap(GridSpec grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.size()) {
    throw DimensionError("density map: expected " + std::to_string(grid_.size()) + " values, got " +
                         std::to_string(values_.size()));
  }
}

void DensityMap::validate(double tolerance) const {
  double total = 0;
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0) throw DataError("density map: entries must be finite and nonnegative");
    total += v;
  }
  if (std::abs(total - 1.0) > tolerance) {
    throw DataError("density map: entries sum to " + std::to_string(total) + ", expected 1");
  }
}

DepthMultisetMap::DepthMultisetMap(GridSpec grid) : grid_(grid), bins_(grid.size()) {}

std::size_t DepthMultisetMap::total_count() const {
  std::size_t n = 0;
  for (const auto& b : bins_) n += b.size();
  return n;
}

OccupancyGrid::OccupancyGrid(std::size_t resolution)
    : resolution_(resolution), cells_(resolution * resolution * resolution, 0) {
  if (resolution < 1) throw DimensionError("voxelize: resolution must be >= 1");
}

std::size_t OccupancyGrid::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

ImagePoint project_point(const Point3& p, const CameraModel& cam) {
  switch (cam.kind()) {
    case ProjectionKind::orthographic:
      return {cam.scale() * p.x, cam.scale() * p.y};
  }
  return {};
}

Point3 invproj(const ImagePoint& image, double depth, const CameraModel& cam) {
  switch (cam.kind()) {
    case ProjectionKind::orthographic:
      return {image.x / cam.scale(), image.y / cam.scale(), depth};
  }
  return {};
}

ImagePoint pixel_to_image(std::size_t u, std::size_t v, const GridSpec& grid) {
  if (u >= grid.width() || v >= grid.height()) {
    throw DimensionError("pixel_to_image: (" + std::to_string(u) + ", " + std::to_string(v) +
                         ") outside " + std::to_string(grid.width()) + "x" + std::to_string(grid.height()));
  }
  return {2.0 * static_cast<double>(u) / static_cast<double>(grid.width() - 1) - 1.0,
          2.0 * static_cast<double>(v) / static_cast<double>(grid.height() - 1) - 1.0};
}

namespace {

std::size_t nearest_bin(double coord, std::size_t bins) {
  const double last = static_cast<double>(bins - 1);
  const double r = std::round((coord + 1.0) * last / 2.0);
  if (!(r > 0.0)) return 0;  // also catches NaN
  if (r >= last) return bins - 1;
  return static_cast<std::size_t>(r);
}

}  // namespace

PixelIndex image_to_pixel(const ImagePoint& image, const GridSpec& grid) {
  return {nearest_bin(image.x, grid.width()), nearest_bin(image.y, grid.height())};
}

DensityMap render_density(const PointCloud& cloud, const GridSpec& grid, const CameraModel& cam) {
  if (cloud.empty()) throw DataError("render_density: empty point cloud");
  std::vector<std::size_t> counts(grid.size(), 0);
  for (const auto& p : cloud) {
    const auto px = image_to_pixel(project_point(p, cam), grid);
    ++counts[grid.flat(px.u, px.v)];
  }
  const double n = static_cast<double>(cloud.size());
  std::vector<double> values(grid.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(counts[i]) / n;
  return DensityMap(grid, std::move(values));
}

DepthMultisetMap render_depth_multisets(const PointCloud& cloud, const GridSpec& grid, const CameraModel& cam) {
  DepthMultisetMap out(grid);
  for (const auto& p : cloud) {
    const auto px = image_to_pixel(project_point(p, cam), grid);
    out.insert(px.u, px.v, p.z);
  }
  return out;
}

namespace {

// Returns false when the coordinate is outside [lo, hi].
bool voxel_axis(double c, double lo, double hi, std::size_t res, std::size_t& out) {
  if (!(c >= lo && c <= hi)) return false;
  const double t = (c - lo) / (hi - lo) * static_cast<double>(res);
  out = std::min(static_cast<std::size_t>(t), res - 1);
  return true;
}

}  // namespace

OccupancyGrid voxelize(const PointCloud& cloud, std::size_t resolution, const Box3& bounds) {
  if (!(bounds.hi.x > bounds.lo.x) || !(bounds.hi.y > bounds.lo.y) || !(bounds.hi.z > bounds.lo.z)) {
    throw DataError("voxelize: bounds have zero or negative extent");
  }
  OccupancyGrid grid(resolution);
  for (const auto& p : cloud) {
    std::size_t i = 0, j = 0, k = 0;
    if (voxel_axis(p.x, bounds.lo.x, bounds.hi.x, resolution, i) &&
        voxel_axis(p.y, bounds.lo.y, bounds.hi.y, resolution, j) &&
        voxel_axis(p.z, bounds.lo.z, bounds.hi.z, resolution, k)) {
      grid.mark(i, j, k);
    }
  }
  return grid;
}

}  // namespace sketchcloud
