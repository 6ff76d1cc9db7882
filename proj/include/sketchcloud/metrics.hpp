#pragma once

// Point-cloud evaluation metrics: Chamfer, EMD (exact assignment),
// voxel IoU and the Fréchet distance between Gaussian fits of feature sets.

#include <cstdint>
#include <memory>
#include <vector>

#include "sketchcloud/geometry.hpp"

namespace sketchcloud {

enum class NeighborSearch { kd_tree, brute_force };

// Mean squared nearest-neighbor distance S->T plus T->S.
double chamfer(const PointCloud& s, const PointCloud& t, NeighborSearch search = NeighborSearch::kd_tree);
// Only the S->T term.
double chamfer_one_sided(const PointCloud& s, const PointCloud& t,
                         NeighborSearch search = NeighborSearch::kd_tree);

// Exact minimum-cost perfect matching on a square cost matrix (row-major).
// Returns assignment[row] = column. O(n^3).
std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t n);

// (1/n) Σ ‖S_i − T_π(i)‖₂ minimized over bijections; |S| must equal |T|.
double emd(const PointCloud& s, const PointCloud& t);

// Deterministic subset of `count` points drawn without replacement, in
// original order. Returns the cloud unchanged when it is already small enough.
PointCloud subsample(const PointCloud& cloud, std::size_t count, std::uint64_t seed);

// Reduces both clouds to min(|S|, |T|, max_points) points, then emd().
double emd_resampled(const PointCloud& s, const PointCloud& t, std::size_t max_points, std::uint64_t seed);

double voxel_iou(const PointCloud& s, const PointCloud& t, std::size_t resolution = 32, const Box3& bounds = {});

using FeatureSet = std::vector<std::vector<double>>;

// ‖μ_A − μ_B‖² + tr(Σ_A + Σ_B − 2(Σ_A Σ_B)^{1/2}).
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual FeatureSet extract(const PointCloud& cloud) const = 0;
  virtual std::size_t dimension() const = 0;
};

// One 3-vector per point.
class CoordinateFeatures final : public FeatureExtractor {
 public:
  FeatureSet extract(const PointCloud& cloud) const override;
  std::size_t dimension() const override { return 3; }
};

// One vector per cloud: coordinate mean and the six distinct covariance
// entries. Invariant to point order.
class PooledCoordinateStatistics final : public FeatureExtractor {
 public:
  FeatureSet extract(const PointCloud& cloud) const override;
  std::size_t dimension() const override { return 9; }
};

// Fréchet distance between the feature sets of two clouds.
double frechet_point_distance(const PointCloud& generated, const PointCloud& reference,
                              const FeatureExtractor& extractor);

// Dataset-level variant: features of all clouds on each side are pooled.
double frechet_point_distance(const std::vector<PointCloud>& generated, const std::vector<PointCloud>& reference,
                              const FeatureExtractor& extractor);

}  // namespace sketchcloud
