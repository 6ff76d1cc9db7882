#include "sketchcloud/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "sketchcloud/errors.hpp"
#include "sketchcloud/kdtree.hpp"
#include "sketchcloud/rng.hpp"

namespace sketchcloud {

namespace {

double distance(const Point3& a, const Point3& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z));
}

double mean_nearest(const PointCloud& from, const PointCloud& to, NeighborSearch search) {
  double total = 0;
  if (search == NeighborSearch::kd_tree) {
    const KdTree tree(to);
    for (const auto& p : from) total += tree.nearest(p).squared_distance;
  } else {
    for (const auto& p : from) total += brute_force_nearest(to, p).squared_distance;
  }
  return total / static_cast<double>(from.size());
}

void require_nonempty(const PointCloud& s, const PointCloud& t, const char* what) {
  if (s.empty() || t.empty()) throw DataError(std::string(what) + ": empty point cloud");
}

}  // namespace

double chamfer_one_sided(const PointCloud& s, const PointCloud& t, NeighborSearch search) {
  require_nonempty(s, t, "chamfer");
  return mean_nearest(s, t, search);
}

double chamfer(const PointCloud& s, const PointCloud& t, NeighborSearch search) {
  require_nonempty(s, t, "chamfer");
  return mean_nearest(s, t, search) + mean_nearest(t, s, search);
}

std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t n) {
  if (cost.size() != n * n) throw DimensionError("assignment: cost matrix must be n×n");
  if (n == 0) return {};
  // Shortest augmenting path with row/column potentials (1-based internally).
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);  // match[col] = row
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[col0] = 1;
      const std::size_t r = match[col0];
      double delta = kInf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double cur = cost[(r - 1) * n + (c - 1)] - u[r] - v[c];
        if (cur < minv[c]) {
          minv[c] = cur;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t c = 1; c <= n; ++c) assignment[match[c] - 1] = c - 1;
  return assignment;
}

double emd(const PointCloud& s, const PointCloud& t) {
  require_nonempty(s, t, "emd");
  if (s.size() != t.size()) {
    throw DimensionError("emd: clouds must have equal size, got " + std::to_string(s.size()) + " and " +
                         std::to_string(t.size()));
  }
  const std::size_t n = s.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = distance(s[i], t[j]);
  const auto assignment = solve_assignment(cost, n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) total += cost[i * n + assignment[i]];
  return total / static_cast<double>(n);
}

PointCloud subsample(const PointCloud& cloud, std::size_t count, std::uint64_t seed) {
  if (count >= cloud.size()) return cloud;
  std::vector<std::size_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  PointCloud out;
  out.reserve(count);
  for (auto i : idx) out.push_back(cloud[i]);
  return out;
}

double emd_resampled(const PointCloud& s, const PointCloud& t, std::size_t max_points, std::uint64_t seed) {
  require_nonempty(s, t, "emd");
  const std::size_t n = std::min({s.size(), t.size(), max_points});
  // One index stream for both sides, so a cloud compared with itself scores 0.
  return emd(subsample(s, n, seed), subsample(t, n, seed));
}

double voxel_iou(const PointCloud& s, const PointCloud& t, std::size_t resolution, const Box3& bounds) {
  require_nonempty(s, t, "voxel_iou");
  const auto a = voxelize(s, resolution, bounds);
  const auto b = voxelize(t, resolution, bounds);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.cells().size(); ++i) {
    inter += (a.cells()[i] & b.cells()[i]);
    uni += (a.cells()[i] | b.cells()[i]);
  }
  if (uni == 0) return 1.0;  // both clouds lie entirely outside the bounds
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

void mean_and_covariance(const FeatureSet& f, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
  const std::size_t n = f.size(), d = f.front().size();
  mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (const auto& row : f) mean += Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(d));
  mean /= static_cast<double>(n);
  cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (const auto& row : f) {
    const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(d)) - mean;
    cov.noalias() += c * c.transpose();
  }
  cov /= static_cast<double>(n - 1);
}

constexpr double kNegativeEigenTolerance = 1e-6;

Eigen::VectorXd clamped_eigenvalues(const Eigen::MatrixXd& symmetric, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetric);
  if (solver.info() != Eigen::Success) throw NumericalError(std::string("frechet: eigensolver failed on ") + what);
  Eigen::VectorXd values = solver.eigenvalues();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values[i] < -kNegativeEigenTolerance) {
      throw NumericalError(std::string("frechet: ") + what + " is not positive semidefinite (eigenvalue " +
                           std::to_string(values[i]) + ")");
    }
    values[i] = std::max(values[i], 0.0);
  }
  return values;
}

}  // namespace

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
  if (a.size() < 2 || b.size() < 2) throw DataError("frechet: need at least two feature vectors per side");
  const std::size_t d = a.front().size();
  for (const auto* set : {&a, &b}) {
    for (const auto& row : *set) {
      if (row.size() != d) throw DimensionError("frechet: feature vectors have inconsistent dimensions");
    }
  }
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  mean_and_covariance(a, mu_a, cov_a);
  mean_and_covariance(b, mu_b, cov_b);

  // tr((Σ_A Σ_B)^{1/2}) = tr((Σ_A^{1/2} Σ_B Σ_A^{1/2})^{1/2}); the inner
  // product is symmetric so a self-adjoint eigensolver applies.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver_a(cov_a);
  const Eigen::VectorXd lambda_a = clamped_eigenvalues(cov_a, "covariance A");
  const Eigen::MatrixXd sqrt_a =
      solver_a.eigenvectors() * lambda_a.cwiseSqrt().asDiagonal() * solver_a.eigenvectors().transpose();
  Eigen::MatrixXd product = sqrt_a * cov_b * sqrt_a;
  product = 0.5 * (product + product.transpose());
  clamped_eigenvalues(cov_b, "covariance B");
  const Eigen::VectorXd lambda = clamped_eigenvalues(product, "covariance product");

  const double trace_sqrt = lambda.cwiseSqrt().sum();
  const double value = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt;
  return std::max(value, 0.0);
}

FeatureSet CoordinateFeatures::extract(const PointCloud& cloud) const {
  FeatureSet out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back({p.x, p.y, p.z});
  return out;
}

FeatureSet PooledCoordinateStatistics::extract(const PointCloud& cloud) const {
  if (cloud.empty()) throw DataError("feature extraction: empty point cloud");
  double m[3] = {0, 0, 0};
  for (const auto& p : cloud) {
    m[0] += p.x;
    m[1] += p.y;
    m[2] += p.z;
  }
  const double n = static_cast<double>(cloud.size());
  for (double& v : m) v /= n;
  double c[6] = {0, 0, 0, 0, 0, 0};  // xx yy zz xy xz yz
  for (const auto& p : cloud) {
    const double dx = p.x - m[0], dy = p.y - m[1], dz = p.z - m[2];
    c[0] += dx * dx;
    c[1] += dy * dy;
    c[2] += dz * dz;
    c[3] += dx * dy;
    c[4] += dx * dz;
    c[5] += dy * dz;
  }
  std::vector<double> f{m[0], m[1], m[2]};
  for (double v : c) f.push_back(v / n);
  return {f};
}

double frechet_point_distance(const PointCloud& generated, const PointCloud& reference,
                              const FeatureExtractor& extractor) {
  return frechet_distance(extractor.extract(generated), extractor.extract(reference));
}

double frechet_point_distance(const std::vector<PointCloud>& generated, const std::vector<PointCloud>& reference,
                              const FeatureExtractor& extractor) {
  FeatureSet a, b;
  for (const auto& c : generated) {
    auto f = extractor.extract(c);
    a.insert(a.end(), f.begin(), f.end());
  }
  for (const auto& c : reference) {
    auto f = extractor.extract(c);
    b.insert(b.end(), f.begin(), f.end());
  }
  return frechet_distance(a, b);
}

}  // namespace sketchcloud
