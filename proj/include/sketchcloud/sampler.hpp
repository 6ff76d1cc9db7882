#pragma once

// Two-stage point generation: draw image locations from a density map, then
// draw a depth for each one from the depth generator (or from the ground-truth
// depths recorded in that bin).

#include <cstdint>
#include <vector>

#include "sketchcloud/geometry.hpp"
#include "sketchcloud/model.hpp"
#include "sketchcloud/rng.hpp"

namespace sketchcloud {

enum class LocationSource { predicted_density, gt_density };
enum class LocationMode { multinomial, homo };
enum class DepthSource { generator, oracle_multiset };

struct SamplerConfig {
  std::size_t points = 2048;
  std::uint64_t seed = 0;
  LocationSource source = LocationSource::predicted_density;
  LocationMode mode = LocationMode::multinomial;
  DepthSource depth_source = DepthSource::generator;
  // Uniform offset within the bin instead of its center.
  bool jitter = false;

  void validate() const;
};

// Inverse-CDF draws over a flattened nonnegative weight vector.
class CategoricalSampler {
 public:
  // Throws DataError on a negative or non-finite weight or a zero total.
  explicit CategoricalSampler(const std::vector<double>& weights);

  std::size_t draw(Rng& rng) const;
  std::size_t size() const { return cumulative_.size(); }

 private:
  std::vector<double> cumulative_;
};

// i.i.d. draws with P(u, v) = M(u, v).
std::vector<PixelIndex> sample_locations(const DensityMap& map, std::size_t count, std::uint64_t seed);

// Uniform over the foreground {M > 0}, ignoring the magnitudes.
std::vector<PixelIndex> homo_sample(const DensityMap& map, std::size_t count, std::uint64_t seed);

// Weights that sample_locations / homo_sample draw from.
std::vector<double> location_weights(const DensityMap& map, LocationMode mode);

// Uniform draw from the depths recorded at (u, v); DataError when the bin is empty.
double oracle_depth(const DepthMultisetMap& depths, std::size_t u, std::size_t v, std::uint64_t seed);
double oracle_depth(const DepthMultisetMap& depths, std::size_t u, std::size_t v, Rng& rng);

// Exactly cfg.points points. `features` and `params` are used when the depth
// source is the generator, `depths` when it is the oracle.
PointCloud generate_cloud(const DensityMap& map, const Tensor& features, const ModelParams& params,
                          const CameraModel& cam, const SamplerConfig& cfg,
                          const DepthMultisetMap* depths = nullptr);

// Oracle-only variant that needs no model.
PointCloud generate_oracle_cloud(const DensityMap& map, const DepthMultisetMap& depths, const CameraModel& cam,
                                 const SamplerConfig& cfg);

}  // namespace sketchcloud
