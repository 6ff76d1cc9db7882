#include "sketchcloud/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sketchcloud/errors.hpp"

namespace sketchcloud {

void SamplerConfig::validate() const {
  if (points < 1) throw DataError("sampler: point count must be at least 1");
}

CategoricalSampler::CategoricalSampler(const std::vector<double>& weights) {
  cumulative_.reserve(weights.size());
  double total = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights[i];
    if (!std::isfinite(w) || w < 0) {
      throw DataError("sampler: density entry " + std::to_string(i) + " is negative or not finite");
    }
    total += w;
    cumulative_.push_back(total);
  }
  if (!(total > 0)) throw DataError("sampler: density map has zero total mass");
}

std::size_t CategoricalSampler::draw(Rng& rng) const {
  const double r = rng.uniform() * cumulative_.back();
  // First bin whose cumulative mass exceeds r; zero-mass bins are never hit.
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
  if (it == cumulative_.end()) {
    // r rounded up to the total; take the last bin with mass.
    std::size_t i = cumulative_.size() - 1;
    while (i > 0 && cumulative_[i - 1] == cumulative_[i]) --i;
    return i;
  }
  return static_cast<std::size_t>(it - cumulative_.begin());
}

std::vector<double> location_weights(const DensityMap& map, LocationMode mode) {
  if (mode == LocationMode::multinomial) return map.values();
  std::vector<double> w(map.values().size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double m = map.values()[i];
    if (!std::isfinite(m) || m < 0) {
      throw DataError("sampler: density entry " + std::to_string(i) + " is negative or not finite");
    }
    w[i] = m > 0 ? 1.0 : 0.0;
  }
  return w;
}

namespace {

PixelIndex unflatten(std::size_t flat, const GridSpec& grid) { return {flat % grid.width(), flat / grid.width()}; }

std::vector<PixelIndex> draw_locations(const DensityMap& map, std::size_t count, std::uint64_t seed,
                                       LocationMode mode) {
  const CategoricalSampler sampler(location_weights(map, mode));
  Rng rng(seed);
  std::vector<PixelIndex> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(unflatten(sampler.draw(rng), map.grid()));
  return out;
}

struct Draw {
  PixelIndex pixel;
  ImagePoint image;
};

// Location and jitter for one point; consumes the rng in a fixed order.
Draw draw_point(const CategoricalSampler& sampler, const GridSpec& grid, bool jitter, Rng& rng) {
  Draw d;
  d.pixel = unflatten(sampler.draw(rng), grid);
  d.image = pixel_to_image(d.pixel.u, d.pixel.v, grid);
  if (jitter) {
    d.image.x += (rng.uniform() - 0.5) * 2.0 / static_cast<double>(grid.width() - 1);
    d.image.y += (rng.uniform() - 0.5) * 2.0 / static_cast<double>(grid.height() - 1);
  }
  return d;
}

constexpr std::size_t kDepthBatch = 1024;

}  // namespace

std::vector<PixelIndex> sample_locations(const DensityMap& map, std::size_t count, std::uint64_t seed) {
  return draw_locations(map, count, seed, LocationMode::multinomial);
}

std::vector<PixelIndex> homo_sample(const DensityMap& map, std::size_t count, std::uint64_t seed) {
  return draw_locations(map, count, seed, LocationMode::homo);
}

double oracle_depth(const DepthMultisetMap& depths, std::size_t u, std::size_t v, Rng& rng) {
  if (u >= depths.grid().width() || v >= depths.grid().height()) {
    throw DimensionError("oracle_depth: bin (" + std::to_string(u) + ", " + std::to_string(v) + ") outside the grid");
  }
  const auto& bin = depths.bin(u, v);
  if (bin.empty()) {
    throw DataError("oracle_depth: bin (" + std::to_string(u) + ", " + std::to_string(v) + ") holds no depths");
  }
  return bin[rng.index(bin.size())];
}

double oracle_depth(const DepthMultisetMap& depths, std::size_t u, std::size_t v, std::uint64_t seed) {
  Rng rng(seed);
  return oracle_depth(depths, u, v, rng);
}

PointCloud generate_cloud(const DensityMap& map, const Tensor& features, const ModelParams& params,
                          const CameraModel& cam, const SamplerConfig& cfg, const DepthMultisetMap* depths) {
  cfg.validate();
  const bool oracle = cfg.depth_source == DepthSource::oracle_multiset;
  if (oracle && depths == nullptr) throw DataError("sampler: oracle depth source needs depth multisets");
  if (oracle && !(depths->grid() == map.grid())) throw DimensionError("sampler: depth multisets on a different grid");

  const GridSpec& grid = map.grid();
  const CategoricalSampler sampler(location_weights(map, cfg.mode));
  Rng rng(cfg.seed);
  PointCloud out;
  out.reserve(cfg.points);

  if (oracle) {
    for (std::size_t i = 0; i < cfg.points; ++i) {
      const Draw d = draw_point(sampler, grid, cfg.jitter, rng);
      out.push_back(invproj(d.image, oracle_depth(*depths, d.pixel.u, d.pixel.v, rng), cam));
    }
    return out;
  }

  const std::size_t dn = params.config().noise_dim;
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < cfg.points; start += kDepthBatch) {
    const std::size_t n = std::min(kDepthBatch, cfg.points - start);
    std::vector<Draw> draws;
    std::vector<PixelIndex> pixels;
    std::vector<float> noise;
    draws.reserve(n);
    pixels.reserve(n);
    noise.reserve(n * dn);
    for (std::size_t i = 0; i < n; ++i) {
      draws.push_back(draw_point(sampler, grid, cfg.jitter, rng));
      pixels.push_back(draws.back().pixel);
      for (std::size_t k = 0; k < dn; ++k) noise.push_back(static_cast<float>(rng.uniform()));
    }
    const Tensor f = local_features(features, pixels, grid);
    const Tensor z = gen_depth(f, Tensor::constant({n, dn}, std::move(noise)), params);
    for (std::size_t i = 0; i < n; ++i) {
      const double depth = z.values()[i];
      if (!std::isfinite(depth)) throw NumericalError("sampler: depth generator produced a non-finite value");
      out.push_back(invproj(draws[i].image, depth, cam));
    }
  }
  return out;
}

PointCloud generate_oracle_cloud(const DensityMap& map, const DepthMultisetMap& depths, const CameraModel& cam,
                                 const SamplerConfig& cfg) {
  SamplerConfig c = cfg;
  c.depth_source = DepthSource::oracle_multiset;
  return generate_cloud(map, Tensor(), ModelParams(), cam, c, &depths);
}

}  // namespace sketchcloud
